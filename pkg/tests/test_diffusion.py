import numpy as np
import pytest
import torch

from nightlift.conditioning import ConditioningBundle, ConditionFusion, ControlBranch
from nightlift.diffusion import ConditionedDenoiser, ddpm_loss, sample
from nightlift.nnops import freeze, gradient_check, trunc_normal_init_
from nightlift.schedule import build_schedule, forward_diffuse, predict_clean_latent
from nightlift.textcond import TextEmbedder
from nightlift.unet import UNetDenoiser


def tiny_model(latent_channels=3, with_branch=False, seed=1):
    backbone = UNetDenoiser(latent_channels, channels=(8, 8, 8), time_dim=16, text_dim=8)
    trunc_normal_init_(backbone, seed=seed)
    text = TextEmbedder(8)
    trunc_normal_init_(text, seed=seed + 1)
    fusion = branch = None
    if with_branch:
        freeze(backbone)
        freeze(text)
        fusion = ConditionFusion(latent_channels)
        trunc_normal_init_(fusion, seed=seed + 2)
        branch = ControlBranch(backbone, cond_channels=2 * latent_channels)
    return ConditionedDenoiser(backbone, text, fusion, branch)


def bundle_for(model, batch=2, size=8, seed=0):
    gen = torch.Generator().manual_seed(seed)
    c = model.backbone.latent_channels
    return ConditioningBundle(
        torch.randn(batch, c, size, size, generator=gen),
        torch.randn(batch, c, size, size, generator=gen),
        torch.randn(batch, model.backbone.text_dim, generator=gen),
    )


class _TrueNoiseOracle:
    """Denoiser stand-in that recovers the exact injected noise by algebra."""

    branch = None

    def __init__(self, clean, sched):
        self.clean = clean
        self.sched = sched

    def eps(self, z_t, t, bundle):
        ab = self.sched.alpha_bar(t.numpy())
        shape = [-1] + [1] * (z_t.ndim - 1)
        sqrt_ab = torch.as_tensor(np.sqrt(ab), dtype=z_t.dtype).reshape(shape)
        rest = torch.as_tensor(np.sqrt(1.0 - ab), dtype=z_t.dtype).reshape(shape)
        return (z_t - sqrt_ab * self.clean) / rest


class _ZeroDenoiser:
    branch = None

    def eps(self, z_t, t, bundle):
        return torch.zeros_like(z_t)


def test_oracle_denoiser_gives_zero_loss():
    sched = build_schedule(T=50, beta_start=1e-3, beta_end=0.05)
    gen = torch.Generator().manual_seed(3)
    clean = torch.randn(4, 3, 8, 8, dtype=torch.float64, generator=gen)
    loss, _ = ddpm_loss(_TrueNoiseOracle(clean, sched), clean, None, sched, gen)
    assert float(loss) < 1e-10


def test_zero_denoiser_loss_approaches_unit_noise_power():
    sched = build_schedule(T=50, beta_start=1e-3, beta_end=0.05)
    gen = torch.Generator().manual_seed(4)
    clean = torch.zeros(8, 3, 8, 8)
    losses = [float(ddpm_loss(_ZeroDenoiser(), clean, None, sched, gen)[0]) for _ in range(50)]
    assert abs(np.mean(losses) - 1.0) < 0.03


def test_loss_is_nonnegative():
    model = tiny_model()
    sched = build_schedule(T=20, beta_start=1e-3, beta_end=0.05)
    gen = torch.Generator().manual_seed(5)
    latents = torch.randn(2, 3, 8, 8, generator=gen)
    loss, _ = ddpm_loss(model, latents, bundle_for(model), sched, gen)
    assert float(loss) >= 0.0


def test_loss_rejects_empty_batch():
    sched = build_schedule(T=20, beta_start=1e-3, beta_end=0.05)
    with pytest.raises(ValueError):
        ddpm_loss(_ZeroDenoiser(), torch.zeros(0, 3, 4, 4), None, sched, torch.Generator())


def test_ddpm_loss_gradient_matches_finite_differences():
    # gradient w.r.t. denoiser parameters on a 4x4 latent instance
    sched = build_schedule(T=10, beta_start=1e-3, beta_end=0.05)
    backbone = UNetDenoiser(2, channels=(4, 4, 4), time_dim=8, text_dim=4).double()
    trunc_normal_init_(backbone, seed=2)
    model = ConditionedDenoiser(backbone, TextEmbedder(4).double())
    latents = torch.randn(1, 2, 4, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(6))

    checked = [backbone.conv_out.weight, backbone.mid_attn.to_q.weight, backbone.enc1.conv1.weight]

    def loss():
        gen = torch.Generator().manual_seed(123)  # same t and noise every call
        return ddpm_loss(model, latents, None, sched, gen)[0]

    err = gradient_check(loss, checked, eps=1e-6)
    assert err < 1e-6


def test_sample_deterministic_and_shaped():
    model = tiny_model(with_branch=True)
    sched = build_schedule(T=8, beta_start=1e-3, beta_end=0.05)
    bundle = bundle_for(model)
    a = sample(model, bundle, sched, (2, 3, 8, 8), seed=9)
    b = sample(model, bundle, sched, (2, 3, 8, 8), seed=9)
    assert torch.equal(a, b)
    assert a.shape == (2, 3, 8, 8)
    c = sample(model, bundle, sched, (2, 3, 8, 8), seed=10)
    assert not torch.equal(a, c)


def test_sample_requires_conditions_for_conditioned_model():
    model = tiny_model(with_branch=True)
    sched = build_schedule(T=4, beta_start=1e-3, beta_end=0.05)
    with pytest.raises(ValueError):
        sample(model, None, sched, (1, 3, 8, 8), seed=0)


def test_conditioning_has_an_effect_once_zero_convs_move():
    model = tiny_model(with_branch=True)
    with torch.no_grad():
        for zc in model.branch.zero_convs:
            zc.weight.add_(0.1)
    sched = build_schedule(T=8, beta_start=1e-3, beta_end=0.05)
    bundle = bundle_for(model, seed=11)
    zero_bundle = ConditioningBundle(
        torch.zeros_like(bundle.deg_latent),
        torch.zeros_like(bundle.depth_latent),
        torch.zeros_like(bundle.text_embedding),
    )
    a = sample(model, bundle, sched, (2, 3, 8, 8), seed=12)
    b = sample(model, zero_bundle, sched, (2, 3, 8, 8), seed=12)
    assert float((a - b).pow(2).sum()) > 0.0


def test_fusion_bypass_changes_conditions_not_shapes():
    model = tiny_model(with_branch=True)
    bundle = bundle_for(model)
    fused = model.conditions(bundle)
    model.use_fusion = False
    plain = model.conditions(bundle)
    assert fused.shape == plain.shape
    assert torch.equal(plain, torch.cat([bundle.deg_latent, bundle.depth_latent], dim=1))


def test_zeroed_modalities():
    model = tiny_model(with_branch=True)
    bundle = bundle_for(model)
    model.zero_text = True
    assert torch.equal(model.text_vector(bundle), torch.zeros_like(bundle.text_embedding))
    model.use_fusion = False
    model.zero_depth = True
    cond = model.conditions(bundle)
    c = model.backbone.latent_channels
    assert torch.equal(cond[:, c:], torch.zeros_like(cond[:, c:]))
    assert torch.equal(cond[:, :c], bundle.deg_latent)
