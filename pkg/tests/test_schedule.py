import numpy as np
import pytest
import torch

from nightlift.schedule import (
    build_schedule,
    forward_diffuse,
    posterior_coefficients,
    predict_clean_latent,
)


def test_constant_beta_closed_form():
    b = 0.01
    sched = build_schedule(T=50, beta_start=b, beta_end=b)
    ts = np.arange(1, 51)
    assert np.allclose(sched.alpha_bars, (1 - b) ** ts, rtol=1e-12)


def test_alpha_is_one_minus_beta():
    sched = build_schedule()
    assert np.array_equal(sched.alphas, 1.0 - sched.betas)


def test_default_table_decreasing_and_terminal():
    sched = build_schedule()
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert sched.alpha_bars[-1] < 0.01
    # independent oracle: recompute the product in extended precision
    product = np.longdouble(1.0)
    for beta in sched.betas:
        product *= np.longdouble(1.0) - np.longdouble(beta)
    assert abs(float(product) - sched.alpha_bars[-1]) < 1e-15


def test_alpha_bar_recurrence():
    sched = build_schedule()
    for t in range(2, sched.timesteps + 1):
        lhs = sched.alpha_bar(t)
        rhs = sched.alpha_bar(t - 1) * sched.alpha(t)
        assert abs(lhs - rhs) < 1e-12


def test_invalid_bounds_rejected():
    with pytest.raises(ValueError):
        build_schedule(beta_start=0.0)
    with pytest.raises(ValueError):
        build_schedule(beta_start=0.05, beta_end=0.01)
    with pytest.raises(ValueError):
        build_schedule(beta_end=1.0)
    with pytest.raises(ValueError):
        build_schedule(T=0)


def test_forward_diffuse_zero_noise():
    sched = build_schedule(T=10, beta_start=0.01, beta_end=0.1)
    z = torch.randn(2, 3, 4, 4, dtype=torch.float64)
    out = forward_diffuse(z, 4, torch.zeros_like(z), sched)
    assert torch.allclose(out, np.sqrt(sched.alpha_bar(4)) * z, rtol=0, atol=1e-15)


def test_forward_diffuse_homogeneity():
    sched = build_schedule(T=10, beta_start=0.01, beta_end=0.1)
    gen = torch.Generator().manual_seed(0)
    z = torch.randn(1, 2, 3, 3, dtype=torch.float64, generator=gen)
    chi = torch.randn(1, 2, 3, 3, dtype=torch.float64, generator=gen)
    a = 3.7
    lhs = forward_diffuse(a * z, 7, a * chi, sched)
    rhs = a * forward_diffuse(z, 7, chi, sched)
    assert torch.allclose(lhs, rhs, rtol=1e-14, atol=0)


def test_forward_diffuse_terminal_variance_monte_carlo():
    sched = build_schedule()
    gen = torch.Generator().manual_seed(42)
    n = 100_000
    z = torch.randn(n, dtype=torch.float64, generator=gen)
    chi = torch.randn(n, dtype=torch.float64, generator=gen)
    z_t = forward_diffuse(z[:, None], sched.timesteps, chi[:, None], sched)
    var = float(z_t.var())
    assert abs(var - 1.0) < 0.02


def test_forward_diffuse_shape_and_range_errors():
    sched = build_schedule(T=10, beta_start=0.01, beta_end=0.1)
    z = torch.zeros(1, 1, 2, 2)
    with pytest.raises(ValueError):
        forward_diffuse(z, 0, torch.zeros_like(z), sched)
    with pytest.raises(ValueError):
        forward_diffuse(z, 11, torch.zeros_like(z), sched)
    with pytest.raises(ValueError):
        forward_diffuse(z, 5, torch.zeros(1, 1, 2, 3), sched)


def test_predict_clean_latent_inverts_forward_for_all_t():
    sched = build_schedule()
    gen = torch.Generator().manual_seed(7)
    z = torch.randn(2, 3, 4, 4, dtype=torch.float64, generator=gen)
    for t in range(1, sched.timesteps + 1):
        chi = torch.randn(z.shape, dtype=torch.float64, generator=gen)
        z_t = forward_diffuse(z, t, chi, sched)
        back = predict_clean_latent(z_t, chi, t, sched)
        assert torch.allclose(back, z, rtol=0, atol=1e-12)


def test_predict_clean_latent_magnification_is_finite():
    sched = build_schedule()
    z_t = torch.randn(1, 3, 4, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    out = predict_clean_latent(z_t, torch.zeros_like(z_t), sched.timesteps, sched)
    expected = z_t / np.sqrt(sched.alpha_bar(sched.timesteps))
    assert torch.isfinite(out).all()
    assert torch.allclose(out, expected, rtol=1e-14, atol=0)


def test_posterior_coefficients_terminal_step_is_noiseless():
    sched = build_schedule(T=20, beta_start=0.01, beta_end=0.05)
    *_, sigma = posterior_coefficients(1, sched)
    assert sigma == 0.0
    *_, sigma_mid = posterior_coefficients(10, sched)
    assert sigma_mid > 0.0


def test_per_sample_timesteps_broadcast():
    sched = build_schedule(T=10, beta_start=0.01, beta_end=0.1)
    z = torch.ones(3, 1, 2, 2, dtype=torch.float64)
    t = np.array([1, 5, 10])
    out = forward_diffuse(z, t, torch.zeros_like(z), sched)
    for i, ti in enumerate(t):
        assert torch.allclose(out[i], torch.full((1, 2, 2), float(np.sqrt(sched.alpha_bar(ti))), dtype=torch.float64))
