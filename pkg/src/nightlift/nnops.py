"""Differentiable-computation substrate.

Backed by torch tensors and autograd.  This module pins down the artifact's
contract with that substrate: the closed list of layer primitives used by
every network, deterministic seeding, weight initialization, a functional
bias-corrected Adam step, and an independent central-difference gradient
checker that every primitive must pass.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F


# ---------------------------------------------------------------------------
# seeding

def derive_seed(*parts) -> int:
    """Stable 63-bit seed from (global seed, module name, item id, ...)."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


# ---------------------------------------------------------------------------
# layer primitives
#
# Shape rules follow torch conventions: images are N x C x H x W, dense
# inputs are N x D, attention operands are B x L x D.

def conv2d(x, weight, bias=None, stride=1, padding=0):
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input {tuple(x.shape)} vs kernel {tuple(weight.shape)}"
        )
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def dense(x, weight, bias=None):
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"dense shape mismatch: input {tuple(x.shape)} vs weight {tuple(weight.shape)}"
        )
    return F.linear(x, weight, bias)


def group_norm(x, groups, weight=None, bias=None, eps=1e-5):
    if x.shape[1] % groups != 0:
        raise ValueError(f"channels {x.shape[1]} not divisible by {groups} groups")
    return F.group_norm(x, groups, weight, bias, eps)


def silu(x):
    return F.silu(x)


def softmax(x, dim=-1):
    return F.softmax(x, dim=dim)


def upsample_nearest(x, factor=2):
    return F.interpolate(x, scale_factor=factor, mode="nearest")


def downsample_nearest(x, factor=2):
    return x[..., ::factor, ::factor]


def attention(q, k, v):
    """Scaled dot-product attention, softmax over the key axis."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(
            f"attention dim mismatch: q {tuple(q.shape)} vs k {tuple(k.shape)}"
        )
    scale = q.shape[-1] ** -0.5
    scores = torch.matmul(q, k.transpose(-1, -2)) * scale
    return torch.matmul(softmax(scores, dim=-1), v)


PRIMITIVES = (
    "conv2d",
    "dense",
    "group_norm",
    "silu",
    "softmax",
    "upsample_nearest",
    "downsample_nearest",
    "attention",
)


# ---------------------------------------------------------------------------
# initialization and parameter handling

def trunc_normal_init_(module: torch.nn.Module, std: float = 0.02, seed: int = 0) -> None:
    """Truncated-normal init (std 0.02) for all weights, zeros for biases."""
    gen = torch_generator(seed)
    for name, p in sorted(module.named_parameters()):
        with torch.no_grad():
            if p.ndim <= 1 or "bias" in name:
                p.zero_()
            else:
                # sorted traversal + explicit generator keeps init reproducible
                values = torch.empty_like(p)
                torch.nn.init.trunc_normal_(values, std=std, a=-2 * std, b=2 * std, generator=gen)
                p.copy_(values)
        # group-norm scale starts at 1
        if p.ndim == 1 and "weight" in name:
            with torch.no_grad():
                p.fill_(1.0)


def zero_module(module: torch.nn.Module) -> torch.nn.Module:
    for p in module.parameters():
        torch.nn.init.zeros_(p)
    return module


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
        p.grad = None  # drop any gradient left over from training
    return module


def param_hash(module: torch.nn.Module) -> str:
    """SHA-256 over parameter names and exact float bytes."""
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode("utf-8"))
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def state_entries(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """Flatten a module state dict into LDCK-ready named float arrays."""
    entries = {}
    for name, p in module.state_dict().items():
        entries[f"{prefix}/{name}"] = p.detach().cpu().numpy().astype(np.float32)
    return entries


def load_state_entries(
    module: torch.nn.Module, entries: dict[str, np.ndarray], prefix: str
) -> None:
    state = {}
    skip = len(prefix) + 1
    for name, value in entries.items():
        if name.startswith(prefix + "/"):
            state[name[skip:]] = torch.from_numpy(np.asarray(value))
    module.load_state_dict(state)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """Bias-corrected Adam with per-parameter moment accumulators."""

    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState):
    """One Adam update, in place on params. Returns (params, state).

    None gradients (parameters disconnected from the loss) are treated as
    zero: their moments decay and the parameter can only move if earlier
    steps accumulated momentum.
    """
    params = list(params)
    grads = list(grads)
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                g = torch.zeros_like(p)
            if g.shape != p.shape:
                raise ValueError(f"grad shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            denom = (v / bc2).sqrt_().add_(state.eps)
            p.add_(-(state.lr / bc1) * m / denom)
    return params, state


def adam_state_entries(state: AdamState, prefix: str) -> dict[str, np.ndarray]:
    entries: dict[str, np.ndarray] = {
        f"{prefix}/step": np.array([float(state.step)], dtype=np.float64),
        f"{prefix}/lr": np.array([state.lr], dtype=np.float64),
    }
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        entries[f"{prefix}/m{i:04d}"] = m.detach().cpu().numpy().astype(np.float32)
        entries[f"{prefix}/v{i:04d}"] = v.detach().cpu().numpy().astype(np.float32)
    return entries


def load_adam_state(entries: dict[str, np.ndarray], prefix: str, params) -> AdamState:
    state = AdamState(lr=float(entries[f"{prefix}/lr"][0]))
    state.step = int(entries[f"{prefix}/step"][0])
    params = list(params)
    state.m = [torch.from_numpy(np.asarray(entries[f"{prefix}/m{i:04d}"])) for i in range(len(params))]
    state.v = [torch.from_numpy(np.asarray(entries[f"{prefix}/v{i:04d}"])) for i in range(len(params))]
    return state


# ---------------------------------------------------------------------------
# gradient checking

def max_rel_error(analytic, numeric) -> float:
    """Largest |a - n| over all entries, relative to the gradient scale."""
    worst = 0.0
    scale = 1e-12
    for a, n in zip(analytic, numeric):
        worst = max(worst, float((a - n).abs().max()))
        scale = max(scale, float(n.abs().max()))
    return worst / scale


def finite_difference_gradients(fn, tensors, eps: float) -> list[torch.Tensor]:
    """Central-difference gradients of the scalar fn() w.r.t. each tensor.

    fn must be a closure over `tensors`; entries are perturbed in place
    through .data, so it stays independent of autograd.
    """
    numeric = []
    with torch.no_grad():
        for t in tensors:
            flat = t.data.reshape(-1)
            grad = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = float(fn())
                flat[i] = orig - eps
                f_minus = float(fn())
                flat[i] = orig
                grad[i] = (f_plus - f_minus) / (2.0 * eps)
            numeric.append(grad.reshape(t.shape))
    return numeric


def gradient_check(fn, tensors, eps: float | None = None) -> float:
    """Max relative error between autograd and finite differences.

    Every tensor must be a leaf with requires_grad set. eps defaults to
    1e-5 in float64 and 1e-3 in float32.
    """
    tensors = list(tensors)
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = fn()
    loss.backward()
    analytic = [
        t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
        for t in tensors
    ]
    if eps is None:
        eps = 1e-5 if tensors[0].dtype == torch.float64 else 1e-3
    numeric = finite_difference_gradients(fn, tensors, eps)
    return max_rel_error(analytic, numeric)
