"""Low-light degradation in the linear RAW domain.

A daytime sRGB image is unprocessed to linear RAW (inverse tone curve,
inverse gamma, inverse color matrix, inverse white balance), attenuated and
corrupted with signal-dependent shot noise plus read noise, then re-rendered
through the forward ISP.  Parameters are sampled per call from configurable
intervals, so every training step sees a fresh night variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

SENSOR_MAX = 1.0

# Plausible RGB -> camera color matrix (row-normalized), blended with the
# identity by the sampled ccm_strength.
_XYZ2CAM = np.array(
    [[1.0234, -0.2969, -0.2266], [-0.5625, 1.6328, -0.0469], [-0.0703, 0.2188, 0.6406]]
)
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_REF_CCM = _XYZ2CAM @ _RGB2XYZ
_REF_CCM = _REF_CCM / _REF_CCM.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class DegradationParams:
    attenuation: float
    shot_gain: float
    read_sigma: float
    wb_gains: tuple[float, float, float]
    ccm: tuple[tuple[float, ...], ...]
    gamma: float = 2.2
    tone_strength: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.attenuation <= 1.0:
            raise ValueError(f"attenuation must lie in (0, 1], got {self.attenuation}")
        if self.shot_gain < 0 or self.read_sigma < 0:
            raise ValueError("noise parameters must be non-negative")
        if any(g <= 0 for g in self.wb_gains):
            raise ValueError(f"wb_gains must be positive, got {self.wb_gains}")
        if not 0.0 <= self.tone_strength <= 1.0:
            raise ValueError(f"tone_strength must lie in [0, 1], got {self.tone_strength}")
        if abs(np.linalg.det(self.ccm_matrix())) <= 1e-6:
            raise ValueError("ccm is not invertible")

    def ccm_matrix(self) -> np.ndarray:
        return np.asarray(self.ccm, dtype=np.float64)

    @classmethod
    def identity(cls, gamma: float = 2.2) -> "DegradationParams":
        """Gamma-only configuration; degrade() becomes a no-op up to rounding."""
        eye = tuple(tuple(row) for row in np.eye(3))
        return cls(1.0, 0.0, 0.0, (1.0, 1.0, 1.0), eye, gamma, 0.0)

    def to_flat_dict(self) -> dict[str, float]:
        d = {
            "attenuation": self.attenuation,
            "shot_gain": self.shot_gain,
            "read_sigma": self.read_sigma,
            "gamma": self.gamma,
            "tone_strength": self.tone_strength,
        }
        for i, name in enumerate("rgb"):
            d[f"wb_{name}"] = self.wb_gains[i]
        for i in range(3):
            for j in range(3):
                d[f"ccm_{i}{j}"] = float(self.ccm[i][j])
        return d

    @classmethod
    def from_flat_dict(cls, d: dict) -> "DegradationParams":
        ccm = tuple(tuple(float(d[f"ccm_{i}{j}"]) for j in range(3)) for i in range(3))
        return cls(
            attenuation=float(d["attenuation"]),
            shot_gain=float(d["shot_gain"]),
            read_sigma=float(d["read_sigma"]),
            wb_gains=tuple(float(d[f"wb_{c}"]) for c in "rgb"),
            ccm=ccm,
            gamma=float(d["gamma"]),
            tone_strength=float(d["tone_strength"]),
        )


_LEGAL_DOMAINS = {
    "attenuation": (1e-6, 1.0),
    "shot_gain": (0.0, np.inf),
    "read_sigma": (0.0, np.inf),
    "wb_gain": (1e-6, np.inf),
    "gamma": (0.5, 8.0),
    "tone_strength": (0.0, 1.0),
    "ccm_strength": (0.0, 1.0),
}


@dataclass(frozen=True)
class DegradationRanges:
    """Closed sampling intervals for every online-randomized parameter."""

    attenuation: tuple[float, float] = (0.02, 0.25)
    shot_gain: tuple[float, float] = (0.0, 0.05)
    read_sigma: tuple[float, float] = (0.0, 0.03)
    wb_gain: tuple[float, float] = (0.7, 1.3)
    gamma: tuple[float, float] = (2.2, 2.2)
    tone_strength: tuple[float, float] = (0.0, 0.5)
    ccm_strength: tuple[float, float] = (0.0, 0.3)

    def __post_init__(self) -> None:
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise ValueError(f"empty interval for {f.name}: ({lo}, {hi})")
            d_lo, d_hi = _LEGAL_DOMAINS[f.name]
            if lo < d_lo or hi > d_hi:
                raise ValueError(
                    f"{f.name} interval ({lo}, {hi}) outside legal domain ({d_lo}, {d_hi})"
                )

    @classmethod
    def pinned_identity(cls) -> "DegradationRanges":
        return cls(
            attenuation=(1.0, 1.0),
            shot_gain=(0.0, 0.0),
            read_sigma=(0.0, 0.0),
            wb_gain=(1.0, 1.0),
            gamma=(2.2, 2.2),
            tone_strength=(0.0, 0.0),
            ccm_strength=(0.0, 0.0),
        )


def sample_params(ranges: DegradationRanges, rng: np.random.Generator) -> DegradationParams:
    """Draw one parameter set, each field uniform over its interval."""
    att = float(rng.uniform(*ranges.attenuation))
    shot = float(rng.uniform(*ranges.shot_gain))
    read = float(rng.uniform(*ranges.read_sigma))
    wb = tuple(float(rng.uniform(*ranges.wb_gain)) for _ in range(3))
    gamma = float(rng.uniform(*ranges.gamma))
    tone = float(rng.uniform(*ranges.tone_strength))
    ccm_s = float(rng.uniform(*ranges.ccm_strength))
    ccm = (1.0 - ccm_s) * np.eye(3) + ccm_s * _REF_CCM
    ccm = ccm / ccm.sum(axis=1, keepdims=True)  # keep rows stochastic
    return DegradationParams(
        attenuation=att,
        shot_gain=shot,
        read_sigma=read,
        wb_gains=wb,
        ccm=tuple(tuple(float(x) for x in row) for row in ccm),
        gamma=gamma,
        tone_strength=tone,
    )


def tone_curve(x: np.ndarray, strength: float) -> np.ndarray:
    """Smoothstep tone curve blended with identity by strength."""
    s = np.clip(x, 0.0, 1.0)
    smooth = 3.0 * s * s - 2.0 * s * s * s
    return (1.0 - strength) * s + strength * smooth


def inverse_tone_curve(y: np.ndarray, strength: float, tol: float = 1e-7) -> np.ndarray:
    """Invert tone_curve by bisection (the curve is monotone on [0, 1])."""
    if strength == 0.0:
        return np.clip(y, 0.0, 1.0)
    target = np.clip(y, 0.0, 1.0)
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    # halving the bracket k times bounds the error by 2^-k
    iters = int(np.ceil(-np.log2(tol)))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = tone_curve(mid, strength) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _apply_ccm(img: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    return np.einsum("ij,...j->...i", matrix, img)


def srgb_to_raw(rgb: np.ndarray, params: DegradationParams) -> np.ndarray:
    """Unprocess sRGB to linear RAW: tone^-1, gamma^-1, ccm^-1, wb^-1."""
    x = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    x = inverse_tone_curve(x, params.tone_strength)
    x = np.maximum(x, 1e-8) ** params.gamma
    x = _apply_ccm(x, np.linalg.inv(params.ccm_matrix()))
    x = x / np.asarray(params.wb_gains)
    return np.maximum(x, 0.0)


def isp_render(raw: np.ndarray, params: DegradationParams) -> np.ndarray:
    """Forward ISP: wb, ccm, gamma compression, tone curve. Output in [0, 1]."""
    x = np.asarray(raw, dtype=np.float64) * np.asarray(params.wb_gains)
    x = _apply_ccm(x, params.ccm_matrix())
    x = np.maximum(x, 0.0) ** (1.0 / params.gamma)
    x = tone_curve(x, params.tone_strength)
    return np.clip(x, 0.0, 1.0)


def attenuate_and_noise(
    raw: np.ndarray, params: DegradationParams, seed: int
) -> np.ndarray:
    """Linear attenuation plus shot/read noise, clipped to the sensor range.

    Per pixel: y = a * raw + n with n ~ N(0, shot_gain * a * raw + read_sigma^2).
    """
    rng = np.random.default_rng(seed)
    signal = params.attenuation * np.asarray(raw, dtype=np.float64)
    if params.shot_gain == 0.0 and params.read_sigma == 0.0:
        return np.clip(signal, 0.0, SENSOR_MAX)
    variance = params.shot_gain * signal + params.read_sigma**2
    noise = rng.standard_normal(signal.shape) * np.sqrt(np.maximum(variance, 0.0))
    return np.clip(signal + noise, 0.0, SENSOR_MAX)


def degrade(
    day: np.ndarray, ranges: DegradationRanges, seed: int
) -> tuple[np.ndarray, DegradationParams]:
    """Sample parameters and run the full day -> night transform."""
    rng = np.random.default_rng(seed)
    params = sample_params(ranges, rng)
    raw = srgb_to_raw(day, params)
    dark = attenuate_and_noise(raw, params, seed=int(rng.integers(0, 2**63)))
    night = isp_render(dark, params)
    return night.astype(np.float32), params


class NightDegrader(BaseEstimator, TransformerMixin):
    """Stateless transformer applying the randomized night degradation.

    Interval parameters mirror DegradationRanges; each transformed image
    draws a fresh parameter set from a seed derived per item.
    """

    def __init__(
        self,
        attenuation=(0.02, 0.25),
        shot_gain=(0.0, 0.05),
        read_sigma=(0.0, 0.03),
        wb_gain=(0.7, 1.3),
        gamma=(2.2, 2.2),
        tone_strength=(0.0, 0.5),
        ccm_strength=(0.0, 0.3),
        seed=0,
    ):
        self.attenuation = attenuation
        self.shot_gain = shot_gain
        self.read_sigma = read_sigma
        self.wb_gain = wb_gain
        self.gamma = gamma
        self.tone_strength = tone_strength
        self.ccm_strength = ccm_strength
        self.seed = seed

    def ranges(self) -> DegradationRanges:
        return DegradationRanges(
            attenuation=tuple(self.attenuation),
            shot_gain=tuple(self.shot_gain),
            read_sigma=tuple(self.read_sigma),
            wb_gain=tuple(self.wb_gain),
            gamma=tuple(self.gamma),
            tone_strength=tuple(self.tone_strength),
            ccm_strength=tuple(self.ccm_strength),
        )

    def fit(self, X=None, y=None):
        self.ranges()  # validates intervals
        return self

    def transform(self, X) -> np.ndarray:
        nights, _ = self.transform_with_params(X)
        return nights

    def transform_with_params(self, X):
        from .nnops import derive_seed

        ranges = self.ranges()
        nights = []
        all_params = []
        for i, img in enumerate(X):
            night, params = degrade(img, ranges, derive_seed(self.seed, "degrade", i))
            nights.append(night)
            all_params.append(params)
        return np.stack(nights), all_params
