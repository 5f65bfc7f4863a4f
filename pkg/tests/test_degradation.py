import numpy as np
import pytest

from nightlift.degradation import (
    DegradationParams,
    DegradationRanges,
    NightDegrader,
    attenuate_and_noise,
    degrade,
    inverse_tone_curve,
    isp_render,
    sample_params,
    srgb_to_raw,
    tone_curve,
)


def psnr(a, b):
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return 10.0 * np.log10(1.0 / mse) if mse > 0 else np.inf


IDENTITY = DegradationParams.identity()


def test_white_image_is_gamma_fixed_point():
    white = np.ones((4, 4, 3))
    raw = srgb_to_raw(white, IDENTITY)
    assert np.allclose(raw, 1.0, atol=1e-9)


def test_midgray_inverse_gamma_scalar():
    # 0.5 ** 2.2 = 0.21763764
    img = np.full((2, 2, 3), 0.5)
    raw = srgb_to_raw(img, IDENTITY)
    assert np.allclose(raw, 0.5**2.2, atol=1e-9)
    assert raw[0, 0, 0] == pytest.approx(0.2176, abs=1e-3)


def test_isp_gamma_scalar():
    linear = np.full((2, 2, 3), 0.5**2.2)
    out = isp_render(linear, IDENTITY)
    assert np.allclose(out, 0.5, atol=1e-3)


def test_black_preserved():
    zero = np.zeros((3, 3, 3))
    assert np.allclose(isp_render(zero, IDENTITY), 0.0)
    assert np.allclose(srgb_to_raw(zero, IDENTITY), 0.0)


def test_identity_round_trip_psnr(rng):
    img = rng.random((32, 32, 3))
    back = isp_render(srgb_to_raw(img, IDENTITY), IDENTITY)
    assert psnr(back, img) > 40.0


def test_general_params_round_trip_psnr():
    # noise-free round trip under arbitrary sampled parameters, on rendered
    # scene data (independent uniform pixels would land out of gamut for the
    # inverse color matrix, which the unprocessing clip legitimately loses)
    from nightlift.datasets import default_camera
    from nightlift.scene import SceneSpec, generate_scene

    img = generate_scene(SceneSpec(), default_camera(48), seed=3).rgb
    for seed in range(5):
        params = sample_params(DegradationRanges(), np.random.default_rng(seed))
        back = isp_render(srgb_to_raw(img, params), params)
        assert psnr(back, img) > 40.0


def test_tone_curve_inversion():
    x = np.linspace(0, 1, 257)
    for strength in (0.0, 0.25, 0.5, 1.0):
        y = tone_curve(x, strength)
        back = inverse_tone_curve(y, strength)
        assert np.abs(back - x).max() < 1e-6


def test_noiseless_attenuation_is_exact_scaling():
    params = DegradationParams.identity()
    raw = np.full((4, 4, 3), 0.5)
    out = attenuate_and_noise(raw, params, seed=0)
    assert np.array_equal(out, raw)  # attenuation 1, no noise

    p2 = DegradationParams(0.1, 0.0, 0.0, (1.0, 1.0, 1.0), params.ccm, 2.2, 0.0)
    out2 = attenuate_and_noise(raw, p2, seed=0)
    assert np.allclose(out2, 0.05, atol=1e-15)


def test_noise_moments_match_model():
    # sample variance over 10^6 pixels matches shot*att*signal + read^2 within 5%
    signal = 0.8
    params = DegradationParams(0.5, 0.02, 0.01, (1.0, 1.0, 1.0), IDENTITY.ccm, 2.2, 0.0)
    raw = np.full((1000, 1000), signal)
    out = attenuate_and_noise(raw, params, seed=77)
    expected_var = params.shot_gain * params.attenuation * signal + params.read_sigma**2
    measured = out.var()
    assert abs(measured - expected_var) / expected_var < 0.05
    assert out.mean() == pytest.approx(params.attenuation * signal, rel=2e-3)


def test_flat_field_parameter_recovery():
    # regression of variance against attenuated signal recovers (shot, read^2);
    # levels keep the noise well away from the sensor clip at 0 and 1
    shot, read, att = 0.01, 0.01, 0.5
    params = DegradationParams(att, shot, read, (1.0, 1.0, 1.0), IDENTITY.ccm, 2.2, 0.0)
    levels = np.array([0.2, 0.4, 0.6, 0.8])
    signals, variances = [], []
    for i, s in enumerate(levels):
        raw = np.full((1000, 1000), s)
        out = attenuate_and_noise(raw, params, seed=100 + i)
        signals.append(att * s)
        variances.append(out.var())
    slope, intercept = np.polyfit(signals, variances, 1)
    assert abs(slope - shot) / shot < 0.10
    assert abs(np.sqrt(max(intercept, 0.0)) - read) / read < 0.10


def test_monotone_in_attenuation():
    rng = np.random.default_rng(0)
    img = rng.random((16, 16, 3))
    base = DegradationParams.identity()
    raw = srgb_to_raw(img, base)
    values = []
    for att in (0.9, 0.5, 0.2, 0.05):
        p = DegradationParams(att, 0.0, 0.0, (1.0, 1.0, 1.0), base.ccm, 2.2, 0.0)
        values.append(attenuate_and_noise(raw, p, seed=0))
    for brighter, darker in zip(values, values[1:]):
        assert np.all(darker <= brighter + 1e-12)


def test_degrade_darkens(rng):
    img = rng.random((24, 24, 3)) * 0.5 + 0.4
    ranges = DegradationRanges(attenuation=(0.05, 0.05))
    night, params = degrade(img, ranges, seed=4)
    assert params.attenuation == pytest.approx(0.05)
    assert night.mean() < img.mean()


def test_degrade_identity_ranges_is_noop(rng):
    img = rng.random((16, 16, 3))
    night, _ = degrade(img, DegradationRanges.pinned_identity(), seed=9)
    assert psnr(night, img) > 40.0


def test_degrade_deterministic(rng):
    img = rng.random((8, 8, 3))
    a, pa = degrade(img, DegradationRanges(), seed=123)
    b, pb = degrade(img, DegradationRanges(), seed=123)
    assert np.array_equal(a, b)
    assert pa == pb


def test_sampling_covers_endpoints():
    ranges = DegradationRanges()
    rng = np.random.default_rng(5)
    draws = [sample_params(ranges, rng) for _ in range(10_000)]
    att = np.array([p.attenuation for p in draws])
    wb = np.array([g for p in draws for g in p.wb_gains])
    for values, (lo, hi) in ((att, ranges.attenuation), (wb, ranges.wb_gain)):
        width = hi - lo
        assert values.min() <= lo + 0.01 * width
        assert values.max() >= hi - 0.01 * width


def test_params_validation():
    eye = IDENTITY.ccm
    with pytest.raises(ValueError):
        DegradationParams(0.0, 0.0, 0.0, (1, 1, 1), eye)
    with pytest.raises(ValueError):
        DegradationParams(0.5, -0.1, 0.0, (1, 1, 1), eye)
    singular = ((1.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        DegradationParams(0.5, 0.0, 0.0, (1, 1, 1), singular)


def test_ranges_validation():
    with pytest.raises(ValueError):
        DegradationRanges(attenuation=(0.5, 0.2))
    with pytest.raises(ValueError):
        DegradationRanges(attenuation=(0.0, 1.5))
    with pytest.raises(ValueError):
        DegradationRanges(tone_strength=(0.0, 2.0))


def test_params_flat_dict_round_trip():
    params = sample_params(DegradationRanges(), np.random.default_rng(3))
    back = DegradationParams.from_flat_dict(params.to_flat_dict())
    assert back == params


def test_night_degrader_transformer(rng):
    imgs = rng.random((3, 16, 16, 3)).astype(np.float32)
    degrader = NightDegrader(seed=7).fit()
    nights = degrader.transform(imgs)
    assert nights.shape == imgs.shape
    again = NightDegrader(seed=7).fit().transform(imgs)
    assert np.array_equal(nights, again)
    _, params = degrader.transform_with_params(imgs)
    assert len(params) == 3
