import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dffn.datagen import (ImagePair, SynthesisParams, crop_and_augment, darken, hflip, load_pairs,
                          noise_sigma, pair_rng, procedural_scene, read_manifest, synth_dir,
                          synthesize_pair, toy_corpus)
from dffn.imageio import write_image


def curve_loop(x, alpha, n):
    for _ in range(n):
        x = x + alpha * x * (1 - x)
    return x


def test_darken_reference_value():
    # eight scalar iterations of the curve, done in float64
    expected = curve_loop(0.8, -0.2, 8)
    assert expected == pytest.approx(0.458047, abs=1e-6)
    assert darken(np.array([0.8]), -0.2, 8)[0] == pytest.approx(expected, abs=1e-6)


def test_darken_fixed_points():
    out = darken(np.array([0.0, 1.0]), -0.4)
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_darken_alpha_range():
    with pytest.raises(ValueError):
        darken(np.array([0.5]), 0.3)
    with pytest.raises(ValueError):
        darken(np.array([0.5]), -1.5)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.001, 0.999), a1=st.floats(-1, 0), a2=st.floats(-1, 0))
def test_darken_monotone_in_alpha(x, a1, a2):
    lo, hi = sorted((a1, a2))
    assert darken(np.array([x]), lo)[0] <= darken(np.array([x]), hi)[0] + 1e-7


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0, 1), a=st.floats(-1, 0), n=st.integers(1, 12))
def test_darken_stays_in_unit_interval(x, a, n):
    y = darken(np.array([x]), a, n)[0]
    assert 0.0 <= y <= 1.0


def test_noise_sigma_mapping():
    p = SynthesisParams()
    assert noise_sigma(-0.1, p) == pytest.approx(0.01)
    assert noise_sigma(-0.4, p) == pytest.approx(0.10)
    assert noise_sigma(-0.25, p) == pytest.approx(0.055)


def test_low_is_darker_without_noise(rng):
    p = SynthesisParams(sigma_base=0.0, sigma_slope=0.0)
    gt = rng.random((3, 16, 16)).astype(np.float32)
    pair = synthesize_pair(gt, p, source_id="x")
    assert pair.low.mean() < gt.mean()
    assert np.all(pair.low <= gt + 1e-7)


def test_synthesis_is_pure_function_of_seed_and_source(rng):
    gt = rng.random((3, 16, 16)).astype(np.float32)
    p = SynthesisParams(seed=7)
    a = synthesize_pair(gt, p, source_id="img1")
    b = synthesize_pair(gt, p, source_id="img1")
    c = synthesize_pair(gt, p, source_id="img2")
    np.testing.assert_array_equal(a.low, b.low)
    assert a.meta == b.meta
    assert not np.array_equal(a.low, c.low)


def test_alpha_histogram_is_uniform(rng):
    p = SynthesisParams()
    gt = rng.random((3, 8, 8)).astype(np.float32)
    alphas = np.sort([synthesize_pair(gt, p, source_id=f"s{i}").meta["alpha"] for i in range(100)])
    u = (alphas - p.alpha_min) / (p.alpha_max - p.alpha_min)
    ecdf_hi = np.arange(1, 101) / 100
    ecdf_lo = np.arange(0, 100) / 100
    ks = max(np.max(ecdf_hi - u), np.max(u - ecdf_lo))
    assert ks < 0.2
    assert np.all((alphas >= p.alpha_min) & (alphas <= p.alpha_max))


def test_pair_rng_is_order_independent():
    a = pair_rng(1, "x").random()
    pair_rng(1, "y").random()
    assert pair_rng(1, "x").random() == a


def test_params_validation():
    with pytest.raises(ValueError):
        SynthesisParams(alpha_min=-0.1, alpha_max=-0.4)
    with pytest.raises(ValueError):
        SynthesisParams(n_iters=0)


def _pair(rng, h=16, w=24):
    gt = rng.random((3, h, w)).astype(np.float32)
    return ImagePair(gt * 0.3, gt, {"source": "t"})


def test_full_frame_crop_without_flips_is_identity(rng):
    pair = _pair(rng, 16, 16)
    out = crop_and_augment(pair, 16, rng, flips=False)
    np.testing.assert_array_equal(out.low, pair.low)
    np.testing.assert_array_equal(out.gt, pair.gt)


def test_crop_alignment(rng):
    pair = _pair(rng)
    for _ in range(10):
        out = crop_and_augment(pair, 8, rng)
        top, left = out.meta["top"], out.meta["left"]
        ref = pair.gt[:, top:top + 8, left:left + 8]
        if out.meta["hflip"]:
            ref = ref[:, :, ::-1]
        if out.meta["vflip"]:
            ref = ref[:, ::-1, :]
        np.testing.assert_array_equal(out.gt, ref)
        np.testing.assert_array_equal(out.low, 0.3 * out.gt)


def test_crop_is_seed_deterministic(rng):
    pair = _pair(rng)
    a = crop_and_augment(pair, 8, np.random.default_rng(5))
    b = crop_and_augment(pair, 8, np.random.default_rng(5))
    assert a.meta == b.meta


def test_double_hflip_is_identity(rng):
    x = rng.random((3, 5, 7))
    np.testing.assert_array_equal(hflip(hflip(x)), x)


def test_crop_errors(rng):
    with pytest.raises(ValueError, match="exceeds"):
        crop_and_augment(_pair(rng), 24, rng)
    with pytest.raises(ValueError, match="divisible"):
        crop_and_augment(_pair(rng), 12, rng)


def test_procedural_scene(rng):
    img = procedural_scene(32, rng)
    assert img.shape == (3, 32, 32) and img.dtype == np.float32
    assert img.min() >= 0 and img.max() <= 1 and img.std() > 0.05


def test_toy_corpus_deterministic():
    a, b = toy_corpus(3, 16, seed=2), toy_corpus(3, 16, seed=2)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.low, q.low)


def test_synth_dir_layout(tmp_path, rng):
    src = tmp_path / "src"
    for name in ("a", "b"):
        write_image(src / f"{name}.png", rng.random((3, 16, 16)))
    rows = synth_dir(src, tmp_path / "out", SynthesisParams(seed=1))
    assert [r["name"] for r in rows] == ["a", "b"]
    manifest = read_manifest(tmp_path / "out" / "manifest.tsv")
    assert [r["name"] for r in manifest] == ["a", "b"]
    assert all(-0.4 <= r["alpha"] <= -0.1 for r in manifest)
    assert (tmp_path / "out" / "low" / "a.png").exists()
    pairs = load_pairs(tmp_path / "out")
    assert len(pairs) == 2 and pairs[0].low.mean() < pairs[0].gt.mean()


def test_load_pairs_empty(tmp_path):
    (tmp_path / "gt").mkdir()
    with pytest.raises(ValueError, match="no image pairs"):
        load_pairs(tmp_path)
