import cv2
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from livenesskit import datakit as dk, imgproc as ip
from livenesskit.errors import DataError, ProtocolViolation


def rgb(gray):
    return np.repeat(np.asarray(gray, dtype=np.uint8)[..., None], 3, axis=2)


def checkerboard(n=32, cell=2):
    idx = (np.arange(n) // cell) % 2
    return rgb(255 * (idx[:, None] ^ idx[None, :]))


images = st.integers(0, 10_000).map(
    lambda s: np.random.default_rng(s).integers(0, 256, (int(4 + s % 13), int(3 + s % 7), 3), dtype=np.uint8))


def test_laplacian_constant_and_impulse():
    assert ip.laplacian_variance(rgb(np.full((6, 6), 77))) == 0.0
    img = np.zeros((5, 5))
    img[2, 2] = 255
    # interior responses: -1020 at the centre, 255 at its four neighbours, 0 at the corners
    assert ip.laplacian_variance(rgb(img)) == pytest.approx(144500.0)


def test_laplacian_impulse_direct_oracle():
    img = np.zeros((5, 5))
    img[2, 2] = 255
    resp = [sum(img[i + a, j + b] * ip.LAPLACIAN[a, b] for a in range(3) for b in range(3))
            for i in range(3) for j in range(3)]
    assert ip.laplacian_variance(rgb(img)) == pytest.approx(np.var(resp))


def test_sharper_scores_higher():
    sharp = checkerboard()
    blurred = cv2.GaussianBlur(sharp, (0, 0), 2.0)
    assert ip.laplacian_variance(sharp) > ip.laplacian_variance(blurred)
    assert ip.blur_score(sharp) > ip.blur_score(blurred)


def test_too_small_rejected():
    with pytest.raises(DataError):
        ip.laplacian_variance(rgb(np.zeros((2, 5))))


def test_rms_contrast_values():
    assert ip.rms_contrast(rgb(np.full((4, 4), 9))) == 0.0
    half = np.zeros((4, 4))
    half[:, 2:] = 255
    assert ip.rms_contrast(rgb(half)) == pytest.approx(0.5)
    assert ip.contrast_score(rgb(half)) == pytest.approx(1.0)


def test_rms_contrast_shift_invariant():
    g = np.random.default_rng(0).integers(0, 200, (8, 8))
    assert ip.rms_contrast(rgb(g)) == pytest.approx(ip.rms_contrast(rgb(g + 40)))


@pytest.mark.parametrize("m,score", [(128, 1.0), (0, 0.0), (20, 0.5), (40, 1.0), (220, 1.0), (255, 0.0)])
def test_brightness_falloff(m, score):
    assert ip.brightness_score(rgb(np.full((4, 4), m))) == pytest.approx(score)


def test_constant_image_blur_zero():
    assert ip.blur_score(rgb(np.full((8, 8), 100))) == 0.0


@pytest.mark.parametrize("subs,composite,passes", [
    ((1, 1, 1, 1), 1.0, True),
    ((1, 1, 1, 0), 0.80, True),
    ((0.5, 0.5, 0.5, 0.5), 0.50, False),
])
def test_composite_weights(subs, composite, passes):
    rep = ip.QualityReport(*subs)
    assert rep.composite == pytest.approx(composite)
    assert ip.passes_filter(rep) is passes


def test_threshold_is_strict():
    rep = ip.QualityReport(0.65, 0.65, 0.65, 0.65)
    assert not ip.passes_filter(rep, 0.65)
    assert ip.passes_filter(rep, 0.0)


def test_weights_sum_to_one():
    assert sum(ip.WEIGHTS.values()) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(images)
def test_scores_bounded_and_flip_invariant(img):
    q = ip.composite_quality(img)
    for v in (q.sharpness, q.contrast, q.brightness, q.blur, q.composite):
        assert 0.0 <= v <= 1.0
    f = ip.hflip(img)
    assert ip.laplacian_variance(f) == pytest.approx(ip.laplacian_variance(img))
    assert ip.rms_contrast(f) == pytest.approx(ip.rms_contrast(img))


@settings(max_examples=40, deadline=None)
@given(st.tuples(*[st.floats(0, 1)] * 4), st.integers(0, 3), st.floats(0, 1))
def test_composite_monotone(subs, which, bump):
    lo = ip.QualityReport(*subs)
    raised = list(subs)
    raised[which] = max(raised[which], bump)
    assert ip.QualityReport(*raised).composite >= lo.composite


def test_stage_examples():
    assert ip.contrast_scale(np.array([[100]], np.uint8))[0, 0] == 115
    assert ip.contrast_scale(np.array([[250]], np.uint8))[0, 0] == 255
    g = ip.gamma_correct(np.array([[0, 255, 128]], np.uint8))
    assert g[0, 0] == 0 and g[0, 1] == 255 and g[0, 2] > 128


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_enhance_stages_keep_u8(seed):
    img = np.random.default_rng(seed).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    for stage in (ip.bilateral, ip.clahe_lab, ip.unsharp_mask):
        out = stage(img)
        assert out.dtype == np.uint8 and out.shape == img.shape
    assert ip.enhance(img).dtype == np.uint8


def test_enhance_improves_degraded_face():
    synth = dk.synth_generate(2, 2, dk.DOMAIN_A, seed=3, with_quality=False)
    before, after = [], []
    for img in synth.images.values():
        big = cv2.resize(img, (128, 128), interpolation=cv2.INTER_LINEAR)
        degraded = ip._clip_u8(0.45 * cv2.GaussianBlur(big, (0, 0), 1.5).astype(float) + 10)
        before.append(ip.composite_quality(degraded).composite)
        after.append(ip.composite_quality(ip.enhance(degraded)).composite)
    assert np.mean(after) > np.mean(before)


def test_enhance_rejects_gray():
    with pytest.raises(DataError):
        ip.enhance(np.zeros((8, 8), np.uint8))


def test_augment_identity_when_nothing_fires():
    img = np.random.default_rng(0).integers(0, 256, (12, 12, 3), dtype=np.uint8)
    res = ip.augment(img, np.random.default_rng(1), ip.AugmentPolicy.none())
    assert np.array_equal(res.image, img) and res.log == []


def test_hflip_involution():
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    assert np.array_equal(ip.hflip(ip.hflip(img)), img)


def test_augment_log_reproducible():
    img = np.random.default_rng(0).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(42)
        runs.append([ip.augment(img, rng).log for _ in range(20)])
    assert runs[0] == runs[1]
    ops = {e["op"] for log in runs[0] for e in log}
    assert ops == {"rotate", "hflip", "color", "noise", "motion_blur"}
    for log in runs[0]:
        for e in log:
            if e["op"] == "rotate":
                assert -20 <= e["degrees"] <= 20
            if e["op"] == "noise":
                assert 0.01 <= e["sigma"] <= 0.03


def test_augment_rates_match_policy():
    img = np.zeros((8, 8, 3), np.uint8)
    rng = np.random.default_rng(5)
    counts = {"rotate": 0, "hflip": 0, "noise": 0}
    n = 2000
    for _ in range(n):
        for e in ip.augment(img, rng).log:
            if e["op"] in counts:
                counts[e["op"]] += 1
    assert abs(counts["rotate"] / n - 0.5) < 0.05
    assert abs(counts["hflip"] / n - 0.5) < 0.05
    assert abs(counts["noise"] / n - 0.3) < 0.05


@pytest.mark.parametrize("split", ["val", "test"])
def test_augment_refuses_eval_splits(split):
    with pytest.raises(ProtocolViolation):
        ip.augment(np.zeros((4, 4, 3), np.uint8), np.random.default_rng(0), split=split)


def test_image_io_roundtrip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (9, 7, 3), dtype=np.uint8)
    for ext in ("png", "bmp"):
        p = tmp_path / f"x.{ext}"
        ip.write_image(p, img)
        assert np.array_equal(ip.read_image(p), img)
    with pytest.raises(ValueError):
        ip.write_image(tmp_path / "x.jpg", img)
    (tmp_path / "bad.png").write_bytes(b"nope")
    with pytest.raises(DataError):
        ip.read_image(tmp_path / "bad.png")


def test_quality_row_format():
    row = ip.quality_row("a/b.png", ip.QualityReport(1, 1, 1, 0))
    assert row == ["a/b.png", "1.000000", "1.000000", "1.000000", "0.000000", "0.800000", "1"]
    assert len(row) == len(ip.QUALITY_COLUMNS)
