import numpy as np
import pytest

from vitreoforge import averaging as av
from vitreoforge import phantom as ph
from vitreoforge.errors import InvalidInputError


# ---- oracles ----------------------------------------------------------------

def brute_weighted_average(frames, masks):
    """Per-pixel python-loop reference for the weighted mean with fallback."""
    h, w = frames[0].shape
    out = np.zeros((h, w), dtype=np.float64)
    cov = np.zeros((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            vals = [float(f[i, j]) for f, m in zip(frames, masks) if not m[i, j]]
            if vals:
                out[i, j] = sum(vals) / len(vals)
                cov[i, j] = len(vals)
            else:
                out[i, j] = sum(float(f[i, j]) for f in frames) / len(frames)
    return out, cov


def brute_dilate(mask, k):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            for di in range(-k, k + 1):
                for dj in range(-k, k + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w and mask[ii, jj]:
                        out[i, j] = True
    return out


def brute_erode(mask, k):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            ok = True
            for di in range(-k, k + 1):
                for dj in range(-k, k + 1):
                    ii, jj = i + di, j + dj
                    if not (0 <= ii < h and 0 <= jj < w and mask[ii, jj]):
                        ok = False
            out[i, j] = ok
    return out


def brute_close(mask, k):
    return brute_erode(brute_dilate(mask, k), k)


def brute_refine(mask):
    h, w = mask.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            n = 0
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < h and 0 <= jj < w and mask[ii, jj]:
                    n += 1
            out[i, j] = n >= 3
    return out


def iou(a, b):
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return inter / union if union else 1.0


# ---- thresholding -----------------------------------------------------------

def test_binary_threshold_keeps_exact_zeros():
    img = np.array([[0.0, 0.1], [-0.5, 1.0]], dtype=np.float32)
    m = av.binary_threshold(img, 0.0)
    assert m.tolist() == [[True, False], [True, False]]


# ---- morphological close ----------------------------------------------------

def test_close_fills_single_gap_in_strip():
    # two true runs separated by one false pixel, 3x3 kernel: gap is bridged
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 0:2] = True
    mask[2, 3:5] = True
    closed = av.morph_close(mask, 1)
    assert closed.tolist() == brute_close(mask, 1).tolist()
    assert closed[2, 2]


def test_close_matches_brute_force_on_random_masks():
    rng = np.random.default_rng(4)
    for trial in range(12):
        mask = rng.random((10, 12)) < 0.35
        for k in (1, 2):
            got = av.morph_close(mask, k)
            want = brute_close(mask, k)
            assert np.array_equal(got, want), f"trial {trial} k={k}"


def test_close_zero_kernel_is_identity():
    rng = np.random.default_rng(5)
    mask = rng.random((6, 6)) < 0.5
    assert np.array_equal(av.morph_close(mask, 0), mask)
    with pytest.raises(InvalidInputError):
        av.morph_close(mask, -1)


# ---- neighbor refinement ----------------------------------------------------

def test_refine_matches_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(12):
        mask = rng.random((9, 11)) < 0.5
        assert np.array_equal(av.neighbor_refine(mask), brute_refine(mask))


def test_refine_kills_isolated_and_keeps_interior():
    mask = np.zeros((7, 7), dtype=bool)
    mask[3, 3] = True
    assert not av.neighbor_refine(mask).any()
    mask = np.zeros((7, 7), dtype=bool)
    mask[2:5, 2:5] = True
    refined = av.neighbor_refine(mask)
    assert refined[3, 3]
    assert not refined[2, 2]  # corner has only 2 true 4-neighbors


def test_refine_is_single_pass_not_iterated():
    # 3-wide cross: center survives (4 neighbors), arms die (1 each).
    # an iterated pass would then kill the center too.
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 1:4] = True
    mask[1:4, 2] = True
    refined = av.neighbor_refine(mask)
    assert refined[2, 2] and refined.sum() == 1


# ---- strip filter / full detection ------------------------------------------

def test_detect_keeps_wide_strip_drops_blob():
    img = np.full((32, 40), 0.5, dtype=np.float32)
    img[10:14, :] = 0.0       # full-width motion strip
    img[24:27, 5:12] = 0.0    # compact dropout, spans < half the width
    mask = av.detect_artifact(img)
    assert mask[11, 20]
    assert not mask[25, 8]


def test_detect_empty_on_clean_frame():
    img = np.full((16, 16), 0.3, dtype=np.float32)
    assert not av.detect_artifact(img).any()


def test_detect_iou_on_speckled_phantoms():
    rng = np.random.default_rng(7)
    scores = []
    for trial in range(10):
        r0 = int(rng.integers(5, 40))
        height = int(rng.integers(4, 12))
        spec = ph.PhantomSpec(
            height=64,
            width=64,
            seed=100 + trial,
            artifact_strips=((r0, r0 + height, 0),),
        )
        _, frames = ph.generate_art_series(spec, 1)
        truth = np.zeros((64, 64), dtype=bool)
        truth[r0 : r0 + height] = True
        scores.append(iou(av.detect_artifact(frames[0]), truth))
    assert np.mean(scores) >= 0.9, scores


def test_detect_idempotent_on_masked_frame():
    img = np.full((48, 48), 0.4, dtype=np.float32)
    img[20:28, :] = 0.0
    first = av.detect_artifact(img)
    masked = img.copy()
    masked[first] = 0.0
    second = av.detect_artifact(masked)
    assert np.array_equal(first, second)


# ---- weighted average -------------------------------------------------------

def test_weighted_average_matches_brute_force():
    rng = np.random.default_rng(8)
    for trial in range(25):
        n = int(rng.integers(1, 7))
        frames = [rng.random((8, 8)).astype(np.float64) for _ in range(n)]
        masks = [rng.random((8, 8)) < 0.4 for _ in range(n)]
        got, cov = av.weighted_average(frames, masks)
        want, wcov = brute_weighted_average(frames, masks)
        assert np.array_equal(cov, wcov)
        assert np.max(np.abs(got - want)) <= 1e-12, f"trial {trial}"


def test_weighted_average_all_masked_falls_back_to_plain_mean():
    frames = [np.full((2, 2), v, dtype=np.float32) for v in (0.0, 0.2, 0.7)]
    masks = [np.ones((2, 2), dtype=bool)] * 3
    out, cov = av.weighted_average(frames, masks)
    assert np.allclose(out, 0.3, atol=1e-6)
    assert np.all(cov == 0)


def test_weighted_average_ignores_masked_values():
    f0 = np.full((2, 2), 0.4, dtype=np.float32)
    f1 = np.full((2, 2), 0.8, dtype=np.float32)
    m0 = np.zeros((2, 2), dtype=bool)
    m1 = np.zeros((2, 2), dtype=bool)
    m1[0, 0] = True
    out, cov = av.weighted_average([f0, f1], [m0, m1])
    assert out[0, 0] == pytest.approx(0.4)
    assert out[1, 1] == pytest.approx(0.6)
    assert cov[0, 0] == 1 and cov[1, 1] == 2


def test_weighted_differs_from_arithmetic_only_inside_strip():
    spec = ph.PhantomSpec(seed=21, artifact_strips=((30, 36, 1),))
    _, frames = ph.generate_art_series(spec, 3)
    masks = [av.detect_artifact(f) for f in frames]
    wavg, _ = av.weighted_average(frames, masks)
    aavg = av.arithmetic_average(frames)
    differs = ~np.isclose(wavg, aavg, atol=1e-7)
    rows = np.unique(np.nonzero(differs)[0])
    assert len(rows) > 0
    assert set(rows.tolist()) <= set(range(30, 36))


def test_averaging_input_validation():
    with pytest.raises(InvalidInputError):
        av.weighted_average([], [])
    f = np.ones((2, 2), dtype=np.float32)
    with pytest.raises(InvalidInputError):
        av.weighted_average([f], [])
    with pytest.raises(InvalidInputError):
        av.weighted_average([f, np.ones((3, 3), dtype=np.float32)], [f > 0, f > 0])
    with pytest.raises(InvalidInputError):
        av.arithmetic_average([])


# ---- pseudoART100 -----------------------------------------------------------

def test_pseudo_art100_requires_ten_frames():
    spec = ph.PhantomSpec(seed=30)
    _, frames = ph.generate_art_series(spec, 9)
    with pytest.raises(InvalidInputError):
        av.pseudo_art100(frames)
    avg, masks, cov = av.pseudo_art100(frames, expected_frames=None)
    assert avg.shape == (64, 64) and len(masks) == 9


def test_pseudo_art100_improves_over_single_frame():
    spec = ph.PhantomSpec(seed=31, artifact_strips=((12, 18, 0), (40, 45, 3)))
    clean, frames = ph.generate_art_series(spec, 10)
    avg, masks, cov = av.pseudo_art100(frames)
    err_avg = float(np.mean((avg - clean) ** 2))
    err_single = float(np.mean((frames[1] - clean) ** 2))
    assert err_avg < err_single / 3
    # strip rows recovered from the other frames, nowhere near zero
    assert avg[12:18].min() > 0.01
    assert cov[12:18].min() >= 8


def test_snr_gain_of_ten_frame_averaging_additive_noise():
    # with additive unit-variance noise, a 10-frame mean cuts MSE by 10x,
    # i.e. a 10 dB PSNR gain
    rng = np.random.default_rng(9)
    gains = []
    for _ in range(30):
        clean = np.full((24, 24), 0.5)
        frames = [clean + rng.normal(0, 0.05, clean.shape) for _ in range(10)]
        avg = av.arithmetic_average(frames)
        mse1 = np.mean((frames[0] - clean) ** 2)
        mse10 = np.mean((avg - clean) ** 2)
        gains.append(10 * np.log10(mse1 / mse10))
    assert abs(np.mean(gains) - 10.0) < 0.5
