import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lrspeckle.errors import ParameterError, ShapeError
from lrspeckle.imageio import RawImage, Roi
from lrspeckle.metrics import (
    CSV_COLUMNS,
    PSNR_INF,
    canny,
    evaluate,
    fom,
    psnr,
    read_csv,
    ssim,
    write_csv,
)


def img(a, depth=8):
    return RawImage(np.asarray(a), depth)


def test_psnr_identical_is_inf_sentinel():
    x = img(np.arange(64).reshape(8, 8))
    assert psnr(x, x) == PSNR_INF and math.isinf(PSNR_INF)


def test_psnr_off_by_one():
    x = np.full((16, 16), 100)
    assert psnr(img(x + 1), img(x)) == pytest.approx(48.1308, abs=1e-3)
    # 16-bit uses 65535 as peak
    assert psnr(img(x + 1, 16), img(x, 16)) == pytest.approx(20 * math.log10(65535), abs=1e-9)


def test_psnr_rejects_mismatch():
    with pytest.raises(ShapeError):
        psnr(img(np.zeros((4, 4))), img(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        psnr(img(np.zeros((4, 4)), 16), img(np.zeros((4, 4))))


@given(arrays(np.uint8, (12, 13)))
def test_ssim_identity_and_symmetry(a):
    x = img(a)
    assert abs(ssim(x, x) - 1.0) <= 1e-12
    y = img(255 - a)
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)
    assert ssim(x, y) <= 1.0 + 1e-12


def test_ssim_constant_images():
    assert ssim(img(np.full((20, 20), 100)), img(np.full((20, 20), 150))) == pytest.approx(
        0.92313, abs=1e-4
    )


def test_ssim_agrees_with_scikit_image(rng):
    skm = pytest.importorskip("skimage.metrics")
    a = rng.integers(0, 256, size=(40, 37))
    b = np.clip(a + rng.normal(0, 20, size=a.shape), 0, 255).astype(int)
    ref = skm.structural_similarity(
        a.astype(float), b.astype(float), data_range=255, gaussian_weights=True,
        sigma=1.5, use_sample_covariance=False,
    )
    assert ssim(img(b), img(a)) == pytest.approx(ref, abs=1e-6)


def test_ssim_small_image_rejected():
    with pytest.raises(ShapeError):
        ssim(img(np.zeros((5, 20))), img(np.zeros((5, 20))))


def step_image():
    x = np.full((32, 32), 40)
    x[:, 16:] = 200
    return img(x)


def test_canny_finds_thin_vertical_edge():
    edges = canny(step_image())
    cols = np.flatnonzero(edges.any(axis=0))
    assert set(cols) <= {15, 16}
    # one pixel wide on every row
    assert np.all(edges.sum(axis=1) == 1)


def test_canny_constant_image_has_no_edges():
    assert not canny(img(np.full((10, 10), 77))).any()


def test_fom_examples():
    ref = np.zeros((9, 9), bool)
    ref[4, 4] = True
    assert fom(ref, ref) == 1.0
    shifted = np.zeros_like(ref)
    shifted[4, 5] = True
    assert fom(shifted, ref) == 0.9
    assert fom(np.zeros_like(ref), ref) == 0.0
    with pytest.raises(ParameterError):
        fom(ref, np.zeros_like(ref))


@given(st.integers(0, 2**32 - 1))
def test_fom_bounded(seed):
    r = np.random.default_rng(seed)
    a = r.random((12, 12)) > 0.8
    b = r.random((12, 12)) > 0.8
    b[0, 0] = True
    assert 0.0 <= fom(a, b) <= 1.0


def test_evaluate_regions_and_csv(tmp_path):
    ref = step_image()
    noisy = img(np.clip(ref.pixels.astype(int) + 3, 0, 255))
    flat_roi = Roi("flat", 0, 0, 12, 12)
    reports = evaluate(noisy, ref, [Roi("edge", 8, 8, 16, 16), flat_roi])
    assert [r.region for r in reports] == ["entire", "edge", "flat"]
    assert math.isnan(reports[2].fom)  # no edges in a flat reference
    with pytest.raises(ParameterError):
        evaluate(noisy, ref, [Roi("out", 30, 0, 5, 5)])
    rows = [("noisy", r) for r in reports] + [("ref", evaluate(ref, ref)[0])]
    write_csv(rows, tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    back = read_csv(tmp_path / "m.csv")
    assert back[-1][1].psnr_db == PSNR_INF
    assert back[0][1].psnr_db == pytest.approx(reports[0].psnr_db, abs=1e-6)
    assert math.isnan(back[2][1].fom)
