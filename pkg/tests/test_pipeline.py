import numpy as np
import pytest

from lrspeckle.errors import ParameterError, ShapeError
from lrspeckle.imageio import to_log
from lrspeckle.pipeline import frame_average, log_average, reconstruct, valid_box
from lrspeckle.volume import LogVolume, SigmaMap, stack_frames


def test_valid_box_is_fully_valid(rng):
    mask = np.ones((30, 40), bool)
    mask[:3] = False
    mask[:, -5:] = False
    mask[10, 0] = False
    roi = valid_box(mask)
    assert mask[roi.slices()].all()
    assert roi.y == 3 and roi.x + roi.w <= 35
    with pytest.raises(ShapeError):
        valid_box(np.zeros((4, 4), bool))


def test_averages():
    a = np.full((4, 4), np.log(10.0))
    b = np.full((4, 4), np.log(40.0))
    vol = stack_frames([a, b])
    assert np.all(frame_average(vol).pixels == 25)
    assert np.all(log_average(vol).pixels == 20)


def test_reconstruct_bias_correction():
    L = LogVolume(np.full((16, 2), np.log(100.0)), 4, 4)
    sigma = SigmaMap(np.full((16, 2), 0.5), 4, 4)
    assert np.all(reconstruct(L, sigma, bias_correction=False).pixels == 100)
    assert np.all(reconstruct(L, sigma).pixels == round(100 * np.exp(0.125)))
    with pytest.raises(ParameterError):
        reconstruct(L, None)
    with pytest.raises(ParameterError):
        reconstruct(L, sigma, bit_depth=12)


def test_bias_correction_is_right_for_lognormal_speckle():
    # for log-normal mean-one noise the sigma^2/2 correction is exact
    r = np.random.default_rng(3)
    s = 0.5
    noise = np.exp(s * r.standard_normal((200_000,)) - s * s / 2)
    assert noise.mean() == pytest.approx(1.0, abs=0.005)
    assert np.exp(np.log(noise).mean() + s * s / 2) == pytest.approx(1.0, abs=0.005)
