"""Shared synthetic fixture for the experiment scripts."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lrspeckle.imageio import RawImage, to_log
from lrspeckle.noise import estimate_sigma
from lrspeckle.pipeline import crop, valid_box
from lrspeckle.registration import register_stack
from lrspeckle.synthetic import SpeckleSpec, phantom, retina_spec, speckle_stack


@dataclass
class Fixture:
    truth: RawImage
    frames: list
    volume: object
    mask: np.ndarray
    sigma: object

    def score_region(self, img):
        box = valid_box(self.mask)
        return crop(img, box), crop(self.truth, box)


def make_fixture(size=128, frames=8, seed=0, margin=10, looks=4.0) -> Fixture:
    big = phantom(retina_spec(size + 2 * margin, size + 2 * margin))
    truth = RawImage(big.pixels[margin:margin + size, margin:margin + size], big.bit_depth)
    ref = frames // 2
    stack = speckle_stack(big, SpeckleSpec(frames=frames, looks=looks, seed=seed,
                                           margin=margin, reference_index=ref))
    _, vol, mask = register_stack([to_log(f) for f in stack.frames], reference_index=ref)
    sigma = estimate_sigma(vol, mask)
    return Fixture(truth, stack.frames, vol, mask, sigma)
