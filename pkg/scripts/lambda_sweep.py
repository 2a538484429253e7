"""Gradient-sparsity weight versus PSNR, SSIM and edge preservation (FOM).

    python scripts/lambda_sweep.py --lams 0.02 0.05 0.1 0.2 0.4 --seeds 0 1 2
"""
import argparse

import numpy as np

from lrspeckle.metrics import canny, fom, psnr, ssim
from lrspeckle.pipeline import frame_average, reconstruct
from lrspeckle.solver import SolverParams, denoise

from _fixture import make_fixture


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lams", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.4])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args()

    fixtures = [make_fixture(seed=s) for s in args.seeds]

    def score(img, fx):
        a, ref = fx.score_region(img)
        return psnr(a, ref), ssim(a, ref), fom(canny(a), canny(ref))

    base = np.mean([score(frame_average(fx.volume), fx) for fx in fixtures], axis=0)
    print(f"average      psnr {base[0]:.2f}  ssim {base[1]:.4f}  fom {base[2]:.4f}")
    for lam in args.lams:
        out = []
        for fx in fixtures:
            L, _, _ = denoise(fx.volume, fx.sigma, SolverParams(lam=lam))
            out.append(score(reconstruct(L, fx.sigma), fx))
        m = np.mean(out, axis=0)
        print(f"lam={lam:<8g} psnr {m[0]:.2f}  ssim {m[1]:.4f}  fom {m[2]:.4f}")


if __name__ == "__main__":
    main()
