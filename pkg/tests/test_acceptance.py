"""Acceptance criteria 1-9.

Each test prints one ``CRITERION <n>: PASS|FAIL|SKIP ...`` line with the
measured numbers and wall time, then asserts. Criterion 9 needs the public
pig-eye dataset and is skipped unless ``LRSPECKLE_PIGEYE_MANIFEST`` names a
manifest listing its eight frames and the averaged reference image.
"""
import os
import time

import numpy as np
import pytest

from lrspeckle.imageio import RawImage, load_manifest, read_image, to_log
from lrspeckle.metrics import PSNR_INF, canny, evaluate, fom, psnr, ssim
from lrspeckle.noise import estimate_sigma
from lrspeckle.pipeline import crop, frame_average, reconstruct, valid_box
from lrspeckle.registration import compose, register_pair, register_stack
from lrspeckle.solver import (
    SolverParams,
    SolverState,
    denoise,
    grad_L,
    grad_N,
    nuclear_norm,
    objective,
    singular_values,
    soft_threshold,
    svt,
)
from lrspeckle.synthetic import SpeckleSpec, log_gamma_sigma, phantom, retina_spec, speckle_stack
from lrspeckle.volume import LogVolume, SigmaMap, grad_adjoint_matrix, grad_matrix, stack_frames

from conftest import dense_grad

pytestmark = pytest.mark.acceptance


def verdict(ok):
    return "PASS" if ok else "FAIL"


def grid_argmin(f, lo, hi, tol=1e-8, points=2001):
    """Nested grid search: refine around the best grid point until spacing < tol."""
    while True:
        xs = np.linspace(lo, hi, points)
        best = xs[np.argmin(f(xs))]
        h = xs[1] - xs[0]
        if h < tol:
            return best
        lo, hi = best - 2 * h, best + 2 * h


def test_criterion_1_prox_oracles(report_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-5, 5)
        tau = rng.uniform(0.01, 3)
        y = grid_argmin(lambda z: tau * np.abs(z) + 0.5 * (z - x) ** 2, -abs(x) - 1, abs(x) + 1)
        worst = max(worst, abs(soft_threshold(x, tau) - y))
    beaten = 0
    for _ in range(20):
        V = rng.normal(size=(12, 4))
        tau = rng.uniform(0.1, 2.0)
        prox = lambda X: nuclear_norm(X) + np.sum((X - V) ** 2) / (2 * tau)
        X = svt(V, tau)
        base = prox(X)
        for _ in range(200):
            if prox(X + rng.normal(scale=rng.choice([1e-3, 1e-2, 1e-1]), size=X.shape)) < base - 1e-12:
                beaten += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and beaten == 0 and elapsed < 5
    report_line(f"CRITERION 1: {verdict(ok)} soft-threshold max |err| vs grid search {worst:.2e}; "
                f"svt beaten by {beaten}/4000 perturbations; {elapsed:.2f}s")
    assert ok


def test_criterion_2_gradient_finite_differences(report_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(3):
        mn, k = 36, 3
        d = lambda r: rng.normal(size=(r, k))
        s = SolverState(L=d(mn), N=d(mn), S1=d(mn), S2=d(2 * mn), eps=np.abs(d(mn)),
                        Y1=d(mn), Y2=d(2 * mn), Y3=d(mn), Y4=d(mn),
                        theta=float(rng.uniform(0.5, 3)), rows=6, cols=6)
        M = d(mn)
        sigma = np.abs(d(mn))
        params = SolverParams()
        for name, analytic in (("L", grad_L(s, M)), ("N", grad_N(s, M, sigma))):
            fd = np.empty_like(analytic)
            h = 1e-6
            for idx in np.ndindex(analytic.shape):
                plus, minus = s.copy(), s.copy()
                getattr(plus, name)[idx] += h
                getattr(minus, name)[idx] -= h
                fd[idx] = (objective(plus, M, sigma, params)
                           - objective(minus, M, sigma, params)) / (2 * h)
            worst = max(worst, np.linalg.norm(fd - analytic) / np.linalg.norm(analytic))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 10
    report_line(f"CRITERION 2: {verdict(ok)} worst relative gradient error {worst:.2e} "
                f"on 6x6x3 states; {elapsed:.2f}s")
    assert ok


def test_criterion_3_gradient_operator(report_line):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_adj = 0.0
    for rows, cols, k in [(4, 4, 3), (7, 5, 2), (16, 9, 4), (32, 32, 8)]:
        u = rng.normal(size=(rows * cols, k))
        v = rng.normal(size=(2 * rows * cols, k))
        lhs = np.vdot(grad_matrix(u, rows, cols), v)
        rhs = np.vdot(u, grad_adjoint_matrix(v, rows, cols))
        worst_adj = max(worst_adj, abs(lhs - rhs))
    P = dense_grad(4, 4)
    X = rng.normal(size=(16, 3))
    exact = np.array_equal(grad_matrix(X, 4, 4), P @ X)
    elapsed = time.perf_counter() - t0
    ok = worst_adj <= 1e-10 and exact
    report_line(f"CRITERION 3: {verdict(ok)} max adjoint gap {worst_adj:.2e}; "
                f"dense 4x4 operator match exact={exact}; {elapsed:.2f}s")
    assert ok


def test_criterion_4_registration_recovery(report_line):
    t0 = time.perf_counter()
    size, margin = 256, 10
    truth = phantom(retina_spec(size + 2 * margin, size + 2 * margin))
    hits, errors = 0, []
    for seed in range(40):
        stack = speckle_stack(truth, SpeckleSpec(frames=2, seed=seed, reference_index=1,
                                                 max_translation=5, max_rotation=2,
                                                 margin=margin))
        est = register_pair(to_log(stack.frames[0]), to_log(stack.frames[1]))
        # est should undo the jitter of frame 0
        r = compose(est, stack.transforms[0])
        err = (abs(r.dx), abs(r.dy), abs((r.theta + 180) % 360 - 180))
        errors.append(err)
        hits += err[0] <= 0.25 and err[1] <= 0.25 and err[2] <= 0.1
    elapsed = time.perf_counter() - t0
    e = np.array(errors)
    ok = hits >= 38 and elapsed < 60
    report_line(f"CRITERION 4: {verdict(ok)} {hits}/40 trials within 0.25px/0.1deg "
                f"(median |dx|,|dy|,|theta| = {np.median(e, 0).round(3).tolist()}); "
                f"{size}x{size} frames; {elapsed:.1f}s")
    assert ok


def test_criterion_5_noise_estimation(report_line):
    t0 = time.perf_counter()
    truth = phantom(retina_spec(128, 128))
    stack = speckle_stack(truth, SpeckleSpec(frames=8, looks=4, seed=5,
                                             max_translation=0, max_rotation=0))
    vol = stack_frames([to_log(f) for f in stack.frames])
    sigma = estimate_sigma(vol)
    r = 7  # half the outer window
    interior = sigma.cube()[r:-r, r:-r, :]
    med = float(np.median(interior))
    true = log_gamma_sigma(4.0)
    rel = med / true - 1
    elapsed = time.perf_counter() - t0
    ok = abs(rel) <= 0.2 and elapsed < 30
    report_line(f"CRITERION 5: {verdict(ok)} median sigma {med:.4f} vs analytic {true:.4f} "
                f"({rel:+.1%}); {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def end_to_end():
    """Seed-0 128x128x8 phantom stack through registration, noise estimation and denoising."""
    t0 = time.perf_counter()
    margin = 10
    truth_big = phantom(retina_spec(128 + 2 * margin, 128 + 2 * margin))
    truth = RawImage(truth_big.pixels[margin:-margin, margin:-margin], 8)
    stack = speckle_stack(truth_big, SpeckleSpec(frames=8, seed=0, margin=margin,
                                                 reference_index=4))
    _, vol, mask = register_stack([to_log(f) for f in stack.frames], reference_index=4)
    sigma = estimate_sigma(vol, mask)
    L, N, report = denoise(vol, sigma)
    elapsed = time.perf_counter() - t0
    return dict(truth=truth, stack=stack, vol=vol, mask=mask, sigma=sigma, L=L, N=N,
                report=report, elapsed=elapsed)


def test_criterion_6_end_to_end_denoising(end_to_end, report_line):
    e = end_to_end
    box = valid_box(e["mask"])
    ref = crop(e["truth"], box)
    images = {
        "denoised": crop(reconstruct(e["L"], e["sigma"]), box),
        "average": crop(frame_average(e["vol"]), box),
        "single": crop(e["stack"].frames[4], box),
    }
    m = {}
    ref_edges = canny(ref)
    for name, img in images.items():
        m[name] = (psnr(img, ref), ssim(img, ref), fom(canny(img), ref_edges))
    sig = e["sigma"].data
    bound = float(np.mean(np.abs(e["N"].data) <= 3 * sig + 0.05 * sig.max()))
    checks = {
        "psnr>=avg+1": m["denoised"][0] >= m["average"][0] + 1,
        "psnr>=single+8": m["denoised"][0] >= m["single"][0] + 8,
        "ssim>avg": m["denoised"][1] > m["average"][1],
        "fom>=avg": m["denoised"][2] >= m["average"][2],
        "bound>=95%": bound >= 0.95,
        "time<120s": e["elapsed"] < 120,
    }
    ok = all(checks.values())
    detail = " ".join(f"{name}[psnr {v[0]:.2f} ssim {v[1]:.4f} fom {v[2]:.4f}]" for name, v in m.items())
    failed = [k for k, v in checks.items() if not v]
    report_line(f"CRITERION 6: {verdict(ok)} {detail}; noise bound {bound:.3f}; "
                f"{e['report'].iterations} iterations; {e['elapsed']:.1f}s"
                + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, f"failed sub-checks: {failed}"


def test_criterion_7_rank_behaviour(report_line):
    t0 = time.perf_counter()
    frame = to_log(phantom(retina_spec(32, 32)))
    M = np.repeat(frame.reshape(-1, 1, order="F"), 8, axis=1)
    vol = LogVolume(M, 32, 32)
    L, N, report = denoise(vol, SigmaMap(np.zeros_like(M), 32, 32))
    s = singular_values(L.data)
    ratio = s[1] / s[0]
    n_rel = np.linalg.norm(N.data) / np.linalg.norm(M)
    elapsed = time.perf_counter() - t0
    ok = ratio <= 1e-3 and n_rel <= 1e-3
    report_line(f"CRITERION 7: {verdict(ok)} s2/s1 = {ratio:.2e} (<= 1e-3: {ratio <= 1e-3}); "
                f"||N||/||M|| = {n_rel:.2e} at sigma=0 (<= 1e-3: {n_rel <= 1e-3}); "
                f"{report.iterations} iterations; {elapsed:.2f}s")
    assert ok


def test_criterion_8_metric_units(report_line):
    t0 = time.perf_counter()
    x = RawImage(np.full((32, 32), 100), 8)
    y = RawImage(np.full((32, 32), 101), 8)
    z = RawImage(np.full((32, 32), 150), 8)
    noisy = RawImage(np.random.default_rng(8).integers(0, 256, (32, 32)), 8)
    ref_edges = np.zeros((11, 11), bool)
    ref_edges[5, 5] = True
    shifted = np.roll(ref_edges, 1, axis=1)
    values = {
        "psnr(x,x)": psnr(x, x),
        "psnr off-by-one": psnr(y, x),
        "ssim(x,x)": ssim(noisy, noisy),
        "ssim 100 vs 150": ssim(x, z),
        "fom shift": fom(shifted, ref_edges),
    }
    checks = [
        values["psnr(x,x)"] == PSNR_INF,
        abs(values["psnr off-by-one"] - 48.1308) <= 1e-3,
        abs(values["ssim(x,x)"] - 1) <= 1e-12,
        abs(values["ssim 100 vs 150"] - 0.92313) <= 1e-4,
        values["fom shift"] == 0.9,
    ]
    elapsed = time.perf_counter() - t0
    ok = all(checks)
    shown = "; ".join(f"{k} = {v:.6g}" for k, v in values.items())
    report_line(f"CRITERION 8: {verdict(ok)} {shown}; {elapsed:.2f}s")
    assert ok


def test_criterion_9_pigeye_dataset(report_line):
    path = os.environ.get("LRSPECKLE_PIGEYE_MANIFEST")
    if not path:
        report_line("CRITERION 9: SKIP optional; set LRSPECKLE_PIGEYE_MANIFEST to run it")
        pytest.skip("pig-eye dataset not available")
    t0 = time.perf_counter()
    manifest = load_manifest(path)
    frames = [read_image(p) for p in manifest.frames[:8]]
    depth = frames[0].bit_depth
    _, vol, mask = register_stack([to_log(f) for f in frames])
    sigma = estimate_sigma(vol, mask)
    L, _, _ = denoise(vol, sigma)
    out = reconstruct(L, sigma, depth)
    rep = evaluate(out, read_image(manifest.reference))[0]
    per_frame = (time.perf_counter() - t0) / len(frames)
    ok = abs(rep.psnr_db - 31.74) <= 1.5 and abs(rep.ssim - 0.91) <= 0.05 and per_frame <= 120
    report_line(f"CRITERION 9: {verdict(ok)} psnr {rep.psnr_db:.2f} dB, ssim {rep.ssim:.4f}, "
                f"{per_frame:.1f}s per frame")
    assert ok
