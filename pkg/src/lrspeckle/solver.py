"""Augmented-Lagrangian solver for low-rank + sparse-gradient speckle removal.

The registered log-domain stack ``M`` is split as ``M = L + N`` where ``L``
should be low rank across frames with sparse spatial gradients and the
noise obeys ``|N| <= 3 sigma``. With auxiliary variables ``S1 ~ L``,
``S2 ~ P L`` and a slack ``eps >= 0`` the constraint residuals are

    G1 = S1 - L
    G2 = S2 - P L
    G3 = M - L - N
    G4 = N*N - 9 sigma*sigma + eps

and the augmented Lagrangian is

    f = ||S1||_* + lam ||S2||_1 + sum_j <Yj, Gj> + theta/2 ||Gj||_F^2.

Each iteration takes a proximal step in ``S1`` (singular value thresholding)
and ``S2`` (soft thresholding), one gradient step in ``L`` and ``N``, a
closed-form clamped update of ``eps``, a multiplier step and a penalty
increase ``theta <- min(rho theta, theta_max)``.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError, SolverError
from .volume import LogVolume, SigmaMap, grad_adjoint_matrix, grad_matrix

PAPER_LITERAL = "paper-literal"
STANDARD = "standard"
JACOBI = "jacobi"
GAUSS_SEIDEL = "gauss-seidel"


@dataclass(frozen=True)
class SolverParams:
    lam: float = 0.2
    theta0: float = 1e-2
    rho: float = 1.6
    theta_max: float = 1e1
    step_L: float = 1e-2
    step_N: float = 5e-2
    max_iters: int = 100
    tol: float = 1e-4
    # "paper-literal": Y += G / theta, "standard": Y += theta * G.
    # The literal rule blows the multipliers up while theta is small
    # (1 / theta0 = 100), so the standard rule is the default.
    multiplier_step_mode: str = STANDARD
    inner_steps: int = 1
    # "jacobi": N and eps see the previous L and N; "gauss-seidel": the fresh ones
    sweep: str = GAUSS_SEIDEL
    # cap the N learning rate elementwise at 1 / (local curvature)
    safeguard_N: bool = True

    def __post_init__(self):
        for name in ("lam", "theta0", "rho", "theta_max", "step_L", "step_N", "tol"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"solver parameter {name} must be positive")
        if not self.rho > 1:
            raise ParameterError("solver parameter rho must exceed 1")
        if self.theta0 > self.theta_max:
            raise ParameterError("solver parameter theta0 must not exceed theta_max")
        if self.max_iters < 1 or self.inner_steps < 1:
            raise ParameterError("max_iters and inner_steps must be >= 1")
        if self.sweep not in (JACOBI, GAUSS_SEIDEL):
            raise ParameterError(f"sweep must be {JACOBI!r} or {GAUSS_SEIDEL!r}")
        if self.multiplier_step_mode not in (PAPER_LITERAL, STANDARD):
            raise ParameterError(
                f"multiplier_step_mode must be {PAPER_LITERAL!r} or {STANDARD!r}"
            )


@dataclass
class SolverState:
    L: np.ndarray
    N: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    eps: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    Y3: np.ndarray
    Y4: np.ndarray
    theta: float
    rows: int
    cols: int
    iter: int = 0

    @classmethod
    def initial(cls, M: np.ndarray, rows: int, cols: int, theta0: float) -> "SolverState":
        """Frame-average start: ``L = mean(M)`` per pixel, ``N = M - L``, zero slack and multipliers."""
        L = np.repeat(M.mean(axis=1, keepdims=True), M.shape[1], axis=1)
        zeros = np.zeros_like(M)
        return cls(
            L=L, N=M - L, S1=L.copy(), S2=grad_matrix(L, rows, cols),
            eps=zeros.copy(), Y1=zeros.copy(), Y2=np.zeros((2 * M.shape[0], M.shape[1])),
            Y3=zeros.copy(), Y4=zeros.copy(), theta=theta0, rows=rows, cols=cols,
        )

    def copy(self) -> "SolverState":
        return replace(self, **{
            k: getattr(self, k).copy()
            for k in ("L", "N", "S1", "S2", "eps", "Y1", "Y2", "Y3", "Y4")
        })


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    residuals: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    theta: float = 0.0
    objective: list[float] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def soft_threshold(x, tau: float):
    """Elementwise shrinkage ``sign(x) * max(|x| - tau, 0)``."""
    if not tau > 0:
        raise ParameterError("threshold must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return out if out.ndim else float(out)


def _gram_eig(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    try:
        w, W = np.linalg.eigh(V.T @ V)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigendecomposition failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise SolverError("eigendecomposition produced non-finite values")
    return np.sqrt(np.maximum(w, 0.0)), W


def singular_values(V) -> np.ndarray:
    s, _ = _gram_eig(np.asarray(V, dtype=np.float64))
    return np.sort(s)[::-1]


def nuclear_norm(V) -> float:
    return float(singular_values(V).sum())


def svt(V, tau: float) -> np.ndarray:
    """Singular value thresholding via the eigendecomposition of ``V^T V``.

    Cheap when ``V`` is tall and thin, as for a stack of a few frames.
    """
    if not tau > 0:
        raise ParameterError("threshold must be positive")
    V = np.asarray(V, dtype=np.float64)
    s, W = _gram_eig(V)
    shrunk = np.maximum(s - tau, 0.0)
    scale = np.divide(shrunk, s, out=np.zeros_like(s), where=s > 0)
    return V @ (W * scale) @ W.T


def residuals(state: SolverState, M: np.ndarray, sigma: np.ndarray):
    """Constraint residuals ``(G1, G2, G3, G4)`` at ``state``."""
    PL = grad_matrix(state.L, state.rows, state.cols)
    G1 = state.S1 - state.L
    G2 = state.S2 - PL
    G3 = M - state.L - state.N
    G4 = state.N * state.N - 9.0 * sigma * sigma + state.eps
    return G1, G2, G3, G4


def _check_shapes(state: SolverState, M: np.ndarray, sigma: np.ndarray) -> None:
    shape = M.shape
    if sigma.shape != shape:
        raise ShapeError(f"sigma shape {sigma.shape} does not match data shape {shape}")
    for name in ("L", "N", "S1", "eps", "Y1", "Y3", "Y4"):
        if getattr(state, name).shape != shape:
            raise ShapeError(f"state.{name} has shape {getattr(state, name).shape}, expected {shape}")
    gshape = (2 * shape[0], shape[1])
    for name in ("S2", "Y2"):
        if getattr(state, name).shape != gshape:
            raise ShapeError(f"state.{name} has shape {getattr(state, name).shape}, expected {gshape}")
    if state.rows * state.cols != shape[0]:
        raise ShapeError("state geometry does not match data rows")


def objective(state: SolverState, M, sigma, params: SolverParams) -> float:
    """Augmented Lagrangian value at ``state``."""
    M = np.asarray(M, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _check_shapes(state, M, sigma)
    Gs = residuals(state, M, sigma)
    Ys = (state.Y1, state.Y2, state.Y3, state.Y4)
    value = nuclear_norm(state.S1) + params.lam * float(np.abs(state.S2).sum())
    for Y, G in zip(Ys, Gs):
        value += float(np.vdot(Y, G)) + 0.5 * state.theta * float(np.vdot(G, G))
    return value


def grad_L(state: SolverState, M: np.ndarray) -> np.ndarray:
    """Partial derivative of the augmented Lagrangian with respect to ``L``."""
    th = state.theta
    r, c = state.rows, state.cols
    PtPL = grad_adjoint_matrix(grad_matrix(state.L, r, c), r, c)
    Pt_term = grad_adjoint_matrix(state.S2 + state.Y2 / th, r, c)
    return (
        th * (state.L - state.S1 - state.Y1 / th)
        + th * (PtPL - Pt_term)
        + th * (state.L - M + state.N - state.Y3 / th)
    )


def grad_N(state: SolverState, M: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Partial derivative of the augmented Lagrangian with respect to ``N``."""
    th = state.theta
    N = state.N
    return (
        th * (N - M + state.L - state.Y3 / th)
        + th * (N * N - 9.0 * sigma * sigma + state.eps + state.Y4 / th) * 2.0 * N
    )


def n_curvature(state: SolverState, sigma: np.ndarray) -> np.ndarray:
    """Elementwise second derivative of the augmented Lagrangian in ``N``."""
    th = state.theta
    N = state.N
    return th * (1.0 + 2.0 * (3.0 * N * N - 9.0 * sigma * sigma + state.eps + state.Y4 / th))


def _n_step_size(state: SolverState, sigma: np.ndarray, params: SolverParams):
    if not params.safeguard_N:
        return params.step_N
    # the quartic noise penalty makes the fixed rate unstable where |N| is large;
    # cap the rate at the inverse local curvature
    h = n_curvature(state, sigma)
    return np.where(h * params.step_N > 1.0, 1.0 / np.maximum(h, 1e-300), params.step_N)


def _finite(name: str, x: np.ndarray, iteration: int) -> None:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(name, iteration)


def step(state: SolverState, M, sigma, params: SolverParams) -> SolverState:
    """One outer iteration; returns a new state and leaves ``state`` untouched.

    ``S1``/``S2`` are computed from the previous ``L`` and multipliers and the
    ``L`` step sees the new ``S`` and the previous ``N``. With the Jacobi sweep
    the ``N`` step sees the previous ``L``, ``S`` and the slack the previous
    ``N``; the Gauss-Seidel sweep feeds them the values just computed.
    """
    M = np.asarray(M, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _check_shapes(state, M, sigma)
    it = state.iter
    th = state.theta
    r, c = state.rows, state.cols
    new = state.copy()

    new.S1 = svt(state.L - state.Y1 / th, 1.0 / th)
    _finite("S1", new.S1, it)
    new.S2 = soft_threshold(grad_matrix(state.L, r, c) - state.Y2 / th, params.lam / th)
    _finite("S2", new.S2, it)

    gauss_seidel = params.sweep == GAUSS_SEIDEL
    L_cur = state.L
    for _ in range(params.inner_steps):
        L_cur = L_cur - params.step_L * grad_L(replace(new, L=L_cur), M)
    new.L = L_cur
    _finite("L", new.L, it)

    # Jacobi: the N step sees the previous L, S; Gauss-Seidel: the fresh ones
    base_N = new if gauss_seidel else replace(new, L=state.L, S1=state.S1, S2=state.S2)
    N_cur = state.N
    for _ in range(params.inner_steps):
        probe = replace(base_N, N=N_cur)
        N_cur = N_cur - _n_step_size(probe, sigma, params) * grad_N(probe, M, sigma)
    new.N = N_cur
    _finite("N", new.N, it)

    N_eps = new.N if gauss_seidel else state.N
    new.eps = np.maximum(9.0 * sigma * sigma - N_eps * N_eps - state.Y4 / th, 0.0)
    _finite("eps", new.eps, it)

    mult = 1.0 / th if params.multiplier_step_mode == PAPER_LITERAL else th
    G1, G2, G3, G4 = residuals(new, M, sigma)
    new.Y1 = state.Y1 + mult * G1
    new.Y2 = state.Y2 + mult * G2
    new.Y3 = state.Y3 + mult * G3
    new.Y4 = state.Y4 + mult * G4
    for name in ("Y1", "Y2", "Y3", "Y4"):
        _finite(name, getattr(new, name), it)

    new.theta = min(params.rho * th, params.theta_max)
    new.iter = it + 1
    return new


def denoise(M: LogVolume, sigma: SigmaMap, params: SolverParams | None = None):
    """Run the solver from the frame-average start until ``L`` stops changing.

    Returns ``(L, N, report)`` as log-domain volumes plus a :class:`SolveReport`.
    """
    params = params or SolverParams()
    if M.frames < 2:
        raise ShapeError("denoising needs at least 2 frames")
    if (sigma.rows, sigma.cols, sigma.frames) != M.geometry:
        raise ShapeError(f"sigma geometry {sigma.geometry} does not match data {M.geometry}")
    data = M.data
    sig = sigma.data
    t0 = time.perf_counter()
    state = SolverState.initial(data, M.rows, M.cols, params.theta0)
    report = SolveReport()
    for _ in range(params.max_iters):
        prev_L = state.L
        state = step(state, data, sig, params)
        G = residuals(state, data, sig)
        norms = tuple(float(np.linalg.norm(g)) for g in G)
        obj = objective(state, data, sig, params)
        report.objective.append(obj)
        report.history.append({
            "iteration": state.iter,
            "objective": obj,
            "theta": state.theta,
            "residuals": list(norms),
        })
        report.residuals = norms
        change = np.linalg.norm(state.L - prev_L) / max(np.linalg.norm(prev_L), 1e-300)
        # while theta is still ramping up, L barely moves; only test once it has settled
        if state.theta >= params.theta_max and change < params.tol:
            report.converged = True
            break
    report.iterations = state.iter
    report.theta = state.theta
    report.wall_time = time.perf_counter() - t0
    return M.with_data(state.L), M.with_data(state.N), report
