"""Alternating minimization of the relaxed DSH objective.

The relaxed objective over codes ``B`` (r x n), classifier ``W`` (c x r),
label basis ``D`` (r x c), projections ``P[m]`` (r x M_m) and modality
weights ``alpha`` is::

    sum_m alpha_m**gamma * ||B - P[m] K[m]||^2
        + beta * ||W B - L||^2 + eta * ||B - D L||^2
        + lam * (||D||^2 + ||W||^2 + sum_m ||P[m]||^2)

where ``K[m]`` is the (M_m x n) kernel feature matrix of modality ``m``.
Every block update below minimizes this exactly in its own variable, so the
objective never increases across blocks.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .codec import HashModel, ModalityRecord
from .errors import InvalidArgumentError, InvalidDataError, SingularSystemError
from .kernel import center_features, kernel_features, sample_anchors

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    r: int = 16
    beta: float = 1.0
    eta: float = 1.0
    lam: float = 1e-4
    gamma: float = 2.0
    M: int = 500
    max_iters: int = 50
    tol: float = 1e-5
    seed: int = 0
    dcc_sweeps: int = 3

    def validate(self) -> "TrainConfig":
        if int(self.r) != self.r or self.r < 1:
            raise InvalidArgumentError(f"code length r must be a positive integer, got {self.r}")
        for name, label in (("beta", "beta"), ("eta", "eta"), ("lam", "lambda")):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{label} must be finite and non-negative, got {value}")
        if not (np.isfinite(self.gamma) and self.gamma > 1):
            raise InvalidArgumentError(f"gamma must be > 1, got {self.gamma}")
        if self.M < 1:
            raise InvalidArgumentError(f"anchor count M must be >= 1, got {self.M}")
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol >= 0:
            raise InvalidArgumentError(f"tol must be >= 0, got {self.tol}")
        if self.dcc_sweeps < 1:
            raise InvalidArgumentError(f"dcc_sweeps must be >= 1, got {self.dcc_sweeps}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptState:
    B: np.ndarray
    W: np.ndarray
    D: np.ndarray
    P: list
    alpha: np.ndarray
    kappa: list
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    seconds: float = 0.0

    @property
    def r(self) -> int:
        return self.B.shape[0]

    @property
    def n(self) -> int:
        return self.B.shape[1]


def sgn(x) -> np.ndarray:
    """Elementwise sign with ``sgn(0) = +1``."""
    return 2.0 * (np.asarray(x) >= 0) - 1.0


def check_labels(L) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2:
        raise InvalidDataError("label matrix must be 2-D (c x n)")
    if not np.all((L == 0) | (L == 1)):
        raise InvalidDataError("label matrix entries must be 0 or 1")
    empty = np.flatnonzero(L.sum(axis=0) == 0)
    if empty.size:
        raise InvalidDataError(f"{empty.size} samples have no active label (first: {empty[0]})")
    return L


def _spd_solve(A: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        factor = cho_factor(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SingularSystemError(
            f"{what}: system is not positive definite (use lambda > 0)"
        ) from exc
    return cho_solve(factor, rhs, check_finite=False)


def _check_dims(state: OptState, L: np.ndarray) -> None:
    r, n = state.B.shape
    c = L.shape[0]
    if L.shape[1] != n:
        raise InvalidArgumentError(f"labels have {L.shape[1]} columns, codes have {n}")
    if state.W.shape != (c, r) or state.D.shape != (r, c):
        raise InvalidArgumentError("W must be (c, r) and D must be (r, c)")
    if len(state.P) != len(state.kappa) or len(state.alpha) != len(state.P):
        raise InvalidArgumentError("P, kappa and alpha must have one entry per modality")
    for P, K in zip(state.P, state.kappa):
        if P.shape != (r, K.shape[0]) or K.shape[1] != n:
            raise InvalidArgumentError("projection/kernel shapes are inconsistent")


def projections(state: OptState) -> list:
    """``P[m] K[m]`` for every modality."""
    return [P @ K for P, K in zip(state.P, state.kappa)]


def modality_losses(state: OptState, PK: Optional[list] = None) -> np.ndarray:
    """Per-modality reconstruction loss ``||B - P[m] K[m]||_F^2``.

    ``PK`` may carry precomputed ``projections(state)``.
    """
    if PK is None:
        PK = projections(state)
    return np.array([float(np.sum((state.B - Y) ** 2)) for Y in PK])


def objective(state: OptState, cfg: TrainConfig, L, PK: Optional[list] = None) -> float:
    L = np.asarray(L, dtype=np.float64)
    _check_dims(state, L)
    weights = np.asarray(state.alpha, dtype=np.float64) ** cfg.gamma
    value = float(weights @ modality_losses(state, PK))
    value += cfg.beta * float(np.sum((state.W @ state.B - L) ** 2))
    value += cfg.eta * float(np.sum((state.B - state.D @ L) ** 2))
    reg = np.sum(state.D**2) + np.sum(state.W**2) + sum(np.sum(P**2) for P in state.P)
    return value + cfg.lam * float(reg)


def update_W(state: OptState, cfg: TrainConfig, L) -> np.ndarray:
    """Ridge classifier ``W = beta L B^T (beta B B^T + lam I)^-1``."""
    L = np.asarray(L, dtype=np.float64)
    B = state.B
    if cfg.beta == 0:
        return np.zeros((L.shape[0], B.shape[0]))
    A = cfg.beta * (B @ B.T) + cfg.lam * np.eye(B.shape[0])
    return _spd_solve(A, cfg.beta * (B @ L.T), "W update").T


def update_P(state: OptState, cfg: TrainConfig, m: int) -> np.ndarray:
    """Kernel ridge projection for modality ``m``.

    ``P = a B K^T (a K K^T + lam I)^-1`` with ``a = alpha_m**gamma``. The Gram
    matrix is formed on every call, which is the O(M^2 n) per-iteration cost.
    """
    K = state.kappa[m]
    a = float(state.alpha[m]) ** cfg.gamma
    if a == 0:
        return np.zeros((state.r, K.shape[0]))
    A = a * (K @ K.T)
    A[np.diag_indices_from(A)] += cfg.lam
    return _spd_solve(A, a * (K @ state.B.T), f"P[{m}] update").T


def update_D(state: OptState, cfg: TrainConfig, L) -> np.ndarray:
    """Label basis ``D = eta B L^T (eta L L^T + lam I)^-1``."""
    L = np.asarray(L, dtype=np.float64)
    if cfg.eta == 0:
        return np.zeros((state.r, L.shape[0]))
    A = cfg.eta * (L @ L.T) + cfg.lam * np.eye(L.shape[0])
    return _spd_solve(A, cfg.eta * (L @ state.B.T), "D update").T


def compute_Q(state: OptState, cfg: TrainConfig, L, PK: Optional[list] = None) -> np.ndarray:
    """Linear term of the B subproblem, shape ``(n, r)``."""
    L = np.asarray(L, dtype=np.float64)
    if PK is None:
        PK = projections(state)
    weights = np.asarray(state.alpha, dtype=np.float64) ** cfg.gamma
    Q = cfg.beta * (L.T @ state.W) + cfg.eta * (L.T @ state.D.T)
    for a, Y in zip(weights, PK):
        if a:
            Q += a * Y.T
    return Q


def b_subproblem(B: np.ndarray, Q: np.ndarray, W: np.ndarray, beta: float) -> float:
    """``-2 tr(Q B) + beta ||W B||^2``, the B objective up to constants."""
    return float(-2.0 * np.sum(Q.T * B) + beta * np.sum((W @ B) ** 2))


def dcc_update_row(B: np.ndarray, Q: np.ndarray, W: np.ndarray, k: int, beta: float,
                   WtW: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact minimizer of the B subproblem over row ``k`` with other rows fixed.

    Returns ``sgn(q - beta * Bbar^T Wbar^T w)`` where ``q = Q[:, k]``,
    ``w = W[:, k]`` and the bars drop row/column ``k``. Pass ``WtW = W.T @ W``
    to avoid recomputing it for every row.
    """
    v = W.T @ W[:, k] if WtW is None else WtW[:, k]
    coupling = B.T @ v - B[k] * v[k]
    return sgn(Q[:, k] - beta * coupling)


def update_B_dcc(state: OptState, cfg: TrainConfig, L, PK: Optional[list] = None) -> np.ndarray:
    """``cfg.dcc_sweeps`` cyclic passes of row-wise sign updates."""
    Q = compute_Q(state, cfg, L, PK)
    WtW = state.W.T @ state.W
    B = state.B.copy()
    for _ in range(cfg.dcc_sweeps):
        changed = False
        for k in range(B.shape[0]):
            row = dcc_update_row(B, Q, state.W, k, cfg.beta, WtW)
            if not changed and not np.array_equal(row, B[k]):
                changed = True
            B[k] = row
        if not changed:
            break
    return B


def alpha_from_losses(losses, gamma: float) -> np.ndarray:
    """Simplex weights ``(gamma C_m)^(1/(1-gamma))`` normalized to sum to one.

    Modalities with zero loss take all the weight, split evenly between them.
    """
    C = np.asarray(losses, dtype=np.float64)
    if C.ndim != 1 or C.size == 0:
        raise InvalidArgumentError("losses must be a non-empty vector")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise InvalidArgumentError("losses must be finite and non-negative")
    if not gamma > 1:
        raise InvalidArgumentError(f"gamma must be > 1, got {gamma}")
    zero = C == 0
    if zero.any():
        return zero / zero.sum()
    logw = np.log(gamma * C) / (1.0 - gamma)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def update_alpha(state: OptState, cfg: TrainConfig, PK: Optional[list] = None) -> np.ndarray:
    return alpha_from_losses(modality_losses(state, PK), cfg.gamma)


def init_state(kappa: Sequence[np.ndarray], c: int, cfg: TrainConfig, rng: np.random.Generator) -> OptState:
    n = kappa[0].shape[1]
    v = len(kappa)
    return OptState(
        B=sgn(rng.standard_normal((cfg.r, n))),
        W=np.zeros((c, cfg.r)),
        D=np.zeros((cfg.r, c)),
        P=[np.zeros((cfg.r, K.shape[0])) for K in kappa],
        alpha=np.full(v, 1.0 / v),
        kappa=list(kappa),
    )


BlockCallback = Callable[[str, OptState], None]


def run_iteration(state: OptState, cfg: TrainConfig, L: np.ndarray,
                  callback: Optional[BlockCallback] = None) -> list:
    """One pass of W, P[m] for every m, D, B, alpha updates (in place).

    Returns ``projections(state)``, valid until ``P`` or ``kappa`` change.
    """
    def done(name):
        if callback is not None:
            callback(name, state)

    state.W = update_W(state, cfg, L)
    done("W")
    for m in range(len(state.P)):
        state.P[m] = update_P(state, cfg, m)
        done(f"P{m}")
    PK = projections(state)
    state.D = update_D(state, cfg, L)
    done("D")
    state.B = update_B_dcc(state, cfg, L, PK)
    done("B")
    state.alpha = update_alpha(state, cfg, PK)
    done("alpha")
    return PK


def train(X: Sequence, L, cfg: Optional[TrainConfig] = None,
          callback: Optional[BlockCallback] = None):
    """Learn unified codes and per-modality hash functions.

    Args:
        X: sequence of raw ``(d_m, n)`` feature matrices sharing ``n``.
        L: ``(c, n)`` binary label matrix.
        cfg: hyperparameters; defaults when omitted.
        callback: called as ``callback(block_name, state)`` after every block.

    Returns:
        ``(model, state, objective_trace)``. The trace starts with the
        objective at initialization and has one entry per iteration after it.
    """
    cfg = (cfg or TrainConfig()).validate()
    if len(X) < 1:
        raise InvalidArgumentError("at least one modality is required")
    L = check_labels(L)
    n = L.shape[1]
    for m, Xm in enumerate(X):
        if np.asarray(Xm).ndim != 2 or np.asarray(Xm).shape[1] != n:
            raise InvalidArgumentError(
                f"modality {m} must be a (d, n={n}) matrix, got shape {np.shape(Xm)}"
            )

    seeds = np.random.SeedSequence(cfg.seed).spawn(len(X) + 1)
    records, kappa = [], []
    for m, Xm in enumerate(X):
        centered, mean = center_features(Xm)
        kmap = sample_anchors(centered, cfg.M, seed=seeds[m + 1], modality_id=m)
        kappa.append(kernel_features(kmap, centered))
        records.append((kmap, mean))

    start = time.perf_counter()
    state = init_state(kappa, L.shape[0], cfg, np.random.default_rng(seeds[0]))
    trace = [objective(state, cfg, L)]
    state.objective_trace = trace
    iterations = 0
    converged = False
    while iterations < cfg.max_iters:
        PK = run_iteration(state, cfg, L, callback)
        iterations += 1
        trace.append(objective(state, cfg, L, PK))
        rel = abs(trace[-1] - trace[-2]) / max(trace[-2], 1e-12)
        logger.info("iter %d objective %.6e rel-change %.3e", iterations, trace[-1], rel)
        if rel < cfg.tol:
            converged = True
            break
    elapsed = time.perf_counter() - start

    model = HashModel(
        r=cfg.r,
        modalities=[
            ModalityRecord(projection=P.copy(), kernel_map=kmap, mean=mean)
            for P, (kmap, mean) in zip(state.P, records)
        ],
        alpha=state.alpha.copy(),
        metadata={
            "config": cfg.to_dict(),
            "iterations": iterations,
            "converged": converged,
            "final_objective": trace[-1],
        },
    )
    state.iterations = iterations
    state.converged = converged
    state.seconds = elapsed
    return model, state, trace
