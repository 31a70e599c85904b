"""Shared random instances and independent reference implementations."""
import numpy as np

from dshash.optimizer import OptState, TrainConfig, sgn


def random_state(rng, n=40, r=8, c=3, v=2, Ms=(6, 9), nonzero=True):
    """A random, dimensionally consistent optimizer state and label matrix."""
    y = rng.integers(0, c, size=n)
    L = np.zeros((c, n))
    L[y, np.arange(n)] = 1.0
    extra = rng.random((c, n)) < 0.15
    L = np.maximum(L, extra)
    kappa = [rng.random((Ms[m % len(Ms)], n)) for m in range(v)]
    alpha = rng.random(v) + 0.1
    alpha /= alpha.sum()
    scale = 1.0 if nonzero else 0.0
    state = OptState(
        B=sgn(rng.standard_normal((r, n))),
        W=scale * rng.standard_normal((c, r)),
        D=scale * rng.standard_normal((r, c)),
        P=[scale * rng.standard_normal((r, K.shape[0])) for K in kappa],
        alpha=alpha,
        kappa=kappa,
    )
    return state, L


def random_config(rng, **overrides):
    cfg = dict(
        r=8,
        beta=float(10 ** rng.uniform(-2, 1)),
        eta=float(10 ** rng.uniform(-2, 1)),
        lam=float(10 ** rng.uniform(-3, 0)),
        gamma=float(rng.uniform(1.5, 4)),
    )
    cfg.update(overrides)
    return TrainConfig(**cfg)


def frob2(A):
    """Squared Frobenius norm by explicit double loop."""
    total = 0.0
    rows, cols = A.shape
    for i in range(rows):
        for j in range(cols):
            total += A[i, j] * A[i, j]
    return total


def matmul(A, B):
    out = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            out[i, j] = sum(A[i, k] * B[k, j] for k in range(A.shape[1]))
    return out


def objective_oracle(state, cfg, L):
    value = 0.0
    for a, P, K in zip(state.alpha, state.P, state.kappa):
        value += a**cfg.gamma * frob2(state.B - matmul(P, K))
    value += cfg.beta * frob2(matmul(state.W, state.B) - L)
    value += cfg.eta * frob2(state.B - matmul(state.D, L))
    reg = frob2(state.D) + frob2(state.W) + sum(frob2(P) for P in state.P)
    return value + cfg.lam * reg


def central_gradient(f, X, h=1e-6):
    G = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        up = X.copy()
        dn = X.copy()
        up[idx] += h
        dn[idx] -= h
        G[idx] = (f(up) - f(dn)) / (2 * h)
    return G


def subproblem_W(W, B, L, cfg):
    return cfg.beta * np.sum((W @ B - L) ** 2) + cfg.lam * np.sum(W**2)


def subproblem_P(P, state, cfg, m):
    a = state.alpha[m] ** cfg.gamma
    return a * np.sum((state.B - P @ state.kappa[m]) ** 2) + cfg.lam * np.sum(P**2)


def subproblem_D(D, B, L, cfg):
    return cfg.eta * np.sum((B - D @ L) ** 2) + cfg.lam * np.sum(D**2)


def gradient_W(W, B, L, cfg):
    return 2 * cfg.beta * (W @ B - L) @ B.T + 2 * cfg.lam * W


def gradient_P(P, state, cfg, m):
    a = state.alpha[m] ** cfg.gamma
    K = state.kappa[m]
    return -2 * a * (state.B - P @ K) @ K.T + 2 * cfg.lam * P


def gradient_D(D, B, L, cfg):
    return -2 * cfg.eta * (B - D @ L) @ L.T + 2 * cfg.lam * D


def brute_force_row(B, Q, W, k, beta):
    """Minimum of -2 tr(QB) + beta ||WB||^2 over every sign vector for row k."""
    n = B.shape[1]
    best = np.inf
    trial = B.copy()
    for bits in range(2**n):
        trial[k] = [1.0 if (bits >> j) & 1 else -1.0 for j in range(n)]
        value = -2.0 * np.sum(Q.T * trial) + beta * np.sum((W @ trial) ** 2)
        best = min(best, value)
    return best


def naive_ap(flags, R):
    """Precision-at-m averaged over relevant positions, written from scratch."""
    hits = 0
    total = 0.0
    for m in range(1, R + 1):
        if flags[m - 1]:
            hits += 1
            total += hits / m
    return total / hits if hits else 0.0
