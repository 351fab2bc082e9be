"""Independent brute-force oracles the fast implementations are checked against.

Everything here favours directness over speed: explicit Kronecker inverses,
dense normal equations, pairwise Python loops, and central finite
differences. None of it shares code with the library paths it validates.
"""

import numpy as np

from enarkit.lsm import LsmState, lsm_loglik


def kron_gamma0(g: np.ndarray, c: float) -> np.ndarray:
    """Stationary covariance from vec(Gamma) = (I - G (x) G)^{-1} vec(c I)."""
    n = g.shape[0]
    lhs = np.eye(n * n) - np.kron(g, g)
    vec = np.linalg.solve(lhs, (c * np.eye(n)).reshape(-1, order="F"))
    return vec.reshape((n, n), order="F")


def ls_dense(w: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Explicit normal equations (W'W)^{-1} W'y via a dense inverse."""
    return np.linalg.inv(w.T @ w) @ (w.T @ y)


def lsm_loglik_loop(state: LsmState, adjacency: np.ndarray) -> float:
    """Pairwise double loop over i < j, no vectorization."""
    n = adjacency.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            chi = float(state.q[i] @ state.q[j] + state.v[i] + state.v[j])
            total += adjacency[i, j] * chi - np.logaddexp(0.0, chi)
    return total


def lsm_fd_gradient(state: LsmState, graph, h: float = 1e-6):
    """Central finite differences of the pairwise log-likelihood."""
    dq = np.zeros_like(state.q)
    for i in range(state.n):
        for j in range(state.k):
            plus = LsmState(state.q.copy(), state.v.copy())
            plus.q[i, j] += h
            minus = LsmState(state.q.copy(), state.v.copy())
            minus.q[i, j] -= h
            dq[i, j] = (lsm_loglik(plus, graph) - lsm_loglik(minus, graph)) / (2 * h)
    dv = np.zeros_like(state.v)
    for i in range(state.n):
        plus = LsmState(state.q.copy(), state.v.copy())
        plus.v[i] += h
        minus = LsmState(state.q.copy(), state.v.copy())
        minus.v[i] -= h
        dv[i] = (lsm_loglik(plus, graph) - lsm_loglik(minus, graph)) / (2 * h)
    return dq, dv


def random_orthogonal(k: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal matrix from the QR of a Gaussian draw."""
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def random_stationary_instance(rng: np.random.Generator, n_max: int = 8):
    """A small graph plus stationary coefficients for moment checks."""
    from enarkit.network import Graph

    n = int(rng.integers(2, n_max + 1))
    while True:
        a = (rng.random((n, n)) < 0.6).astype(float)
        a = np.triu(a, 1)
        a = a + a.T
        if np.all(a.sum(axis=1) > 0):
            break
    scale = rng.uniform(0.1, 0.95)
    split = rng.uniform(0.05, 0.95)
    alpha = scale * split * rng.choice([-1.0, 1.0])
    theta = scale * (1 - split) * rng.choice([-1.0, 1.0])
    return Graph(n, a), alpha, theta
