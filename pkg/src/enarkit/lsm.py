"""Constrained MLE of the additive+multiplicative latent space model.

The edge log-likelihood under a logistic link is

    sum_{i<j} [ a_ij * chi_ij - log(1 + exp(chi_ij)) ],
    chi = Q Q' + v 1' + 1 v',

maximized by projected gradient ascent over the identifiability set
{ Q'1 = 0, Q'Q diagonal, bounded row norms of [Q | v] }. Because the
likelihood counts each unordered pair once, the ascent directions are
R Q and R 1 for the hollow symmetric residual R = A - sigmoid(chi); the
finite-difference suite pins this convention.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError, DimensionMismatch
from .network import DENSE_EIG_LIMIT, Graph, _sample_without_isolation

MIN_STEP = 1e-12


@dataclass
class LsmState:
    """Multiplicative positions q (N x K) and additive effects v (N,)."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        if self.q.shape[0] != self.v.shape[0]:
            raise DimensionMismatch(
                f"q has {self.q.shape[0]} rows but v has {self.v.shape[0]} entries"
            )

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def k(self) -> int:
        return self.q.shape[1]

    def x(self) -> np.ndarray:
        """The stacked factor matrix [Q | v]."""
        return np.column_stack([self.q, self.v])

    def chi(self) -> np.ndarray:
        """Latent factor matrix Q Q' + v 1' + 1 v'."""
        return self.q @ self.q.T + self.v[:, None] + self.v[None, :]

    def centering_residual(self) -> float:
        """max |column sum of q| (zero on the constraint set)."""
        return float(np.max(np.abs(self.q.sum(axis=0)))) if self.k else 0.0

    def diagonality_residual(self) -> float:
        """Largest off-diagonal of q'q relative to its trace."""
        if self.k < 2:
            return 0.0
        gram = self.q.T @ self.q
        off = np.abs(gram - np.diag(np.diag(gram))).max()
        tr = np.trace(gram)
        return float(off / tr) if tr > 0 else float(off)


@dataclass
class LsmConfig:
    """Optimizer knobs. ``step_init`` and ``row_norm_cap`` default to 1/N
    and 3*sqrt(K+1) once the problem size is known."""

    max_iters: int = 500
    tol: float = 1e-8
    step_init: float | None = None
    backtrack: float = 0.5
    row_norm_cap: float | None = None
    link: str = "logistic"

    def __post_init__(self):
        if self.max_iters < 0:
            raise DataError("max_iters must be >= 0")
        if self.tol <= 0:
            raise DataError("tol must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise DataError("backtracking factor must lie in (0, 1)")
        if self.step_init is not None and self.step_init <= 0:
            raise DataError("step_init must be positive")
        if self.row_norm_cap is not None and self.row_norm_cap <= 0:
            raise DataError("row_norm_cap must be positive")
        if self.link != "logistic":
            raise DataError("only the logistic link is supported")


@dataclass
class LsmFit:
    """Fitted state plus the ascent trace and termination flags."""

    state: LsmState
    loglik_trace: list[float] = field(default_factory=list)
    converged: bool = False
    step_failed: bool = False
    n_iters: int = 0


def lsm_loglik(state: LsmState, graph: Graph) -> float:
    """Bernoulli-logistic log-likelihood over unordered node pairs."""
    chi = state.chi()
    iu = np.triu_indices(graph.n, k=1)
    c = chi[iu]
    # log(1 + e^c) evaluated stably for both signs of c
    softplus = np.maximum(c, 0.0) + np.log1p(np.exp(-np.abs(c)))
    return float(np.sum(graph.adjacency[iu] * c - softplus))


def lsm_gradient(state: LsmState, graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Ascent direction (dq, dv) of the pairwise log-likelihood."""
    resid = graph.adjacency - expit(state.chi())
    np.fill_diagonal(resid, 0.0)
    return resid @ state.q, resid @ np.ones(state.n)


def _default_cap(k: int) -> float:
    return 3.0 * np.sqrt(k + 1.0)


def project_constraints(state: LsmState, row_norm_cap: float | None = None) -> LsmState:
    """Map a state onto the identifiability set.

    Columns of q are mean-centered, then rotated by the eigenvectors of q'q
    so the Gram matrix is diagonal with a descending diagonal; rows of
    [q | v] longer than the cap are shrunk onto it (capping can re-break
    centering, in which case one repeat pass runs).
    """
    cap = _default_cap(state.k) if row_norm_cap is None else row_norm_cap

    def center_rotate(q: np.ndarray) -> np.ndarray:
        if q.shape[1] == 0:
            return q
        q = q - q.mean(axis=0)
        vals, vecs = np.linalg.eigh(q.T @ q)
        order = np.argsort(vals)[::-1]
        vecs = vecs[:, order]
        # sign convention keeps the projection idempotent
        for j in range(vecs.shape[1]):
            idx = int(np.argmax(np.abs(vecs[:, j])))
            if vecs[idx, j] < 0:
                vecs[:, j] = -vecs[:, j]
        return q @ vecs

    def cap_rows(q: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        norms = np.sqrt((q**2).sum(axis=1) + v**2)
        over = norms > cap
        if not np.any(over):
            return q, v, False
        scale = np.ones_like(norms)
        scale[over] = cap / norms[over]
        return q * scale[:, None], v * scale, True

    q, v = state.q.copy(), state.v.copy()
    q = center_rotate(q)
    q, v, capped = cap_rows(q, v)
    if capped:
        q = center_rotate(q)
        q, v, _ = cap_rows(q, v)
    return LsmState(q, v)


def _top_k_positive_eigh(a: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Largest-k algebraic eigenpairs of a symmetric matrix."""
    n = a.shape[0]
    if n <= DENSE_EIG_LIMIT or k >= n - 1:
        vals, vecs = np.linalg.eigh(a)
        return vals[-k:][::-1], vecs[:, -k:][:, ::-1]
    import scipy.sparse.linalg

    vals, vecs = scipy.sparse.linalg.eigsh(a, k=k, which="LA", tol=1e-8, maxiter=10 * n)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def _spectral_init(graph: Graph, k: int, rng: np.random.Generator) -> LsmState:
    """Warm start: degree-matched additive effects, residual spectrum for q."""
    n = graph.n
    eps = 0.5 / max(n - 1, 1)
    p0 = np.clip(graph.degrees / max(n - 1, 1), eps, 1.0 - eps)
    v0 = np.log(p0 / (1.0 - p0))
    resid = graph.adjacency - expit(v0[:, None] + v0[None, :])
    vals, vecs = _top_k_positive_eigh(resid, k)
    q0 = vecs * np.sqrt(np.clip(vals, 0.0, None))
    weak = np.sqrt(np.clip(vals, 0.0, None)) < 1e-8
    if np.any(weak):
        q0[:, weak] = 1e-3 * rng.standard_normal((n, int(weak.sum())))
    return LsmState(q0, v0)


def fit_lsm(
    graph: Graph,
    k: int,
    config: LsmConfig | None = None,
    rng: np.random.Generator | None = None,
) -> LsmFit:
    """Projected gradient ascent with backtracking from a spectral start.

    Every accepted step strictly increases the pairwise log-likelihood and
    every iterate lies in the constraint set. When no step down to 1e-12
    ascends, the last feasible state is returned with ``step_failed`` set.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    config = config or LsmConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    cap = config.row_norm_cap if config.row_norm_cap is not None else _default_cap(k)
    step_init = config.step_init if config.step_init is not None else 1.0 / graph.n

    state = project_constraints(_spectral_init(graph, k, rng), cap)
    ll = lsm_loglik(state, graph)
    fit = LsmFit(state=state, loglik_trace=[ll])

    for it in range(config.max_iters):
        dq, dv = lsm_gradient(state, graph)
        step = step_init
        accepted = False
        while step >= MIN_STEP:
            cand = project_constraints(LsmState(state.q + step * dq, state.v + step * dv), cap)
            ll_cand = lsm_loglik(cand, graph)
            if ll_cand > ll:
                accepted = True
                break
            step *= config.backtrack
        if not accepted:
            fit.step_failed = True
            fit.n_iters = it
            warnings.warn(
                "line search found no ascent direction; returning last iterate",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        rel_gain = (ll_cand - ll) / max(abs(ll_cand), 1.0)
        state, ll = cand, ll_cand
        fit.loglik_trace.append(ll)
        fit.n_iters = it + 1
        if rel_gain < config.tol:
            fit.converged = True
            break

    fit.state = state
    return fit


def sample_lsm_graph(
    state: LsmState, rng: np.random.Generator, allow_isolated: bool = False
) -> Graph:
    """Draw a graph with edge probabilities sigmoid(chi), resampling away
    isolated nodes like the other generators unless told otherwise."""
    p = expit(state.chi())
    np.fill_diagonal(p, 0.0)
    return _sample_without_isolation(p, rng, allow_isolated)


def write_latent_csv(state: LsmState, path: str) -> None:
    """Export the latent estimate as ``node,v,q1,...,qK`` (atomic replace)."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "v"] + [f"q{j + 1}" for j in range(state.k)])
        for i in range(state.n):
            writer.writerow([i, repr(float(state.v[i]))] + [repr(float(x)) for x in state.q[i]])
    os.replace(tmp, path)


def read_latent_csv(path: str) -> LsmState:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["node", "v"]:
            raise DataError(f"{path}: expected header 'node,v,q1,...', got {header}")
        k = len(header) - 2
        rows = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                rows[int(row[0])] = (float(row[1]), [float(x) for x in row[2 : 2 + k]])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: row {row_no}: cannot parse {row!r}") from exc
    if not rows:
        raise DataError(f"{path}: empty latent file")
    n = max(rows) + 1
    v = np.empty(n)
    q = np.empty((n, k))
    for i in range(n):
        if i not in rows:
            raise DataError(f"{path}: missing node {i}")
        v[i], q[i, :] = rows[i][0], rows[i][1]
    return LsmState(q, v)
