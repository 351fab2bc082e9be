"""Undirected network construction, generation, and spectral embedding.

Graphs are simple, hollow, undirected 0/1 adjacency matrices. Generators
draw Bernoulli edges from a low-rank connection-probability matrix built
either from explicit latent positions (with a sparsity factor) or from a
(degree-corrected, possibly mixed-membership) block structure, and resample
until every node has at least one neighbour. Spectral embeddings keep the
eigenvectors of the k eigenvalues of largest magnitude with a deterministic
sign convention so that repeated runs agree exactly.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.sparse.linalg

from .errors import (
    DataError,
    EigConvergenceFailure,
    InvalidProbability,
    IsolatedNode,
    IsolationRetriesExceeded,
    ShapeMismatch,
)

# Above this size the dense symmetric eigensolver gives way to Lanczos.
DENSE_EIG_LIMIT = 1024
ISOLATION_MAX_RETRIES = 100


@dataclass
class Graph:
    """Simple undirected graph held as a dense 0/1 adjacency matrix.

    Invariants (checked on construction): the matrix is square of size
    ``n``, symmetric, hollow (zero diagonal), and contains only 0/1.
    """

    n: int
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=float)
        if a.shape != (self.n, self.n):
            raise ShapeMismatch(f"adjacency shape {a.shape} != ({self.n}, {self.n})")
        if not np.array_equal(a, a.T):
            raise DataError("adjacency matrix is not symmetric")
        if np.any(np.diag(a) != 0):
            raise DataError("adjacency matrix has a nonzero diagonal")
        if not np.all((a == 0) | (a == 1)):
            raise DataError("adjacency entries must be 0 or 1")
        self.adjacency = a

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def density(self) -> float:
        """Fraction of the n(n-1)/2 possible edges present."""
        if self.n < 2:
            return 0.0
        return float(self.adjacency.sum() / (self.n * (self.n - 1)))


@dataclass
class RdpgSpec:
    """Latent positions ``x`` (N x K) with sparsity ``rho``; edge
    probability rho * x_i'x_j."""

    x: np.ndarray
    rho: float = 1.0

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if not 0.0 < self.rho <= 1.0:
            raise DataError(f"rho = {self.rho} must lie in (0, 1]")


@dataclass
class DcsbmSpec:
    """Degree-corrected block model with hard memberships.

    ``block_matrix`` is K x K nonnegative, ``memberships`` holds a block
    index per node, ``degrees`` positive heterogeneity weights. The
    connection matrix is rescaled so its largest row sum equals
    ``max_expected_degree`` and then clipped to [0, 1].
    """

    block_matrix: np.ndarray
    memberships: np.ndarray
    degrees: np.ndarray
    max_expected_degree: float

    def __post_init__(self):
        self.block_matrix = np.asarray(self.block_matrix, dtype=float)
        self.memberships = np.asarray(self.memberships)
        self.degrees = np.asarray(self.degrees, dtype=float)
        if np.any(self.block_matrix < 0):
            raise DataError("block matrix entries must be nonnegative")
        if np.any(self.degrees <= 0):
            raise DataError("degree parameters must be positive")
        if self.max_expected_degree <= 0:
            raise DataError("max_expected_degree must be positive")

    def membership_matrix(self) -> np.ndarray:
        k = self.block_matrix.shape[0]
        m = np.zeros((len(self.memberships), k))
        m[np.arange(len(self.memberships)), self.memberships.astype(int)] = 1.0
        return m


@dataclass
class DcmmsbmSpec(DcsbmSpec):
    """Mixed-membership variant: ``memberships`` rows lie on the simplex."""

    def __post_init__(self):
        super().__post_init__()
        rows = np.asarray(self.memberships, dtype=float)
        if rows.ndim != 2:
            raise DataError("mixed memberships must be an N x K matrix")
        if np.max(np.abs(rows.sum(axis=1) - 1.0)) > 1e-12:
            raise DataError("membership rows must sum to 1")
        self.memberships = rows

    def membership_matrix(self) -> np.ndarray:
        return self.memberships


LatentGraphSpec = Union[RdpgSpec, DcsbmSpec, DcmmsbmSpec]


@dataclass
class Embedding:
    """Leading eigenpairs of a symmetric matrix, ordered by |eigenvalue|."""

    vectors: np.ndarray
    eigenvalues: np.ndarray
    k: int = field(default=0)

    def __post_init__(self):
        if self.k == 0:
            self.k = self.vectors.shape[1]


def normalized_laplacian(g: Graph, allow_isolated: bool = False) -> np.ndarray:
    """Symmetric normalized Laplacian D^{-1/2} A D^{-1/2}.

    Raises IsolatedNode unless ``allow_isolated`` is set, in which case the
    rows and columns of degree-0 nodes are all zero.
    """
    d = g.degrees
    if not allow_isolated:
        zero = np.flatnonzero(d == 0)
        if zero.size:
            raise IsolatedNode(int(zero[0]))
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(d > 0, 1.0 / np.sqrt(np.maximum(d, 1e-300)), 0.0)
    return g.adjacency * np.outer(inv_sqrt, inv_sqrt)


def connection_matrix(spec: LatentGraphSpec) -> np.ndarray:
    """Population edge-probability matrix P implied by a generator spec.

    For latent positions this is rho * X X'. For block models it is
    Theta M B M' Theta rescaled so the largest row sum equals the target
    maximum expected degree, then clipped to [0, 1] (a warning reports how
    many entries were clipped).
    """
    if isinstance(spec, RdpgSpec):
        p = spec.rho * (spec.x @ spec.x.T)
        bad = (p < 0) | (p > 1)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise InvalidProbability(int(i), int(j), float(p[i, j]))
        return p
    m = spec.membership_matrix()
    theta = spec.degrees
    p = (theta[:, None] * theta[None, :]) * (m @ spec.block_matrix @ m.T)
    # expected degrees are over the hollow graph, so the diagonal carries
    # no mass before the rescale
    np.fill_diagonal(p, 0.0)
    row_max = p.sum(axis=1).max()
    if row_max <= 0:
        raise DataError("connection matrix has no mass to rescale")
    p *= spec.max_expected_degree / row_max
    n_clipped = int(np.count_nonzero(p > 1.0))
    if n_clipped:
        warnings.warn(
            f"{n_clipped} connection probabilities exceeded 1 and were clipped",
            RuntimeWarning,
            stacklevel=2,
        )
        p = np.minimum(p, 1.0)
    return p


def _bernoulli_graph(p: np.ndarray, rng: np.random.Generator) -> Graph:
    """One hollow symmetric Bernoulli draw from probability matrix ``p``."""
    n = p.shape[0]
    iu = np.triu_indices(n, k=1)
    draws = (rng.random(iu[0].size) < p[iu]).astype(float)
    a = np.zeros((n, n))
    a[iu] = draws
    a = a + a.T
    return Graph(n, a)


def _sample_without_isolation(
    p: np.ndarray, rng: np.random.Generator, allow_isolated: bool = False
) -> Graph:
    if allow_isolated:
        return _bernoulli_graph(p, rng)
    for _ in range(ISOLATION_MAX_RETRIES):
        g = _bernoulli_graph(p, rng)
        if np.all(g.degrees > 0):
            return g
    raise IsolationRetriesExceeded(
        f"no isolation-free draw in {ISOLATION_MAX_RETRIES} attempts"
    )


def generate_rdpg(
    spec: RdpgSpec, rng: np.random.Generator, allow_isolated: bool = False
) -> Graph:
    """Sample a graph with edge probabilities rho * x_i'x_j.

    Resamples (up to a bounded number of attempts) whenever the draw leaves
    some node isolated; ``allow_isolated`` accepts the first draw as-is,
    which is the only workable choice in sparse degree-corrected regimes
    where isolation-free draws essentially never occur.
    """
    return _sample_without_isolation(connection_matrix(spec), rng, allow_isolated)


def generate_dcsbm(
    spec: DcsbmSpec, rng: np.random.Generator, allow_isolated: bool = False
) -> Graph:
    """Sample from the degree-corrected block model (hard memberships)."""
    return _sample_without_isolation(connection_matrix(spec), rng, allow_isolated)


def generate_dcmmsbm(
    spec: DcmmsbmSpec, rng: np.random.Generator, allow_isolated: bool = False
) -> Graph:
    """Sample from the degree-corrected mixed-membership block model."""
    return _sample_without_isolation(connection_matrix(spec), rng, allow_isolated)


def _order_by_magnitude(eigenvalues: np.ndarray) -> np.ndarray:
    """Indices sorting eigenvalues by |value| desc, then value desc, then index."""
    order = np.arange(len(eigenvalues))
    keys = sorted(order, key=lambda i: (-abs(eigenvalues[i]), -eigenvalues[i], i))
    return np.array(keys)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        idx = int(np.argmax(np.abs(col)))
        if col[idx] < 0:
            out[:, j] = -col
    return out


def embed_symmetric(a: np.ndarray, k: int) -> Embedding:
    """Leading-|eigenvalue| eigenpairs of a symmetric matrix.

    Dense solver up to DENSE_EIG_LIMIT rows, Lanczos above that.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if not 1 <= k <= n:
        raise ShapeMismatch(f"k = {k} must satisfy 1 <= k <= {n}")
    if n <= DENSE_EIG_LIMIT or k >= n - 1:
        vals, vecs = np.linalg.eigh(a)
        order = _order_by_magnitude(vals)[:k]
        vals, vecs = vals[order], vecs[:, order]
    else:
        try:
            vals, vecs = scipy.sparse.linalg.eigsh(
                a, k=k, which="LM", tol=1e-8, maxiter=10 * n
            )
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            raise EigConvergenceFailure(str(exc)) from exc
        order = _order_by_magnitude(vals)
        vals, vecs = vals[order], vecs[:, order]
    return Embedding(_fix_signs(vecs), vals, k)


def spectral_embed(g: Graph, k: int) -> Embedding:
    """Adjacency spectral embedding of a graph in dimension ``k``."""
    return embed_symmetric(g.adjacency, k)


def leading_abs_eigenvalues(a: np.ndarray, m: int) -> np.ndarray:
    """The m largest |eigenvalues| of a symmetric matrix, descending."""
    return np.abs(embed_symmetric(a, min(m, a.shape[0])).eigenvalues)


def procrustes_align(
    u_hat: np.ndarray, u_ref: np.ndarray
) -> tuple[np.ndarray, float]:
    """Orthogonal matrix h minimizing ||u_hat - u_ref h||_F, and that minimum.

    Solved from the singular decomposition of u_ref' u_hat.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    if u_hat.shape != u_ref.shape:
        raise ShapeMismatch(f"shapes {u_hat.shape} and {u_ref.shape} differ")
    u, _, vt = np.linalg.svd(u_ref.T @ u_hat)
    h = u @ vt
    residual = float(np.linalg.norm(u_hat - u_ref @ h))
    return h, residual


def select_k(
    g: Graph,
    k_max: int,
    folds: int = 5,
    holdout_fraction: float = 0.1,
    rng: np.random.Generator | None = None,
) -> int:
    """Embedding dimension chosen by cross-validation on hidden node pairs.

    Each fold hides a random ``holdout_fraction`` of the node pairs, zeroes
    them out, scales the remaining entries by 1/(1 - holdout_fraction) and
    reconstructs with a rank-k truncated eigendecomposition; squared error
    on the hidden pairs is averaged over folds and the k with the smallest
    mean error wins (ties go to the smaller k).
    """
    if rng is None:
        rng = np.random.default_rng()
    if not 1 <= k_max < g.n:
        raise ShapeMismatch(f"k_max = {k_max} must satisfy 1 <= k_max < n = {g.n}")
    if folds < 2:
        raise DataError("folds must be >= 2")
    if not 0.0 < holdout_fraction < 1.0:
        raise DataError("holdout_fraction must lie in (0, 1)")

    iu = np.triu_indices(g.n, k=1)
    n_pairs = iu[0].size
    n_hidden = max(1, int(round(holdout_fraction * n_pairs)))
    errors = np.zeros((folds, k_max))
    for f in range(folds):
        hidden = rng.choice(n_pairs, size=n_hidden, replace=False)
        mask = np.ones(n_pairs, dtype=bool)
        mask[hidden] = False
        a_obs = np.zeros_like(g.adjacency)
        a_obs[iu[0][mask], iu[1][mask]] = g.adjacency[iu[0][mask], iu[1][mask]]
        a_obs = (a_obs + a_obs.T) / (1.0 - holdout_fraction)
        emb = embed_symmetric(a_obs, k_max)
        truth = g.adjacency[iu[0][hidden], iu[1][hidden]]
        # Rank-k reconstructions share the leading eigenpairs, so build the
        # holdout predictions incrementally.
        pred = np.zeros(n_hidden)
        for k in range(k_max):
            uk = emb.vectors[:, k]
            pred += emb.eigenvalues[k] * uk[iu[0][hidden]] * uk[iu[1][hidden]]
            errors[f, k] = np.sum((truth - pred) ** 2)
    mean_err = errors.mean(axis=0)
    return int(np.argmin(mean_err)) + 1


def read_edge_csv(path: str, n_nodes: int | None = None) -> Graph:
    """Load an undirected edge list with header ``src,dst``.

    Node ids are 0-based and each edge must appear exactly once; self loops
    and duplicates are rejected with the offending row number.
    """
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["src", "dst"]:
            raise DataError(f"{path}: expected header 'src,dst', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                i, j = int(row[0]), int(row[1])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: row {row_no}: cannot parse edge {row!r}") from exc
            if i < 0 or j < 0:
                raise DataError(f"{path}: row {row_no}: negative node id")
            if i == j:
                raise DataError(f"{path}: row {row_no}: self-loop on node {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DataError(f"{path}: row {row_no}: duplicate edge {key}")
            seen.add(key)
            edges.append(key)
    n = n_nodes if n_nodes is not None else (max(max(e) for e in edges) + 1 if edges else 0)
    a = np.zeros((n, n))
    for i, j in edges:
        if i >= n or j >= n:
            raise DataError(f"{path}: edge ({i},{j}) exceeds node count {n}")
        a[i, j] = a[j, i] = 1.0
    return Graph(n, a)


def write_edge_csv(g: Graph, path: str) -> None:
    """Write each undirected edge once as ``src,dst`` (atomic replace)."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        iu = np.triu_indices(g.n, k=1)
        present = g.adjacency[iu] > 0
        for i, j in zip(iu[0][present], iu[1][present]):
            writer.writerow([int(i), int(j)])
    os.replace(tmp, path)
