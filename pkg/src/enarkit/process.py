"""Networked autoregressive processes: parameters, stationary law, simulation.

The response recursion is

    y_{t+1} = alpha * y_t + theta * L y_t + (latent effect) + Z_t gamma + eps_{t+1}

with L the symmetric normalized Laplacian of the observed graph. When
|alpha| + |theta| < 1 the process has a unique strictly stationary solution
whose mean solves (I - G) phi = latent effect for G = alpha*I + theta*L and
whose lag-0 covariance solves the discrete Lyapunov equation
Gamma = G Gamma G' + c I with c = sigma^2 + gamma' Sigma_z gamma.

The latent effect is U beta for the embedding model and r X beta for the
additive+multiplicative model, where r = N^{-s} T^{-1/2}.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CholeskyFailure,
    DataError,
    DimensionMismatch,
    LyapunovNonconvergence,
    NotStationary,
)
from .network import Graph, normalized_laplacian

LYAPUNOV_TOL = 1e-12
LYAPUNOV_MAX_ITERS = 100_000
EXACT_INIT_LIMIT = 512
BURN_IN_STEPS = 500


@dataclass
class CovariateSpec:
    """Dimension and diagonal covariance of the iid Gaussian covariates."""

    p: int
    variances: np.ndarray

    def __post_init__(self):
        self.variances = np.asarray(self.variances, dtype=float).reshape(-1)
        if self.variances.shape != (self.p,):
            raise DimensionMismatch(f"expected {self.p} variances, got {self.variances.shape}")
        if np.any(self.variances <= 0):
            raise DataError("covariate variances must be strictly positive")

    def quad_form(self, gamma: np.ndarray) -> float:
        """gamma' Sigma_z gamma."""
        return float(np.sum(self.variances * np.asarray(gamma) ** 2))


@dataclass
class EnarParams:
    """Momentum, peer, latent-position, and covariate effects with noise sd."""

    alpha: float
    theta: float
    beta: np.ndarray
    gamma: np.ndarray
    sigma: float

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if self.sigma < 0:
            raise DataError("sigma must be nonnegative")

    @property
    def k(self) -> int:
        return self.beta.size

    @property
    def p(self) -> int:
        return self.gamma.size


@dataclass
class AmnarParams:
    """Effects for the additive+multiplicative latent model.

    beta1 weights the K multiplicative positions, beta2 the additive degree
    effect; both enter through columns scaled by r = N^{-s} T^{-1/2}.
    """

    alpha: float
    theta: float
    beta1: np.ndarray
    beta2: float
    gamma: np.ndarray
    sigma: float
    s: float

    def __post_init__(self):
        self.beta1 = np.asarray(self.beta1, dtype=float).reshape(-1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if not 0.0 < self.s < 0.5:
            raise DataError(f"s = {self.s} must lie in (0, 1/2)")
        if self.sigma < 0:
            raise DataError("sigma must be nonnegative")

    @property
    def k(self) -> int:
        return self.beta1.size

    @property
    def p(self) -> int:
        return self.gamma.size

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([self.beta1, [self.beta2]])


def rate_multiplier(n: int, t: int, s: float) -> float:
    """Latent-column scale r = N^{-s} T^{-1/2}."""
    return float(n ** (-s) / math.sqrt(t))


@dataclass
class Panel:
    """Responses y (N x (T+1), column t holds y_t) and covariates z
    (N x T x p, slice t holds Z_t feeding the transition to t+1)."""

    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.y.ndim != 2 or self.z.ndim != 3:
            raise DimensionMismatch("y must be N x (T+1) and z must be N x T x p")
        if self.z.shape[0] != self.y.shape[0] or self.z.shape[1] != self.y.shape[1] - 1:
            raise DimensionMismatch(
                f"incoherent panel dims: y {self.y.shape}, z {self.z.shape}"
            )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def t(self) -> int:
        return self.y.shape[1] - 1

    @property
    def p(self) -> int:
        return self.z.shape[2]


@dataclass
class StationaryMoments:
    """Transition matrix, stationary mean/covariance, and innovation scale."""

    g: np.ndarray
    phi: np.ndarray
    gamma0: np.ndarray
    c: float
    iterations: int = field(default=0)


def check_stationarity(alpha: float, theta: float) -> bool:
    """True iff |alpha| + |theta| < 1."""
    return abs(alpha) + abs(theta) < 1.0


def transition_matrix(graph: Graph, alpha: float, theta: float) -> np.ndarray:
    # isolated nodes get a zero Laplacian row: no peer term, plain AR(1)
    return alpha * np.eye(graph.n) + theta * normalized_laplacian(graph, allow_isolated=True)


def stationary_moments(
    graph: Graph,
    latent_effect: np.ndarray,
    params: EnarParams | AmnarParams,
    cov_spec: CovariateSpec,
) -> StationaryMoments:
    """Stationary mean and lag-0 covariance of the process on ``graph``.

    The mean solves (I - G) phi = latent_effect directly; the covariance is
    the fixed point of Gamma <- G Gamma G' + c I starting from c I, run to a
    1e-12 relative Frobenius change.
    """
    if not check_stationarity(params.alpha, params.theta):
        raise NotStationary(f"|{params.alpha}| + |{params.theta}| >= 1")
    latent_effect = np.asarray(latent_effect, dtype=float).reshape(-1)
    if latent_effect.shape != (graph.n,):
        raise DimensionMismatch(
            f"latent effect has shape {latent_effect.shape}, expected ({graph.n},)"
        )
    g = transition_matrix(graph, params.alpha, params.theta)
    phi = np.linalg.solve(np.eye(graph.n) - g, latent_effect)
    c = params.sigma**2 + cov_spec.quad_form(params.gamma)
    gamma0 = c * np.eye(graph.n)
    iterations = 0
    if c > 0:
        for iterations in range(1, LYAPUNOV_MAX_ITERS + 1):
            nxt = g @ gamma0 @ g.T + c * np.eye(graph.n)
            delta = np.linalg.norm(nxt - gamma0) / np.linalg.norm(nxt)
            gamma0 = nxt
            if delta < LYAPUNOV_TOL:
                break
        else:
            raise LyapunovNonconvergence(
                f"no convergence in {LYAPUNOV_MAX_ITERS} iterations"
            )
    gamma0 = (gamma0 + gamma0.T) / 2.0
    return StationaryMoments(g=g, phi=phi, gamma0=gamma0, c=c, iterations=iterations)


def autocov(m: StationaryMoments, h: int) -> np.ndarray:
    """Lag-h autocovariance: G^h Gamma(0) for h >= 0, its transpose image
    Gamma(0) (G')^{-h} for h < 0."""
    if h >= 0:
        return np.linalg.matrix_power(m.g, h) @ m.gamma0
    return m.gamma0 @ np.linalg.matrix_power(m.g.T, -h)


def _stationary_start(
    moments: StationaryMoments, rng: np.random.Generator
) -> np.ndarray:
    """Exact draw from N(phi, Gamma(0)) via Cholesky with one jitter retry."""
    n = moments.phi.size
    if moments.c == 0.0:
        return moments.phi.copy()
    try:
        chol = np.linalg.cholesky(moments.gamma0)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(moments.gamma0) / n
        try:
            chol = np.linalg.cholesky(moments.gamma0 + jitter * np.eye(n))
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure("stationary covariance is numerically indefinite") from exc
    return moments.phi + chol @ rng.standard_normal(n)


def _simulate(
    graph: Graph,
    latent_effect: np.ndarray,
    params: EnarParams | AmnarParams,
    cov_spec: CovariateSpec,
    t_len: int,
    rng: np.random.Generator,
    y0: np.ndarray | None,
) -> Panel:
    if t_len < 1:
        raise DimensionMismatch("t_len must be >= 1")
    moments = stationary_moments(graph, latent_effect, params, cov_spec)
    n, p = graph.n, cov_spec.p
    sd = np.sqrt(cov_spec.variances)

    if y0 is not None:
        y_cur = np.asarray(y0, dtype=float).reshape(-1)
        if y_cur.shape != (n,):
            raise DimensionMismatch(f"y0 has shape {y_cur.shape}, expected ({n},)")
        y_cur = y_cur.copy()
    elif n <= EXACT_INIT_LIMIT:
        y_cur = _stationary_start(moments, rng)
    else:
        y_cur = moments.phi.copy()
        for _ in range(BURN_IN_STEPS):
            z_t = rng.standard_normal((n, p)) * sd
            eps = params.sigma * rng.standard_normal(n)
            y_cur = moments.g @ y_cur + latent_effect + z_t @ params.gamma + eps

    y = np.empty((n, t_len + 1))
    z = np.empty((n, t_len, p))
    y[:, 0] = y_cur
    for t in range(t_len):
        z[:, t, :] = rng.standard_normal((n, p)) * sd
        eps = params.sigma * rng.standard_normal(n)
        y[:, t + 1] = moments.g @ y[:, t] + latent_effect + z[:, t, :] @ params.gamma + eps
    return Panel(y=y, z=z)


def simulate_enar(
    params: EnarParams,
    graph: Graph,
    embedding_truth: np.ndarray,
    cov_spec: CovariateSpec,
    t_len: int,
    rng: np.random.Generator,
    y0: np.ndarray | None = None,
) -> Panel:
    """Simulate from the embedding model with latent effect U beta.

    ``embedding_truth`` holds the population eigenvectors (N x K). Starts
    from an exact stationary draw at desk scale, a burned-in path above
    that; pass ``y0`` to pin the initial state instead.
    """
    u = np.atleast_2d(np.asarray(embedding_truth, dtype=float))
    if u.shape[0] != graph.n or u.shape[1] != params.k:
        raise DimensionMismatch(
            f"embedding shape {u.shape} incompatible with N={graph.n}, K={params.k}"
        )
    latent_effect = u @ params.beta if params.k else np.zeros(graph.n)
    return _simulate(graph, latent_effect, params, cov_spec, t_len, rng, y0)


def simulate_amnar(
    params: AmnarParams,
    graph: Graph,
    latent_truth: np.ndarray,
    cov_spec: CovariateSpec,
    t_len: int,
    rng: np.random.Generator,
    y0: np.ndarray | None = None,
) -> Panel:
    """Simulate with latent effect r [Q | v] (beta1, beta2), r = N^{-s} T^{-1/2}."""
    x = np.atleast_2d(np.asarray(latent_truth, dtype=float))
    if x.shape != (graph.n, params.k + 1):
        raise DimensionMismatch(
            f"latent truth shape {x.shape}, expected ({graph.n}, {params.k + 1})"
        )
    r = rate_multiplier(graph.n, t_len, params.s)
    latent_effect = r * (x @ params.beta)
    return _simulate(graph, latent_effect, params, cov_spec, t_len, rng, y0)


def write_panel_csv(panel: Panel, path: str) -> None:
    """Long-format panel: ``node,t,y,z1,...,zp``; the final time carries no
    covariates so those fields are left empty. Atomic replace."""
    tmp = f"{path}.tmp.{os.getpid()}"
    p = panel.p
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "t", "y"] + [f"z{j + 1}" for j in range(p)])
        for i in range(panel.n):
            for t in range(panel.t + 1):
                row = [i, t, repr(float(panel.y[i, t]))]
                if t < panel.t:
                    row += [repr(float(v)) for v in panel.z[i, t, :]]
                else:
                    row += [""] * p
                writer.writerow(row)
    os.replace(tmp, path)


def read_panel_csv(path: str) -> Panel:
    """Exact inverse of :func:`write_panel_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["node", "t", "y"]:
            raise DataError(f"{path}: expected header 'node,t,y,z1,...', got {header}")
        p = len(header) - 3
        rows: dict[tuple[int, int], tuple[float, list[str]]] = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                node, t = int(row[0]), int(row[1])
                yv = float(row[2])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: row {row_no}: cannot parse {row!r}") from exc
            if (node, t) in rows:
                raise DataError(f"{path}: row {row_no}: duplicate (node={node}, t={t})")
            rows[(node, t)] = (yv, row[3 : 3 + p])
    if not rows:
        raise DataError(f"{path}: empty panel")
    n = max(k[0] for k in rows) + 1
    t_max = max(k[1] for k in rows)
    y = np.empty((n, t_max + 1))
    z = np.empty((n, t_max, p))
    for i in range(n):
        for t in range(t_max + 1):
            if (i, t) not in rows:
                raise DataError(f"{path}: missing row for node {i}, t {t}")
            yv, zs = rows[(i, t)]
            y[i, t] = yv
            if t < t_max:
                try:
                    z[i, t, :] = [float(v) for v in zs]
                except ValueError as exc:
                    raise DataError(
                        f"{path}: covariates missing or malformed at node {i}, t {t}"
                    ) from exc
    return Panel(y=y, z=z)
