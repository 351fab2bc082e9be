"""Monte Carlo experiment grids: generate, simulate, fit, score, summarize.

A grid crosses (generator, truth model, fit model, N, T, K); each
replication derives its seed from the base seed and the cell coordinates
so the runs are reproducible under any execution order or worker count.
The fit model is deliberately left out of the seed so that competing fits
of the same cell see the same simulated data, which is what the estimation
comparisons assume.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import estimate, lsm, network, process
from .errors import DataError, EmptyGroup

GENERATORS = ("dcsbm", "dcmmsbm", "rdpg")
TRUTH_MODELS = ("nar", "enar", "amnar")
FIT_MODELS = ("nar", "enar", "amnar")

RESULT_COLUMNS = [
    "gen", "truth", "fit", "N", "T", "K", "rep", "seed",
    "alpha_hat", "theta_hat", "rmse_alpha", "rmse_theta", "rmse_beta",
    "rmsp", "sigma2_hat", "aic", "bic", "status", "wall_ms",
]

METRIC_COLUMNS = [
    "alpha_hat", "theta_hat", "rmse_alpha", "rmse_theta", "rmse_beta",
    "rmsp", "sigma2_hat", "aic", "bic",
]


def alternating_beta(k: int) -> np.ndarray:
    """Alternating-sign harmonic latent effects (1, -1/2, ..., (-1)^{K-1}/K)."""
    return np.array([(-1.0) ** j / (j + 1) for j in range(k)])


@dataclass(frozen=True)
class Cell:
    gen: str
    truth: str
    fit: str
    n: int
    t: int
    k: int


@dataclass
class ExperimentConfig:
    """Grid coordinates plus the shared simulation parameters.

    ``rho`` of None means the sparsity rule N^{-1/2}; ``beta`` of None means
    the alternating-sign rule sized to each cell's K. ``oracle_latents``
    plumbs the true latent matrices into the fits (a debugging mode that
    makes noiseless runs exactly recoverable).
    """

    n_values: list[int]
    t_values: list[int]
    k_values: list[int]
    generators: list[str] = field(default_factory=lambda: ["dcmmsbm"])
    truth_models: list[str] = field(default_factory=lambda: ["enar"])
    fit_models: list[str] = field(default_factory=lambda: ["enar", "nar"])
    reps: int = 200
    base_seed: int = 0
    alpha: float = 0.2
    theta: float = 0.2
    beta: np.ndarray | None = None
    beta2: float = 1.0
    s: float = 0.25
    gamma: np.ndarray = field(default_factory=lambda: np.array([1 / 3, -1 / 6, 0.0]))
    sigma: float = 0.5
    cov_variances: np.ndarray = field(default_factory=lambda: np.array([3.0, 2.0, 1.0]))
    q_block: float = 9.0 / 40.0
    rho: float | None = None
    oracle_latents: bool = False
    lsm_config: lsm.LsmConfig | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise DataError("reps must be >= 1")
        for name, vals in (("n", self.n_values), ("t", self.t_values), ("k", self.k_values)):
            if not vals or any(int(v) < 1 for v in vals):
                raise DataError(f"{name}_values must be positive")
        for g in self.generators:
            if g not in GENERATORS:
                raise DataError(f"unknown generator {g!r}")
        for m in self.truth_models:
            if m not in TRUTH_MODELS:
                raise DataError(f"unknown truth model {m!r}")
        for m in self.fit_models:
            if m not in FIT_MODELS:
                raise DataError(f"unknown fit model {m!r}")
        if not 0.0 < self.q_block <= 1.0 / 3.0:
            raise DataError("q_block must lie in (0, 1/3]")
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.cov_variances = np.asarray(self.cov_variances, dtype=float)
        if self.beta is not None:
            self.beta = np.asarray(self.beta, dtype=float)

    def cells(self) -> list[Cell]:
        return [
            Cell(g, tr, f, int(n), int(t), int(k))
            for g, tr, f, n, t, k in product(
                self.generators, self.truth_models, self.fit_models,
                self.n_values, self.t_values, self.k_values,
            )
        ]

    def rho_for(self, n: int) -> float:
        return float(self.rho) if self.rho is not None else n ** -0.5

    def beta_for(self, k: int) -> np.ndarray:
        return self.beta if self.beta is not None else alternating_beta(k)

    def cov_spec(self) -> process.CovariateSpec:
        return process.CovariateSpec(len(self.cov_variances), self.cov_variances)


@dataclass
class ReplicationResult:
    gen: str
    truth: str
    fit: str
    n: int
    t: int
    k: int
    rep: int
    seed: int
    alpha_hat: float = math.nan
    theta_hat: float = math.nan
    rmse_alpha: float = math.nan
    rmse_theta: float = math.nan
    rmse_beta: float = math.nan
    rmsp: float = math.nan
    sigma2_hat: float = math.nan
    aic: float = math.nan
    bic: float = math.nan
    status: str = "ok"
    wall_ms: float = 0.0


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, cell: Cell, rep_index: int) -> int:
    """Splitmix-style hash of (base seed, data coordinates, rep index).

    The fit model is excluded on purpose: all fits of one replication share
    the same data draw.
    """
    state = _splitmix64(base_seed & _MASK64)
    payload = f"{cell.gen}|{cell.truth}|{cell.n}|{cell.t}|{cell.k}|{rep_index}".encode()
    payload += b"\x00" * (-len(payload) % 8)
    for off in range(0, len(payload), 8):
        chunk = int.from_bytes(payload[off : off + 8], "little")
        state = _splitmix64(state ^ chunk)
    return state


def _make_generator_spec(cell: Cell, config: ExperimentConfig, rng: np.random.Generator):
    """Generator spec for one cell, with the average expected degree pinned
    to N * rho.

    The block-model sampler rescales to a target maximum row sum, so the
    target is inflated by the max/mean row-sum ratio of the unnormalized
    connection matrix; the sampled graphs then have average expected degree
    N * rho (a pure max-degree target under log-normal heterogeneity leaves
    the graphs almost empty).
    """
    n, k = cell.n, cell.k
    rho = config.rho_for(n)
    if cell.gen == "rdpg":
        x = np.abs(rng.standard_normal((n, k)))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return network.RdpgSpec(x, rho)
    block = 2.0 * config.q_block * np.eye(k) + config.q_block * np.ones((k, k))
    degrees = rng.lognormal(0.0, 1.0, size=n)
    if cell.gen == "dcsbm":
        memberships = rng.integers(0, k, size=n)
        cls = network.DcsbmSpec
    else:
        memberships = rng.dirichlet(np.ones(k), size=n)
        cls = network.DcmmsbmSpec
    m = cls(block, memberships, degrees, 1.0).membership_matrix()
    raw = (degrees[:, None] * degrees[None, :]) * (m @ block @ m.T)
    np.fill_diagonal(raw, 0.0)
    row_sums = raw.sum(axis=1)
    max_deg = n * rho * row_sums.max() / row_sums.mean()
    return cls(block, memberships, degrees, max_deg)


def _planted_lsm_state(cell: Cell, config: ExperimentConfig, rng: np.random.Generator) -> lsm.LsmState:
    n, k = cell.n, cell.k
    rho = config.rho_for(n)
    q = 0.5 * rng.standard_normal((n, k))
    base = 0.5 * math.log(rho / (1.0 - rho))
    v = base + 0.3 * rng.standard_normal(n)
    return lsm.project_constraints(lsm.LsmState(q, v))


def _truth_params(cell: Cell, config: ExperimentConfig):
    if cell.truth == "amnar":
        return process.AmnarParams(
            alpha=config.alpha, theta=config.theta,
            beta1=config.beta_for(cell.k), beta2=config.beta2,
            gamma=config.gamma, sigma=config.sigma, s=config.s,
        )
    beta = config.beta_for(cell.k) if cell.truth == "enar" else np.zeros(0)
    return process.EnarParams(
        alpha=config.alpha, theta=config.theta, beta=beta,
        gamma=config.gamma, sigma=config.sigma,
    )


@dataclass
class CellData:
    """One replication's data draw plus the truth needed for scoring."""

    graph: network.Graph
    panel: process.Panel
    params: object
    latent_true: np.ndarray | None
    truth_spec: estimate.DesignSpec
    mu_true: np.ndarray
    r_true: float | None
    z_next: np.ndarray


def simulate_cell_data(cell: Cell, config: ExperimentConfig, rng: np.random.Generator) -> CellData:
    """Draw the graph, truth latents, panel, and forecast-time covariates.

    Consumes the generator in a fixed order so the draw depends only on the
    data coordinates (gen, truth, N, T, K) and the seed, never on the fit.
    """
    cov = config.cov_spec()
    params = _truth_params(cell, config)
    if cell.truth == "amnar":
        state_true = _planted_lsm_state(cell, config, rng)
        graph = lsm.sample_lsm_graph(state_true, rng, allow_isolated=True)
        latent_true = state_true.x()
        panel = process.simulate_amnar(params, graph, latent_true, cov, cell.t, rng)
        truth_spec = estimate.DesignSpec("amnar", cell.k, s=config.s)
        r_true = process.rate_multiplier(cell.n, cell.t, config.s)
        mu_true = np.concatenate([params.beta, [params.alpha, params.theta], params.gamma])
    else:
        gen_spec = _make_generator_spec(cell, config, rng)
        p_matrix = network.connection_matrix(gen_spec)
        graph = network._sample_without_isolation(p_matrix, rng, allow_isolated=True)
        if cell.truth == "enar":
            latent_true = network.embed_symmetric(p_matrix, cell.k).vectors
            truth_spec = estimate.DesignSpec("enar", cell.k)
            mu_true = np.concatenate([params.beta, [params.alpha, params.theta], params.gamma])
        else:
            latent_true = None
            truth_spec = estimate.DesignSpec("nar")
            mu_true = np.concatenate([[params.alpha, params.theta], params.gamma])
        panel = process.simulate_enar(
            params, graph,
            latent_true if latent_true is not None else np.zeros((cell.n, 0)),
            cov, cell.t, rng,
        )
        r_true = None
    z_next = rng.standard_normal((cell.n, cov.p)) * np.sqrt(cov.variances)
    return CellData(
        graph=graph, panel=panel, params=params, latent_true=latent_true,
        truth_spec=truth_spec, mu_true=mu_true, r_true=r_true, z_next=z_next,
    )


def run_replication(cell: Cell, rep_index: int, config: ExperimentConfig) -> ReplicationResult:
    """One generate-simulate-fit-score pass; failures are recorded, not raised."""
    seed = derive_seed(config.base_seed, cell, rep_index)
    out = ReplicationResult(
        gen=cell.gen, truth=cell.truth, fit=cell.fit,
        n=cell.n, t=cell.t, k=cell.k, rep=rep_index, seed=seed,
    )
    started = time.perf_counter()
    try:
        _run_replication_body(cell, config, seed, out)
    except Exception as exc:  # per-row capture keeps the grid alive
        out.status = type(exc).__name__
    out.wall_ms = (time.perf_counter() - started) * 1000.0
    return out


def _run_replication_body(
    cell: Cell, config: ExperimentConfig, seed: int, out: ReplicationResult
) -> None:
    rng = np.random.default_rng(seed)
    data = simulate_cell_data(cell, config, rng)
    graph, panel, params = data.graph, data.panel, data.params
    latent_true, z_next = data.latent_true, data.z_next

    lap = network.normalized_laplacian(graph, allow_isolated=True)
    y_last = panel.y[:, -1]
    w_true = estimate.design_slice(
        data.truth_spec, lap, latent_true, y_last, z_next, r=data.r_true
    )

    # fit stage
    if cell.fit == "amnar":
        if config.oracle_latents and cell.truth == "amnar":
            spec = estimate.DesignSpec("amnar", cell.k, s=config.s)
            w, y_resp = estimate.build_design(panel, lap, latent_true, spec)
            fit = estimate.fit_ls(w, y_resp)
            fit.spec, fit.names = spec, spec.coef_names(panel.p)
            fit.r = process.rate_multiplier(cell.n, cell.t, config.s)
            latent_fit = latent_true
        else:
            fit, state_hat, _ = estimate.fit_amnar(
                panel, graph, cell.k, config.s, config.lsm_config, rng
            )
            latent_fit = state_hat.x()
    elif cell.fit == "enar":
        if config.oracle_latents and cell.truth == "enar":
            spec = estimate.DesignSpec("enar", cell.k)
            w, y_resp = estimate.build_design(panel, lap, latent_true, spec)
            fit = estimate.fit_ls(w, y_resp)
            fit.spec, fit.names = spec, spec.coef_names(panel.p)
            latent_fit = latent_true
        else:
            fit, emb, _ = estimate.fit_enar(panel, graph, cell.k)
            latent_fit = emb.vectors
    else:
        fit, _, _ = estimate.fit_enar(panel, graph, 0)
        latent_fit = None

    out.alpha_hat = fit.coef("alpha")
    out.theta_hat = fit.coef("theta")
    out.sigma2_hat = fit.sigma2_hat
    out.aic = fit.aic
    out.bic = fit.bic
    if params.alpha != 0:
        out.rmse_alpha = abs(out.alpha_hat - params.alpha) / abs(params.alpha)
    if params.theta != 0:
        out.rmse_theta = abs(out.theta_hat - params.theta) / abs(params.theta)
    out.rmse_beta = _beta_error(cell, params, fit, latent_fit, latent_true)

    y_hat = estimate.predict_one_step(fit, graph, y_last, z_next, latent_fit)
    target = w_true @ data.mu_true
    denom = float(np.linalg.norm(target))
    if denom > 0:
        out.rmsp = float(np.linalg.norm(y_hat - target)) / denom


def _beta_error(cell: Cell, params, fit, latent_fit, latent_true) -> float:
    """Relative latent-effect error after aligning the estimated latent basis
    to the truth; undefined combinations give NaN."""
    if cell.fit == "nar" or cell.fit != cell.truth or latent_true is None:
        return math.nan
    n_latent = fit.spec.latent_cols
    beta_hat = fit.mu_hat[:n_latent]
    if cell.truth == "enar":
        beta_true = params.beta
        if np.linalg.norm(beta_true) == 0:
            return math.nan
        h, _ = network.procrustes_align(latent_fit, latent_true)
        return float(np.linalg.norm(beta_hat - h.T @ beta_true) / np.linalg.norm(beta_true))
    beta_true = params.beta
    if np.linalg.norm(beta_true) == 0:
        return math.nan
    h, _ = network.procrustes_align(latent_fit[:, : cell.k], latent_true[:, : cell.k])
    target = np.concatenate([h.T @ params.beta1, [params.beta2]])
    return float(np.linalg.norm(beta_hat - target) / np.linalg.norm(beta_true))


def _run_task(args: tuple[Cell, int, ExperimentConfig]) -> ReplicationResult:
    return run_replication(*args)


def run_grid(config: ExperimentConfig, parallelism: int = 1) -> list[ReplicationResult]:
    """All cells x reps, in canonical order regardless of execution order."""
    tasks = [(cell, rep, config) for cell in config.cells() for rep in range(config.reps)]
    if parallelism > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (8 * parallelism))
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=chunk))
    else:
        results = [_run_task(t) for t in tasks]
    results.sort(key=lambda r: (r.gen, r.truth, r.fit, r.n, r.t, r.k, r.rep))
    return results


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_to_csv(results: list[ReplicationResult], path: str, timing: bool = True) -> None:
    """Write the stable results schema; ``timing=False`` zeroes the wall-clock
    column so outputs can be compared byte for byte."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            wall = r.wall_ms if timing else 0.0
            writer.writerow([
                r.gen, r.truth, r.fit, r.n, r.t, r.k, r.rep, r.seed,
                _fmt(r.alpha_hat), _fmt(r.theta_hat), _fmt(r.rmse_alpha),
                _fmt(r.rmse_theta), _fmt(r.rmse_beta), _fmt(r.rmsp),
                _fmt(r.sigma2_hat), _fmt(r.aic), _fmt(r.bic), r.status, _fmt(wall),
            ])
    os.replace(tmp, path)


def read_results_csv(path: str) -> list[ReplicationResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise DataError(f"{path}: unexpected results header {reader.fieldnames}")
        for row in reader:
            out.append(ReplicationResult(
                gen=row["gen"], truth=row["truth"], fit=row["fit"],
                n=int(row["N"]), t=int(row["T"]), k=int(row["K"]),
                rep=int(row["rep"]), seed=int(row["seed"]),
                alpha_hat=float(row["alpha_hat"]), theta_hat=float(row["theta_hat"]),
                rmse_alpha=float(row["rmse_alpha"]), rmse_theta=float(row["rmse_theta"]),
                rmse_beta=float(row["rmse_beta"]), rmsp=float(row["rmsp"]),
                sigma2_hat=float(row["sigma2_hat"]), aic=float(row["aic"]),
                bic=float(row["bic"]), status=row["status"], wall_ms=float(row["wall_ms"]),
            ))
    return out


_GROUP_ALIASES = {"n": "n", "t": "t", "k": "k", "gen": "gen", "truth": "truth",
                  "fit": "fit", "rep": "rep", "seed": "seed"}


def _group_field(name: str) -> str:
    key = name.lower()
    if key not in _GROUP_ALIASES:
        raise DataError(f"cannot group by {name!r}")
    return _GROUP_ALIASES[key]


def summarize(results: list[ReplicationResult], group_by: list[str]) -> list[dict]:
    """Per-group distribution summary of every metric, long format.

    Each output row holds one (group, metric) pair with count, mean, sd,
    median, and quartiles over the non-NaN values; a ``failure_rate`` metric
    reports the share of non-ok rows per group.
    """
    if not results:
        raise EmptyGroup("no results to summarize")
    fields = [_group_field(g) for g in group_by]
    groups: dict[tuple, list[ReplicationResult]] = {}
    for r in results:
        groups.setdefault(tuple(getattr(r, f) for f in fields), []).append(r)

    rows = []
    for key in sorted(groups, key=lambda k: tuple(map(str, k))):
        members = groups[key]
        base = dict(zip(group_by, key))
        for metric in METRIC_COLUMNS:
            vals = np.array([getattr(r, metric) for r in members], dtype=float)
            vals = vals[np.isfinite(vals)]
            row = dict(base)
            row["metric"] = metric
            row["count"] = int(vals.size)
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                row.update(
                    mean=float(vals.mean()),
                    sd=float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                    median=float(med), q1=float(q1), q3=float(q3),
                )
            else:
                row.update(mean=math.nan, sd=math.nan, median=math.nan,
                           q1=math.nan, q3=math.nan)
            rows.append(row)
        n_fail = sum(1 for r in members if r.status != "ok")
        rows.append(dict(base, metric="failure_rate", count=len(members),
                         mean=n_fail / len(members), sd=0.0,
                         median=math.nan, q1=math.nan, q3=math.nan))
    return rows


def summary_to_csv(rows: list[dict], group_by: list[str], path: str) -> None:
    cols = list(group_by) + ["metric", "count", "mean", "sd", "median", "q1", "q3"]
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in cols])
    os.replace(tmp, path)
