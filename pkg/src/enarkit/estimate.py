"""Design construction, least-squares fitting, inference, and prediction.

Each observation (node i, time t) contributes one design row; stacking all
T transitions gives an NT x d regression solved by pivoted QR. The model
variants share the layout

    [ latent columns | lagged own response | Laplacian-weighted lag | covariates ]

where the latent block is the spectral embedding (embedding model), the
additive+multiplicative factors scaled by r = N^{-s} T^{-1/2} (AMNAR), or
absent (plain network autoregression). The regression variant drops the lag
terms and may carry a grand-mean column.

Standard errors come from the plug-in covariance sigma2_hat * (W'W)^{-1}.
The latent-effect coordinates are identified only up to an orthogonal
rotation of the embedding, so their standard errors carry a caveat flag and
cross-run comparisons must align embeddings first.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DataError,
    DimensionMismatch,
    RankDeficient,
    ZeroDenominator,
)
from .network import Embedding, Graph, leading_abs_eigenvalues, normalized_laplacian, spectral_embed
from .process import Panel, rate_multiplier

MODELS = ("nar", "enar", "amnar", "enr")


@dataclass
class DesignSpec:
    """Which regressors to build.

    ``k`` is the latent dimension (0 for plain NAR; the AMNAR latent block
    has k+1 columns). ``s`` is the AMNAR rate exponent. ``grand_mean``
    only applies to the regression variant.
    """

    model: str
    k: int = 0
    s: float | None = None
    grand_mean: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise DataError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.model == "nar":
            if self.k:
                raise DataError("nar takes no latent dimension")
        elif self.k < 1:
            raise DataError(f"{self.model} requires k >= 1")
        if self.model == "amnar":
            if self.s is None or not 0.0 < self.s < 0.5:
                raise DataError("amnar requires s in (0, 1/2)")

    @property
    def latent_cols(self) -> int:
        if self.model == "nar":
            return 0
        if self.model == "amnar":
            return self.k + 1
        return self.k

    def coef_names(self, p: int) -> list[str]:
        names = [f"beta_{j + 1}" for j in range(self.latent_cols)]
        if self.model == "enr":
            if self.grand_mean:
                names.append("alpha")
        else:
            names += ["alpha", "theta"]
        names += [f"gamma_{j + 1}" for j in range(p)]
        return names


@dataclass
class FitResult:
    """Least-squares estimate with plug-in covariance and fit scores."""

    mu_hat: np.ndarray
    sigma2_hat: float
    cov_hat: np.ndarray
    n_obs: int
    n_params: int
    loglik: float
    aic: float
    bic: float
    spec: DesignSpec | None = None
    names: list[str] = field(default_factory=list)
    r: float | None = None

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov_hat), 0.0, None))

    def coef(self, name: str) -> float:
        return float(self.mu_hat[self.names.index(name)])


@dataclass
class Diagnostics:
    """Sample analogues of the quantities governing embedding accuracy.

    ``eigengap`` is the smallest retained |eigenvalue| minus the largest
    discarded one in the adjacency spectrum; ``kappa`` is
    sqrt(K N rho_hat) / eigengap with rho_hat the edge density. Latent-MLE
    fields are populated only for the additive+multiplicative fit.
    """

    eigengap: float
    kappa: float
    condition_number: float
    lsm_loglik: float | None = None
    lsm_centering: float | None = None
    lsm_diagonality: float | None = None
    lsm_step_failed: bool | None = None

    def to_dict(self) -> dict:
        def clean(v):
            if v is None:
                return None
            if isinstance(v, bool):
                return v
            v = float(v)
            return None if math.isnan(v) else v

        out = {
            "eigengap": clean(self.eigengap),
            "kappa": clean(self.kappa),
            "condition_number": clean(self.condition_number),
        }
        for key in ("lsm_loglik", "lsm_centering", "lsm_diagonality", "lsm_step_failed"):
            val = getattr(self, key)
            if val is not None:
                out[key] = clean(val)
        return out


def _time_slice(
    spec: DesignSpec,
    latent_scaled: np.ndarray | None,
    y_t: np.ndarray,
    ly_t: np.ndarray,
    z_t: np.ndarray,
) -> np.ndarray:
    """Design rows for all nodes at one time point."""
    n = y_t.shape[0]
    blocks = []
    if latent_scaled is not None and latent_scaled.shape[1]:
        blocks.append(latent_scaled)
    if spec.model == "enr":
        if spec.grand_mean:
            blocks.append(np.ones((n, 1)))
    else:
        blocks.append(y_t[:, None])
        blocks.append(ly_t[:, None])
    if z_t.shape[1]:
        blocks.append(z_t)
    if not blocks:
        return np.zeros((n, 0))
    return np.column_stack(blocks)


def _check_latent(latent, n: int, cols: int) -> np.ndarray | None:
    if cols == 0:
        return None
    if latent is None:
        raise DimensionMismatch("model requires a latent matrix but none was given")
    if isinstance(latent, Embedding):
        latent = latent.vectors
    latent = np.atleast_2d(np.asarray(latent, dtype=float))
    if latent.shape != (n, cols):
        raise DimensionMismatch(
            f"latent matrix has shape {latent.shape}, expected ({n}, {cols})"
        )
    return latent


def build_design(
    panel: Panel,
    laplacian: np.ndarray,
    latent,
    spec: DesignSpec,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-observation regressor rows and responses.

    Row t*N + i holds the regressors for node i's transition into time t+1;
    the response vector stacks y_1 .. y_T in the same order. The AMNAR
    latent block is multiplied by r = N^{-s} T^{-1/2} here.
    """
    n, t_len, p = panel.n, panel.t, panel.p
    if laplacian.shape != (n, n):
        raise DimensionMismatch(f"laplacian shape {laplacian.shape} != ({n}, {n})")
    latent = _check_latent(latent, n, spec.latent_cols)
    if spec.model == "amnar":
        latent = rate_multiplier(n, t_len, spec.s) * latent

    if spec.model == "enr":
        if t_len != 1:
            raise DimensionMismatch(
                f"the regression variant expects a single transition, got T={t_len}"
            )
        w = _time_slice(spec, latent, panel.y[:, 0], panel.y[:, 0], panel.z[:, 0, :])
        return w, panel.y[:, 1].copy()

    ly = laplacian @ panel.y[:, :t_len]
    rows = [
        _time_slice(spec, latent, panel.y[:, t], ly[:, t], panel.z[:, t, :])
        for t in range(t_len)
    ]
    w = np.vstack(rows)
    y_resp = panel.y[:, 1:].T.reshape(-1)
    return w, y_resp


def fit_ls(w: np.ndarray, y_resp: np.ndarray) -> FitResult:
    """Least squares by pivoted QR with plug-in covariance.

    Raises RankDeficient (with the offending column indices) when a pivot
    falls below 1e-10 of the leading one; no silent pseudo-inverse.
    """
    w = np.asarray(w, dtype=float)
    y_resp = np.asarray(y_resp, dtype=float).reshape(-1)
    n_obs, d = w.shape
    if y_resp.shape[0] != n_obs:
        raise DimensionMismatch(f"{n_obs} rows in w but {y_resp.shape[0]} responses")
    if n_obs < d:
        raise DimensionMismatch(f"underdetermined system: {n_obs} obs, {d} columns")

    q, r, piv = scipy.linalg.qr(w, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if d and (diag[0] == 0.0 or np.any(diag < 1e-10 * diag[0])):
        bad = np.flatnonzero(diag < max(1e-10 * diag[0], np.finfo(float).tiny))
        raise RankDeficient(sorted(int(piv[i]) for i in bad))

    coef_piv = scipy.linalg.solve_triangular(r, q.T @ y_resp)
    mu = np.empty(d)
    mu[piv] = coef_piv

    resid = y_resp - w @ mu
    rss = float(resid @ resid)
    dof = n_obs - d
    sigma2_hat = rss / dof if dof > 0 else 0.0

    r_inv = scipy.linalg.solve_triangular(r, np.eye(d)) if d else np.zeros((0, 0))
    xtx_inv = np.empty((d, d))
    xtx_inv[np.ix_(piv, piv)] = r_inv @ r_inv.T
    cov_hat = sigma2_hat * xtx_inv
    cov_hat = (cov_hat + cov_hat.T) / 2.0

    sigma2_ml = rss / n_obs if n_obs else 0.0
    if sigma2_ml > 0:
        loglik = -0.5 * n_obs * (math.log(2.0 * math.pi * sigma2_ml) + 1.0)
    else:
        loglik = math.inf
    aic = -2.0 * loglik + 2.0 * (d + 1)
    bic = -2.0 * loglik + (d + 1) * math.log(n_obs)

    return FitResult(
        mu_hat=mu,
        sigma2_hat=sigma2_hat,
        cov_hat=cov_hat,
        n_obs=n_obs,
        n_params=d,
        loglik=loglik,
        aic=aic,
        bic=bic,
    )


def _adjacency_diagnostics(graph: Graph, k: int, w: np.ndarray) -> Diagnostics:
    if k < 1:
        eigengap = kappa = math.nan
    else:
        vals = leading_abs_eigenvalues(graph.adjacency, min(k + 1, graph.n))
        discarded = vals[k] if k < graph.n else 0.0
        eigengap = float(vals[k - 1] - discarded)
        dens = graph.density
        kappa = math.sqrt(k * graph.n * dens) / eigengap if eigengap > 0 else math.inf
    cond = float(np.linalg.cond(w.T @ w)) if w.shape[1] else math.nan
    return Diagnostics(eigengap=eigengap, kappa=kappa, condition_number=cond)


def fit_enar(
    panel: Panel, graph: Graph, k: int
) -> tuple[FitResult, Embedding, Diagnostics]:
    """Embed the observed graph, build the design, and fit by least squares.

    ``k = 0`` drops the latent block entirely, which is exactly the plain
    network autoregression fit.
    """
    lap = normalized_laplacian(graph, allow_isolated=True)
    if k >= 1:
        emb = spectral_embed(graph, k)
        spec = DesignSpec("enar", k)
        latent = emb.vectors
    else:
        emb = Embedding(np.zeros((graph.n, 0)), np.zeros(0), 0)
        spec = DesignSpec("nar")
        latent = None
    w, y_resp = build_design(panel, lap, latent, spec)
    fit = fit_ls(w, y_resp)
    fit.spec = spec
    fit.names = spec.coef_names(panel.p)
    return fit, emb, _adjacency_diagnostics(graph, k, w)


def fit_amnar(
    panel: Panel,
    graph: Graph,
    k: int,
    s: float,
    lsm_config=None,
    rng: np.random.Generator | None = None,
):
    """Estimate the latent-space factors by constrained MLE, then fit.

    Returns (FitResult, LsmState, Diagnostics). The latent design columns
    are the MLE's [Q | v] scaled by r = N^{-s} T^{-1/2}.
    """
    from . import lsm as lsm_mod

    lsm_fit = lsm_mod.fit_lsm(graph, k, lsm_config, rng)
    x_hat = np.column_stack([lsm_fit.state.q, lsm_fit.state.v])
    spec = DesignSpec("amnar", k, s=s)
    lap = normalized_laplacian(graph, allow_isolated=True)
    w, y_resp = build_design(panel, lap, x_hat, spec)
    fit = fit_ls(w, y_resp)
    fit.spec = spec
    fit.names = spec.coef_names(panel.p)
    fit.r = rate_multiplier(panel.n, panel.t, s)
    diag = _adjacency_diagnostics(graph, k, w)
    diag.lsm_loglik = lsm_fit.loglik_trace[-1]
    diag.lsm_centering = lsm_fit.state.centering_residual()
    diag.lsm_diagonality = lsm_fit.state.diagonality_residual()
    diag.lsm_step_failed = lsm_fit.step_failed
    return fit, lsm_fit.state, diag


def design_slice(
    spec: DesignSpec,
    laplacian: np.ndarray,
    latent,
    y_t: np.ndarray,
    z_t: np.ndarray,
    r: float | None = None,
) -> np.ndarray:
    """Design rows (N x d) for a single time point."""
    y_t = np.asarray(y_t, dtype=float).reshape(-1)
    n = y_t.shape[0]
    z_t = np.asarray(z_t, dtype=float)
    if z_t.ndim == 1:
        z_t = z_t.reshape(n, -1) if z_t.size else np.zeros((n, 0))
    if z_t.shape[0] != n:
        raise DimensionMismatch(f"z_t has {z_t.shape[0]} rows, expected {n}")
    latent = _check_latent(latent, n, spec.latent_cols)
    if spec.model == "amnar":
        if r is None:
            raise DataError("the amnar design needs its latent scale r")
        latent = r * latent
    ly_t = y_t if spec.model == "enr" else laplacian @ y_t
    return _time_slice(spec, latent, y_t, ly_t, z_t)


def predict_one_step(
    fit: FitResult,
    graph: Graph,
    y_t: np.ndarray,
    z_t: np.ndarray,
    latent=None,
) -> np.ndarray:
    """Noise-free point forecast W_T mu_hat for the next time step."""
    if fit.spec is None:
        raise DataError("fit carries no design spec; cannot build forecast design")
    n = graph.n
    if np.asarray(y_t).reshape(-1).shape != (n,):
        raise DimensionMismatch(f"y_t must have {n} entries")
    lap = (np.zeros((n, n)) if fit.spec.model == "enr"
           else normalized_laplacian(graph, allow_isolated=True))
    w_t = design_slice(fit.spec, lap, latent, y_t, z_t, r=fit.r)
    if w_t.shape[1] != fit.mu_hat.shape[0]:
        raise DimensionMismatch(
            f"design has {w_t.shape[1]} columns but fit has {fit.mu_hat.shape[0]} coefficients"
        )
    return w_t @ fit.mu_hat


def rmse_rel(b_true: np.ndarray, b_hat: np.ndarray) -> float:
    """Relative error in the l2 operator norm (Euclidean norm for vectors)."""
    b_true = np.asarray(b_true, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    if b_true.shape != b_hat.shape:
        raise DimensionMismatch(f"shapes {b_true.shape} and {b_hat.shape} differ")
    ord_ = 2 if b_true.ndim == 2 else None
    denom = np.linalg.norm(b_true, ord_)
    if denom == 0:
        raise ZeroDenominator("relative error undefined: ||b_true|| = 0")
    return float(np.linalg.norm(b_true - b_hat, ord_) / denom)


def rmsp(w_t: np.ndarray, mu_hat: np.ndarray, mu_true: np.ndarray) -> float:
    """One-step relative prediction error ||W_T (mu_hat - mu)|| / ||W_T mu||."""
    w_t = np.asarray(w_t, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float).reshape(-1)
    mu_true = np.asarray(mu_true, dtype=float).reshape(-1)
    if mu_hat.shape != mu_true.shape or w_t.shape[1] != mu_true.shape[0]:
        raise DimensionMismatch("w_t, mu_hat, mu_true dimensions are incoherent")
    denom = float(np.linalg.norm(w_t @ mu_true))
    if denom == 0:
        raise ZeroDenominator("prediction error undefined: ||W_T mu|| = 0")
    return float(np.linalg.norm(w_t @ (mu_hat - mu_true)) / denom)


# Wichura's rational approximation of the standard normal quantile, good to
# well below the 1e-9 the intervals need. Checked against scipy in tests.
_PPND_A = (
    3.3871328727963666080, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
)
_PPND_B = (
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_PPND_C = (
    1.42343711074968357734, 4.63033784615654529590, 5.76949722146069140550,
    3.64784832476320460504, 1.27045825245236838258, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
)
_PPND_D = (
    1.0, 2.05319162663775882187, 1.67638483018380384940, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_PPND_E = (
    6.65790464350110377720, 5.46378491116411436990, 1.78482653991729133580,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7,
)
_PPND_F = (
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly(coeffs, x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def norm_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise DataError(f"quantile argument {p} must lie in (0, 1)")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_PPND_A, r) / _poly(_PPND_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_PPND_C, r) / _poly(_PPND_D, r)
    else:
        r -= 5.0
        val = _poly(_PPND_E, r) / _poly(_PPND_F, r)
    return -val if q < 0 else val


def confint(fit: FitResult, index: int, level: float) -> tuple[float, float]:
    """Symmetric normal-quantile interval from the plug-in covariance."""
    if not 0.0 < level < 1.0:
        raise DataError(f"level {level} must lie in (0, 1)")
    z = norm_quantile(0.5 + level / 2.0)
    center = float(fit.mu_hat[index])
    half = z * float(fit.se[index])
    return center - half, center + half


def fit_to_json_dict(fit: FitResult, diagnostics: Diagnostics | None = None) -> dict:
    """Serializable fit summary with stable key names."""
    if fit.spec is None or not fit.names:
        raise DataError("fit lacks spec/names; refit through the model entry points")

    def num(v: float):
        v = float(v)
        return v if math.isfinite(v) else None

    out = {
        "model": fit.spec.model,
        "k": fit.spec.k,
        "s": fit.spec.s,
        "r": fit.r,
        "grand_mean": fit.spec.grand_mean if fit.spec.model == "enr" else None,
        "mu_hat": {name: float(v) for name, v in zip(fit.names, fit.mu_hat)},
        "se": {name: float(v) for name, v in zip(fit.names, fit.se)},
        "sigma2_hat": float(fit.sigma2_hat),
        "n_obs": fit.n_obs,
        "n_params": fit.n_params,
        "loglik": num(fit.loglik),
        "aic": num(fit.aic),
        "bic": num(fit.bic),
        "diagnostics": diagnostics.to_dict() if diagnostics is not None else {},
    }
    if fit.spec.latent_cols:
        out["beta_rotation_caveat"] = True
    return out


def write_fit_json(fit: FitResult, path: str, diagnostics: Diagnostics | None = None) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(fit_to_json_dict(fit, diagnostics), fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def read_fit_json(path: str) -> FitResult:
    """Rebuild a fit (coefficients + spec) from its JSON form, for forecasting."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        spec = DesignSpec(
            doc["model"],
            int(doc.get("k") or 0),
            s=doc.get("s"),
            grand_mean=bool(doc.get("grand_mean")) if doc.get("grand_mean") is not None else True,
        )
        names = list(doc["mu_hat"].keys())
        mu = np.array([float(doc["mu_hat"][n]) for n in names])
        se = np.array([float(doc["se"][n]) for n in names])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed fit JSON ({exc})") from exc
    d = mu.size
    fit = FitResult(
        mu_hat=mu,
        sigma2_hat=float(doc.get("sigma2_hat", 0.0)),
        cov_hat=np.diag(se**2),
        n_obs=int(doc.get("n_obs", 0)),
        n_params=d,
        loglik=doc.get("loglik") if doc.get("loglik") is not None else math.nan,
        aic=doc.get("aic") if doc.get("aic") is not None else math.nan,
        bic=doc.get("bic") if doc.get("bic") is not None else math.nan,
        spec=spec,
        names=names,
        r=doc.get("r"),
    )
    return fit
