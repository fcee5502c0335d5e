"""Covariate distances and a from-scratch logistic propensity model."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .cohort import Cohort

__all__ = [
    "DistanceMatrix",
    "PropensityModel",
    "mahalanobis_matrix",
    "robust_mahalanobis_matrix",
    "fit_propensity",
    "design_matrix",
    "log_likelihood",
    "score",
    "entire_number",
    "entire_numbers",
    "PROB_CLIP",
]

PROB_CLIP = 1e-6


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    metric: str = "custom"

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("distance matrix must be 2-D (treated x controls)")
        if not np.all(np.isfinite(v)):
            raise ValueError("distance matrix has non-finite entries")
        if v.size and v.min() < 0:
            raise ValueError("distance matrix has negative entries")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def to_csv(self, path, treated_ids: Sequence[str], control_ids: Sequence[str]) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(["treated_id", *control_ids]) + "\n")
            for tid, row in zip(treated_ids, self.values):
                fh.write(tid + "," + ",".join(f"{x:.10g}" for x in row) + "\n")


def _cholesky_whitener(S: np.ndarray) -> np.ndarray:
    """W with W W^T = S^-1, working on the correlation scale.

    Rescaling to unit variances is exact for a Mahalanobis distance, so the
    result stays invariant under per-column scaling. A ridge of 1e-8 on the
    correlation matrix is added only when it is numerically singular.
    """
    sd = np.sqrt(np.diag(S))
    R = S / np.outer(sd, sd)
    try:
        C = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        warnings.warn("covariance is singular; adding a 1e-8 ridge", stacklevel=4)
        C = np.linalg.cholesky(R + 1e-8 * np.eye(len(R)))
    # R = C C^T  =>  S^-1 = D^-1 C^-T C^-1 D^-1, so W = D^-1 C^-T
    return np.linalg.inv(C).T / sd[:, None]


def _whitener(pooled: np.ndarray) -> np.ndarray:
    """Matrix W with (x - y) W W^T (x - y)^T = Mahalanobis^2 under pooled covariance."""
    return _cholesky_whitener(np.atleast_2d(np.cov(pooled, rowvar=False)))


def _usable_columns(pooled: np.ndarray, names: Sequence[str] | None) -> np.ndarray:
    spread = np.ptp(pooled, axis=0) if len(pooled) else np.zeros(pooled.shape[1])
    keep = spread > 0
    if not keep.all():
        dropped = [names[i] if names else str(i) for i in np.flatnonzero(~keep)]
        warnings.warn(f"dropping constant covariate columns: {', '.join(dropped)}", stacklevel=3)
    if not keep.any():
        raise ValueError("no non-constant covariate columns left for the distance")
    return keep


def _prepare(Xt, Xc):
    # 1-D input = a single covariate
    Xt = np.asarray(Xt, dtype=float)
    Xc = np.asarray(Xc, dtype=float)
    Xt = Xt.reshape(-1, 1) if Xt.ndim == 1 else Xt
    Xc = Xc.reshape(-1, 1) if Xc.ndim == 1 else Xc
    if Xt.shape[1] != Xc.shape[1]:
        raise ValueError("treated and control covariates have different widths")
    if len(Xt) + len(Xc) < 2:
        raise ValueError("need at least two pooled rows")
    return Xt, Xc


def mahalanobis_matrix(Xt, Xc, names: Sequence[str] | None = None) -> DistanceMatrix:
    """T x C Mahalanobis distances under the pooled sample covariance.

    Constant columns are dropped with a warning; a tiny ridge is added only
    if the covariance is still singular.
    """
    Xt, Xc = _prepare(Xt, Xc)
    pooled = np.vstack([Xt, Xc])
    keep = _usable_columns(pooled, names)
    pooled = pooled[:, keep]
    W = _whitener(pooled)
    mu = pooled.mean(axis=0)  # centring keeps large offsets from costing precision
    D = cdist((Xt[:, keep] - mu) @ W, (Xc[:, keep] - mu) @ W)
    return DistanceMatrix(D, "mahalanobis")


def robust_mahalanobis_matrix(Xt, Xc, names: Sequence[str] | None = None) -> DistanceMatrix:
    """Rank-based Mahalanobis distance.

    Each covariate is replaced by its pooled average rank; the rank covariance
    is rescaled so every variable has the variance of untied ranks 1..n, which
    stops heavily tied variables from counting for more.
    """
    Xt, Xc = _prepare(Xt, Xc)
    pooled = np.vstack([Xt, Xc])
    keep = _usable_columns(pooled, names)
    ranks = rankdata(pooled[:, keep], axis=0)
    n = len(ranks)
    S = np.atleast_2d(np.cov(ranks, rowvar=False))
    untied = np.var(np.arange(1, n + 1), ddof=1)
    rat = np.sqrt(untied / np.diag(S))
    W = _cholesky_whitener(S * np.outer(rat, rat))
    Z = ranks @ W
    D = cdist(Z[: len(Xt)], Z[len(Xt):])
    return DistanceMatrix(D, "robust_mahalanobis")


@dataclass(frozen=True)
class PropensityModel:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    terms: tuple[str, ...]
    covariates: tuple[str, ...]
    fb_dummies: bool = False
    gradient_norm: float = float("nan")

    def linear_predictor(self, cohort: Cohort) -> np.ndarray:
        return design_matrix(cohort, self.covariates, self.fb_dummies) @ self.coefficients

    def predict(self, cohort: Cohort) -> np.ndarray:
        return _expit(self.linear_predictor(cohort))


def _expit(eta):
    # sign-split form avoids overflow in exp
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def design_matrix(cohort: Cohort, covariates: Sequence[str] | None = None,
                  fb_dummies: bool = False) -> np.ndarray:
    """Intercept, selected covariates, and optionally one indicator per
    fine-balance level beyond the first."""
    names = list(cohort.covariate_names if covariates is None else covariates)
    cols = [np.ones(len(cohort))]
    cols += [cohort.column(n) for n in names]
    if fb_dummies:
        cols += [(cohort.fb_level == b).astype(float) for b in range(2, cohort.B + 1)]
    return np.column_stack(cols)


def log_likelihood(beta, X, y) -> float:
    eta = X @ beta
    # y*eta - log(1 + e^eta), stable
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def score(beta, X, y) -> np.ndarray:
    """Gradient of the log-likelihood."""
    return X.T @ (y - _expit(X @ beta))


def fit_propensity(
    cohort: Cohort,
    covariates: Sequence[str] | None = None,
    *,
    fb_dummies: bool = False,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> PropensityModel:
    """Maximum-likelihood logistic regression of treatment by IRLS.

    Converged means the max-norm of the score fell below ``tol`` within
    ``max_iter`` Newton steps. Under (quasi-)separation the likelihood has no
    maximum; the fit is returned with ``converged=False`` and a warning.
    """
    names = tuple(cohort.covariate_names if covariates is None else covariates)
    X = design_matrix(cohort, names, fb_dummies)
    y = cohort.treated.astype(float)
    if y.sum() == 0 or y.sum() == len(y):
        raise ValueError("need at least one treated and one control unit")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("design matrix is not of full column rank")
    terms = ("(intercept)", *names)
    if fb_dummies:
        terms += tuple(f"{cohort.fb_name}={lab}" for lab in cohort.level_labels[1:])

    p_bar = y.mean()
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(p_bar / (1 - p_bar))
    ll = log_likelihood(beta, X, y)
    converged = False
    it = 0
    g = score(beta, X, y)
    for it in range(1, max_iter + 1):
        p = _expit(X @ beta)
        w = p * (1 - p)
        H = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = log_likelihood(cand, X, y)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
        g = score(beta, X, y)
        if np.max(np.abs(g)) <= tol:
            converged = True
            break
        if np.max(np.abs(beta)) > 50:
            break
    # under separation the score also vanishes, but only as fitted values reach 0 or 1
    p = _expit(X @ beta)
    if converged and np.min(np.minimum(p, 1 - p)) < 1e-8:
        converged = False
    if not converged:
        warnings.warn(
            "propensity fit did not converge (possible separation); "
            f"max |score| = {np.max(np.abs(g)):.3g} after {it} iterations", stacklevel=2)
    return PropensityModel(beta, converged, it, terms, names, fb_dummies,
                           float(np.max(np.abs(g))))


def entire_numbers(model: PropensityModel, cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    """Inverse odds (1 - e) / e for every unit, plus a mask of clipped scores."""
    e = model.predict(cohort)
    clipped = (e < PROB_CLIP) | (e > 1 - PROB_CLIP)
    e = np.clip(e, PROB_CLIP, 1 - PROB_CLIP)
    return (1 - e) / e, clipped


def entire_number(e: float) -> float:
    """Inverse odds of a single propensity score, clipped away from 0 and 1."""
    if not 0 <= e <= 1:
        raise ValueError(f"propensity score {e} outside [0, 1]")
    ec = min(max(e, PROB_CLIP), 1 - PROB_CLIP)
    if ec != e:
        warnings.warn(f"propensity score {e} clipped to {ec}", stacklevel=2)
    return (1 - ec) / ec
