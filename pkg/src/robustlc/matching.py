"""Second-stage k_t re-estimation by matching total deaths, and the F outlier rule."""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .numerics import Bracket, RootFindingError, f_quantile, solve_root
from .tppca import mahalanobis_sq

K_BRACKET = (-50.0, 50.0)


def match_kt(a, b, ds, year, tol=1e-12):
    """Solve ``sum_x N[x,t] exp(a_x + b_x k) = sum_x D[x,t]`` for ``k``.

    The equation is solved on the log scale, where the left side is convex
    in ``k`` and increasing whenever every ``b_x > 0``.
    """
    j = ds.year_index(year)
    total = ds.deaths[:, j].sum()
    if total <= 0:
        raise RootFindingError(f"year {year}: no finite root (zero total deaths)")
    log_n = np.log(ds.exposures[:, j])
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    target = np.log(total)

    def g(k):
        return logsumexp(log_n + a + b * k) - target

    try:
        return solve_root(g, Bracket(*K_BRACKET, tol=tol))
    except RootFindingError as exc:
        raise RootFindingError(f"year {year}: no finite root ({exc})") from None


def match_all(a, b, ds, tol=1e-12):
    """Death-matched ``k`` for every year of ``ds``."""
    return np.array([match_kt(a, b, ds, year, tol) for year in ds.years])


@dataclass(frozen=True, eq=False)
class OutlierReport:
    years: np.ndarray
    scores: np.ndarray
    threshold: float
    flags: np.ndarray
    alpha: float


def detect_outliers(params, y, alpha, years=None):
    """Flag years whose scaled squared Mahalanobis distance exceeds the F quantile.

    ``params`` must carry the fitted (unnormalized) ``b``: the rule uses the
    scale matrix ``b b' + sigma2 I`` of the fitted t model, and a year is
    flagged when ``D^2 / p > F_{p, nu}(alpha)`` (strict). With
    ``alpha = 0.95`` roughly 5% of draws from the model itself get flagged.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0,1)")
    y = np.asarray(y, dtype=float)
    p = y.shape[0]
    scores = mahalanobis_sq(params, y) / p
    threshold = f_quantile(alpha, p, params.nu)
    if years is None:
        years = np.arange(y.shape[1])
    return OutlierReport(np.asarray(years), scores, threshold, scores > threshold, alpha)
