"""Residual bootstrap for Lee-Carter parameter uncertainty.

Two schemes:

* ``residual_vector`` (SVD, PPCA, t-PPCA): whole year-vectors of log-rate
  residuals are resampled with replacement, added back to the fitted
  surface, converted to pseudo-deaths with the observed exposures, and the
  model is refitted (``a``, ``b`` estimated, ``k`` re-matched).
* ``deviance`` (Poisson GLM): Poisson deviance residuals are resampled
  cell by cell and each one is mapped back to a pseudo-death count by
  numerically inverting the signed deviance at the fitted count. This is a
  reconstruction of the usual deviance-residual bootstrap; the inverse map
  is solved exactly rather than approximated.

Each replication draws from its own Philox stream keyed by
``(seed, replication index)``, so results do not depend on how
replications are spread over workers.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import math

import numpy as np
from scipy.special import xlogy

from .data import log_rates
from .estimators import estimate
from .gaussian import DegenerateDataError
from .numerics import RootFindingError
from .poisson import ConvergenceError, GlmConfig, deviance_residuals, fit_poisson_glm

PARAMETERS = ("a", "b", "k")
_FIT_FAILURES = (RootFindingError, ConvergenceError, DegenerateDataError,
                 FloatingPointError, ZeroDivisionError, ValueError)


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 1000
    seed: int = 0
    method: str = "residual_vector"
    ci_level: float = 0.95
    threads: int = 1
    # redraws allowed for a deviance residual with no nonnegative inverse
    max_redraws: int = 100

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must be in (0,1)")
        if self.method not in ("residual_vector", "deviance"):
            raise ValueError(f"unknown bootstrap method {self.method!r}")
        if self.threads < 1:
            raise ValueError("threads must be positive")


@dataclass(eq=False)
class BootstrapSummary:
    point: dict
    se: dict
    ci_lo: dict
    ci_hi: dict
    B_effective: int
    ci_level: float
    replicates: dict = field(repr=False)
    labels: dict = field(repr=False)
    failures: list = field(default_factory=list, repr=False)

    def rows(self):
        for name in PARAMETERS:
            for i, label in enumerate(self.labels[name]):
                yield (name, int(label), self.point[name][i], self.se[name][i],
                       self.ci_lo[name][i], self.ci_hi[name][i])

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "index", "point", "se", "ci_lo", "ci_hi"])
            for name, label, *vals in self.rows():
                w.writerow([name, label, *(f"{v:.17g}" for v in vals)])


def replication_rng(seed, index):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def percentile_interval(values, level):
    """Empirical quantiles ``(1-level)/2`` and ``(1+level)/2`` per column.

    The q-quantile is the order statistic ``x_(j)`` with ``j = ceil(q B)``.
    """
    x = np.sort(np.asarray(values, dtype=float), axis=0)
    n = x.shape[0]
    out = []
    for q in ((1.0 - level) / 2.0, (1.0 + level) / 2.0):
        # guard against q*n landing a hair above an integer
        j = max(math.ceil(q * n - 1e-9), 1)
        out.append(x[j - 1])
    return out[0], out[1]


def summarize(point, replicates, ci_level, labels, failures=()):
    se, lo, hi = {}, {}, {}
    n_eff = next(iter(replicates.values())).shape[0]
    for name, reps in replicates.items():
        se[name] = reps.std(axis=0, ddof=1) if n_eff > 1 else np.zeros(reps.shape[1])
        lo[name], hi[name] = percentile_interval(reps, ci_level)
    return BootstrapSummary(point, se, lo, hi, n_eff, ci_level, replicates, labels,
                            list(failures))


# ---------------------------------------------------------------------------
# residual-vector scheme


def resample_residual_vectors(fitted, resid, rng):
    n = resid.shape[1]
    idx = rng.integers(0, n, size=n)
    return fitted + resid[:, idx], idx


def _residual_replicate(args):
    ds, fitted, resid, estimator, seed, index, tppca_config = args
    rng = replication_rng(seed, index)
    y_star, _ = resample_residual_vectors(fitted, resid, rng)
    ds_star = ds.with_deaths(ds.exposures * np.exp(y_star))
    try:
        f = estimate(ds_star, estimator, tppca_config=tppca_config)
    except _FIT_FAILURES as exc:
        return index, None, f"{type(exc).__name__}: {exc}"
    return index, (f.a, f.b, f.k), None


def residual_bootstrap(ds, estimator, cfg=None, tppca_config=None):
    """Residual-vector bootstrap for the ``svd``, ``ppca`` or ``tppca`` estimator."""
    cfg = cfg or BootstrapConfig()
    if estimator not in ("svd", "ppca", "tppca"):
        raise ValueError("residual_vector bootstrap supports svd, ppca and tppca")
    fit = estimate(ds, estimator, tppca_config=tppca_config)
    fitted = fit.fitted_log_rates()
    resid = log_rates(ds) - fitted
    jobs = [(ds, fitted, resid, estimator, cfg.seed, i, tppca_config) for i in range(cfg.B)]
    return _collect(fit, ds, _run(_residual_replicate, jobs, cfg.threads), cfg)


# ---------------------------------------------------------------------------
# deviance scheme


def _phi(x):
    # (1+x) log(1+x) - x, with the x = -1 limit equal to 1
    return xlogy(1.0 + x, 1.0 + x) - x


def invert_deviance(r, dhat, n_iter=200):
    """Pseudo-deaths ``D >= 0`` whose signed deviance residual at ``dhat`` is ``r``.

    With ``x = D/dhat - 1`` the deviance is ``2 dhat phi(x)``, ``phi`` being
    monotone on each side of zero, so each cell is solved by bisection on
    the side given by the sign of ``r``. Cells with ``r < -sqrt(2 dhat)``
    have no solution and come back as NaN.
    """
    r = np.asarray(r, dtype=float)
    dhat = np.broadcast_to(np.asarray(dhat, dtype=float), r.shape)
    t = r * r / (2.0 * dhat)
    pos = r > 0
    lo = np.where(pos, 0.0, -1.0)
    # phi(x) >= x^2 / (2 (1+x)) for x >= 0 bounds the root from above
    hi = np.where(pos, t + np.sqrt(t * t + 2.0 * t), 0.0)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        above = _phi(mid) > t
        # phi increases for x > 0 and decreases for x < 0
        move_hi = np.where(pos, above, ~above)
        hi = np.where(move_hi, mid, hi)
        lo = np.where(move_hi, lo, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(hi))):
            break
    x = 0.5 * (lo + hi)
    neg = ~pos & (r != 0)
    x = np.where(neg & (t >= 1.0), -1.0, x)
    x = np.where(r == 0, 0.0, x)
    out = dhat * (1.0 + x)
    infeasible = neg & (t > 1.0 + 1e-12)
    return np.where(infeasible, np.nan, out)


def resample_deviance(pool, dhat, rng, max_redraws):
    """Cellwise resampling of deviance residuals, redrawing infeasible cells."""
    r_star = rng.choice(pool, size=dhat.shape, replace=True)
    for _ in range(max_redraws + 1):
        bad = r_star * r_star > 2.0 * dhat * (1.0 + 1e-12)
        bad &= r_star < 0
        if not bad.any():
            return r_star
        r_star[bad] = rng.choice(pool, size=int(bad.sum()), replace=True)
    raise BootstrapError("deviance residual could not be inverted within the redraw cap")


def _deviance_replicate(args):
    ds, fit, dhat, pool, seed, index, glm_config, max_redraws = args
    rng = replication_rng(seed, index)
    try:
        r_star = resample_deviance(pool, dhat, rng, max_redraws)
        d_star = invert_deviance(r_star, dhat)
        f = fit_poisson_glm(ds.with_deaths(d_star), glm_config, init=fit)
    except (*_FIT_FAILURES, BootstrapError) as exc:
        return index, None, f"{type(exc).__name__}: {exc}"
    return index, (f.a, f.b, f.k), None


def deviance_bootstrap(ds, cfg=None, glm_config=None):
    """Deviance-residual bootstrap for the Poisson GLM.

    Replicate fits are warm-started from the original fit.
    """
    cfg = cfg or BootstrapConfig(method="deviance")
    glm_config = glm_config or GlmConfig()
    fit = fit_poisson_glm(ds, glm_config)
    dhat = ds.exposures * np.exp(fit.fitted_log_rates())
    pool = deviance_residuals(fit, ds).ravel()
    jobs = [(ds, fit, dhat, pool, cfg.seed, i, glm_config, cfg.max_redraws)
            for i in range(cfg.B)]
    return _collect(fit, ds, _run(_deviance_replicate, jobs, cfg.threads), cfg)


# ---------------------------------------------------------------------------


def _run(func, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def _collect(fit, ds, results, cfg):
    results = sorted(results, key=lambda r: r[0])
    ok = [r[1] for r in results if r[1] is not None]
    failures = [(r[0], r[2]) for r in results if r[1] is None]
    if not ok:
        raise BootstrapError(f"all {cfg.B} bootstrap replications failed; first: {failures[0][1]}")
    replicates = {name: np.array([rep[i] for rep in ok]) for i, name in enumerate(PARAMETERS)}
    point = {"a": fit.a, "b": fit.b, "k": fit.k}
    labels = {"a": ds.ages, "b": ds.ages, "k": ds.years}
    return summarize(point, replicates, cfg.ci_level, labels, failures)


def run_bootstrap(ds, estimator, cfg, tppca_config=None, glm_config=None):
    """Dispatch on estimator: deviance scheme for the GLM, residual vectors otherwise."""
    if estimator == "poisson_glm":
        return deviance_bootstrap(ds, cfg, glm_config)
    return residual_bootstrap(ds, estimator, cfg, tppca_config)
