"""Hypothetical-pandemic experiment grid with MAPE/RMSPE scoring.

For each contiguous window of ``duration`` years inside the base period the
same per-age pandemic deaths are added to every year of the window, every
estimator is refitted, and its ``a``, ``b`` and ``k`` are scored against the
fit of the same estimator on the clean data. ``k`` is scored only over the
years outside the window.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv

import numpy as np

from .data import inject_pandemic, redistribute_group_deaths
from .estimators import ESTIMATORS, estimate

METRICS = ("mape_a", "rmspe_a", "mape_b", "rmspe_b", "mape_k", "rmspe_k")


def percentage_errors(est, ref):
    """Relative errors ``(ref - est) / ref`` and the number of zero-reference
    entries that were dropped."""
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    keep = ref != 0
    return (ref[keep] - est[keep]) / ref[keep], int((~keep).sum())


def mape(est, ref):
    e, _ = percentage_errors(est, ref)
    return float(np.mean(np.abs(e))) if e.size else float("nan")


def rmspe(est, ref):
    e, _ = percentage_errors(est, ref)
    return float(np.sqrt(np.mean(e * e))) if e.size else float("nan")


@dataclass(frozen=True)
class ScenarioConfig:
    """One outlier scenario.

    ``reference`` is the per-age death vector used to split the grouped
    pandemic deaths over single ages; by default the deaths of the last base
    year are used.
    """

    base_years: tuple
    duration: int
    pandemic: object
    estimators: tuple = ("svd", "poisson_glm", "tppca")
    seed: int = 0
    reference: np.ndarray | None = None
    threads: int = 1
    tppca_config: object = None
    glm_config: object = None

    def __post_init__(self):
        start, end = self.base_years
        if end < start:
            raise ValueError("base_years must satisfy start <= end")
        if self.duration < 1:
            raise ValueError("duration must be a positive integer")
        if self.duration > end - start + 1:
            raise ValueError(f"duration {self.duration} exceeds the {end - start + 1} base years")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")

    def windows(self):
        start, end = self.base_years
        return [(s, s + self.duration - 1) for s in range(start, end - self.duration + 2)]


@dataclass
class ExperimentResult:
    window: tuple
    estimator: str
    metrics: dict = field(default_factory=dict)
    error: str | None = None
    # zero-reference entries skipped, per parameter
    excluded: dict = field(default_factory=dict)


def score(fit, ref, years, window):
    """MAPE/RMSPE of ``fit`` against ``ref``; ``k`` outside ``window`` only."""
    outside = (years < window[0]) | (years > window[1])
    out, excluded = {}, {}
    for name, est, r in (("a", fit.a, ref.a), ("b", fit.b, ref.b),
                         ("k", fit.k[outside], ref.k[outside])):
        e, n0 = percentage_errors(est, r)
        out[f"mape_{name}"] = float(np.mean(np.abs(e))) if e.size else float("nan")
        out[f"rmspe_{name}"] = float(np.sqrt(np.mean(e * e))) if e.size else float("nan")
        excluded[name] = n0
    return out, excluded


def _experiment(args):
    ds, extra, window, estimators, refs, tcfg, gcfg = args
    years = list(range(window[0], window[1] + 1))
    shocked = inject_pandemic(ds, extra, years)
    results = []
    for est in estimators:
        try:
            fit = estimate(shocked, est, tppca_config=tcfg, glm_config=gcfg)
            metrics, excluded = score(fit, refs[est], ds.years, window)
            results.append(ExperimentResult(window, est, metrics, excluded=excluded))
        except Exception as exc:  # recorded per cell; the grid carries on
            results.append(ExperimentResult(window, est, error=f"{type(exc).__name__}: {exc}"))
    return results


def pandemic_deaths(ds, cfg):
    ref = cfg.reference
    if ref is None:
        ref = ds.deaths[:, ds.year_index(cfg.base_years[1])]
    return redistribute_group_deaths(cfg.pandemic, ref, ds.ages)


def run_grid(ds, cfg, windows=None):
    """Run every window of the scenario (or the given subset of windows).

    Returns ``(results, aggregate)`` where ``results`` holds one
    :class:`ExperimentResult` per window and estimator, in window order, and
    ``aggregate`` maps ``estimator -> metric -> (mean, sd, n)``.
    """
    ds = ds.subset(years=cfg.base_years)
    extra = pandemic_deaths(ds, cfg)
    refs = {est: estimate(ds, est, tppca_config=cfg.tppca_config, glm_config=cfg.glm_config)
            for est in cfg.estimators}
    windows = cfg.windows() if windows is None else list(windows)
    jobs = [(ds, extra, w, tuple(cfg.estimators), refs, cfg.tppca_config, cfg.glm_config)
            for w in windows]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            nested = list(pool.map(_experiment, jobs))
    else:
        nested = [_experiment(j) for j in jobs]
    results = [r for group in nested for r in group]
    return results, aggregate(results, cfg.estimators)


def aggregate(results, estimators):
    out = {}
    for est in estimators:
        ok = [r for r in results if r.estimator == est and r.error is None]
        out[est] = {}
        for m in METRICS:
            vals = np.array([r.metrics[m] for r in ok])
            sd = float(vals.std(ddof=1)) if vals.size > 1 else float("nan")
            mean = float(vals.mean()) if vals.size else float("nan")
            out[est][m] = (mean, sd, int(vals.size))
    return out


def write_results(results, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start", "window_end", "estimator", *METRICS, "error"])
        for r in results:
            vals = [f"{r.metrics[m]:.17g}" for m in METRICS] if r.error is None else [""] * 6
            w.writerow([r.window[0], r.window[1], r.estimator, *vals, r.error or ""])


def write_aggregate(agg, duration, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["duration", "estimator", "metric", "mean", "sd", "n"])
        for est, metrics in agg.items():
            for m, (mean, sd, n) in metrics.items():
                w.writerow([duration, est, m, f"{mean:.17g}", f"{sd:.17g}", n])
