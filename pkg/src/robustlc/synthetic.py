"""Synthetic Lee-Carter panels with a U.S.-like age pattern.

Used for the bundled example data and for the robustness experiments; the
shapes are stylized, not calibrated to any published table.
"""

import numpy as np

from .data import MortalityDataset


def lee_carter_truth(ages):
    ages = np.asarray(ages, dtype=float)
    m = (0.012 * np.exp(-2.5 * ages) + 1.5e-4
         + 6e-4 * np.exp(-((ages - 22.0) / 6.0) ** 2)
         + 2.5e-5 * np.exp(0.095 * ages))
    a = np.log(m)
    b = (0.45 + 1.3 * np.exp(-ages / 12.0)
         + 0.35 * np.exp(-((ages - 60.0) / 18.0) ** 2)
         - 0.25 * np.clip((ages - 85.0) / 15.0, 0.0, None))
    return a, b / b.sum()


def synthetic_panel(seed=0, ages=(0, 100), years=(1970, 2019), drift=-1.2,
                    rw_sd=1.0, noise_sd=0.01, pop_scale=1.7e6):
    """Draw a panel from a Lee-Carter model with Poisson deaths.

    ``k`` follows a drifted random walk, centered to mean zero; cell log
    rates get i.i.d. N(0, noise_sd^2) perturbations before Poisson sampling.
    Returns ``(dataset, (a, b, k))`` with the generating parameters.
    """
    rng = np.random.default_rng(seed)
    age_v = np.arange(ages[0], ages[1] + 1)
    year_v = np.arange(years[0], years[1] + 1)
    a, b = lee_carter_truth(age_v)
    n = year_v.size
    k = np.cumsum(drift + rw_sd * rng.standard_normal(n))
    k -= k.mean()
    log_m = a[:, None] + np.outer(b, k) + noise_sd * rng.standard_normal((age_v.size, n))
    # stationary-ish population: survivors of the mean mortality schedule
    surv = np.exp(-np.concatenate([[0.0], np.cumsum(np.exp(a))[:-1]]))
    growth = 1.0 + 0.01 * (year_v - year_v[0])
    exposures = pop_scale * np.outer(surv, growth)
    deaths = rng.poisson(exposures * np.exp(log_m)).astype(float)
    ds = MortalityDataset(age_v, year_v, deaths, exposures)
    return ds, (a, b, k)


def exact_panel(a, b, k, exposures, ages=None, years=None):
    """Dataset whose deaths equal ``N exp(a + b k)`` exactly."""
    exposures = np.asarray(exposures, dtype=float)
    p, n = exposures.shape
    ages = np.arange(p) if ages is None else ages
    years = np.arange(2000, 2000 + n) if years is None else years
    deaths = exposures * np.exp(np.asarray(a)[:, None] + np.outer(b, k))
    return MortalityDataset(ages, years, deaths, exposures)
