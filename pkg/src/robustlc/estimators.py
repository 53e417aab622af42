"""One entry point per estimation method, returning a normalized LeeCarterFit.

SVD, PPCA and t-PPCA estimate ``(a, b)`` from log rates and then re-estimate
``k`` by matching observed deaths; the Poisson GLM estimates all three
jointly and its ``k`` is reported directly.
"""

from .data import log_rates
from .gaussian import LeeCarterFit, fit_ppca_closed_form, fit_svd, normalize
from .matching import match_all
from .poisson import GlmConfig, fit_poisson_glm
from .tppca import TPPCAConfig, fit_tppca

ESTIMATORS = ("svd", "ppca", "poisson_glm", "tppca")


def estimate(ds, method, tppca_config=None, glm_config=None, glm_init=None):
    if method not in ESTIMATORS:
        raise ValueError(f"unknown estimator {method!r}")
    if method == "poisson_glm":
        return fit_poisson_glm(ds, glm_config or GlmConfig(), init=glm_init)
    if method == "tppca":
        return fit_tppca_detailed(ds, tppca_config)[0]
    y = log_rates(ds)
    if method == "svd":
        f = fit_svd(y)
        a, b, extra = f.a, f.b, {}
    else:
        g = fit_ppca_closed_form(y)
        b, _, _ = normalize(g.b_unnormalized, [0.0])
        a, extra = g.a, {"sigma2": g.sigma2}
    k = match_all(a, b, ds)
    return LeeCarterFit(a, b, k, method, **extra)


def fit_tppca_detailed(ds, config=None):
    """t-PPCA fit returning ``(LeeCarterFit, raw params, trace)``."""
    y = log_rates(ds)
    params, trace = fit_tppca(y, config or TPPCAConfig())
    b, _, _ = normalize(params.b, [0.0])
    k = match_all(params.a, b, ds)
    fit = LeeCarterFit(params.a, b, k, "tppca", sigma2=params.sigma2, nu=params.nu,
                       loglik=trace.loglik_history[-1], iterations=trace.iterations)
    return fit, params, trace
