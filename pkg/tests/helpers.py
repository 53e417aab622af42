"""Shared generators and independent numerical oracles for the tests."""

import math

import numpy as np
from scipy import integrate, special


def random_lc_panel(rng, p, n, noise=0.02):
    """Log-rate matrix with Lee-Carter structure plus Gaussian noise."""
    a = rng.uniform(-9.0, -2.0, p)
    b = rng.uniform(0.2, 1.0, p)
    b /= b.sum()
    k = np.cumsum(rng.normal(-1.0, 1.0, n))
    k -= k.mean()
    return a[:, None] + np.outer(b, k) + noise * rng.standard_normal((p, n))


def sample_tppca(rng, a, b, sigma2, nu, n):
    """Draw n columns from the t-PPCA hierarchy."""
    p = len(a)
    u = rng.gamma(nu / 2.0, 2.0 / nu, n)
    k = rng.standard_normal(n) / np.sqrt(u)
    eps = rng.standard_normal((p, n)) * np.sqrt(sigma2 / u)
    return a[:, None] + np.outer(b, k) + eps


def estep_quadrature(y_t, a, b, sigma2, nu):
    """Posterior moments of (u, k) for one observation by 2-D adaptive quadrature.

    Integrates the unnormalized joint density of the hierarchy
    y | k, u ~ N(a + b k, sigma2 I / u), k | u ~ N(0, 1/u), u ~ Ga(nu/2, nu/2)
    directly; nothing from the closed-form E-step is reused except a
    location shift for k and a log-density offset, neither of which changes
    the ratios.
    """
    r = np.asarray(y_t, float) - a
    p = len(r)
    rr, br, bb = r @ r, b @ r, b @ b
    shift = br / (bb + sigma2)

    def logf(k, u):
        k = k + shift
        quad_form = rr - 2 * k * br + k * k * bb
        return ((p + 1) / 2.0 + nu / 2.0 - 1.0) * math.log(u) - u * quad_form / (2 * sigma2) \
            - u * k * k / 2.0 - nu * u / 2.0

    # offset at a rough mode so exp() stays in range
    u0 = (nu + p) / (nu + (rr - br * br / (bb + sigma2)) / sigma2)
    off = logf(0.0, u0)

    def moment(g):
        def f(k, u):
            return g(k + shift, u) * math.exp(logf(k, u) - off)
        val, _ = integrate.dblquad(f, 0.0, np.inf, -np.inf, np.inf, epsabs=0, epsrel=1e-9)
        return val

    z = moment(lambda k, u: 1.0)
    return {
        "u": moment(lambda k, u: u) / z,
        "log_u": moment(lambda k, u: math.log(u)) / z,
        "k": moment(lambda k, u: k) / z,
        "uk": moment(lambda k, u: u * k) / z,
        "uk2": moment(lambda k, u: u * k * k) / z,
    }


def digamma_fd(x, h=1e-5):
    """Central difference of log Gamma."""
    return (special.gammaln(x + h) - special.gammaln(x - h)) / (2 * h)
