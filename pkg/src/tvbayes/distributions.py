"""Generalized inverse Gaussian (GIG) calculus and Laplace scale mixtures.

The GIG density used throughout is

    p(x) = (a/b)^(p/2) / (2 K_p(sqrt(ab))) * x^(p-1) * exp(-(a*x + b/x)/2),

on x > 0, where K_p is the modified Bessel function of the second kind.
Admissible parameter triples:

    a > 0, b >= 0, p > 0;   a > 0, b > 0, p = 0;   a >= 0, b > 0, p < 0.

At b = 0 the family degenerates to Gamma(p, a/2) and at a = 0 to
InvGamma(-p, b/2); the Bessel-ratio formulas are 0/0 there, so every
operation dispatches to the closed gamma forms for those triples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import (
    BesselOverflowError,
    GigParameterError,
    MomentDivergesError,
    NotSpdError,
)

__all__ = [
    "GigParams",
    "SpecialCaseTag",
    "MvLaplaceParams",
    "classify_gig",
    "bessel_k",
    "log_bessel_k",
    "gig_log_pdf",
    "gig_moment",
    "gig_mode",
    "gig_variance",
    "gig_sample",
    "gig_sample_batch",
    "gig_inv_moment_batch",
    "laplace1d_log_pdf",
    "mvlaplace_log_pdf",
    "gsm_sample",
]

_EULER_GAMMA = 0.5772156649015328606


@dataclass(frozen=True)
class GigParams:
    """Parameter triple (a, b, p) of a GIG distribution.

    a is rate-like (multiplies x in the exponent), b is inverse-rate-like
    (multiplies 1/x), p is the index. Construction outside the admissible
    region raises :class:`GigParameterError`.
    """

    a: float
    b: float
    p: float

    def __post_init__(self):
        a, b, p = self.a, self.b, self.p
        if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(p)):
            raise GigParameterError(f"non-finite GIG parameters ({a}, {b}, {p})")
        if a < 0 or b < 0:
            raise GigParameterError(f"negative GIG parameters ({a}, {b}, {p})")
        ok = (a > 0 and b >= 0 and p > 0) or (a > 0 and b > 0 and p == 0) \
            or (a >= 0 and b > 0 and p < 0)
        if not ok:
            raise GigParameterError(
                f"GIG({a}, {b}, {p}) outside the admissible region: need "
                "(a>0, b>=0, p>0), (a>0, b>0, p=0) or (a>=0, b>0, p<0)"
            )


@dataclass(frozen=True)
class SpecialCaseTag:
    """Named reduction of a GIG triple.

    kind is one of "exp", "gamma", "inv_gamma", "rig", "generic"; args holds
    the conventional parameters of the reduced family:
    Exp(theta), Gamma(alpha, beta), InvGamma(alpha, beta), RIG(alpha, beta).
    """

    kind: str
    args: tuple[float, ...]


def classify_gig(params: GigParams) -> SpecialCaseTag:
    """Map a GIG triple to its conventional special case, if any.

    Gamma(alpha, beta) <-> (a=2*beta, b=0, p=alpha); Exp(theta) is the
    alpha = 1 gamma; InvGamma(alpha, beta) <-> (a=0, b=2*beta, p=-alpha);
    RIG(alpha, beta) <-> (a=alpha^2/beta, b=beta, p=1/2).
    """
    a, b, p = params.a, params.b, params.p
    if b == 0.0:
        if p == 1.0:
            return SpecialCaseTag("exp", (a / 2.0,))
        return SpecialCaseTag("gamma", (p, a / 2.0))
    if a == 0.0:
        return SpecialCaseTag("inv_gamma", (-p, b / 2.0))
    if p == 0.5:
        return SpecialCaseTag("rig", (math.sqrt(a * b), b))
    return SpecialCaseTag("generic", (a, b, p))


# ---------------------------------------------------------------------------
# Modified Bessel function of the second kind
# ---------------------------------------------------------------------------

def bessel_k(p: float, x: float) -> float:
    """K_p(x) for real index p and x > 0.

    Symmetric in the index (K_p = K_{-p}). Raises
    :class:`BesselOverflowError` when the value overflows the linear domain
    (tiny x with large |p|) and underflow-prone callers should use
    :func:`log_bessel_k`.
    """
    if not x > 0:
        raise ValueError(f"bessel_k requires x > 0, got {x}")
    val = float(special.kv(p, x))
    if math.isinf(val):
        raise BesselOverflowError(
            f"K_{p}({x}) overflows in the linear domain; use log_bessel_k"
        )
    return val


def log_bessel_k(p, x):
    """log K_p(x), stable for large x (where K underflows) and small x.

    Accepts scalars or arrays; broadcasts like a ufunc.
    """
    scalar = np.isscalar(p) and np.isscalar(x)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x <= 0):
        raise ValueError("log_bessel_k requires x > 0")
    with np.errstate(over="ignore"):
        out = np.log(special.kve(p, x)) - x
    bad = ~np.isfinite(out)
    if np.any(bad):
        # kve overflows only for |p| log(2/x) large; leading small-x term:
        # K_p(x) ~ Gamma(|p|)/2 * (2/x)^|p| (p != 0), K_0(x) ~ -log(x/2) - gamma
        out = np.broadcast_to(out, bad.shape).copy()
        pb = np.abs(np.broadcast_to(p, bad.shape)[bad])
        xb = np.broadcast_to(x, bad.shape)[bad]
        out[bad] = np.where(
            pb > 0,
            math.log(0.5) + special.gammaln(pb) + pb * (np.log(2.0) - np.log(xb)),
            np.log(-np.log(xb / 2.0) - _EULER_GAMMA),
        )
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# GIG density, moments, mode, variance
# ---------------------------------------------------------------------------

def gig_log_pdf(params: GigParams, x: float) -> float:
    """Log-density of GIG(a, b, p) at x > 0."""
    if not x > 0:
        raise ValueError(f"gig_log_pdf requires x > 0, got {x}")
    a, b, p = params.a, params.b, params.p
    lx = math.log(x)
    if b == 0.0:
        # Gamma(p, a/2)
        beta = a / 2.0
        return p * math.log(beta) - special.gammaln(p) + (p - 1.0) * lx - beta * x
    if a == 0.0:
        # InvGamma(-p, b/2)
        alpha, beta = -p, b / 2.0
        return alpha * math.log(beta) - special.gammaln(alpha) \
            - (alpha + 1.0) * lx - beta / x
    z = math.sqrt(a * b)
    log_norm = 0.5 * p * (math.log(a) - math.log(b)) - math.log(2.0) \
        - log_bessel_k(p, z)
    return log_norm + (p - 1.0) * lx - 0.5 * (a * x + b / x)


def gig_moment(params: GigParams, q: float) -> float:
    """E(X^q) for X ~ GIG(a, b, p).

    Uses the Bessel-ratio formula (b/a)^(q/2) K_{p+q}(sqrt(ab)) / K_p(sqrt(ab))
    for a, b > 0 and the Gamma/InvGamma closed forms on the boundary.
    Raises :class:`MomentDivergesError` when the moment does not exist.
    """
    a, b, p = params.a, params.b, params.p
    if q == 0:
        return 1.0
    if b == 0.0:
        # Gamma(p, a/2): E(X^q) = Gamma(p+q)/Gamma(p) * (a/2)^(-q), needs p+q > 0
        if p + q <= 0:
            raise MomentDivergesError(
                f"moment q={q} of Gamma({p}, {a / 2}) diverges (needs q > {-p})"
            )
        val = math.exp(special.gammaln(p + q) - special.gammaln(p)
                       - q * math.log(a / 2.0))
    elif a == 0.0:
        # InvGamma(-p, b/2): E(X^q) = (b/2)^q Gamma(-p-q)/Gamma(-p), needs -p-q > 0
        alpha, beta = -p, b / 2.0
        if alpha - q <= 0:
            raise MomentDivergesError(
                f"moment q={q} of InvGamma({alpha}, {beta}) diverges "
                f"(needs q < {alpha})"
            )
        val = math.exp(q * math.log(beta) + special.gammaln(alpha - q)
                       - special.gammaln(alpha))
    else:
        z = math.sqrt(a * b)
        val = math.exp(0.5 * q * (math.log(b) - math.log(a))
                       + log_bessel_k(p + q, z) - log_bessel_k(p, z))
    if not math.isfinite(val):
        raise MomentDivergesError(
            f"moment q={q} of GIG({a}, {b}, {p}) is non-finite"
        )
    return val


def gig_mode(params: GigParams) -> float:
    """Mode of GIG(a, b, p): ((p-1) + sqrt((p-1)^2 + ab))/a, or b/(2(1-p)) at a=0."""
    a, b, p = params.a, params.b, params.p
    if a == 0.0:
        return b / (2.0 * (1.0 - p))
    return ((p - 1.0) + math.hypot(p - 1.0, math.sqrt(a * b))) / a


def gig_variance(params: GigParams) -> float:
    """Variance of GIG(a, b, p) via the Bessel-ratio formula.

    (b/a) * (K_{p+2}/K_p - (K_{p+1}/K_p)^2) for a, b > 0; gamma-family closed
    forms on the boundary. Raises :class:`MomentDivergesError` when infinite.
    """
    a, b, p = params.a, params.b, params.p
    if b == 0.0:
        return p / (a / 2.0) ** 2
    if a == 0.0:
        alpha, beta = -p, b / 2.0
        if alpha <= 2.0:
            raise MomentDivergesError(
                f"variance of InvGamma({alpha}, {beta}) diverges (needs alpha > 2)"
            )
        return beta ** 2 / ((alpha - 1.0) ** 2 * (alpha - 2.0))
    z = math.sqrt(a * b)
    lk0 = log_bessel_k(p, z)
    r2 = math.exp(log_bessel_k(p + 2.0, z) - lk0)
    r1 = math.exp(log_bessel_k(p + 1.0, z) - lk0)
    var = (b / a) * (r2 - r1 * r1)
    if not math.isfinite(var):
        raise MomentDivergesError(f"variance of GIG({a}, {b}, {p}) is non-finite")
    return var


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def gig_sample(params: GigParams, rng: np.random.Generator, size=None):
    """Draw from GIG(a, b, p) using a seeded numpy Generator.

    Degenerate triples dispatch to the gamma/inverse-gamma samplers, the
    half-integer indices to the (reciprocal) inverse Gaussian; the general
    case uses the scipy geninvgauss generator reparameterised as
    GIG(a,b,p) = sqrt(b/a) * geninvgauss(p, sqrt(ab)).
    """
    a, b, p = params.a, params.b, params.p
    out = gig_sample_batch(a, np.full(1 if size is None else size, b), p, rng)
    return float(out[0]) if size is None else out


def gig_sample_batch(a: float, b: np.ndarray, p: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Vectorised draws, one per entry of ``b``, from GIG(a, b_i, p).

    Shared (a, p) with per-latent b is the shape of the conditional scale
    updates, so this is the sampler's hot path. The p = +-1/2 conditionals
    of the Laplace-type priors are exactly (reciprocal) inverse Gaussian
    and use the native wald generator; anything else falls back to scipy.
    All b_i must keep the triple admissible.
    """
    b = np.asarray(b, dtype=float)
    if a == 0.0:
        if np.any(b <= 0):
            raise GigParameterError("GIG(a=0, b, p) needs b > 0 everywhere")
        return (b / 2.0) / rng.gamma(shape=-p, scale=1.0, size=b.shape)
    if np.all(b == 0.0):
        return rng.gamma(shape=p, scale=2.0 / a, size=b.shape)
    if np.any(b <= 0):
        raise GigParameterError("mixed zero/positive b in a batched GIG draw")
    if p == -0.5:
        # GIG(a, b, -1/2) = InverseGaussian(mu=sqrt(b/a), lambda=b)
        return rng.wald(np.sqrt(b / a), b)
    if p == 0.5:
        # 1/X ~ GIG(b, a, -1/2) = InverseGaussian(mu=sqrt(a/b), lambda=a)
        return 1.0 / rng.wald(np.sqrt(a / b), np.full_like(b, a))
    return stats.geninvgauss.rvs(p, np.sqrt(a * b), scale=np.sqrt(b / a),
                                 random_state=rng)


def gig_inv_moment_batch(a: float, b: np.ndarray, p: float) -> np.ndarray:
    """E(X^{-1}) for X ~ GIG(a, b_i, p), vectorised over b.

    The mean-field scale updates need this moment for every latent each
    sweep; values and existence rules match :func:`gig_moment` (q = -1).
    """
    b = np.asarray(b, dtype=float)
    if a == 0.0:
        # InvGamma(-p, b/2): E(X^-1) = alpha/beta
        return -p / (b / 2.0)
    if np.any(b <= 0):
        raise GigParameterError("gig_inv_moment_batch needs b > 0")
    z = np.sqrt(a * b)
    ratio = np.exp(log_bessel_k(p - 1.0, z) - log_bessel_k(p, z))
    return np.sqrt(a / b) * ratio


# ---------------------------------------------------------------------------
# Laplace densities and the Gaussian scale-mixture construction
# ---------------------------------------------------------------------------

def laplace1d_log_pdf(mu: float, b: float, x: float) -> float:
    """Log-density of the 1-D Laplace (b/2) exp(-b |x - mu|), b > 0."""
    if not b > 0:
        raise ValueError(f"laplace1d_log_pdf requires b > 0, got {b}")
    return math.log(b / 2.0) - b * abs(x - mu)


@dataclass(frozen=True)
class MvLaplaceParams:
    """Location vector and SPD scale matrix of a multivariate Laplace."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        n = mu.shape[0]
        if sigma.shape != (n, n):
            raise ValueError(f"sigma shape {sigma.shape} does not match mu ({n})")
        if not np.allclose(sigma, sigma.T, atol=1e-12 * max(1.0, abs(sigma).max())):
            raise NotSpdError("sigma is not symmetric")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise NotSpdError(f"sigma is not positive definite: {exc}") from exc
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def mvlaplace_log_pdf(params: MvLaplaceParams, x) -> float:
    """Log-density of the multivariate Laplace ML(mu, Sigma).

    pdf = 2 / ((2 pi)^(n/2) |Sigma|^(1/2))
          * K_{n/2-1}(sqrt(2 s)) / (sqrt(s/2))^(n/2-1),   s = z' Sigma^{-1} z.

    For n >= 2 the density diverges at z = 0 (K_0 blow-up); that point
    returns +inf as the singularity marker.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = params.dim
    if x.shape != (n,):
        raise ValueError(f"x shape {x.shape} does not match dimension {n}")
    z = x - params.mu
    chol = params._chol
    w = np.linalg.solve(chol, z)
    s = float(w @ w)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    if n == 1:
        # exact reduction: Sigma = 2/b^2  =>  Laplace(mu, b)
        b = math.sqrt(2.0 / params.sigma[0, 0])
        return laplace1d_log_pdf(0.0, b, float(z[0]))
    if s == 0.0:
        return math.inf
    half_order = 0.5 * n - 1.0
    return (math.log(2.0) - 0.5 * n * math.log(2.0 * math.pi) - 0.5 * logdet
            + log_bessel_k(half_order, math.sqrt(2.0 * s))
            - half_order * 0.5 * math.log(0.5 * s))


def gsm_sample(mu, sigma, mixing: GigParams, rng: np.random.Generator,
               size: int | None = None) -> np.ndarray:
    """Gaussian scale-mixture draws y = mu + sqrt(r) * Sigma^(1/2) z.

    r ~ GIG(mixing), z ~ N(0, I). With Exp(1) mixing the output is
    multivariate Laplace ML(mu, Sigma); with InvGamma(w/2, w/2) mixing it is
    Student-t with w degrees of freedom.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    n = mu.shape[0]
    if sigma.shape != (n, n):
        raise ValueError("sigma shape does not match mu")
    chol = np.linalg.cholesky(sigma)
    if size is None:
        r = gig_sample(mixing, rng)
        z = rng.standard_normal(n)
        return mu + math.sqrt(r) * (chol @ z)
    r = gig_sample(mixing, rng, size=size)
    z = rng.standard_normal((size, n))
    return mu + np.sqrt(r)[:, None] * (z @ chol.T)
