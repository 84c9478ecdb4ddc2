"""The hierarchical total-variation posterior.

Joint density over (x, nu, lambda, r) given data y, up to normalisation:

    lambda^(M/2 + a_l - 1) * nu^(N/2 + a_n - 1) * prod_e r_e^(rho)
      * exp( -nu/2 ||y - Hx||^2 - lambda/2 ||R^{-1} D x||^2
             - a/2 sum r - b/2 sum 1/r - b_l lambda - b_n nu )

with N pixels, M difference rows, R^{-2} = diag(1/(2 r_row)) and (a, b, p)
the mixing-density triple of the prior variant. The per-latent exponent rho
and the way latents map to difference rows depend on the variant's layout:

* per-edge (one latent per difference row): rho = p - 3/2, conditional GIG
  index p - 1/2;
* per-pixel (one latent shared by a pixel's L difference rows): rho =
  p - L/2 - 1, conditional GIG index p - L/2.

On the usual 2-D lattice M = 2N and L = 2, which recovers the familiar
lambda^(N + a_l - 1) exponent; the same formulas specialise 1-D signals
(M = N, L = 1) without special cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .distributions import GigParams
from .errors import (
    DegenerateConditionalError,
    NonFiniteError,
    RankConditionError,
)
from .operators import (
    BlurOperator,
    DiffOperator,
    LatticeSpec,
    build_diff_operator,
    gram_matrix_dense,
    validate_rank_condition,
)
from .solvers import SpdFactor

__all__ = [
    "HyperParams",
    "LaplaceTV",
    "StudentTV",
    "Laplace2D",
    "CustomGig",
    "PriorVariant",
    "ModelSpec",
    "LatentState",
    "GammaParams",
    "GaussianParams",
    "log_posterior",
    "conditional_params",
    "r_conditional_b",
    "row_weights_from_r",
]


@dataclass(frozen=True)
class HyperParams:
    """Gamma hyperprior parameters for the penalty strength and the noise
    precision. All zero (the default) is the improper 1/lambda, 1/nu prior."""

    alpha_lambda: float = 0.0
    beta_lambda: float = 0.0
    alpha_nu: float = 0.0
    beta_nu: float = 0.0

    def __post_init__(self):
        for name in ("alpha_lambda", "beta_lambda", "alpha_nu", "beta_nu"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"hyperparameter {name} must be >= 0, got {v}")


@dataclass(frozen=True)
class LaplaceTV:
    """Anisotropic-TV prior: per-edge latents, mixing GIG(2, safeguard_b, 1).

    safeguard_b = 0 is the exact Laplace prior (exponential mixing) whose
    latent scales can collapse to zero on flat regions; the small default
    keeps them strictly positive.
    """

    safeguard_b: float = 0.001
    layout = "edge"

    def mixing(self) -> GigParams:
        return GigParams(2.0, self.safeguard_b, 1.0)


@dataclass(frozen=True)
class StudentTV:
    """Student-t TV prior with w degrees of freedom: per-edge latents,
    mixing GIG(0, w, -w/2) = InvGamma(w/2, w/2)."""

    w: float = 2.0
    layout = "edge"

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError(f"degrees of freedom must be > 0, got {self.w}")

    def mixing(self) -> GigParams:
        return GigParams(0.0, self.w, -self.w / 2.0)


@dataclass(frozen=True)
class Laplace2D:
    """Bivariate-Laplace TV prior: one latent per pixel pools that pixel's
    horizontal and vertical differences. Defaults to the safeguarded
    GIG(2, 0.001, 1) mixing; pass GIG(2, 0, 1) for the exact variant."""

    mixing_params: GigParams = GigParams(2.0, 0.001, 1.0)
    layout = "pixel"

    def mixing(self) -> GigParams:
        return self.mixing_params


@dataclass(frozen=True)
class CustomGig:
    """Per-edge latents with an arbitrary admissible GIG mixing density."""

    mixing_params: GigParams
    layout = "edge"

    def mixing(self) -> GigParams:
        return self.mixing_params


PriorVariant = Union[LaplaceTV, StudentTV, Laplace2D, CustomGig]


@dataclass(frozen=True)
class ModelSpec:
    """Immutable bundle of lattice, operators, hyperpriors and prior variant."""

    lattice: LatticeSpec
    blur: BlurOperator
    diff: DiffOperator
    hyper: HyperParams
    prior: PriorVariant

    def __post_init__(self):
        if not validate_rank_condition(self.blur, self.diff):
            raise RankConditionError(
                "blur and difference operators share a nullspace direction "
                "(H applied to the constant image is ~0); the penalised "
                "system matrix would be singular")

    @classmethod
    def build(cls, lattice: LatticeSpec, kernel: np.ndarray,
              hyper: HyperParams | None = None,
              prior: PriorVariant | None = None) -> "ModelSpec":
        return cls(lattice, BlurOperator(kernel, lattice),
                   build_diff_operator(lattice),
                   hyper if hyper is not None else HyperParams(),
                   prior if prior is not None else LaplaceTV())

    @property
    def n_pixels(self) -> int:
        return self.lattice.size

    @property
    def n_rows(self) -> int:
        return self.diff.n_rows

    @property
    def n_latents(self) -> int:
        return self.n_pixels if self.prior.layout == "pixel" else self.n_rows

    @property
    def lambda_shape(self) -> float:
        return 0.5 * self.n_rows + self.hyper.alpha_lambda

    @property
    def nu_shape(self) -> float:
        return 0.5 * self.n_pixels + self.hyper.alpha_nu

    @property
    def r_exponent(self) -> float:
        """Power of each latent in the joint posterior."""
        p = self.prior.mixing().p
        if self.prior.layout == "pixel":
            return p - 0.5 * self.diff.n_blocks - 1.0
        return p - 1.5

    @property
    def r_conditional_index(self) -> float:
        """GIG index of the latent-scale full conditionals."""
        p = self.prior.mixing().p
        if self.prior.layout == "pixel":
            return p - 0.5 * self.diff.n_blocks
        return p - 0.5


@dataclass
class LatentState:
    """One point (x, nu, lambda, r) of the latent space."""

    x: np.ndarray
    nu: float
    lam: float
    r: np.ndarray

    def validate(self, model: ModelSpec):
        if self.x.shape != (model.n_pixels,):
            raise ValueError(f"x must have length {model.n_pixels}")
        if self.r.shape != (model.n_latents,):
            raise ValueError(f"r must have length {model.n_latents}")
        if not np.all(np.isfinite(self.x)):
            raise NonFiniteError("state x contains non-finite entries", where="x")
        for name, v in (("nu", self.nu), ("lambda", self.lam)):
            if not (math.isfinite(v) and v > 0):
                raise NonFiniteError(f"state {name} must be positive finite, "
                                     f"got {v}", where=name)
        if not np.all(np.isfinite(self.r)) or np.any(self.r <= 0):
            raise NonFiniteError("state r entries must be positive finite",
                                 where="r")


def row_weights_from_r(r: np.ndarray, model: ModelSpec) -> np.ndarray:
    """Diagonal of R^{-2} = 1/(2 r_row), expanding per-pixel latents over
    their difference rows."""
    if model.prior.layout == "pixel":
        r = np.tile(r, model.diff.n_blocks)
    return 1.0 / (2.0 * r)


def r_conditional_b(x: np.ndarray, lam: float, model: ModelSpec,
                    check: bool = True) -> np.ndarray:
    """Second GIG parameter of every latent-scale conditional:
    b' = lambda/2 * (local squared difference) + b, pooling a pixel's rows
    under the per-pixel layout.

    With ``check`` (the default) a zero entry under an exact (b = 0) mixing
    density raises; single-conditional callers may defer the check to the
    latent they actually use.
    """
    d2 = model.diff.matvec(x) ** 2
    if model.prior.layout == "pixel":
        d2 = d2.reshape(model.diff.n_blocks, model.n_pixels).sum(axis=0)
    mix = model.prior.mixing()
    bprime = 0.5 * lam * d2 + mix.b
    if check and mix.b == 0.0 and np.any(bprime == 0.0):
        count = int(np.sum(bprime == 0.0))
        raise DegenerateConditionalError(
            f"{count} latent-scale conditional(s) degenerate: zero pixel "
            "difference with an exact (b = 0) mixing density. Use a "
            "safeguarded prior, e.g. LaplaceTV(safeguard_b=0.001).")
    return bprime


@dataclass
class GammaParams:
    """Gamma(shape, rate) conditional."""

    shape: float
    rate: float

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def mode(self) -> float:
        return max(self.shape - 1.0, 0.0) / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate ** 2

    def log_pdf(self, x: float) -> float:
        if not x > 0:
            raise ValueError("gamma log_pdf requires x > 0")
        return (self.shape * math.log(self.rate) - math.lgamma(self.shape)
                + (self.shape - 1.0) * math.log(x) - self.rate * x)


@dataclass
class GaussianParams:
    """N(mean, precision^{-1}) conditional."""

    mean: np.ndarray
    precision: np.ndarray

    def log_pdf(self, x: np.ndarray) -> float:
        factor = SpdFactor(self.precision)
        z = np.asarray(x, dtype=float) - self.mean
        n = self.mean.shape[0]
        return 0.5 * factor.logdet() - 0.5 * n * math.log(2 * math.pi) \
            - 0.5 * float(z @ (self.precision @ z))


def log_posterior(state: LatentState, y: np.ndarray, model: ModelSpec) -> float:
    """Joint log-density at the state, up to the normalising constant.

    Raises :class:`NonFiniteError` identifying the offending block when any
    term is not finite.
    """
    state.validate(model)
    y = np.asarray(y, dtype=float)
    if y.shape != (model.n_pixels,):
        raise ValueError(f"y must have length {model.n_pixels}")
    mix = model.prior.mixing()
    h = model.hyper

    def block(value: float, where: str) -> float:
        if not math.isfinite(value):
            raise NonFiniteError(f"non-finite log-posterior block: {where}",
                                 where=where)
        return value

    with np.errstate(over="ignore", invalid="ignore"):
        log_r = np.log(state.r)
        resid = y - model.blur.matvec(state.x)
        dx = model.diff.matvec(state.x)
        weights = row_weights_from_r(state.r, model)
        total = block((model.lambda_shape - 1.0) * math.log(state.lam)
                      - h.beta_lambda * state.lam, "lambda hyperprior")
        total += block((model.nu_shape - 1.0) * math.log(state.nu)
                       - h.beta_nu * state.nu, "nu hyperprior")
        total += block(model.r_exponent * float(np.sum(log_r)), "latent exponent")
        total += block(-0.5 * state.nu * float(resid @ resid), "likelihood")
        total += block(-0.5 * state.lam * float(np.sum(dx * dx * weights)),
                       "tv penalty")
        total += block(-0.5 * mix.a * float(np.sum(state.r))
                       - 0.5 * mix.b * float(np.sum(1.0 / state.r)),
                       "latent prior")
    return total


def conditional_params(state: LatentState, y: np.ndarray, model: ModelSpec,
                       which):
    """Parameters of a full conditional at the state.

    ``which`` is "x", "nu", "lambda", or ("r", index). The x-conditional
    assembles the dense system matrix and is capacity gated.
    """
    state.validate(model)
    y = np.asarray(y, dtype=float)
    h = model.hyper
    if which == "x":
        weights = row_weights_from_r(state.r, model)
        q = gram_matrix_dense(model.blur, model.diff,
                              state.lam / state.nu, weights)
        mean = SpdFactor(q).solve(model.blur.rmatvec(y))
        return GaussianParams(mean, state.nu * q)
    if which == "nu":
        resid = y - model.blur.matvec(state.x)
        return GammaParams(model.nu_shape, 0.5 * float(resid @ resid) + h.beta_nu)
    if which == "lambda":
        dx = model.diff.matvec(state.x)
        weights = row_weights_from_r(state.r, model)
        return GammaParams(model.lambda_shape,
                           0.5 * float(np.sum(dx * dx * weights)) + h.beta_lambda)
    if isinstance(which, tuple) and len(which) == 2 and which[0] == "r":
        idx = which[1]
        bprime = r_conditional_b(state.x, state.lam, model, check=False)
        mix = model.prior.mixing()
        if mix.b == 0.0 and bprime[idx] == 0.0:
            raise DegenerateConditionalError(
                f"latent-scale conditional {idx} degenerate: zero pixel "
                "difference with an exact (b = 0) mixing density. Use a "
                "safeguarded prior, e.g. LaplaceTV(safeguard_b=0.001).")
        return GigParams(mix.a, float(bprime[idx]), model.r_conditional_index)
    raise ValueError(f"unknown conditional selector {which!r}")
