"""The three inference engines and a quadratic baseline.

* :func:`ias_run` - coordinate-wise MAP ascent: each variable is set to the
  mode of its full conditional in turn (x by a preconditioned CG solve, nu
  and lambda by closed gamma modes, the latent scales by the GIG mode).
* :func:`vb_run` - mean-field approximation q(x) q(nu) q(lambda) prod q(r),
  cycled to a fixed point; dense, so capacity gated.
* :func:`gibbs_run` - systematic-scan sampler over the same conditionals,
  with running moments of the kept draws.
* :func:`tikhonov_baseline` - plain quadratic smoothing for comparison.

All engines share the same data-driven initialisation: x from the adjoint
of the data, nu and lambda from their update formulas at that point, latent
scales at the mixing-prior mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    gig_inv_moment_batch,
    gig_mode,
    gig_moment,
    gig_sample_batch,
)
from .errors import (
    CapacityError,
    DivergenceError,
    MomentDivergesError,
    NonFiniteError,
)
from .model import (
    LatentState,
    ModelSpec,
    log_posterior,
    r_conditional_b,
    row_weights_from_r,
)
from .operators import (
    DENSE_CAPACITY,
    BlurOperator,
    DiffOperator,
    circulant_gram_precond,
    weighted_gram_matvec,
)
from .solvers import SpdFactor, pcg_solve

__all__ = [
    "IasOptions",
    "IasState",
    "ias_run",
    "VbOptions",
    "VbState",
    "vb_run",
    "GibbsOptions",
    "GibbsChain",
    "gibbs_run",
    "tikhonov_baseline",
    "initial_state",
]

LAMBDA_BOUNDS = (1e-12, 1e12)


def initial_state(y: np.ndarray, model: ModelSpec) -> LatentState:
    """Scale-free starting point: x0 = H'y, latent scales at the mixing
    prior mean (mode when the mean diverges), nu and lambda from their
    update formulas at that point."""
    y = np.asarray(y, dtype=float)
    x0 = model.blur.rmatvec(y)
    mix = model.prior.mixing()
    try:
        r0 = gig_moment(mix, 1)
    except MomentDivergesError:
        r0 = gig_mode(mix)
    if not (math.isfinite(r0) and r0 > 0):
        r0 = 1.0
    r = np.full(model.n_latents, r0)

    resid = y - model.blur.matvec(x0)
    resid2 = float(resid @ resid)
    floor = 1e-12 * max(1.0, float(y @ y))
    nu0 = model.n_pixels / max(resid2, floor)

    dx = model.diff.matvec(x0)
    rdx2 = float(np.sum(dx * dx * row_weights_from_r(r, model)))
    num = model.n_rows - 2.0 + 2.0 * model.hyper.alpha_lambda
    den = rdx2 + 2.0 * model.hyper.beta_lambda
    lam0 = num / den if den > 0 and num > 0 else 1.0
    return LatentState(x=x0, nu=nu0, lam=lam0, r=r)


def _check_lambda(lam: float, iteration: int):
    lo, hi = LAMBDA_BOUNDS
    if lam > hi:
        raise DivergenceError(
            f"degenerate regularisation at iteration {iteration}: penalty "
            f"strength {lam:.3e} ran towards infinity (blank-image mode)",
            mode="blank_image", iteration=iteration)
    if lam < lo:
        raise DivergenceError(
            f"degenerate regularisation at iteration {iteration}: penalty "
            f"strength {lam:.3e} collapsed towards zero (no-op mode)",
            mode="no_op", iteration=iteration)


def _gamma_mode_update(numerator: float, denominator: float, name: str,
                       iteration: int) -> float:
    if numerator <= 0:
        raise NonFiniteError(
            f"{name} update has nonpositive numerator {numerator}; the "
            "problem is too small for the improper hyperprior",
            where=name, iteration=iteration)
    if denominator <= 0 or not math.isfinite(denominator):
        raise NonFiniteError(
            f"{name} update denominator {denominator} is not positive finite",
            where=name, iteration=iteration)
    return numerator / denominator


def _r_mode_batch(a: float, bprime: np.ndarray, p_cond: float,
                  iteration: int) -> np.ndarray:
    """Mode of GIG(a, b', p_cond) per latent; a = 0 uses the inverse-gamma
    branch b'/(2(1-p)) since the general formula divides by a."""
    if a > 0:
        c = p_cond - 1.0
        r = (c + np.sqrt(c * c + a * bprime)) / a
    else:
        r = bprime / (2.0 * (1.0 - p_cond))
    if not np.all(np.isfinite(r)) or np.any(r <= 0):
        raise NonFiniteError(
            "latent-scale mode update produced nonpositive values; use a "
            "safeguarded mixing density",
            where="r", iteration=iteration)
    return r


def _jacobi_precond(blur: BlurOperator, diff: DiffOperator, ratio: float,
                    weights: np.ndarray):
    diag = blur.gram_diag() + ratio * diff.weighted_gram_diag(weights)
    return lambda v: v / diag


def _make_precond(kind: str, blur: BlurOperator, diff: DiffOperator,
                  ratio: float, weights: np.ndarray):
    """Jacobi handles the system diagonal; the circulant preconditioner is
    the exact inverse at the mean difference weight and converges much
    faster on TV-sharpened systems."""
    if kind == "jacobi":
        return _jacobi_precond(blur, diff, ratio, weights)
    if kind == "circulant":
        return circulant_gram_precond(blur, diff, ratio,
                                      float(np.mean(weights)))
    raise ValueError(f"unknown preconditioner {kind!r}")


# ---------------------------------------------------------------------------
# IAS (MAP)
# ---------------------------------------------------------------------------

@dataclass
class IasOptions:
    tol: float = 1e-6
    maxit: int = 200
    pcg_tol: float = 1e-8
    pcg_maxit: int | None = None
    precond: str = "circulant"
    init: LatentState | None = None
    record_substeps: bool = False


@dataclass
class IasState:
    x: np.ndarray
    nu: float
    lam: float
    r: np.ndarray
    iterations: int
    converged: bool
    # one row per iteration: (log-posterior, relative x change, nu, lambda)
    trace: np.ndarray
    # (iterations, 4) log-posterior after the x / nu / lambda / r sub-updates
    substep_logposts: np.ndarray | None = None

    def latent_state(self) -> LatentState:
        return LatentState(self.x.copy(), self.nu, self.lam, self.r.copy())


def ias_run(y: np.ndarray, model: ModelSpec,
            opts: IasOptions | None = None) -> IasState:
    """Iterative alternating-sequential maximisation of the joint posterior.

    Cycles x (CG solve of the penalised normal equations), then nu, lambda
    and the latent scales through their conditional modes, always using the
    newest values. Stops when the relative x change drops below ``tol``.
    """
    opts = opts or IasOptions()
    if opts.maxit < 1 or not opts.tol > 0:
        raise ValueError("ias needs maxit >= 1 and tol > 0")
    y = np.asarray(y, dtype=float)
    state = opts.init if opts.init is not None else initial_state(y, model)
    state.validate(model)
    _check_lambda(state.lam, 0)

    mix = model.prior.mixing()
    p_cond = model.r_conditional_index
    hty = model.blur.rmatvec(y)
    nu_num = model.n_pixels - 2.0 + 2.0 * model.hyper.alpha_nu
    lam_num = model.n_rows - 2.0 + 2.0 * model.hyper.alpha_lambda

    x, nu, lam, r = state.x, state.nu, state.lam, state.r
    trace, substeps = [], []
    converged = False
    iterations = 0
    for it in range(1, opts.maxit + 1):
        iterations = it
        x_prev = x
        weights = row_weights_from_r(r, model)
        ratio = lam / nu
        sol = pcg_solve(
            lambda v: weighted_gram_matvec(model.blur, model.diff, ratio,
                                           weights, v),
            hty,
            precond=_make_precond(opts.precond, model.blur, model.diff, ratio,
                                  weights),
            tol=opts.pcg_tol, maxit=opts.pcg_maxit, x0=x_prev)
        x = sol.x
        step_logs = []
        if opts.record_substeps:
            step_logs.append(log_posterior(LatentState(x, nu, lam, r), y, model))

        resid = y - model.blur.matvec(x)
        nu = _gamma_mode_update(nu_num,
                                float(resid @ resid) + 2.0 * model.hyper.beta_nu,
                                "nu", it)
        if opts.record_substeps:
            step_logs.append(log_posterior(LatentState(x, nu, lam, r), y, model))

        dx = model.diff.matvec(x)
        rdx2 = float(np.sum(dx * dx * weights))
        lam = _gamma_mode_update(lam_num, rdx2 + 2.0 * model.hyper.beta_lambda,
                                 "lambda", it)
        _check_lambda(lam, it)
        if opts.record_substeps:
            step_logs.append(log_posterior(LatentState(x, nu, lam, r), y, model))

        bprime = r_conditional_b(x, lam, model)
        r = _r_mode_batch(mix.a, bprime, p_cond, it)

        logpost = log_posterior(LatentState(x, nu, lam, r), y, model)
        if opts.record_substeps:
            step_logs.append(logpost)
            substeps.append(step_logs)
        rel = float(np.linalg.norm(x - x_prev)
                    / max(np.linalg.norm(x_prev), 1e-300))
        trace.append((logpost, rel, nu, lam))
        if rel < opts.tol:
            converged = True
            break

    return IasState(
        x=x, nu=nu, lam=lam, r=r, iterations=iterations, converged=converged,
        trace=np.asarray(trace),
        substep_logposts=np.asarray(substeps) if opts.record_substeps else None)


# ---------------------------------------------------------------------------
# Mean-field variational Bayes
# ---------------------------------------------------------------------------

@dataclass
class VbOptions:
    tol: float = 1e-6
    maxit: int = 200
    init: LatentState | None = None


@dataclass
class VbState:
    x_mean: np.ndarray
    x_cov: np.ndarray
    nu_shape: float
    nu_rate: float
    lam_shape: float
    lam_rate: float
    r_a: float
    r_b: np.ndarray      # second GIG parameter per latent
    r_p: float
    e_inv_r: np.ndarray  # cached E(1/r) per latent
    e_dx2: np.ndarray    # cached E((difference)^2) per difference row
    iterations: int
    converged: bool
    # one row per iteration: (relative x change, nu mean, lambda mean)
    trace: np.ndarray = field(repr=False, default=None)

    @property
    def nu_mean(self) -> float:
        return self.nu_shape / self.nu_rate

    @property
    def lam_mean(self) -> float:
        return self.lam_shape / self.lam_rate

    @property
    def x_std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.x_cov))


def vb_run(y: np.ndarray, model: ModelSpec,
           opts: VbOptions | None = None) -> VbState:
    """Mean-field factor iteration to a fixed point.

    The x factor is Gaussian with dense covariance, so the run is capacity
    gated; nu and lambda factors are gammas with fixed shapes; latent-scale
    factors are GIG with shared (a, p) and per-latent second parameter.
    """
    opts = opts or VbOptions()
    if opts.maxit < 1 or not opts.tol > 0:
        raise ValueError("vb needs maxit >= 1 and tol > 0")
    y = np.asarray(y, dtype=float)
    N = model.n_pixels
    if N > DENSE_CAPACITY:
        raise CapacityError(
            f"vb needs dense {N} x {N} covariances; capacity is "
            f"{DENSE_CAPACITY} pixels. Use ias (matrix-free) for problems "
            "this large.")

    init = opts.init if opts.init is not None else initial_state(y, model)
    init.validate(model)
    mix = model.prior.mixing()
    p_cond = model.r_conditional_index
    n_blocks = model.diff.n_blocks
    per_pixel = model.prior.layout == "pixel"

    hd = model.blur.to_dense()
    hth = hd.T @ hd
    hty = model.blur.rmatvec(y)
    nu_shape = model.nu_shape
    lam_shape = model.lambda_shape

    nu_mean, lam_mean = init.nu, init.lam
    e_inv_r = 1.0 / init.r
    nu_rate, lam_rate = nu_shape / nu_mean, lam_shape / lam_mean
    r_b = mix.b + np.zeros(model.n_latents)

    x_mean = init.x
    x_cov = None
    e_dx2 = None
    trace = []
    converged = False
    iterations = 0
    for it in range(1, opts.maxit + 1):
        iterations = it
        x_prev = x_mean
        row_inv = np.tile(e_inv_r, n_blocks) if per_pixel else e_inv_r
        weights = 0.5 * row_inv
        qbar = hth + (lam_mean / nu_mean) * model.diff.weighted_gram_dense(weights)
        factor = SpdFactor(qbar)
        x_mean = factor.solve(hty)
        x_cov = factor.inverse() / nu_mean

        dx = model.diff.matvec(x_mean)
        e_dx2 = dx * dx + model.diff.row_quadratic(x_cov)

        nu_rate = (0.5 * float(np.sum((y - model.blur.matvec(x_mean)) ** 2))
                   + 0.5 * float(np.sum(x_cov * hth)) + model.hyper.beta_nu)
        nu_mean = nu_shape / nu_rate

        lam_rate = 0.25 * float(np.sum(row_inv * e_dx2)) + model.hyper.beta_lambda
        lam_mean = lam_shape / lam_rate
        _check_lambda(lam_mean, it)

        pooled = (e_dx2.reshape(n_blocks, N).sum(axis=0) if per_pixel else e_dx2)
        r_b = 0.5 * lam_mean * pooled + mix.b
        e_inv_r = gig_inv_moment_batch(mix.a, r_b, p_cond)
        if not np.all(np.isfinite(e_inv_r)) or np.any(e_inv_r <= 0):
            raise NonFiniteError("latent-scale inverse moments are not "
                                 "positive finite", where="e_inv_r",
                                 iteration=it)

        rel = float(np.linalg.norm(x_mean - x_prev)
                    / max(np.linalg.norm(x_prev), 1e-300))
        trace.append((rel, nu_mean, lam_mean))
        if rel < opts.tol:
            converged = True
            break

    return VbState(
        x_mean=x_mean, x_cov=x_cov, nu_shape=nu_shape, nu_rate=nu_rate,
        lam_shape=lam_shape, lam_rate=lam_rate, r_a=mix.a, r_b=r_b, r_p=p_cond,
        e_inv_r=e_inv_r, e_dx2=e_dx2, iterations=iterations,
        converged=converged, trace=np.asarray(trace))


# ---------------------------------------------------------------------------
# Gibbs sampling
# ---------------------------------------------------------------------------

@dataclass
class GibbsOptions:
    seed: int = 0
    samples: int = 1000
    burn_in: int | None = None  # defaults to 20% of the kept-sample count
    thinning: int = 1
    init: LatentState | None = None


@dataclass
class GibbsChain:
    seed: int
    burn_in: int
    samples: int
    thinning: int
    x_mean: np.ndarray
    x_var: np.ndarray          # per-pixel sample variance of the kept draws
    nu_trace: np.ndarray       # every sweep, burn-in included
    lam_trace: np.ndarray
    last_state: LatentState

    @property
    def n_sweeps(self) -> int:
        return self.nu_trace.shape[0]


def gibbs_run(y: np.ndarray, model: ModelSpec,
              opts: GibbsOptions | None = None) -> GibbsChain:
    """Systematic-scan Gibbs sampler over the full conditionals.

    x is drawn from its Gaussian conditional via a dense Cholesky factor
    (capacity gated); nu and lambda from gamma conditionals; every latent
    scale from its GIG conditional in one vectorised draw. Running mean and
    variance accumulate over the kept (post burn-in, thinned) draws.
    """
    opts = opts or GibbsOptions()
    if opts.samples < 1:
        raise ValueError("need at least one kept sample")
    if opts.thinning < 1:
        raise ValueError("thinning must be >= 1")
    y = np.asarray(y, dtype=float)
    N = model.n_pixels
    if N > DENSE_CAPACITY:
        raise CapacityError(
            f"gibbs draws need dense {N} x {N} factorisations; capacity is "
            f"{DENSE_CAPACITY} pixels.")

    burn_in = opts.burn_in if opts.burn_in is not None else opts.samples // 5
    rng = np.random.default_rng(opts.seed)
    state = opts.init if opts.init is not None else initial_state(y, model)
    state.validate(model)

    mix = model.prior.mixing()
    p_cond = model.r_conditional_index
    per_pixel = model.prior.layout == "pixel"
    n_blocks = model.diff.n_blocks
    hd = model.blur.to_dense()
    hth = hd.T @ hd
    hty = model.blur.rmatvec(y)
    nu_shape, lam_shape = model.nu_shape, model.lambda_shape

    x, nu, lam, r = state.x, state.nu, state.lam, state.r
    total = burn_in + opts.samples * opts.thinning
    nu_trace = np.empty(total)
    lam_trace = np.empty(total)
    mean = np.zeros(N)
    m2 = np.zeros(N)
    kept = 0
    for sweep in range(total):
        weights = row_weights_from_r(r, model)
        precision = nu * hth + lam * model.diff.weighted_gram_dense(weights)
        factor = SpdFactor(precision)
        x = factor.sample_precision(factor.solve(nu * hty), rng)

        resid = y - model.blur.matvec(x)
        nu = float(rng.gamma(nu_shape,
                             1.0 / (0.5 * float(resid @ resid)
                                    + model.hyper.beta_nu)))
        dx = model.diff.matvec(x)
        rdx2 = float(np.sum(dx * dx * weights))
        lam = float(rng.gamma(lam_shape,
                              1.0 / (0.5 * rdx2 + model.hyper.beta_lambda)))
        bprime = r_conditional_b(x, lam, model)
        r = gig_sample_batch(mix.a, bprime, p_cond, rng)

        nu_trace[sweep] = nu
        lam_trace[sweep] = lam
        if sweep >= burn_in and (sweep - burn_in) % opts.thinning == 0:
            kept += 1
            delta = x - mean
            mean += delta / kept
            m2 += delta * (x - mean)

    x_var = m2 / (kept - 1) if kept > 1 else np.zeros(N)
    return GibbsChain(
        seed=opts.seed, burn_in=burn_in, samples=kept, thinning=opts.thinning,
        x_mean=mean, x_var=x_var, nu_trace=nu_trace, lam_trace=lam_trace,
        last_state=LatentState(x, nu, lam, r))


# ---------------------------------------------------------------------------
# Tikhonov baseline
# ---------------------------------------------------------------------------

def tikhonov_baseline(y: np.ndarray, blur: BlurOperator, diff: DiffOperator,
                      delta: float, tol: float = 1e-10,
                      maxit: int | None = None) -> np.ndarray:
    """Solve (H'H + delta D'D) x = H'y by preconditioned CG."""
    if not delta > 0:
        raise ValueError(f"tikhonov delta must be > 0, got {delta}")
    y = np.asarray(y, dtype=float)
    ones = np.ones(diff.n_rows)
    sol = pcg_solve(
        lambda v: weighted_gram_matvec(blur, diff, delta, ones, v),
        blur.rmatvec(y),
        precond=circulant_gram_precond(blur, diff, delta, 1.0),
        tol=tol, maxit=maxit)
    return sol.x
