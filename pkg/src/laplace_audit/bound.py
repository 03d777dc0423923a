"""Computable certificate for the KL divergence of a Laplace fit.

Everything here runs off two scalars per unit direction ``e``:

* ``delta3``: the third derivative of the negative log-density along the
  fit-whitened ray through the mode, evaluated at the mode;
* ``delta4``: a bound on the absolute fourth derivative along that ray.

From these the module derives, per direction, a positive curvature floor for
the conditional square-root-radius law, a bound on the conditional KL
divergence, and the ELBO proxy for the log marginal of the direction
variable. Averaging over sampled directions assembles two certificates:

* ``approximate_bound``: a closed-form coefficient times the empirical mean
  of ``delta3**2`` (third-derivative-only form);
* the detailed bound: empirical log-moment term of the centered ELBO values
  plus the conditional-KL corrections.

``audit`` wires the full pipeline (mode search, fit, curvature spot check,
direction sampling, assembly) into a reproducible report.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, logsumexp

from .errors import AssumptionViolationError, NonFiniteObjectiveError
from .laplace import LaplaceFit, fit_laplace, logconcavity_spotcheck
from .models import TargetModel
from .radial import chi_moment, chi_quadrature, chi_quantile, radial_min_curvature, sample_direction_pairs

_DIR_STREAM = 1
_LSI_STREAM = 5

DELTA4_GRID_POINTS = 512
CURVATURE_GRID_POINTS = 4097


def delta3(fit: LaplaceFit, model: TargetModel, e) -> float:
    """Third ray derivative at the mode along the whitened direction ``S e``.

    Equals the full third-derivative tensor contracted three times with
    ``S e``, but is computed directly along the ray so the d^3 tensor is
    never materialized. Odd in ``e``.
    """
    e = np.asarray(e, dtype=float)
    v = fit.sqrt_covariance @ e
    return float(model.ray_derivatives(fit.theta_star, v, 0.0, max_order=3)[2])


def _delta4_along(model, fit, v, mode: str, r_max: float | None):
    if mode not in ("analytic", "grid"):
        raise ValueError(f"delta4 mode must be 'analytic' or 'grid', got {mode!r}")
    if mode == "analytic":
        bound_val = model.ray_fourth_derivative_bound(fit.theta_star, v)
        if bound_val is not None:
            if bound_val < 0:
                raise ValueError("analytic fourth-derivative bound must be nonnegative")
            return float(bound_val), "analytic"
    if r_max is None:
        r_max = chi_quantile(fit.dim, 1.0 - 1e-6)
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    rs = np.linspace(0.0, r_max, DELTA4_GRID_POINTS)
    vals = model.ray_derivative_profile(fit.theta_star, v, rs, order=4)
    return float(np.max(np.abs(vals))), "grid"


def delta4(fit: LaplaceFit, model: TargetModel, e, r_max: float | None = None,
           mode: str = "analytic"):
    """Bound on |fourth ray derivative| along ``S e``.

    Prefers the model's analytic global bound when available; otherwise takes
    the max over a 512-point grid on [0, r_max] (r_max defaulting to the
    1 - 1e-6 chi quantile). The grid value is a heuristic stand-in for the
    unbounded maximum and is flagged as such.

    Returns
    -------
    (value, flag) with flag in {"analytic", "grid"}.
    """
    e = np.asarray(e, dtype=float)
    v = fit.sqrt_covariance @ e
    return _delta4_along(model, fit, v, mode, r_max)


def _curvature_floor_poly(r, d, d3, d4):
    # lower bound for the conditional curvature, written in r = z^2; Horner
    # form keeps intermediates finite for the extreme r the degenerate
    # (d4 ~ 0) corner produces
    return (2.0 * d - 1.0) / r + r * (6.0 + r * (5.0 * d3 - (7.0 / 3.0) * (d4 * r)))


def min_conditional_curvature(
    d: int, delta3: float, delta4: float, boundary_term: str = "lemma"
) -> float:
    """Lower bound on the minimum curvature of the conditional z-law.

    Combines the polynomial floor (2d-1)/z^2 + 6 z^2 + 5*delta3*z^4
    - (7/3)*delta4*z^6 over the region where the quadratic Taylor control of
    the ray still gives information (z^2 <= r0), with a flat floor beyond r0
    derived from monotonicity. ``boundary_term="derivation"`` switches the
    flat floor from r0 + delta3 r0^2 - delta4 r0^3/3 to the larger
    2 r0 + delta3 r0^2 - delta4 r0^3/3; the smaller default is conservative.

    A nonpositive return value means the Taylor control is too weak for this
    direction; callers must flag the direction as outside the certificate's
    validity range.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if delta4 < 0:
        raise ValueError("delta4 must be nonnegative")
    if boundary_term not in ("lemma", "derivation"):
        raise ValueError("boundary_term must be 'lemma' or 'derivation'")
    if delta3 == 0.0 and delta4 == 0.0:
        return radial_min_curvature(d)

    # r0 solves 1 + delta3 r - delta4 r^2/2 = 0; rationalized form is stable
    # for either sign of delta3
    if delta4 == 0.0:
        r0 = math.inf if delta3 > 0.0 else -1.0 / delta3
    else:
        r0 = 2.0 / (math.sqrt(delta3 * delta3 + 2.0 * delta4) - delta3)

    r_star = math.sqrt((2.0 * d - 1.0) / 6.0)
    r_hi = r0 if math.isfinite(r0) else 100.0 * r_star
    r_lo = min(r_star, r_hi) * 1e-6
    grid = np.geomspace(r_lo, r_hi, CURVATURE_GRID_POINTS)
    vals = _curvature_floor_poly(grid, d, delta3, delta4)

    candidates = [float(vals[-1])]
    interior = np.flatnonzero(
        (vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])
    ) + 1
    for idx in interior:
        res = minimize_scalar(
            _curvature_floor_poly,
            args=(d, delta3, delta4),
            bounds=(grid[idx - 1], grid[idx + 1]),
            method="bounded",
            options={"xatol": 1e-12},
        )
        candidates.append(min(float(res.fun), float(vals[idx])))
    floor = min(candidates)

    if math.isfinite(r0):
        if delta4 == 0.0:
            # delta3 < 0 here; 1 + delta3 r0 = 0 exactly, the flat floor degenerates
            flat = 0.0
        else:
            # factored form of r0 + delta3 r0^2 - delta4 r0^3/3; delta4*r0 and
            # delta3*r0 stay bounded even when r0 is astronomically large
            flat = r0 * (1.0 + r0 * (delta3 - (delta4 * r0) / 3.0))
        if boundary_term == "derivation":
            flat += r0
        floor = min(floor, flat)
    return float(floor)


def conditional_kl_bound(d: int, delta3: float, delta4: float, min_curvature: float) -> float:
    """Bound on the conditional KL divergence of the z-law for one direction.

    (delta3^2 E[r^5] + (2/3)|delta3| delta4 E[r^6] + (1/9) delta4^2 E[r^7])
    divided by the curvature floor, with chi moments of the reference radius.
    """
    if min_curvature <= 0:
        raise ValueError("min_curvature must be positive (direction invalid otherwise)")
    if delta4 < 0:
        raise ValueError("delta4 must be nonnegative")
    numerator = (
        delta3 * delta3 * chi_moment(d, 5)
        + (2.0 / 3.0) * abs(delta3) * delta4 * chi_moment(d, 6)
        + (1.0 / 9.0) * delta4 * delta4 * chi_moment(d, 7)
    )
    return numerator / min_curvature


def xi_elbo(fit: LaplaceFit, model: TargetModel, e, quadrature_nodes: int = 64) -> float:
    """ELBO proxy for the log marginal of the direction variable.

    Computes E over the chi radius law of r^2/2 - (phi_e(r) - phi_e(0)) by
    fixed-node quadrature; the phi_e(0) shift removes the direction-free
    constant, which cancels in every centered quantity downstream.
    """
    if quadrature_nodes < 16:
        raise ValueError("quadrature_nodes must be at least 16")
    e = np.asarray(e, dtype=float)
    v = fit.sqrt_covariance @ e
    return _xi_elbo_along(fit, model, v, quadrature_nodes)


def _xi_elbo_along(fit, model, v, quadrature_nodes):
    rs, ws = chi_quadrature(fit.dim, quadrature_nodes)
    vals = model.ray_values(fit.theta_star, v, rs)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteObjectiveError("negative log-density non-finite along ray")
    integrand = 0.5 * rs * rs - (vals - fit.neg_log_density_at_mode)
    return float(ws @ integrand)


def eps2_bound(d: int, delta4: float) -> float:
    """Bound on the third-order remainder of the ELBO proxy: delta4 E[r^4]/24."""
    if delta4 < 0:
        raise ValueError("delta4 must be nonnegative")
    return delta4 * chi_moment(d, 4) / 24.0


def conditional_curvature_profile(fit: LaplaceFit, model: TargetModel, e, zs) -> np.ndarray:
    """Exact curvature of the conditional z-law at each z (diagnostic helper).

    (2d-1)/z^2 + 2 phi_e'(z^2) + 4 z^2 phi_e''(z^2), with the ray derivatives
    taken along the whitened direction. ``min_conditional_curvature`` must
    lower-bound the minimum of this profile.
    """
    zs = np.asarray(zs, dtype=float)
    if np.any(zs <= 0):
        raise ValueError("zs must be positive")
    e = np.asarray(e, dtype=float)
    v = fit.sqrt_covariance @ e
    rs = zs * zs
    phi1 = model.ray_derivative_profile(fit.theta_star, v, rs, order=1)
    phi2 = model.ray_derivative_profile(fit.theta_star, v, rs, order=2)
    return (2.0 * fit.dim - 1.0) / (zs * zs) + 2.0 * phi1 + 4.0 * zs * zs * phi2


@dataclass(frozen=True)
class DirectionDiagnostics:
    """Per-direction scalars feeding the assembled bounds."""

    e: np.ndarray
    delta3: float
    delta4: float
    delta4_mode: str
    min_curvature: float
    cond_kl_bound: float
    xi_elbo: float
    eps1_bound: float
    eps2_bound: float
    valid: bool


@dataclass(frozen=True)
class DirectionKlTerms:
    """Monte-Carlo estimates of the direction-variable KL terms.

    ``log_moment_term`` is the empirical half-log-moment of the centered
    ELBO values; ``eps1_correction`` is E[(eps1 bound)^2] + E[eps1 bound],
    split into ``eps1_sq_term`` and ``cond_term``. Standard errors are
    jackknife estimates over direction blocks.
    """

    log_moment_term: float
    log_moment_term_se: float
    eps1_correction: float
    eps1_correction_se: float
    eps1_sq_term: float
    cond_term: float


def _log_moment(xis: np.ndarray) -> float:
    centered = 2.0 * (xis - xis.mean())
    return 0.5 * float(logsumexp(centered) - np.log(xis.shape[0]))


def _jackknife_se(values_fn, n_blocks: int) -> float:
    if n_blocks < 2:
        return float("nan")
    loo = np.array([values_fn(p) for p in range(n_blocks)])
    return float(np.sqrt((n_blocks - 1) / n_blocks * np.sum((loo - loo.mean()) ** 2)))


def direction_kl_bound(diagnostics, pair_size: int = 1) -> DirectionKlTerms:
    """Assemble the direction-variable KL terms from per-direction diagnostics.

    Requires at least two diagnostics, none flagged invalid. ``pair_size``
    declares the antithetic block structure so the jackknife respects the
    dependence inside each block.
    """
    diags = list(diagnostics)
    if len(diags) < 2:
        raise ValueError("need at least two direction diagnostics")
    if any(not g.valid for g in diags):
        raise ValueError("invalid directions must be filtered out by the caller")
    m = len(diags)
    if pair_size < 1 or m % pair_size != 0:
        raise ValueError("pair_size must evenly divide the number of diagnostics")
    xis = np.array([g.xi_elbo for g in diags])
    eps1 = np.array([g.eps1_bound for g in diags])

    log_moment = _log_moment(xis)
    eps1_sq_term = float(np.mean(eps1**2))
    cond_term = float(np.mean(eps1))

    n_blocks = m // pair_size
    mask = np.ones(m, dtype=bool)

    def _loo_log_moment(p):
        mask[p * pair_size:(p + 1) * pair_size] = False
        val = _log_moment(xis[mask])
        mask[p * pair_size:(p + 1) * pair_size] = True
        return val

    def _loo_eps1(p):
        mask[p * pair_size:(p + 1) * pair_size] = False
        sub = eps1[mask]
        mask[p * pair_size:(p + 1) * pair_size] = True
        return float(np.mean(sub**2) + np.mean(sub))

    return DirectionKlTerms(
        log_moment_term=log_moment,
        log_moment_term_se=_jackknife_se(_loo_log_moment, n_blocks),
        eps1_correction=eps1_sq_term + cond_term,
        eps1_correction_se=_jackknife_se(_loo_eps1, n_blocks),
        eps1_sq_term=eps1_sq_term,
        cond_term=cond_term,
    )


def approximate_bound_coefficient(d: int) -> float:
    """Dimension coefficient of the third-derivative-only certificate.

    2/(sqrt(3) sqrt(2d-1)) * Gamma((d+5)/2)/Gamma(d/2)
    + (1/9) * (Gamma((d+3)/2)/Gamma(d/2))^2, gamma ratios via log-gamma.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    g5 = math.exp(gammaln(0.5 * (d + 5)) - gammaln(0.5 * d))
    g3 = math.exp(gammaln(0.5 * (d + 3)) - gammaln(0.5 * d))
    return 2.0 / (math.sqrt(3.0) * math.sqrt(2.0 * d - 1.0)) * g5 + g3 * g3 / 9.0


def approximate_bound(mean_delta3_sq: float, d: int) -> float:
    """Third-derivative-only KL certificate: coefficient(d) * E[delta3^2]."""
    if mean_delta3_sq < 0:
        raise ValueError("mean_delta3_sq must be nonnegative")
    return mean_delta3_sq * approximate_bound_coefficient(d)


@dataclass(frozen=True)
class AuditConfig:
    """Settings for the end-to-end certificate pipeline."""

    n_directions: int = 256
    quadrature_nodes: int = 64
    seed: int = 0
    delta4_mode: str = "analytic"
    delta4_r_max: float | None = None
    bound_form: str = "both"
    boundary_term: str = "lemma"
    spotcheck_points: int = 32
    spotcheck_radius: float = 3.0
    map_tol: float = 1e-10
    map_max_iter: int = 500

    def validate(self) -> None:
        if self.n_directions < 2 or self.n_directions % 2 != 0:
            raise ValueError("n_directions must be an even integer >= 2")
        if self.quadrature_nodes < 16:
            raise ValueError("quadrature_nodes must be at least 16")
        if self.delta4_mode not in ("analytic", "grid"):
            raise ValueError("delta4_mode must be 'analytic' or 'grid'")
        if self.bound_form not in ("approx", "detailed", "both"):
            raise ValueError("bound_form must be 'approx', 'detailed' or 'both'")
        if self.boundary_term not in ("lemma", "derivation"):
            raise ValueError("boundary_term must be 'lemma' or 'derivation'")

    def to_json_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundReport:
    """Assembled certificate values with per-term breakdown and provenance."""

    d: int
    n_directions: int
    seed: int
    mean_delta3_sq: float
    se_delta3_sq: float
    approx_bound: float | None
    detailed_bound: float | None
    e_term: float | None
    e_term_se: float | None
    cond_term: float | None
    eps1_term: float | None
    eps1_correction_se: float | None
    invalid_directions: int
    delta4_mode_counts: dict
    spotcheck: dict
    fit_summary: dict
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "n_directions": self.n_directions,
            "mean_delta3_sq": self.mean_delta3_sq,
            "se_delta3_sq": self.se_delta3_sq,
            "approx_bound": self.approx_bound,
            "detailed_bound": self.detailed_bound,
            "term_breakdown": {
                "e_term": self.e_term,
                "cond_term": self.cond_term,
                "eps1_term": self.eps1_term,
            },
            "term_standard_errors": {
                "e_term_se": self.e_term_se,
                "eps1_correction_se": self.eps1_correction_se,
            },
            "invalid_directions": self.invalid_directions,
            "delta4_mode_counts": self.delta4_mode_counts,
            "spotcheck": self.spotcheck,
            "fit": self.fit_summary,
            "config": self.config,
            "seed": self.seed,
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_json_dict(), handle)
            handle.write("\n")


def audit(model: TargetModel, config: AuditConfig | None = None,
          fit: LaplaceFit | None = None) -> BoundReport:
    """Run the full certificate pipeline on one target.

    Mode search, Hessian factorization, curvature spot check, antithetic
    direction sampling, per-direction diagnostics, and assembly of the
    requested bound forms. Deterministic given the config seed; per-direction
    work is independent and reduced in fixed index order.

    Directions whose curvature floor is nonpositive are excluded from the
    detailed bound and counted in ``invalid_directions``; if every direction
    is invalid an AssumptionViolationError carries the partial report data.
    """
    config = config or AuditConfig()
    config.validate()
    if fit is None:
        fit = fit_laplace(model, tol=config.map_tol, max_iter=config.map_max_iter)
    spot = logconcavity_spotcheck(
        model, fit, config.spotcheck_points, config.spotcheck_radius, config.seed
    )
    d = model.dim
    need_detailed = config.bound_form in ("detailed", "both")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_DIR_STREAM,)))
    directions = sample_direction_pairs(d, config.n_directions // 2, rng)

    diags = []
    for e in directions:
        v = fit.sqrt_covariance @ e
        d3 = float(model.ray_derivatives(fit.theta_star, v, 0.0, max_order=3)[2])
        d4, d4_mode = _delta4_along(model, fit, v, config.delta4_mode, config.delta4_r_max)
        if d3 == 0.0 and d4 == 0.0:
            # ray is exactly quadratic: every diagnostic has its exact limit
            mc = radial_min_curvature(d)
            ckl, xi, valid = 0.0, 0.0, True
        else:
            mc = min_conditional_curvature(d, d3, d4, config.boundary_term)
            valid = mc > 0.0
            ckl = conditional_kl_bound(d, d3, d4, mc) if valid else float("nan")
            xi = float("nan")
            if need_detailed:
                try:
                    xi = _xi_elbo_along(fit, model, v, config.quadrature_nodes)
                except NonFiniteObjectiveError:
                    valid = False
        diags.append(
            DirectionDiagnostics(
                e=e,
                delta3=d3,
                delta4=d4,
                delta4_mode=d4_mode,
                min_curvature=mc,
                cond_kl_bound=ckl,
                xi_elbo=xi,
                eps1_bound=ckl,
                eps2_bound=eps2_bound(d, d4),
                valid=valid,
            )
        )

    delta3_sq = np.array([g.delta3 * g.delta3 for g in diags])
    pair_vals = delta3_sq[0::2]
    mean_delta3_sq = float(delta3_sq.mean())
    n_pairs = pair_vals.shape[0]
    se_delta3_sq = (
        float(np.std(pair_vals, ddof=1) / np.sqrt(n_pairs)) if n_pairs > 1 else float("nan")
    )

    approx = None
    if config.bound_form in ("approx", "both"):
        approx = approximate_bound(mean_delta3_sq, d)

    detailed = e_term = e_term_se = cond_term = eps1_term = eps1_se = None
    invalid = sum(1 for g in diags if not g.valid)
    mode_counts: dict = {}
    for g in diags:
        mode_counts[g.delta4_mode] = mode_counts.get(g.delta4_mode, 0) + 1
    if need_detailed:
        valid_diags = [g for g in diags if g.valid]
        if len(valid_diags) < 2:
            raise AssumptionViolationError(
                "all sampled directions fall outside the certificate's validity range",
                details={
                    "invalid_directions": invalid,
                    "n_directions": config.n_directions,
                    "mean_delta3_sq": mean_delta3_sq,
                },
            )
        pair_size = 2 if invalid == 0 else 1
        terms = direction_kl_bound(valid_diags, pair_size=pair_size)
        e_term = terms.log_moment_term
        e_term_se = terms.log_moment_term_se
        cond_term = terms.cond_term
        eps1_term = terms.eps1_sq_term
        eps1_se = terms.eps1_correction_se
        detailed = e_term + eps1_term + cond_term

    report = BoundReport(
        d=d,
        n_directions=config.n_directions,
        seed=config.seed,
        mean_delta3_sq=mean_delta3_sq,
        se_delta3_sq=se_delta3_sq,
        approx_bound=approx,
        detailed_bound=detailed,
        e_term=e_term,
        e_term_se=e_term_se,
        cond_term=cond_term,
        eps1_term=eps1_term,
        eps1_correction_se=eps1_se,
        invalid_directions=invalid,
        delta4_mode_counts=mode_counts,
        spotcheck={
            "n_points": spot.n_points,
            "radius_multiplier": spot.radius_multiplier,
            "n_failures": spot.n_failures,
            "min_eigenvalue": spot.min_eigenvalue,
        },
        fit_summary={
            "grad_norm": fit.grad_norm,
            "iterations": fit.iterations,
            "log_det_sigma": fit.log_det_covariance,
        },
        config=config.to_json_dict(),
    )
    for value in (report.mean_delta3_sq, report.approx_bound, report.detailed_bound):
        if value is not None and not np.isfinite(value):
            raise AssumptionViolationError(
                "non-finite value in assembled bound report",
                details={"report": report.to_json_dict()},
            )
    return report


@dataclass(frozen=True)
class LsiBound:
    """Strong-log-concavity KL bound estimate with its Monte-Carlo error."""

    value: float
    standard_error: float
    n_samples: int


def lsi_kl_bound(
    fit: LaplaceFit,
    model: TargetModel,
    beta: float,
    n_samples: int = 4096,
    seed: int = 0,
) -> LsiBound:
    """Direct KL bound for beta-strongly log-concave targets.

    (1/(2 beta)) E_g ||grad phi_f - grad phi_g||^2, estimated over draws from
    the fit. The caller asserts beta-strong convexity of the negative
    log-density; for the logistic posterior beta = sigma0^-2 holds globally.
    Practically loose, provided as the baseline the direction-based
    certificate improves on.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_LSI_STREAM,)))
    eta = rng.standard_normal((n_samples, fit.dim))
    thetas = fit.theta_star + eta @ fit.sqrt_covariance
    diff = model.gradient_many(thetas) - (thetas - fit.theta_star) @ fit.hessian_at_mode
    sq = np.einsum("ij,ij->i", diff, diff)
    value = float(sq.mean() / (2.0 * beta))
    se = float(np.std(sq, ddof=1) / np.sqrt(n_samples) / (2.0 * beta))
    return LsiBound(value=value, standard_error=se, n_samples=n_samples)
