"""Trace post-processing.

Ergodic averages, consensus/objective errors, broadcast accounting, decay
rate fits, and a computable certificate for the ergodic O(1/t) bound that
the always-valid threshold budget implies for summable schedules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import trigger as trig
from .engine import RunConfig, RunTrace
from .graph import check_stepsize_composite, jacobi_eigh, laplacian, laplacian_quadratic_norm
from .objective import CompositeObjective
from .reference import ReferenceSolution, dual_from_reference

CERTIFICATE_MAX_NODES = 64
_ZERO_EIG_RTOL = 1e-9


class CertificateError(ValueError):
    """Certificate preconditions not met."""


def ergodic_average(trace: RunTrace, t: int) -> np.ndarray:
    """Mean of the primal stack over rounds 1..t."""
    if not (1 <= t <= trace.completed_rounds):
        raise ValueError(f"t must be in 1..{trace.completed_rounds}, got {t}")
    return trace.ergodic_sum_at(t) / t


def consensus_error(lap: np.ndarray, v: np.ndarray) -> float:
    """Laplacian seminorm sqrt(sum_coord v^T L v); zero iff all rows agree."""
    return laplacian_quadratic_norm(lap, np.asarray(v, dtype=np.float64))


def signed_objective_gap(objective: CompositeObjective, v: np.ndarray, f_star: float) -> float:
    return objective.stacked_value(v) - f_star


def objective_gap(objective: CompositeObjective, v: np.ndarray, f_star: float) -> float:
    """|F(v) - F*| with agent i's block evaluated in its own objective."""
    return abs(signed_objective_gap(objective, v, f_star))


def primal_residual(trace: RunTrace, k: int, x_star: np.ndarray) -> float:
    """Frobenius distance to the replicated minimizer, relative to round 0."""
    x_star = np.asarray(x_star, dtype=np.float64)
    x0 = trace.x_at(0)
    denom = float(np.linalg.norm(x0 - x_star[None, :]))
    if denom == 0.0:
        raise ValueError("round-0 iterate coincides with the minimizer; residual undefined")
    num = float(np.linalg.norm(trace.x_at(k) - x_star[None, :]))
    return num / denom


@dataclass
class BroadcastSummary:
    totals: np.ndarray      # per-agent broadcast counts, round 0 included
    cumulative: np.ndarray  # (rounds+1, n) running counts per agent


def broadcast_summary(trace: RunTrace) -> BroadcastSummary:
    flags = trace.broadcast_matrix()
    cumulative = np.cumsum(flags.astype(np.int64), axis=0)
    return BroadcastSummary(totals=cumulative[-1].copy(), cumulative=cumulative)


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float


def rate_fit(series, model: str = "loglog") -> RateFit:
    """Least-squares decay fit over (t, value) pairs.

    "loglog" fits log v against log t (power laws); "semilog" fits log v
    against t (geometric decay). Values must be positive; at least 10 points
    are required.
    """
    pairs = [(float(t), float(v)) for t, v in series]
    if len(pairs) < 10:
        raise ValueError(f"need at least 10 points, got {len(pairs)}")
    ts = np.array([p[0] for p in pairs])
    vs = np.array([p[1] for p in pairs])
    if np.any(vs <= 0.0):
        raise ValueError("rate fit requires positive values")
    if model == "loglog":
        if np.any(ts <= 0.0):
            raise ValueError("loglog fit requires positive t")
        xs = np.log(ts)
    elif model == "semilog":
        xs = ts
    else:
        raise ValueError(f"model must be 'loglog' or 'semilog', got {model!r}")
    ys = np.log(vs)
    x_mean, y_mean = xs.mean(), ys.mean()
    var = float(np.sum((xs - x_mean) ** 2))
    if var == 0.0:
        raise ValueError("degenerate fit: all t identical")
    slope = float(np.sum((xs - x_mean) * (ys - y_mean))) / var
    intercept = y_mean - slope * x_mean
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - y_mean) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateFit(slope=slope, intercept=intercept, r_squared=r_squared)


@dataclass
class ErgodicRateCertificate:
    """Computable O(1/t) bound for ergodic consensus and objective errors.

    `trigger_gain` multiplies the threshold budget, `residual_gain` lower
    bounds the residual curvature, `error_budget[i]` is the accumulated
    triggering contribution at t_values[i], and `dual_radius` is the free
    constant that must exceed the optimal dual norm.
    """

    trigger_gain: float
    residual_gain: float
    dual_radius: float
    dual_norm: float
    start_distance: float      # weighted distance of the start point to the optimum
    coupling_norm: float       # norm of L (beta L + 11^T/n)^{-1}
    t_values: np.ndarray
    error_budget: np.ndarray
    consensus_bound: np.ndarray
    consensus_measured: np.ndarray
    objective_upper: np.ndarray
    objective_lower: np.ndarray
    objective_measured: np.ndarray

    @property
    def consensus_ok(self) -> bool:
        return bool(np.all(self.consensus_measured <= self.consensus_bound))

    @property
    def objective_ok(self) -> bool:
        return bool(
            np.all(self.objective_measured <= self.objective_upper)
            and np.all(self.objective_measured >= self.objective_lower)
        )

    def to_text(self) -> str:
        lines = [
            f"trigger_gain {self.trigger_gain:.17g}",
            f"residual_gain {self.residual_gain:.17g}",
            f"dual_radius {self.dual_radius:.17g}",
            f"dual_norm {self.dual_norm:.17g}",
            f"start_distance {self.start_distance:.17g}",
            f"coupling_norm {self.coupling_norm:.17g}",
            f"rounds_checked {len(self.t_values)}",
            f"consensus_bound_holds {int(self.consensus_ok)}",
            f"objective_bounds_hold {int(self.objective_ok)}",
        ]
        return "\n".join(lines) + "\n"


def _least_norm_dual_norm(eigvals, eigvecs, z_star: np.ndarray) -> float:
    """Norm of the least-norm y solving (sqrt L) y = z, per coordinate, from
    the Laplacian eigendecomposition."""
    lam_max = float(eigvals[-1])
    positive = eigvals > _ZERO_EIG_RTOL * max(lam_max, 1.0)
    coeffs = eigvecs.T @ z_star  # (n, m): rows are eigen-coefficients
    total = 0.0
    for i in np.nonzero(positive)[0]:
        total += float(coeffs[i] @ coeffs[i]) / float(eigvals[i])
    return float(np.sqrt(total))


def ergodic_rate_certificate(
    config: RunConfig,
    trace: RunTrace,
    reference: ReferenceSolution,
    dual_radius: Optional[float] = None,
) -> ErgodicRateCertificate:
    """Evaluate the ergodic error bounds at every stored round and compare
    them with the measured trajectory.

    Requires: a summable schedule, zero initial duals, a certified
    reference, a positive stepsize margin, strictly positive smooth
    curvature bounds, at most 64 nodes, and dual_radius above the optimal
    dual norm (None picks twice the norm plus a unit of slack).
    """
    g, obj = config.graph, config.objective
    n = g.n
    if n > CERTIFICATE_MAX_NODES:
        raise CertificateError(f"certificate supports up to {CERTIFICATE_MAX_NODES} nodes, got {n}")
    if not config.schedule.is_summable:
        raise CertificateError("certificate requires a summable threshold schedule")
    if not trace.initial_dual_is_zero:
        raise CertificateError("certificate requires zero initial dual variables")
    if not reference.certified:
        raise CertificateError("reference solution is not certified to its tolerance")
    lf = obj.lipschitz()
    if np.any(lf <= 0.0):
        raise CertificateError("certificate requires positive smooth curvature for every agent")

    lap = laplacian(g)
    check = check_stepsize_composite(config.eta, config.beta, lap, lf)
    if not check.ok:
        raise CertificateError(f"stepsize margin is not positive ({check.margin:.3e})")

    eigvals, eigvecs = jacobi_eigh(lap)
    lam_max = float(eigvals[-1])
    positive = eigvals > _ZERO_EIG_RTOL * max(lam_max, 1.0)
    if int(np.sum(~positive)) != 1:
        raise CertificateError("graph Laplacian must have a single zero eigenvalue (connected)")

    z_star = dual_from_reference(obj, reference.x_star)
    dual_norm = _least_norm_dual_norm(eigvals, eigvecs, z_star)
    if dual_radius is None:
        dual_radius = 2.0 * (dual_norm + 1.0)
    if not dual_radius > dual_norm:
        raise CertificateError(
            f"dual_radius must exceed the optimal dual norm {dual_norm:.6g}, got {dual_radius}"
        )

    # Spectrum of beta*L + 11^T/n: 1 on the all-ones line, beta*lambda elsewhere.
    coupling_max = max(1.0, config.beta * lam_max)
    coupling_norm = float(np.max(eigvals[positive] / (config.beta * eigvals[positive])))
    trigger_gain = max(2.0 * config.beta * lam_max, 1.0)
    residual_gain = min(float(np.min(lf)), 1.0 / coupling_max)

    x0 = trace.x_at(0)
    diff0 = x0 - reference.x_star[None, :]
    p_mat = np.diag(config.eta) - config.beta * lap
    start_distance = float(np.sqrt(max(np.sum(diff0 * (p_mat @ diff0)), 0.0)))

    t_values = np.array([k for k in trace.stored_rounds() if k >= 1], dtype=np.int64)
    if t_values.size == 0:
        raise CertificateError("trace holds no post-start snapshots to certify")

    # Threshold budget: cumulative network-wide envelope sums through t-1.
    max_t = int(t_values[-1])
    envelope = np.array(
        [trig.max_threshold_envelope(config.schedule, n, k) for k in range(max_t)]
    )
    cum_env = np.cumsum(envelope)
    budget = (2.0 * trigger_gain * np.sqrt(n) / residual_gain) * cum_env[t_values - 1]

    numerator = (
        start_distance + dual_radius * coupling_norm + np.sqrt(2.0 * residual_gain) * budget
    ) ** 2
    margin = dual_radius - dual_norm
    consensus_bound = numerator / (2.0 * t_values * margin)
    objective_upper = numerator / (2.0 * t_values)
    objective_lower = -dual_norm * numerator / (2.0 * t_values * margin)

    consensus_measured = np.empty(t_values.shape)
    objective_measured = np.empty(t_values.shape)
    for idx, t in enumerate(t_values):
        avg = ergodic_average(trace, int(t))
        consensus_measured[idx] = consensus_error(lap, avg)
        objective_measured[idx] = signed_objective_gap(obj, avg, reference.f_star)

    return ErgodicRateCertificate(
        trigger_gain=trigger_gain,
        residual_gain=residual_gain,
        dual_radius=float(dual_radius),
        dual_norm=dual_norm,
        start_distance=start_distance,
        coupling_norm=coupling_norm,
        t_values=t_values,
        error_budget=budget,
        consensus_bound=consensus_bound,
        consensus_measured=consensus_measured,
        objective_upper=objective_upper,
        objective_lower=objective_lower,
        objective_measured=objective_measured,
    )
