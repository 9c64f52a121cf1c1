"""Distance-to-optimum monitor.

The trace is split into a calibration part, used only to pick the estimated
optimal policy, and a validation part, used to score both that policy and
the monitored one. Bias-corrected confidence bounds on both values give
bounds on the optimality ratio ``eta(s) = V^pi(s) / V^pi*(s)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .checkpoints import checkpoint_steps
from .estimation import (EstimatedModel, NotApplicable, Trace, ValueUncertainty,
                         estimate_bias_cov)
from .mdp import PolicyTable, policy_iteration
from .quality import QualityThresholds
from .verdict import Status, Verdict


@dataclass(frozen=True)
class SplitConfig:
    calibration_fraction: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ValueError("calibration_fraction must lie in (0, 1)")


def split_trace(trace: Trace, cfg: SplitConfig = SplitConfig()) -> tuple[Trace, Trace]:
    """Uniform random partition without replacement; record order is kept.

    Every record gets a uniform key from a stream seeded by ``cfg.rng_seed``
    and the ``round(fraction * n)`` smallest keys form the calibration set.
    Keys depend only on the record position, so prefixes of the same trace
    are split consistently.
    """
    n = len(trace)
    if n < 2:
        raise ValueError("need at least two records to split")
    n_cal = int(round(cfg.calibration_fraction * n))
    if n_cal == 0 or n_cal == n:
        raise ValueError(f"degenerate split: {n_cal} calibration records out of {n}")
    keys = np.random.default_rng(cfg.rng_seed).random(n)
    mask = np.zeros(n, dtype=bool)
    mask[np.argsort(keys, kind="stable")[:n_cal]] = True
    cal = [r for r, m in zip(trace.records, mask) if m]
    val = [r for r, m in zip(trace.records, mask) if not m]
    return Trace(trace.n_states, trace.n_actions, cal), Trace(trace.n_states, trace.n_actions, val)


def estimate_optimal_policy(calibration: Trace | EstimatedModel, discount: float) -> PolicyTable:
    """Policy iteration on the plug-in MDP built from the calibration data.

    Every action of every observed state must have been tried at least once;
    otherwise the comparison between actions is meaningless.
    """
    model = calibration if isinstance(calibration, EstimatedModel) else EstimatedModel.from_trace(calibration)
    if model.n_records == 0:
        raise NotApplicable("calibration set is empty")
    full = PolicyTable.uniform(model.n_states, model.n_actions)
    missing = model.uncovered_pairs(full)
    if missing:
        raise NotApplicable(f"calibration set leaves {len(missing)} state-action pairs unvisited")
    return policy_iteration(model.to_mdp(discount))


@dataclass(frozen=True)
class OptimalityBounds:
    v_floor: np.ndarray
    v_ceil: np.ndarray
    vstar_floor: np.ndarray
    vstar_ceil: np.ndarray
    eta_lower: np.ndarray
    eta_upper: np.ndarray
    reachable: np.ndarray
    flagged: np.ndarray
    u_pi: ValueUncertainty | None = None
    u_star: ValueUncertainty | None = None

    @property
    def width(self) -> np.ndarray:
        return self.eta_upper - self.eta_lower


def value_bounds(u: ValueUncertainty, sigma_multiplier: float = 2.0):
    """``max(0, V_hat - bias -/+ k sigma)`` per state."""
    centre = u.v_hat - u.bias
    spread = sigma_multiplier * u.sigma
    return np.maximum(0.0, centre - spread), np.maximum(0.0, centre + spread)


def bounds_from_uncertainty(u_pi: ValueUncertainty, u_star: ValueUncertainty,
                            sigma_multiplier: float = 2.0) -> OptimalityBounds:
    v_lo, v_hi = value_bounds(u_pi, sigma_multiplier)
    s_lo, s_hi = value_bounds(u_star, sigma_multiplier)
    reachable = u_pi.reachable & u_star.reachable
    n = v_lo.size
    eta_lo = np.full(n, np.nan)
    eta_hi = np.full(n, np.nan)
    flagged = np.zeros(n, dtype=bool)
    for s in np.flatnonzero(reachable):
        if s_lo[s] > 0:
            eta_hi[s] = min(1.0, v_hi[s] / s_lo[s])
        else:
            eta_hi[s] = 1.0
        if s_hi[s] > 0:
            eta_lo[s] = min(v_lo[s] / s_hi[s], eta_hi[s])
        elif v_hi[s] == 0:
            eta_lo[s] = 1.0
        else:
            # optimum provably worthless but pi is not: no finite ratio exists
            flagged[s] = True
            eta_lo[s] = 0.0
    return OptimalityBounds(v_lo, v_hi, s_lo, s_hi, eta_lo, eta_hi, reachable, flagged,
                            u_pi, u_star)


def _check_rewards(trace: Trace):
    for rec in trace:
        if rec.reward < 0:
            raise ValueError(f"negative reward {rec.reward} at step {rec.step}; bounds need R >= 0")


def optimality_bounds(validation: Trace | EstimatedModel, policy: PolicyTable, pi_star_cal: PolicyTable,
                      discount: float, resamples: int = 500, seed: int = 0,
                      sigma_multiplier: float = 2.0) -> OptimalityBounds:
    if isinstance(validation, EstimatedModel):
        model = validation
        if model.reward_sum.size and any(r < 0 for tally in model.reward_samples.values() for r in tally):
            raise ValueError("negative reward observed; bounds need R >= 0")
    else:
        _check_rewards(validation)
        model = EstimatedModel.from_trace(validation)
    u_pi = estimate_bias_cov(model, policy, discount, resamples, seed)
    u_star = estimate_bias_cov(model, pi_star_cal, discount, resamples, seed)
    return bounds_from_uncertainty(u_pi, u_star, sigma_multiplier)


def verdict_from_bounds(bounds: OptimalityBounds, quality: QualityThresholds = QualityThresholds(),
                        eta_lower_min: float = 0.5, eta_upper_min: float = 0.7,
                        step: int | None = None) -> Verdict:
    cond_pi = quality.holds(bounds.u_pi) if bounds.u_pi is not None else True
    cond_star = quality.holds(bounds.u_star) if bounds.u_star is not None else True
    reach = bounds.reachable
    metrics = {
        "min_eta_lower": float(np.min(bounds.eta_lower[reach])) if reach.any() else math.nan,
        "min_eta_upper": float(np.min(bounds.eta_upper[reach])) if reach.any() else math.nan,
        "condition_pi": cond_pi,
        "condition_star": cond_star,
    }
    detail = {"eta_lower": bounds.eta_lower.tolist(), "eta_upper": bounds.eta_upper.tolist()}
    if not cond_pi or not cond_star:
        which = " and ".join(n for n, ok in (("V^pi", cond_pi), ("V^pi*", cond_star)) if not ok)
        return Verdict(Status.UNVERIFIED, checked_at_step=step,
                       reason=f"estimate quality condition not met on {which}",
                       metrics=metrics, detail=detail)
    if bounds.flagged[reach].any():
        bad = np.flatnonzero(bounds.flagged & reach).tolist()
        return Verdict(Status.UNVERIFIED, checked_at_step=step,
                       reason=f"zero upper bound on the optimum at states {bad}",
                       metrics=metrics, detail=detail)
    ok = bool(np.all(bounds.eta_lower[reach] >= eta_lower_min)
              and np.all(bounds.eta_upper[reach] >= eta_upper_min))
    return Verdict(Status.SATISFIED if ok else Status.VIOLATED, checked_at_step=step,
                   metrics=metrics, detail=detail)


@dataclass(frozen=True)
class OptimalityResult:
    verdict: Verdict
    bounds: OptimalityBounds | None = None
    pi_star_cal: PolicyTable | None = None


def _evaluate(trace: Trace, policy: PolicyTable, discount: float, eta_lower_min: float,
              eta_upper_min: float, quality: QualityThresholds, split: SplitConfig,
              resamples: int, seed: int, sigma_multiplier: float, step: int | None) -> OptimalityResult:
    if step is None:
        step = len(trace)
    try:
        _check_rewards(trace)
    except ValueError as exc:
        return OptimalityResult(Verdict.unverified(str(exc), step))
    try:
        cal, val = split_trace(trace, split)
    except ValueError as exc:
        return OptimalityResult(Verdict.unverified(str(exc), step))
    try:
        pi_star = estimate_optimal_policy(cal, discount)
        bounds = optimality_bounds(val, policy, pi_star, discount, resamples, seed, sigma_multiplier)
    except NotApplicable as exc:
        return OptimalityResult(Verdict.unverified(exc.reason, step))
    verdict = verdict_from_bounds(bounds, quality, eta_lower_min, eta_upper_min, step)
    return OptimalityResult(verdict, bounds, pi_star)


def check_optimality(trace: Trace, policy: PolicyTable, discount: float,
                     eta_lower_min: float = 0.5, eta_upper_min: float = 0.7,
                     quality: QualityThresholds = QualityThresholds(),
                     split: SplitConfig = SplitConfig(), resamples: int = 500, seed: int = 0,
                     sigma_multiplier: float = 2.0, step: int | None = None) -> Verdict:
    return _evaluate(trace, policy, discount, eta_lower_min, eta_upper_min, quality, split,
                     resamples, seed, sigma_multiplier, step).verdict


@dataclass(frozen=True)
class OptimalityPoint:
    step: int
    verdict: Verdict
    bounds: OptimalityBounds | None
    pi_star_cal: PolicyTable | None = None

    @property
    def status(self) -> Status:
        return self.verdict.status

    @property
    def condition(self) -> bool:
        m = self.verdict.metrics
        return bool(m.get("condition_pi") and m.get("condition_star"))


def optimality_series(trace: Trace, policy: PolicyTable, discount: float,
                      eta_lower_min: float = 0.5, eta_upper_min: float = 0.7,
                      quality: QualityThresholds = QualityThresholds(),
                      split: SplitConfig = SplitConfig(), check_every: int = 500,
                      resamples: int = 500, seed: int = 0, sigma_multiplier: float = 2.0,
                      steps: Iterable[int] | None = None) -> list[OptimalityPoint]:
    """Checkpointed replay; the calibration policy is re-derived at each checkpoint."""
    out = []
    for n in checkpoint_steps(len(trace), check_every, steps):
        res = _evaluate(trace.prefix(n), policy, discount, eta_lower_min, eta_upper_min, quality,
                        split, resamples, seed, sigma_multiplier, n)
        out.append(OptimalityPoint(n, res.verdict, res.bounds, res.pi_star_cal))
    return out


def eta_csv_rows(points: list[OptimalityPoint], n_states: int) -> tuple[list[str], list[list]]:
    header = ["step", "condition", "status"]
    header += [f"eta_lower_s{s}" for s in range(n_states)]
    header += [f"eta_upper_s{s}" for s in range(n_states)]
    rows = []
    for p in points:
        if p.bounds is None:
            lo = hi = [math.nan] * n_states
        else:
            lo, hi = p.bounds.eta_lower.tolist(), p.bounds.eta_upper.tolist()
        rows.append([p.step, p.condition, p.status.value] + lo + hi)
    return header, rows
