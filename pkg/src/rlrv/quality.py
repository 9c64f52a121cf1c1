"""Quality-of-learning monitor.

The property holds when, for every observed state, the relative bias and
relative standard deviation of the value estimate are below their
thresholds. Before every policy-usable (s, a) pair has been visited the
estimates do not exist and the verdict is Unverified.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .checkpoints import checkpoint_steps
from .estimation import EstimatedModel, NotApplicable, Trace, ValueUncertainty, estimate_bias_cov
from .mdp import PolicyTable
from .verdict import Status, Verdict


@dataclass(frozen=True)
class QualityThresholds:
    max_bias_rel: float = 0.05
    max_sigma_rel: float = 0.02

    def __post_init__(self):
        if self.max_bias_rel <= 0 or self.max_sigma_rel <= 0:
            raise ValueError("quality thresholds must be strictly positive")

    def holds(self, u: ValueUncertainty) -> bool:
        _, b = u.worst_bias()
        _, s = u.worst_sigma()
        return bool(b < self.max_bias_rel and s < self.max_sigma_rel)


def verdict_from_uncertainty(u: ValueUncertainty, thresholds: QualityThresholds,
                             step: int | None = None) -> Verdict:
    worst_b = u.worst_bias()
    worst_s = u.worst_sigma()
    ok = worst_b[1] < thresholds.max_bias_rel and worst_s[1] < thresholds.max_sigma_rel
    return Verdict(
        Status.SATISFIED if ok else Status.VIOLATED,
        checked_at_step=step,
        worst_state_bias=worst_b,
        worst_state_sigma=worst_s,
        metrics={"max_bias_rel": worst_b[1], "max_sigma_rel": worst_s[1]},
        detail={"bias_rel": u.bias_rel.tolist(), "sigma_rel": u.sigma_rel.tolist(),
                "v_hat": u.v_hat.tolist()},
    )


def check_quality(model: EstimatedModel, policy: PolicyTable, discount: float,
                  thresholds: QualityThresholds = QualityThresholds(), resamples: int = 500,
                  seed: int = 0, step: int | None = None) -> Verdict:
    if step is None:
        step = model.n_records
    if model.n_records == 0:
        return Verdict.unverified("min N(s,a)=0: no transitions observed", step)
    try:
        u = estimate_bias_cov(model, policy, discount, resamples, seed)
    except NotApplicable as exc:
        return Verdict.unverified(exc.reason, step)
    return verdict_from_uncertainty(u, thresholds, step)


@dataclass(frozen=True)
class QualityPoint:
    step: int
    verdict: Verdict
    max_bias_rel: float
    max_sigma_rel: float

    @property
    def status(self) -> Status:
        return self.verdict.status

    def csv_row(self) -> list:
        return [self.step, self.max_bias_rel, self.max_sigma_rel, self.status.value]


CSV_HEADER = ["step", "max_bias_rel", "max_sigma_rel", "status"]


def quality_series(trace: Trace, policy: PolicyTable, discount: float,
                   thresholds: QualityThresholds = QualityThresholds(), check_every: int = 500,
                   resamples: int = 500, seed: int = 0,
                   steps: Iterable[int] | None = None) -> list[QualityPoint]:
    """Replay ``trace`` and check the property at every checkpoint.

    Each checkpoint is evaluated from scratch on the prefix seen so far.
    """
    model = EstimatedModel(trace.n_states, trace.n_actions)
    out = []
    done = 0
    for n in checkpoint_steps(len(trace), check_every, steps):
        model.ingest_many(trace.records[done:n])
        done = n
        verdict = check_quality(model, policy, discount, thresholds, resamples, seed, step=n)
        out.append(QualityPoint(n, verdict, verdict.metrics.get("max_bias_rel", np.nan),
                                verdict.metrics.get("max_sigma_rel", np.nan)))
    return out


def first_satisfied(series: list[QualityPoint]) -> int | None:
    for point in series:
        if point.status is Status.SATISFIED:
            return point.step
    return None


def rolling_median(values, window: int = 5) -> np.ndarray:
    """Median over each full window of ``window`` consecutive values."""
    x = np.asarray(values, dtype=float)
    if x.size < window:
        return np.array([np.median(x)]) if x.size else x
    return np.median(np.lib.stride_tricks.sliding_window_view(x, window), axis=1)
