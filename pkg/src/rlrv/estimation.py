"""Streaming model reconstruction and value-uncertainty estimates.

An :class:`EstimatedModel` accumulates visit counts and reward samples from
``(s, a, r, s')`` records. Analysis functions never mutate a model; callers
that keep ingesting should hand them a :meth:`EstimatedModel.snapshot`.

Bias and covariance of the plug-in value estimate are obtained by a
parametric bootstrap: transition rows are redrawn from a Dirichlet posterior
around the observed counts, rewards are resampled with replacement from the
recorded samples, and each redraw is solved exactly.
"""
from __future__ import annotations

import copy
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .mdp import Mdp, PolicyTable, solve_value

MIN_RESAMPLES = 100
ZERO_VALUE = 1e-12


class InstrumentationFault(ValueError):
    """A record does not fit the declared state/action spaces."""


class NotApplicable(Exception):
    """The requested analysis has no meaning on the data seen so far."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class MissingDataError(NotApplicable):
    def __init__(self, pairs: Sequence[tuple[int, int]]):
        self.pairs = [(int(s), int(a)) for s, a in pairs]
        shown = ", ".join(f"({s},{a})" for s, a in self.pairs[:8])
        more = f" and {len(self.pairs) - 8} more" if len(self.pairs) > 8 else ""
        super().__init__(f"min N(s,a)=0: unvisited pairs {shown}{more}")


@dataclass(frozen=True, slots=True)
class TransitionRecord:
    step: int
    state: int
    action: int
    reward: float
    next_state: int
    episode_id: int | None = None


@dataclass
class Trace:
    """An ordered list of transition records over declared ``|S|`` and ``|A|``."""

    n_states: int
    n_actions: int
    records: list[TransitionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TransitionRecord]:
        return iter(self.records)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return Trace(self.n_states, self.n_actions, self.records[item])
        return self.records[item]

    def prefix(self, n: int) -> Trace:
        return Trace(self.n_states, self.n_actions, self.records[:n])

    def validate(self):
        for i, rec in enumerate(self.records):
            _check_record(rec, self.n_states, self.n_actions, where=f"record {i}")


def _check_record(rec: TransitionRecord, n_states: int, n_actions: int, where: str = "record"):
    if not (0 <= rec.state < n_states and 0 <= rec.next_state < n_states):
        raise InstrumentationFault(f"{where}: state index out of range [0, {n_states})")
    if not 0 <= rec.action < n_actions:
        raise InstrumentationFault(f"{where}: action index out of range [0, {n_actions})")
    if not np.isfinite(rec.reward):
        raise InstrumentationFault(f"{where}: reward is not finite")


class EstimatedModel:
    """Visit counts ``N(s,a,s')`` with the derived estimates ``T_hat`` and ``R_hat``."""

    def __init__(self, n_states: int, n_actions: int):
        if n_states < 1 or n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        self.n_states = n_states
        self.n_actions = n_actions
        self.visits = np.zeros((n_states, n_actions, n_states), dtype=np.int64)
        self.reward_sum = np.zeros((n_states, n_actions, n_states))
        self.reward_samples: dict[tuple[int, int, int], Counter] = {}
        self.seen = np.zeros(n_states, dtype=bool)
        self.n_records = 0
        self.last_step: int | None = None

    @classmethod
    def from_trace(cls, trace: Trace | Iterable[TransitionRecord], n_states: int | None = None,
                   n_actions: int | None = None) -> EstimatedModel:
        if isinstance(trace, Trace):
            n_states, n_actions = trace.n_states, trace.n_actions
        model = cls(n_states, n_actions)
        model.ingest_many(trace)
        return model

    @classmethod
    def from_counts(cls, visits: np.ndarray, reward: np.ndarray) -> EstimatedModel:
        """Synthetic model with the given counts and one deterministic reward per triple."""
        visits = np.asarray(visits, dtype=np.int64)
        reward = np.asarray(reward, dtype=float)
        model = cls(visits.shape[0], visits.shape[1])
        model.visits = visits.copy()
        model.reward_sum = visits * reward
        for s, a, sp in zip(*np.nonzero(visits)):
            model.reward_samples[(s, a, sp)] = Counter({float(reward[s, a, sp]): int(visits[s, a, sp])})
        model.seen = (visits.sum(axis=(1, 2)) > 0) | (visits.sum(axis=(0, 1)) > 0)
        model.n_records = int(visits.sum())
        return model

    def ingest(self, record: TransitionRecord) -> EstimatedModel:
        _check_record(record, self.n_states, self.n_actions)
        s, a, sp = record.state, record.action, record.next_state
        r = float(record.reward)
        self.visits[s, a, sp] += 1
        self.reward_sum[s, a, sp] += r
        self.reward_samples.setdefault((s, a, sp), Counter())[r] += 1
        self.seen[s] = self.seen[sp] = True
        self.n_records += 1
        self.last_step = record.step
        return self

    def ingest_many(self, records: Iterable[TransitionRecord]) -> EstimatedModel:
        for rec in records:
            self.ingest(rec)
        return self

    def snapshot(self) -> EstimatedModel:
        return copy.deepcopy(self)

    @property
    def counts(self) -> np.ndarray:
        """``N(s, a)``."""
        return self.visits.sum(axis=2)

    @property
    def min_visit(self) -> int:
        return int(self.counts.min())

    @property
    def t_hat(self) -> np.ndarray:
        """Empirical transition tensor; rows of unvisited pairs are all zero."""
        n = self.counts[..., None]
        return np.divide(self.visits, n, out=np.zeros(self.visits.shape), where=n > 0)

    @property
    def r_hat(self) -> np.ndarray:
        """Mean observed reward per triple; zero where the triple was never seen."""
        return np.divide(self.reward_sum, self.visits, out=np.zeros(self.visits.shape),
                         where=self.visits > 0)

    def filled_reward(self) -> np.ndarray:
        """``r_hat`` with unseen triples set to the mean reward of their (s, a) pair."""
        r = self.r_hat
        n = self.counts
        pair_mean = np.divide(self.reward_sum.sum(axis=2), n, out=np.zeros(n.shape), where=n > 0)
        return np.where(self.visits > 0, r, pair_mean[..., None])

    def required_pairs(self, policy: PolicyTable) -> np.ndarray:
        """Boolean ``(S, A)`` mask of pairs the policy can use from observed states."""
        _check_policy(self, policy)
        return (policy.probs > 0) & self.seen[:, None]

    def uncovered_pairs(self, policy: PolicyTable) -> list[tuple[int, int]]:
        missing = self.required_pairs(policy) & (self.counts == 0)
        return [(int(s), int(a)) for s, a in zip(*np.nonzero(missing))]

    def to_mdp(self, discount: float) -> Mdp:
        """Plug-in MDP; unvisited pairs become zero-reward self-loops."""
        t = self.t_hat
        unvisited = self.counts == 0
        for s, a in zip(*np.nonzero(unvisited)):
            t[s, a, s] = 1.0
        return Mdp(t, self.filled_reward(), discount)


def _check_policy(model: EstimatedModel, policy: PolicyTable):
    if policy.probs.shape != (model.n_states, model.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match model ({model.n_states}, {model.n_actions})"
        )


def estimate_policy(trace: Trace) -> PolicyTable:
    """Action frequencies per state; unvisited states get a uniform row.

    Fallback for systems whose policy cannot be queried directly.
    """
    freq = np.zeros((trace.n_states, trace.n_actions))
    for rec in trace:
        freq[rec.state, rec.action] += 1
    totals = freq.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0, freq / np.where(totals > 0, totals, 1), 1.0 / trace.n_actions)
    return PolicyTable(probs)


def on_policy_projection(model: EstimatedModel, policy: PolicyTable):
    """``(T_hat^pi, R_hat^pi)`` over all states.

    States never observed get a zero-reward self-loop; no observed state can
    reach them.
    """
    missing = model.uncovered_pairs(policy)
    if missing:
        raise MissingDataError(missing)
    t = model.t_hat
    r = model.filled_reward()
    t_pi = np.einsum("ij,ijk->ik", policy.probs, t)
    r_pi = np.einsum("ij,ijk,ijk->i", policy.probs, t, r)
    for s in np.flatnonzero(~model.seen):
        t_pi[s] = 0.0
        t_pi[s, s] = 1.0
        r_pi[s] = 0.0
    return t_pi, r_pi


def estimate_value(model: EstimatedModel, policy: PolicyTable, discount: float) -> np.ndarray:
    """Plug-in value ``V_hat^pi``; NaN for states absent from the trace."""
    t_pi, r_pi = on_policy_projection(model, policy)
    v = solve_value(t_pi, r_pi, discount)
    v[~model.seen] = np.nan
    return v


@dataclass(frozen=True)
class ValueUncertainty:
    v_hat: np.ndarray
    bias: np.ndarray
    cov: np.ndarray
    bias_rel: np.ndarray
    sigma_rel: np.ndarray
    sample_count: int
    reachable: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def worst_bias(self) -> tuple[int, float]:
        return _masked_argmax(self.bias_rel, self.reachable)

    def worst_sigma(self) -> tuple[int, float]:
        return _masked_argmax(self.sigma_rel, self.reachable)


def _masked_argmax(values: np.ndarray, mask: np.ndarray) -> tuple[int, float]:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return -1, float("nan")
    best = idx[np.argmax(values[idx])]
    return int(best), float(values[best])


def relative(numerator: np.ndarray, v_hat: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    """``|numerator| / |v_hat|`` with the zero-value convention.

    Where ``|v_hat|`` is below 1e-12 the ratio is +inf if ``numerator`` or
    ``other`` is nonzero there, and 0 if both vanish.
    """
    num = np.abs(numerator)
    den = np.abs(v_hat)
    zero = den < ZERO_VALUE
    out = np.divide(num, den, out=np.zeros_like(num, dtype=float), where=~zero)
    informative = num > 0
    if other is not None:
        informative = informative | (np.abs(other) > 0)
    out[zero & informative] = np.inf
    return out


def _draw_rewards(model: EstimatedModel, r_fill: np.ndarray, rows, cols, resamples: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Bootstrap reward tensors of shape ``(K, n_rows, n_obs)``.

    ``rows`` are the active (s, a) pairs and ``cols`` the observed next
    states. Triples whose samples are all equal keep their mean.
    """
    base = r_fill[rows[:, 0], rows[:, 1]][:, cols]
    draws = np.broadcast_to(base, (resamples,) + base.shape).copy()
    col_pos = {int(c): j for j, c in enumerate(cols)}
    for i, (s, a) in enumerate(rows):
        for sp, j in col_pos.items():
            tally = model.reward_samples.get((int(s), int(a), sp))
            if tally is None or len(tally) < 2:
                continue
            values = np.fromiter(tally.keys(), dtype=float)
            weights = np.fromiter(tally.values(), dtype=float)
            n = int(weights.sum())
            picks = rng.multinomial(n, weights / n, size=resamples)
            draws[:, i, j] = picks @ values / n
    return draws


def _project_rows(t_rows: np.ndarray, weights: np.ndarray, src: np.ndarray, m: int) -> np.ndarray:
    out = np.zeros((m, t_rows.shape[1]))
    np.add.at(out, src, weights[:, None] * t_rows)
    return out


def estimate_bias_cov(model: EstimatedModel, policy: PolicyTable, discount: float,
                      resamples: int = 500, rng_seed: int = 0,
                      kappa: float | None = None) -> ValueUncertainty:
    """Bootstrap bias and covariance of the plug-in value estimate.

    Each resample draws every active transition row from
    ``Dirichlet(N(s,a,.) + kappa)`` restricted to observed states (``kappa``
    defaults to ``1/|S|``), resamples rewards, and solves the value system.
    ``bias = mean(V_k) - V_hat`` and ``cov`` is the sample covariance.
    The mean uses a first-order control variate, so it converges much faster
    in ``resamples`` than the raw average while estimating the same quantity.
    """
    if resamples < MIN_RESAMPLES:
        raise ValueError(f"resamples must be at least {MIN_RESAMPLES}, got {resamples}")
    missing = model.uncovered_pairs(policy)
    if missing:
        raise MissingDataError(missing)
    if kappa is None:
        kappa = 1.0 / model.n_states
    rng = np.random.default_rng(rng_seed)

    v_hat = estimate_value(model, policy, discount)
    obs = np.flatnonzero(model.seen)
    pos = np.full(model.n_states, -1)
    pos[obs] = np.arange(obs.size)

    active = model.required_pairs(policy)
    rows = np.argwhere(active)
    weights = policy.probs[rows[:, 0], rows[:, 1]]
    src = pos[rows[:, 0]]

    alpha = model.visits[rows[:, 0], rows[:, 1]][:, obs] + kappa
    gam = rng.standard_gamma(np.broadcast_to(alpha, (resamples,) + alpha.shape))
    t_draw = gam / gam.sum(axis=2, keepdims=True)
    r_draw = _draw_rewards(model, model.filled_reward(), rows, obs, resamples, rng)

    m = obs.size
    t_pi = np.zeros((resamples, m, m))
    r_pi = np.zeros((resamples, m))
    np.add.at(t_pi, (slice(None), src), weights[:, None] * t_draw)
    np.add.at(r_pi, (slice(None), src), weights * np.sum(t_draw * r_draw, axis=2))
    v_draw = solve_value(t_pi, r_pi, discount)

    # Control variate: the first-order response of V to each redraw has a known
    # bootstrap mean, so subtracting it leaves only the second-order remainder
    # to be averaged. The expectation of the estimate is unchanged.
    t_rows = model.t_hat[rows[:, 0], rows[:, 1]][:, obs]
    r_rows = model.filled_reward()[rows[:, 0], rows[:, 1]][:, obs]
    v_obs = v_hat[obs]
    lookahead = r_rows + discount * v_obs[None, :]
    t_mean = alpha / alpha.sum(axis=1, keepdims=True)
    lhs = np.eye(m) - discount * _project_rows(t_rows, weights, src, m)
    g_draw = np.zeros((resamples, m))
    np.add.at(g_draw, (slice(None), src),
              weights * (np.sum((t_draw - t_rows) * lookahead, axis=2)
                         + np.sum(t_rows * (r_draw - r_rows), axis=2)))
    g_mean = np.zeros(m)
    np.add.at(g_mean, src, weights * np.sum((t_mean - t_rows) * lookahead, axis=1))
    lin_draw = np.linalg.solve(lhs, g_draw.T).T
    lin_mean = np.linalg.solve(lhs, g_mean)

    n = model.n_states
    bias = np.full(n, np.nan)
    cov = np.full((n, n), np.nan)
    bias[obs] = (v_draw - lin_draw).mean(axis=0) - v_obs + lin_mean
    sub = np.cov(v_draw, rowvar=False, ddof=1).reshape(m, m)
    cov[np.ix_(obs, obs)] = (sub + sub.T) / 2
    sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    bias_rel = np.full(n, np.nan)
    sigma_rel = np.full(n, np.nan)
    bias_rel[obs] = relative(bias[obs], v_hat[obs], sigma[obs])
    sigma_rel[obs] = relative(sigma[obs], v_hat[obs], bias[obs])
    return ValueUncertainty(v_hat=v_hat, bias=bias, cov=cov, bias_rel=bias_rel,
                            sigma_rel=sigma_rel, sample_count=resamples, reachable=model.seen.copy())
