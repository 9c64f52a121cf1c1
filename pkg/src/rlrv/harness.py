"""Ground-truth environments and learners used to generate traces.

The police-patrol MDP has states ``(t, loc)`` for ``t`` in ``0..n_shifts-1``
and three locations; state index is ``t * n_locations + loc`` and the action
is the location the car is sent to. Shift completion is stochastic: with
probability ``skip_probability / 2`` the patrol overruns and misses the next
shift (time advances by two), and with the same probability it ends early
and is reassigned within the same shift (time does not advance). The last
shift rolls over into the first shift of the next night. Rewards are drawn
once per ``(s, a, s')`` from ``reward_range`` and then kept fixed.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .estimation import Trace, TransitionRecord
from .mdp import Mdp, PolicyTable
from .timeliness import steady_state

LOCATIONS = ("docks", "slums", "station")
DOCKS, SLUMS, STATION = range(3)


@dataclass(frozen=True)
class PatrolConfig:
    n_shifts: int = 6
    locations: tuple[str, ...] = LOCATIONS
    reward_range: tuple[float, float] = (0.0, 3.0)
    skip_probability: float = 0.2
    discount: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_shifts < 1:
            raise ValueError("n_shifts must be positive")
        if len(self.locations) != 3:
            raise ValueError("the patrol use case has exactly three locations")
        lo, hi = self.reward_range
        if not 0.0 <= lo <= hi <= 3.0:
            raise ValueError("reward_range must lie within [0, 3]")
        if not 0.0 <= self.skip_probability <= 1.0:
            raise ValueError("skip_probability must lie in [0, 1]")

    @property
    def n_states(self) -> int:
        return self.n_shifts * len(self.locations)

    def state(self, t: int, loc: int) -> int:
        return t * len(self.locations) + loc

    def unpack(self, s: int) -> tuple[int, int]:
        return divmod(s, len(self.locations))


def build_patrol_mdp(cfg: PatrolConfig = PatrolConfig()) -> Mdp:
    n_loc = len(cfg.locations)
    n = cfg.n_states
    lo, hi = cfg.reward_range
    rng = np.random.default_rng(cfg.rng_seed)

    half = cfg.skip_probability / 2
    advance = {1: 1.0 - cfg.skip_probability, 2: half, 0: half}
    transition = np.zeros((n, n_loc, n))
    for s in range(n):
        t, _ = cfg.unpack(s)
        for a in range(n_loc):
            for dt, prob in advance.items():
                if prob > 0:
                    transition[s, a, cfg.state((t + dt) % cfg.n_shifts, a)] += prob
    # drawn once per (s, a, s') and frozen: deterministic but unknown to the monitors
    reward = rng.uniform(lo, hi, size=transition.shape)
    return Mdp(transition, reward, cfg.discount)


def schedule_policy(cfg: PatrolConfig = PatrolConfig()) -> PolicyTable:
    """Fixed schedule: slums for the first two shifts, station for the third, docks after."""
    actions = []
    for s in range(cfg.n_states):
        t, _ = cfg.unpack(s)
        actions.append(SLUMS if t <= 1 else STATION if t == 2 else DOCKS)
    return PolicyTable.deterministic(actions, len(cfg.locations))


def worst_policy(mdp: Mdp) -> PolicyTable:
    """Always patrol the location with the lowest expected immediate reward."""
    return PolicyTable.deterministic(np.argmin(mdp.expected_reward, axis=1), mdp.n_actions)


def random_mdp(n_states: int, n_actions: int, seed: int, discount: float = 0.9) -> Mdp:
    if n_states < 1 or n_actions < 1:
        raise ValueError("n_states and n_actions must be positive")
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # dirichlet rows can miss 1 by an ulp; renormalize
    transition /= transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_states))
    return Mdp(transition, reward, discount)


def _cumulative(rows: np.ndarray) -> list[list[float]]:
    cum = np.cumsum(rows, axis=-1)
    return cum.reshape(-1, rows.shape[-1]).tolist()


def _pick(cum: list[float], u: float) -> int:
    return min(bisect.bisect_right(cum, u), len(cum) - 1)


def run_policy(mdp: Mdp, policy: PolicyTable, n_transitions: int, seed: int,
               initial_state: int | None = None) -> Trace:
    """Sample ``n_transitions`` consecutive transitions under ``policy``."""
    if n_transitions < 1:
        raise ValueError("n_transitions must be at least 1")
    rng = np.random.default_rng(seed)
    n_s, n_a = mdp.n_states, mdp.n_actions
    s = int(rng.integers(n_s)) if initial_state is None else int(initial_state)
    u = rng.random((n_transitions, 2)).tolist()
    pi_cum = _cumulative(policy.probs)
    t_cum = _cumulative(mdp.transition)
    reward = mdp.reward
    records = []
    for step, (ua, us) in enumerate(u):
        a = _pick(pi_cum[s], ua)
        sp = _pick(t_cum[s * n_a + a], us)
        records.append(TransitionRecord(step, s, a, float(reward[s, a, sp]), sp))
        s = sp
    return Trace(n_s, n_a, records)


@dataclass(frozen=True)
class LearnerConfig:
    learning_rate: float
    discount: float
    initial_q: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        # alpha = 0 is allowed here: a frozen learner is a useful control run
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in [0, 1]")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")


def on_policy_pairs(mdp: Mdp, policy: PolicyTable) -> np.ndarray:
    """Pairs with ``p(s) pi(s,a) > 0`` under the true chain."""
    t_pi = np.einsum("ij,ijk->ik", policy.probs, mdp.transition)
    ss = steady_state(t_pi)
    return (ss.probs[:, None] * policy.probs) > 0


def td_evaluate(mdp: Mdp, policy: PolicyTable, learner: LearnerConfig, n_transitions: int,
                reference_q: np.ndarray, initial_state: int | None = None,
                pairs: np.ndarray | None = None) -> list[tuple[int, float, float]]:
    """On-policy TD evaluation of ``policy`` with one update per transition.

    Uses the expected-SARSA target ``r + gamma * sum_a' pi(s',a') Q(s',a')``.
    Returns ``(step, ||Q_k - Q_ref||, ||Q_k - Q_{k-1}||)`` rows for
    ``k = 0..n_transitions``, both sup-norms taken over ``pairs`` (default:
    pairs the policy keeps visiting in steady state).
    """
    rng = np.random.default_rng(learner.rng_seed)
    if pairs is None:
        pairs = on_policy_pairs(mdp, policy)
    q0 = learner.initial_q
    if q0 is None:
        q0 = float(mdp.reward.min()) / (1.0 - learner.discount)
    q = np.full((mdp.n_states, mdp.n_actions), q0)
    alpha, gamma = learner.learning_rate, learner.discount
    probs = policy.probs
    n_a = mdp.n_actions

    s = int(rng.integers(mdp.n_states)) if initial_state is None else int(initial_state)
    u = rng.random((n_transitions, 2)).tolist()
    pi_cum = _cumulative(probs)
    t_cum = _cumulative(mdp.transition)

    out = [(0, float(np.abs(q - reference_q)[pairs].max(initial=0.0)), 0.0)]
    for k, (ua, us) in enumerate(u, start=1):
        a = _pick(pi_cum[s], ua)
        sp = _pick(t_cum[s * n_a + a], us)
        target = mdp.reward[s, a, sp] + gamma * float(probs[sp] @ q[sp])
        change = alpha * (target - q[s, a])
        q[s, a] += change
        step_norm = abs(change) if pairs[s, a] else 0.0
        out.append((k, float(np.abs(q - reference_q)[pairs].max(initial=0.0)), float(step_norm)))
        s = sp
    return out


def first_sustained_below(series, eps: float) -> int | None:
    """First step from which the error column stays strictly below ``eps``."""
    first = None
    for step, delta, *_ in series:
        if delta < eps:
            if first is None:
                first = step
        else:
            first = None
    return first
