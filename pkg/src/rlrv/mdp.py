"""Exact finite-MDP mathematics.

Transition and reward tensors are indexed ``[state, action, next_state]``.
Values are plain numpy arrays: ``V`` has shape ``(S,)`` and ``Q`` has shape
``(S, A)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROW_TOL = 1e-9


@dataclass(frozen=True)
class Mdp:
    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {t.shape}")
        if r.shape != t.shape:
            raise ValueError(f"reward shape {r.shape} does not match transition {t.shape}")
        if np.any(t < 0) or not np.allclose(t.sum(axis=2), 1.0, atol=ROW_TOL, rtol=0):
            raise ValueError("transition rows must be probability distributions")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward entries must be finite")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        t.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def expected_reward(self) -> np.ndarray:
        """E[r | s, a] as an ``(S, A)`` array."""
        return np.einsum("ijk,ijk->ij", self.transition, self.reward)


@dataclass(frozen=True)
class PolicyTable:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise ValueError(f"policy must be a (S, A) matrix, got shape {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("policy entries must lie in [0, 1]")
        if not np.allclose(p.sum(axis=1), 1.0, atol=ROW_TOL, rtol=0):
            raise ValueError("policy rows must sum to 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> PolicyTable:
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> PolicyTable:
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    def __eq__(self, other):
        if not isinstance(other, PolicyTable):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.array_equal(self.probs, other.probs))

    __hash__ = None


def _check_compatible(mdp: Mdp, policy: PolicyTable):
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )


def project(transition: np.ndarray, reward: np.ndarray, probs: np.ndarray):
    """Policy-induced chain ``T^pi(s, s')`` and expected one-step reward ``R^pi(s)``."""
    t_pi = np.einsum("ij,ijk->ik", probs, transition)
    r_pi = np.einsum("ij,ijk,ijk->i", probs, transition, reward)
    return t_pi, r_pi


def solve_value(t_pi: np.ndarray, r_pi: np.ndarray, discount: float) -> np.ndarray:
    """Solve ``V = r + discount * T V`` by dense factorization.

    Works on stacked systems too: ``t_pi`` of shape ``(..., S, S)`` and
    ``r_pi`` of shape ``(..., S)``. A singular system raises
    ``numpy.linalg.LinAlgError``; it can only happen if ``t_pi`` is not
    stochastic or ``discount >= 1``.
    """
    n = t_pi.shape[-1]
    lhs = np.eye(n) - discount * t_pi
    return np.linalg.solve(lhs, r_pi[..., None])[..., 0]


def value_of_policy(mdp: Mdp, policy: PolicyTable) -> np.ndarray:
    _check_compatible(mdp, policy)
    t_pi, r_pi = project(mdp.transition, mdp.reward, policy.probs)
    return solve_value(t_pi, r_pi, mdp.discount)


def q_from_value(mdp: Mdp, value: np.ndarray) -> np.ndarray:
    """One-step lookahead ``Q(s,a) = sum_s' T(s,a,s') [R(s,a,s') + gamma V(s')]``."""
    return mdp.expected_reward + mdp.discount * mdp.transition @ value


def action_value_of_policy(mdp: Mdp, policy: PolicyTable) -> np.ndarray:
    return q_from_value(mdp, value_of_policy(mdp, policy))


def greedy(q: np.ndarray) -> PolicyTable:
    """One-hot argmax policy; ties go to the lowest action index."""
    return PolicyTable.deterministic(np.argmax(q, axis=1), q.shape[1])


def policy_improvement(mdp: Mdp, value: np.ndarray) -> PolicyTable:
    return greedy(q_from_value(mdp, np.asarray(value, dtype=float)))


class IterationLimitError(RuntimeError):
    pass


def policy_iteration(
    mdp: Mdp, initial: PolicyTable | None = None, max_improvements: int | None = None
) -> PolicyTable:
    """Howard policy iteration from ``initial`` (uniform if omitted).

    Stops when an improvement step leaves the one-hot policy unchanged.
    Any greedy step that only swaps between tied actions is rejected, so the
    loop cannot cycle between equally good policies. ``max_improvements``
    defaults to ``|A|**|S| + 1``, which exact arithmetic never reaches.
    """
    policy = initial if initial is not None else PolicyTable.uniform(mdp.n_states, mdp.n_actions)
    _check_compatible(mdp, policy)
    limit = mdp.n_actions ** mdp.n_states + 1 if max_improvements is None else max_improvements
    improvements = 0
    while True:
        value = value_of_policy(mdp, policy)
        q = q_from_value(mdp, value)
        improved = greedy(q)
        if improved == policy:
            return policy
        # keep the current action wherever it is already greedy (up to rounding)
        if _is_one_hot(policy):
            current = policy.greedy_actions()
            idx = np.arange(mdp.n_states)
            scale = max(1.0, float(np.abs(q).max()))
            keep = q[idx, current] >= q.max(axis=1) - 1e-12 * scale
            actions = np.where(keep, current, improved.greedy_actions())
            improved = PolicyTable.deterministic(actions, mdp.n_actions)
            if improved == policy:
                return policy
        if improvements >= limit:
            raise IterationLimitError(f"policy iteration did not stabilise within {limit} improvements")
        policy = improved
        improvements += 1


def _is_one_hot(policy: PolicyTable) -> bool:
    return bool(np.all((policy.probs == 0) | (policy.probs == 1)))


def full_q_update(mdp: Mdp, policy: PolicyTable, q: np.ndarray, learning_rate: float) -> np.ndarray:
    """Expected on-policy update applied to every (s, a) at once."""
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError(f"learning_rate must lie in (0, 1], got {learning_rate}")
    _check_compatible(mdp, policy)
    q = np.asarray(q, dtype=float)
    next_value = np.sum(policy.probs * q, axis=1)
    target = mdp.expected_reward + mdp.discount * mdp.transition @ next_value
    return (1.0 - learning_rate) * q + learning_rate * target
