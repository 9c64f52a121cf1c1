"""Time-to-learn bounds for on-policy evaluation.

The expected on-policy update ``Q <- alpha R + B Q`` contracts in sup-norm
by ``1 - alpha (1 - gamma)``. That gives the number of full-sweep updates
``M_u`` needed to bring the consecutive difference below ``eps``; dividing by
the steady-state visit rate ``p(s) pi(s,a)`` of the least visited pair turns
it into a count of raw transitions ``M_t``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .estimation import EstimatedModel, NotApplicable, on_policy_projection
from .mdp import Mdp, PolicyTable, project
from .verdict import Status, Verdict

log = logging.getLogger(__name__)

STEADY_TOL = 1e-8


class Scenario(enum.Enum):
    NEW_POLICY = "new_policy"
    NEW_REWARD = "new_reward"
    NEW_ENVIRONMENT = "new_environment"


@dataclass(frozen=True)
class TimelinessInputs:
    learning_rate: float = 0.75
    discount: float = 0.5
    convergence_eps: float = 0.05
    negligibility: float = 0.0
    r_min: float = 0.0
    r_max: float = 3.0
    max_transitions: int = 100

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be positive")
        if self.negligibility < 0:
            raise ValueError("negligibility must be non-negative")
        if self.r_min > self.r_max:
            raise ValueError("r_min must not exceed r_max")
        if self.max_transitions < 0:
            raise ValueError("max_transitions must be non-negative")

    @property
    def contraction_factor(self) -> float:
        return 1.0 - self.learning_rate * (1.0 - self.discount)

    @property
    def delta_bar(self) -> float:
        """Largest possible first consecutive difference, from Q_0 = R_min/(1-gamma)."""
        return (self.r_max - self.r_min) / (1.0 - self.discount)


def _ceil(x: float) -> int:
    # absorb rounding such as 11 / 0.1 = 110.00000000000001
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


def compute_m_u(inputs: TimelinessInputs) -> int:
    g = inputs.contraction_factor
    if g >= 1.0:
        raise ValueError(f"contraction factor {g} is not below 1")
    if inputs.delta_bar <= inputs.convergence_eps:
        return 0
    if g == 0.0:
        return 1
    return _ceil(math.log(inputs.delta_bar / inputs.convergence_eps) / math.log(1.0 / g))


@dataclass(frozen=True)
class SteadyState:
    probs: np.ndarray
    unique: bool


def steady_state(t_pi: np.ndarray) -> SteadyState:
    """Stationary distribution of a row-stochastic matrix by direct solve.

    Closed communicating classes are found from the transition graph; the
    chain has a unique stationary distribution iff there is exactly one.
    The distribution of the first closed class is returned either way, with
    transient and other states at zero. Periodic chains are fine: no power
    iteration is involved.
    """
    t_pi = np.asarray(t_pi, dtype=float)
    n = t_pi.shape[0]
    adj = t_pi > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for c in range(n_comp):
        members = labels == c
        if not adj[members][:, ~members].any():
            closed.append(np.flatnonzero(members))
    members = closed[0]
    sub = t_pi[np.ix_(members, members)]
    m = members.size
    lhs = np.eye(m) - sub.T
    lhs[-1] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    p_sub = np.clip(np.linalg.solve(lhs, rhs), 0.0, None)
    probs = np.zeros(n)
    probs[members] = p_sub / p_sub.sum()
    return SteadyState(probs=probs, unique=len(closed) == 1)


@dataclass(frozen=True)
class TimelinessBound:
    m_u: int
    m_t: int
    m_t_worst: int | None
    omega_set: list[tuple[int, int]] = field(default_factory=list)
    limiting_pair: tuple[int, int] | None = None


def worst_case_m_t(m_u: int, omega: float) -> int:
    """Bound assuming only that every relevant pair is visited at rate >= omega."""
    if omega <= 0:
        raise NotApplicable("worst-case bound not computable: negligibility omega must be positive")
    return _ceil(m_u / omega)


def compute_m_t(m_u: int, steady: SteadyState, policy: PolicyTable, omega: float) -> TimelinessBound:
    if not steady.unique:
        raise NotApplicable("steady state is not unique (reducible chain)")
    rate = steady.probs[:, None] * policy.probs
    in_omega = rate > omega
    omega_set = [(int(s), int(a)) for s, a in zip(*np.nonzero(in_omega))]
    worst = worst_case_m_t(m_u, omega) if omega > 0 else None
    if not omega_set:
        log.warning("no state-action pair is visited above omega=%g; M_t set to 0", omega)
        return TimelinessBound(m_u, 0, worst, omega_set, None)
    masked = np.where(in_omega, rate, np.inf)
    s, a = np.unravel_index(np.argmin(masked), masked.shape)
    m_t = _ceil(m_u / masked[s, a])
    return TimelinessBound(m_u, m_t, worst, omega_set, (int(s), int(a)))


def _policy_chain(model_or_mdp, policy: PolicyTable) -> np.ndarray:
    """Policy-induced chain, restricted to observed states for an estimated model."""
    if isinstance(model_or_mdp, Mdp):
        t_pi, _ = project(model_or_mdp.transition, model_or_mdp.reward, policy.probs)
        return t_pi
    t_pi, _ = on_policy_projection(model_or_mdp, policy)
    return t_pi


def _steady(model_or_mdp, policy: PolicyTable) -> SteadyState:
    t_pi = _policy_chain(model_or_mdp, policy)
    if isinstance(model_or_mdp, EstimatedModel):
        obs = np.flatnonzero(model_or_mdp.seen)
        if obs.size == 0:
            raise NotApplicable("no transitions observed")
        sub = steady_state(t_pi[np.ix_(obs, obs)])
        probs = np.zeros(t_pi.shape[0])
        probs[obs] = sub.probs
        return SteadyState(probs, sub.unique)
    return steady_state(t_pi)


def check_timeliness(scenario: Scenario, inputs: TimelinessInputs,
                     model_or_mdp: EstimatedModel | Mdp | None, policy: PolicyTable | None,
                     step: int | None = None) -> Verdict:
    """Verdict for ``M_t <= max_transitions``.

    For a new policy or reward the transition estimate is still valid and
    ``M_t`` is computed from it. For a new environment there is no valid
    estimate: with ``omega > 0`` the worst-case bound ``ceil(M_u / omega)``
    decides, with ``omega = 0`` the result is Unverified.
    """
    scenario = Scenario(scenario)
    m_u = compute_m_u(inputs)
    omega = inputs.negligibility
    if scenario is Scenario.NEW_ENVIRONMENT:
        try:
            worst = worst_case_m_t(m_u, omega)
        except NotApplicable as exc:
            return Verdict.unverified(f"{exc.reason}; re-estimate T before bounding", step, m_u=m_u)
        status = Status.SATISFIED if worst <= inputs.max_transitions else Status.VIOLATED
        return Verdict(status, checked_at_step=step,
                       metrics={"m_u": m_u, "m_t": None, "m_t_worst": worst,
                                "max_transitions": inputs.max_transitions})
    try:
        if model_or_mdp is None or policy is None:
            raise NotApplicable("no transition estimate or policy available")
        steady = _steady(model_or_mdp, policy)
        bound = compute_m_t(m_u, steady, policy, omega)
    except NotApplicable as exc:
        return Verdict.unverified(exc.reason, step, m_u=m_u)
    status = Status.SATISFIED if bound.m_t <= inputs.max_transitions else Status.VIOLATED
    return Verdict(
        status,
        checked_at_step=step,
        metrics={"m_u": m_u, "m_t": bound.m_t, "m_t_worst": bound.m_t_worst,
                 "max_transitions": inputs.max_transitions, "limiting_pair": bound.limiting_pair,
                 "omega_size": len(bound.omega_set)},
        detail={"steady_state": steady.probs.tolist()},
    )


@dataclass(frozen=True)
class UpdateOperator:
    """Matrix form ``Q_{k+1} = alpha_r + B Q_k`` over flattened (s, a) pairs."""

    b_matrix: np.ndarray
    alpha_r: np.ndarray
    contraction_factor: float

    def apply(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return (self.alpha_r + self.b_matrix @ q.ravel()).reshape(q.shape)


def build_update_operator(mdp: Mdp, policy: PolicyTable, learning_rate: float) -> UpdateOperator:
    """Materialize ``B = (1-alpha) I + alpha gamma T Pi`` with ``(s, a)`` at row ``s*|A| + a``."""
    if not 0.0 < learning_rate <= 1.0:
        raise ValueError("learning_rate must lie in (0, 1]")
    n_s, n_a = mdp.n_states, mdp.n_actions
    t_flat = mdp.transition.reshape(n_s * n_a, n_s)
    t_pi_pairs = (t_flat[:, :, None] * policy.probs[None, :, :]).reshape(n_s * n_a, n_s * n_a)
    b = (1.0 - learning_rate) * np.eye(n_s * n_a) + learning_rate * mdp.discount * t_pi_pairs
    alpha_r = learning_rate * mdp.expected_reward.ravel()
    return UpdateOperator(b, alpha_r, 1.0 - learning_rate * (1.0 - mdp.discount))
