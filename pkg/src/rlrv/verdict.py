from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Status(enum.Enum):
    UNVERIFIED = "unverified"
    VIOLATED = "violated"
    SATISFIED = "satisfied"

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self]


EXIT_CODES = {Status.SATISFIED: 0, Status.VIOLATED: 2, Status.UNVERIFIED: 3}


@dataclass(frozen=True)
class Verdict:
    """Three-valued monitor output.

    ``metrics`` holds the headline numbers for the property (maxima, bounds)
    and ``detail`` the per-state table; ``reason`` explains an Unverified
    result.
    """

    status: Status
    checked_at_step: int | None = None
    reason: str = ""
    worst_state_bias: tuple[int, float] | None = None
    worst_state_sigma: tuple[int, float] | None = None
    metrics: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)

    @classmethod
    def unverified(cls, reason: str, step: int | None = None, **metrics) -> Verdict:
        return cls(Status.UNVERIFIED, checked_at_step=step, reason=reason, metrics=metrics)
