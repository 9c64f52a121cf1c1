from __future__ import annotations

from typing import Iterable


def checkpoint_steps(n: int, check_every: int = 500, steps: Iterable[int] | None = None) -> list[int]:
    """Prefix lengths at which a monitor is evaluated.

    Multiples of ``check_every`` plus the full length, or the explicit
    ``steps`` clipped to ``[1, n]`` when given. An empty trace is checked once
    at step 0.
    """
    if steps is not None:
        out = sorted({min(max(int(s), 1), n) for s in steps}) if n else [0]
        return out
    if check_every < 1:
        raise ValueError("check_every must be at least 1")
    if n == 0:
        return [0]
    out = list(range(check_every, n + 1, check_every))
    if not out or out[-1] != n:
        out.append(n)
    return out


def geometric_steps(n: int, start: int = 100, ratio: float = 1.5) -> list[int]:
    """Roughly log-spaced checkpoints from ``start`` up to and including ``n``."""
    if start < 1 or ratio <= 1:
        raise ValueError("need start >= 1 and ratio > 1")
    out = []
    x = float(start)
    while x < n:
        out.append(int(round(x)))
        x *= ratio
    out.append(n)
    return sorted(set(out))
