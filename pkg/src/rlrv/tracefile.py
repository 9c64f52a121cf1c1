"""JSON Lines trace files.

The first line is a header ``{"n_states", "n_actions", "format_version"}``;
every following line is one transition ``{"step", "s", "a", "r", "sp"}``
with an optional integer ``"ep"``.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import IO, Iterable

from .estimation import Trace, TransitionRecord

FORMAT_VERSION = "1"
_RECORD_KEYS = {"step", "s", "a", "r", "sp"}


class TraceFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _dump(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def record_to_json(rec: TransitionRecord) -> dict:
    out = {"step": rec.step, "s": rec.state, "a": rec.action, "r": rec.reward, "sp": rec.next_state}
    if rec.episode_id is not None:
        out["ep"] = rec.episode_id
    return out


def write_trace(trace: Trace, path: str | Path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_trace(trace, fh)


def dump_trace(trace: Trace, fh: IO[str]):
    header = {"n_states": trace.n_states, "n_actions": trace.n_actions, "format_version": FORMAT_VERSION}
    fh.write(_dump(header) + "\n")
    for rec in trace:
        fh.write(_dump(record_to_json(rec)) + "\n")


def _int_field(obj: dict, key: str, line: int, lo: int = 0, hi: int | None = None) -> int:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise TraceFormatError(line, f"{key!r} must be an integer")
    if value < lo or (hi is not None and value >= hi):
        bound = f"[{lo}, {hi})" if hi is not None else f">= {lo}"
        raise TraceFormatError(line, f"{key!r}={value} out of range {bound}")
    return value


def _parse_header(obj, line: int) -> tuple[int, int]:
    if not isinstance(obj, dict) or not {"n_states", "n_actions", "format_version"} <= obj.keys():
        raise TraceFormatError(line, "first line must be a header with n_states, n_actions, format_version")
    if obj["format_version"] != FORMAT_VERSION:
        raise TraceFormatError(line, f"unsupported format_version {obj['format_version']!r}")
    return _int_field(obj, "n_states", line, 1), _int_field(obj, "n_actions", line, 1)


def parse_lines(lines: Iterable[str]) -> Trace:
    """Parse and validate a trace; errors carry the 1-based line number."""
    header = None
    records: list[TransitionRecord] = []
    last_step = None
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(lineno, f"invalid JSON ({exc.msg})") from None
        if header is None:
            header = _parse_header(obj, lineno)
            continue
        n_states, n_actions = header
        if not isinstance(obj, dict):
            raise TraceFormatError(lineno, "record must be a JSON object")
        missing = _RECORD_KEYS - obj.keys()
        if missing:
            raise TraceFormatError(lineno, f"missing fields {sorted(missing)}")
        step = _int_field(obj, "step", lineno)
        if last_step is not None and step <= last_step:
            raise TraceFormatError(lineno, f"step {step} does not increase (previous {last_step})")
        s = _int_field(obj, "s", lineno, 0, n_states)
        a = _int_field(obj, "a", lineno, 0, n_actions)
        sp = _int_field(obj, "sp", lineno, 0, n_states)
        r = obj["r"]
        if isinstance(r, bool) or not isinstance(r, (int, float)) or not math.isfinite(r):
            raise TraceFormatError(lineno, "'r' must be a finite number")
        ep = None
        if "ep" in obj and obj["ep"] is not None:
            ep = _int_field(obj, "ep", lineno)
        records.append(TransitionRecord(step, s, a, float(r), sp, ep))
        last_step = step
    if header is None:
        raise TraceFormatError(max(lineno, 1), "empty file, header missing")
    return Trace(header[0], header[1], records)


def read_trace(path: str | Path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_lines(fh)
