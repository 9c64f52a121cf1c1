"""Command line entry point: ``rlrv simulate | monitor | report``.

Exit status of ``monitor`` follows the final verdict: 0 Satisfied,
2 Violated, 3 Unverified. Bad input (malformed trace, invalid config) exits 1.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoints import checkpoint_steps
from .config import ConfigError, RunConfig, load_config
from .estimation import EstimatedModel, NotApplicable, Trace, estimate_policy, estimate_value
from .harness import (LearnerConfig, PatrolConfig, build_patrol_mdp, random_mdp, run_policy,
                      schedule_policy, td_evaluate, worst_policy)
from .mdp import Mdp, PolicyTable, action_value_of_policy, value_of_policy
from .optimality import SplitConfig, eta_csv_rows, optimality_series
from .quality import CSV_HEADER as FIG1_HEADER
from .quality import quality_series
from .timeliness import Scenario, check_timeliness
from .tracefile import TraceFormatError, read_trace, write_trace
from .verdict import Status, Verdict

log = logging.getLogger("rlrv")

EXIT_BAD_INPUT = 1


def policy_sidecar(trace_path: Path) -> Path:
    return Path(str(trace_path) + ".policy.json")


def truth_sidecar(trace_path: Path) -> Path:
    return Path(str(trace_path) + ".truth.json")


def _write_json(path: Path, obj: dict):
    path.write_text(json.dumps(obj, separators=(",", ":")) + "\n", encoding="utf-8")


def save_policy(path: Path, policy: PolicyTable):
    n_s, n_a = policy.probs.shape
    _write_json(path, {"n_states": n_s, "n_actions": n_a, "probs": policy.probs.tolist()})


def load_policy(path: Path) -> PolicyTable:
    obj = json.loads(path.read_text(encoding="utf-8"))
    return PolicyTable(np.asarray(obj["probs"], dtype=float))


def save_mdp(path: Path, mdp: Mdp):
    _write_json(path, {"discount": mdp.discount, "transition": mdp.transition.tolist(),
                       "reward": mdp.reward.tolist()})


def load_mdp(path: Path) -> Mdp:
    obj = json.loads(path.read_text(encoding="utf-8"))
    return Mdp(np.asarray(obj["transition"], dtype=float), np.asarray(obj["reward"], dtype=float),
               float(obj["discount"]))


def build_environment(cfg: RunConfig) -> tuple[Mdp, PatrolConfig | None]:
    if cfg.environment == "patrol":
        patrol = PatrolConfig(skip_probability=cfg.skip_probability, discount=cfg.discount,
                              rng_seed=cfg.seed)
        return build_patrol_mdp(patrol), patrol
    return random_mdp(cfg.n_states, cfg.n_actions, cfg.seed, cfg.discount), None


def behaviour_policy(cfg: RunConfig, mdp: Mdp, patrol: PatrolConfig | None) -> PolicyTable:
    if cfg.policy == "uniform":
        return PolicyTable.uniform(mdp.n_states, mdp.n_actions)
    if cfg.policy == "worst":
        return worst_policy(mdp)
    if patrol is None:
        raise ConfigError("policy 'schedule' needs the patrol environment")
    return schedule_policy(patrol)


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    mdp, patrol = build_environment(cfg)
    policy = behaviour_policy(cfg, mdp, patrol)
    trace = run_policy(mdp, policy, cfg.n_transitions, cfg.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out)
    save_policy(policy_sidecar(out), policy)
    save_mdp(truth_sidecar(out), mdp)
    log.info("wrote %d transitions to %s", len(trace), out)
    return 0


def monitored_policy(trace_path: Path, trace: Trace) -> PolicyTable:
    path = policy_sidecar(trace_path)
    if path.exists():
        policy = load_policy(path)
        if policy.probs.shape != (trace.n_states, trace.n_actions):
            raise ConfigError(f"{path}: policy shape does not match the trace header")
        return policy
    log.warning("no policy sidecar at %s; using empirical action frequencies", path)
    return estimate_policy(trace)


def target_policy(cfg: RunConfig, trace: Trace, monitored: PolicyTable) -> PolicyTable:
    if cfg.target_policy == "trace":
        return monitored
    if cfg.target_policy == "uniform":
        return PolicyTable.uniform(trace.n_states, trace.n_actions)
    patrol = PatrolConfig()
    if (trace.n_states, trace.n_actions) != (patrol.n_states, len(patrol.locations)):
        raise ConfigError("target_policy 'schedule' needs a patrol trace")
    return schedule_policy(patrol)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def format_line(verdict: Verdict, keys: tuple[str, ...]) -> str:
    parts = [f"step={verdict.checked_at_step}", f"status={verdict.status.value}"]
    for key in keys:
        if key in verdict.metrics and verdict.metrics[key] is not None:
            parts.append(f"{key}={_fmt(verdict.metrics[key])}")
    if verdict.reason:
        parts.append(f"reason={verdict.reason!r}")
    return " ".join(parts)


def timeliness_series(cfg: RunConfig, trace: Trace, policy: PolicyTable) -> list[Verdict]:
    model = EstimatedModel(trace.n_states, trace.n_actions)
    out = []
    done = 0
    for n in checkpoint_steps(len(trace), cfg.check_every):
        model.ingest_many(trace.records[done:n])
        done = n
        source = model if model.n_records else None
        out.append(check_timeliness(Scenario(cfg.scenario), cfg.timeliness, source, policy, step=n))
    return out


def run_monitor(cfg: RunConfig, trace: Trace, policy: PolicyTable, prop: str) -> list[Verdict]:
    if prop == "quality":
        return [p.verdict for p in quality_series(trace, policy, cfg.discount, cfg.quality,
                                                  cfg.check_every, cfg.resamples, cfg.seed)]
    if prop == "optimality":
        points = optimality_series(trace, policy, cfg.discount, cfg.eta_lower_min, cfg.eta_upper_min,
                                   cfg.quality, SplitConfig(cfg.calibration_fraction, cfg.seed),
                                   cfg.check_every, cfg.resamples, cfg.seed, cfg.sigma_multiplier)
        return [p.verdict for p in points]
    return timeliness_series(cfg, trace, target_policy(cfg, trace, policy))


LINE_KEYS = {
    "quality": ("max_bias_rel", "max_sigma_rel"),
    "optimality": ("min_eta_lower", "min_eta_upper", "condition_pi", "condition_star"),
    "timeliness": ("m_u", "m_t", "m_t_worst", "max_transitions"),
}


def cmd_monitor(cfg: RunConfig, trace_path: Path, prop: str) -> int:
    trace = read_trace(trace_path)
    policy = monitored_policy(trace_path, trace)
    verdicts = run_monitor(cfg, trace, policy, prop)
    for v in verdicts:
        print(format_line(v, LINE_KEYS[prop]), flush=True)
    return verdicts[-1].status.exit_code


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _rel(v_true: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    out = np.full(v_true.size, np.nan)
    for s in range(v_true.size):
        if np.isnan(v_hat[s]):
            continue
        err = abs(v_true[s] - v_hat[s])
        if abs(v_hat[s]) < 1e-12:
            out[s] = math.inf if err > 0 else 0.0
        else:
            out[s] = err / abs(v_hat[s])
    return out


def fig2_rows(trace: Trace, policy: PolicyTable, truth: Mdp, discount: float,
              steps: list[int], statuses: list[Status]) -> tuple[list[str], list[list]]:
    v_true = value_of_policy(truth, policy)
    header = ["step", "status", "max_rel_error"] + [f"rel_error_s{s}" for s in range(trace.n_states)]
    rows = []
    model = EstimatedModel(trace.n_states, trace.n_actions)
    done = 0
    for n, status in zip(steps, statuses):
        model.ingest_many(trace.records[done:n])
        done = n
        try:
            rel = _rel(v_true, estimate_value(model, policy, discount))
        except NotApplicable:
            rel = np.full(trace.n_states, np.nan)
        finite = rel[~np.isnan(rel)]
        worst = float(finite.max()) if finite.size else math.nan
        rows.append([n, status.value, worst] + rel.tolist())
    return header, rows


def fig4_rows(cfg: RunConfig, trace: Trace, policy: PolicyTable, truth: Mdp | None):
    """TD evaluation runs of ``policy``, one per initial state."""
    model = EstimatedModel.from_trace(trace)
    verdict = check_timeliness(Scenario.NEW_POLICY, cfg.timeliness, model if model.n_records else None,
                               policy, step=len(trace))
    m_t = verdict.metrics.get("m_t")
    if truth is not None:
        env = truth
    elif model.n_records:
        env = model.to_mdp(cfg.discount)
    else:
        raise NotApplicable("empty trace and no ground truth: nothing to learn from")
    horizon = max(2 * (m_t or cfg.max_transitions), 2)
    q_ref = action_value_of_policy(env, policy)
    learner = LearnerConfig(cfg.learning_rate, cfg.discount, rng_seed=cfg.seed)
    columns = []
    for s0 in range(env.n_states):
        run = td_evaluate(env, policy, learner, horizon, q_ref, initial_state=s0)
        columns.append([delta for _, delta, _ in run])
    data = np.array(columns).T
    header = (["step"] + [f"delta_init_s{s}" for s in range(env.n_states)]
              + ["max_delta", "eps", "m_t"])
    m_t_cell = m_t if m_t is not None else ""
    rows = [[k] + data[k].tolist() + [float(data[k].max()), cfg.convergence_eps, m_t_cell]
            for k in range(data.shape[0])]
    return header, rows


def cmd_report(cfg: RunConfig, trace_path: Path, out_dir: Path) -> int:
    trace = read_trace(trace_path)
    policy = monitored_policy(trace_path, trace)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = None
    sidecar = truth_sidecar(trace_path)
    if sidecar.exists():
        truth = load_mdp(sidecar)
    else:
        log.warning("no ground-truth sidecar at %s; skipping fig2_relative_error.csv", sidecar)

    qs = quality_series(trace, policy, cfg.discount, cfg.quality, cfg.check_every, cfg.resamples, cfg.seed)
    _write_csv(out_dir / "fig1_bias_sigma.csv", FIG1_HEADER, [p.csv_row() for p in qs])

    if truth is not None:
        header, rows = fig2_rows(trace, policy, truth, cfg.discount, [p.step for p in qs],
                                 [p.status for p in qs])
        _write_csv(out_dir / "fig2_relative_error.csv", header, rows)

    points = optimality_series(trace, policy, cfg.discount, cfg.eta_lower_min, cfg.eta_upper_min,
                               cfg.quality, SplitConfig(cfg.calibration_fraction, cfg.seed),
                               cfg.check_every, cfg.resamples, cfg.seed, cfg.sigma_multiplier)
    header, rows = eta_csv_rows(points, trace.n_states)
    _write_csv(out_dir / "fig3_eta_bounds.csv", header, rows)

    try:
        header, rows = fig4_rows(cfg, trace, target_policy(cfg, trace, policy), truth)
        _write_csv(out_dir / "fig4_delta_norm.csv", header, rows)
    except NotApplicable as exc:
        log.warning("skipping fig4_delta_norm.csv: %s", exc.reason)
    log.info("wrote report to %s", out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlrv", description="Runtime verification of tabular RL learning.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--check-every", type=int, help="override the checkpoint cadence")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a trace from the harness")
    p.add_argument("--out", type=Path, required=True, help="trace file to write")

    p = sub.add_parser("monitor", parents=[common], help="replay a trace through a monitor")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--property", choices=("quality", "optimality", "timeliness"), required=True)

    p = sub.add_parser("report", parents=[common], help="write figure data as CSV")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def _setup_logging():
    level = os.environ.get("RLRV_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.check_every is not None:
            overrides["check_every"] = args.check_every
        if overrides:
            cfg = cfg.replace(**overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "monitor":
            return cmd_monitor(cfg, args.trace, args.property)
        return cmd_report(cfg, args.trace, args.out)
    except TraceFormatError as exc:
        print(f"error: {args.trace}: {exc}", file=sys.stderr)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
