import csv
import io
import json
import logging
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from rlrv.cli import load_mdp, load_policy, main, policy_sidecar, truth_sidecar
from rlrv.config import ConfigError, RunConfig, config_from_dict, load_config
from rlrv.estimation import EstimatedModel, Trace, TransitionRecord, estimate_value
from rlrv.mdp import value_of_policy
from rlrv.tracefile import TraceFormatError, dump_trace, parse_lines, read_trace, write_trace

HEADER = '{"n_states":2,"n_actions":1,"format_version":"1"}'


def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = write_config(root, "[simulate]\nn_transitions = 20000\n")
    trace = root / "trace.jsonl"
    assert main(["simulate", "--config", str(cfg), "--out", str(trace)]) == 0
    return trace


class TestTraceFile:
    def test_round_trip(self, tmp_path):
        recs = [TransitionRecord(0, 0, 1, 0.5, 1), TransitionRecord(3, 1, 0, 2.0, 0, 7)]
        trace = Trace(2, 2, recs)
        path = tmp_path / "t.jsonl"
        write_trace(trace, path)
        back = read_trace(path)
        assert (back.n_states, back.n_actions) == (2, 2) and back.records == recs

    def test_dump_is_compact_jsonl(self):
        buf = io.StringIO()
        dump_trace(Trace(2, 1, [TransitionRecord(0, 0, 0, 1.0, 1)]), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == HEADER
        assert json.loads(lines[1]) == {"step": 0, "s": 0, "a": 0, "r": 1.0, "sp": 1}

    def test_header_only(self):
        assert len(parse_lines([HEADER])) == 0

    @pytest.mark.parametrize("line,fragment", [
        ('{"step":0,"s":0,"a":0,"r":1.0}', "missing"),
        ('{"step":0,"s":2,"a":0,"r":1.0,"sp":0}', "'s'=2"),
        ('{"step":0,"s":0,"a":1,"r":1.0,"sp":0}', "'a'=1"),
        ('{"step":0,"s":0,"a":0,"r":"x","sp":0}', "'r'"),
        ('{"step":0,"s":0,"a":0,"r":1.0,"sp":true}', "'sp'"),
        ('{"step":0,"s":0,"a":0,"r":NaN,"sp":0}', "finite"),
        ('{"step":-1,"s":0,"a":0,"r":1.0,"sp":0}', "'step'"),
        ("not json", "invalid JSON"),
    ])
    def test_malformed_record(self, line, fragment):
        with pytest.raises(TraceFormatError) as err:
            parse_lines([HEADER, '{"step":0,"s":0,"a":0,"r":1.0,"sp":1}', line.replace('"step":0', '"step":5')])
        assert err.value.line == 3 and fragment in str(err.value)

    def test_steps_must_increase(self):
        rec = '{"step":4,"s":0,"a":0,"r":1.0,"sp":1}'
        with pytest.raises(TraceFormatError) as err:
            parse_lines([HEADER, rec, rec])
        assert err.value.line == 3

    def test_header_problems(self):
        with pytest.raises(TraceFormatError):
            parse_lines([])
        with pytest.raises(TraceFormatError):
            parse_lines(['{"step":0,"s":0,"a":0,"r":1.0,"sp":1}'])
        with pytest.raises(TraceFormatError):
            parse_lines(['{"n_states":2,"n_actions":1,"format_version":"9"}'])


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg == RunConfig()
        assert cfg.quality.max_bias_rel == 0.05 and cfg.timeliness.learning_rate == 0.75

    def test_sections_flatten(self, tmp_path):
        path = write_config(tmp_path, "seed = 4\n[quality]\nmax_sigma_rel = 0.03\n[timeliness]\nr_max = 2\n")
        cfg = load_config(path)
        assert cfg.seed == 4 and cfg.max_sigma_rel == 0.03 and cfg.r_max == 2.0

    @pytest.mark.parametrize("raw", [
        {"nonsense": 1},
        {"seed": "x"},
        {"seed": True},
        {"discount": 1.0},
        {"resamples": 10},
        {"calibration_fraction": 0.0},
        {"policy": "greedy"},
        {"scenario": "later"},
        {"seed": 1, "simulate": {"seed": 2}},
    ])
    def test_rejected(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_bad_toml_exits_1(self, tmp_path, capsys):
        path = write_config(tmp_path, "seed = = 1\n")
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "t.jsonl")]) == 1
        assert "error" in capsys.readouterr().err


class TestSimulate:
    def test_writes_trace_and_sidecars(self, simulated):
        trace = read_trace(simulated)
        assert len(trace) == 20000 and (trace.n_states, trace.n_actions) == (18, 3)
        assert load_policy(policy_sidecar(simulated)).probs.shape == (18, 3)
        assert load_mdp(truth_sidecar(simulated)).n_states == 18

    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            assert main(["simulate", "--seed", "3", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert policy_sidecar(a).read_bytes() == policy_sidecar(b).read_bytes()

    def test_zero_transitions_rejected(self, tmp_path):
        cfg = write_config(tmp_path, "n_transitions = 0\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "t.jsonl")]) == 1
        assert not (tmp_path / "t.jsonl").exists()

    def test_module_entry_point(self, tmp_path):
        cfg = write_config(tmp_path, "n_transitions = 50\n")
        out = tmp_path / "t.jsonl"
        proc = subprocess.run([sys.executable, "-m", "rlrv", "simulate", "--config", str(cfg), "--out", str(out)],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and len(read_trace(out)) == 50


class TestMonitor:
    def test_malformed_trace_reports_line(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        path.write_text(HEADER + "\n" + '{"step":0,"s":9,"a":0,"r":1,"sp":0}\n', encoding="utf-8")
        assert main(["monitor", "--trace", str(path), "--property", "quality"]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_trace(self, tmp_path):
        assert main(["monitor", "--trace", str(tmp_path / "nope"), "--property", "quality"]) == 1

    @pytest.mark.parametrize("prop", ["quality", "optimality", "timeliness"])
    def test_empty_trace_unverified(self, tmp_path, capsys, prop):
        path = tmp_path / "empty.jsonl"
        path.write_text(HEADER + "\n", encoding="utf-8")
        cfg = write_config(tmp_path, 'target_policy = "trace"\n')
        assert main(["monitor", "--config", str(cfg), "--trace", str(path), "--property", prop]) == 3
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 1 and out[0].startswith("step=0 status=unverified")

    def test_new_environment_without_negligibility(self, simulated, tmp_path, capsys):
        cfg = write_config(tmp_path, 'scenario = "new_environment"\ncheck_every = 20000\n')
        assert main(["monitor", "--config", str(cfg), "--trace", str(simulated), "--property", "timeliness"]) == 3

    def test_timeliness_satisfied(self, simulated, tmp_path, capsys):
        cfg = write_config(tmp_path, "check_every = 20000\nmax_transitions = 1000\n")
        assert main(["monitor", "--config", str(cfg), "--trace", str(simulated), "--property", "timeliness"]) == 0
        assert "m_t=" in capsys.readouterr().out

    def test_quality_satisfied_on_long_trace(self, simulated, capsys):
        code = main(["monitor", "--check-every", "10000", "--trace", str(simulated), "--property", "quality"])
        lines = capsys.readouterr().out.strip().splitlines()
        assert [ln.split()[0] for ln in lines] == ["step=10000", "step=20000"]
        assert code == 0 and "status=satisfied" in lines[-1]

    def test_missing_policy_sidecar_warns(self, simulated, tmp_path, caplog):
        copy = tmp_path / "copy.jsonl"
        copy.write_bytes(simulated.read_bytes())
        with caplog.at_level(logging.WARNING, logger="rlrv"):
            code = main(["monitor", "--check-every", "20000", "--trace", str(copy), "--property", "quality"])
        assert code in (0, 2, 3)
        assert "no policy sidecar" in caplog.text


@pytest.fixture(scope="module")
def report(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("report")
    assert main(["report", "--check-every", "5000", "--trace", str(simulated), "--out", str(out)]) == 0
    return out


class TestReport:
    def test_all_figures_written(self, report):
        for name in ("fig1_bias_sigma", "fig2_relative_error", "fig3_eta_bounds", "fig4_delta_norm"):
            header, rows = read_csv(report / f"{name}.csv")
            assert len(rows) >= 2, name

    def test_fig1_columns(self, report):
        header, rows = read_csv(report / "fig1_bias_sigma.csv")
        assert header == ["step", "max_bias_rel", "max_sigma_rel", "status"]
        assert [int(r[0]) for r in rows] == [5000, 10000, 15000, 20000]

    def test_fig2_matches_oracle(self, simulated, report):
        header, rows = read_csv(report / "fig2_relative_error.csv")
        truth, policy = load_mdp(truth_sidecar(simulated)), load_policy(policy_sidecar(simulated))
        trace = read_trace(simulated)
        v_true = value_of_policy(truth, policy)
        last = rows[-1]
        v_hat = estimate_value(EstimatedModel.from_trace(trace.prefix(int(last[0]))), policy, truth.discount)
        expected = np.abs(v_true - v_hat) / np.abs(v_hat)
        np.testing.assert_allclose([float(x) for x in last[3:]], expected, atol=1e-9)
        assert float(last[2]) == pytest.approx(expected.max(), abs=1e-9)

    def test_fig3_bounds_ordered(self, report):
        header, rows = read_csv(report / "fig3_eta_bounds.csv")
        n = (len(header) - 3) // 2
        for row in rows:
            lo = np.array([float(x) for x in row[3:3 + n]])
            hi = np.array([float(x) for x in row[3 + n:]])
            ok = ~np.isnan(lo)
            assert np.all(lo[ok] <= hi[ok] + 1e-12) and np.all(hi[ok] <= 1.0)

    def test_fig4_converges(self, report):
        header, rows = read_csv(report / "fig4_delta_norm.csv")
        assert header[-3:] == ["max_delta", "eps", "m_t"]
        m_t = int(rows[0][-1])
        assert len(rows) == 2 * m_t + 1
        assert float(rows[-1][-3]) < float(rows[0][-3])

    def test_missing_truth_skips_fig2(self, simulated, tmp_path, caplog):
        copy = tmp_path / "copy.jsonl"
        copy.write_bytes(simulated.read_bytes())
        policy_sidecar(copy).write_bytes(policy_sidecar(simulated).read_bytes())
        out = tmp_path / "out"
        with caplog.at_level(logging.WARNING, logger="rlrv"):
            assert main(["report", "--check-every", "20000", "--trace", str(copy), "--out", str(out)]) == 0
        assert not (out / "fig2_relative_error.csv").exists()
        assert (out / "fig4_delta_norm.csv").exists()
        assert "fig2" in caplog.text


def test_log_level_from_environment(tmp_path):
    cfg = write_config(tmp_path, "n_transitions = 10\n")
    env = {**os.environ, "RLRV_LOG": "INFO"}
    proc = subprocess.run([sys.executable, "-m", "rlrv", "simulate", "--config", str(cfg),
                           "--out", str(tmp_path / "t.jsonl")], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and "wrote 10 transitions" in proc.stderr


def test_rel_error_nan_free(simulated):
    # sanity on the oracle itself: every state is visited in a long uniform trace
    trace = read_trace(simulated)
    v_hat = estimate_value(EstimatedModel.from_trace(trace), load_policy(policy_sidecar(simulated)), 0.5)
    assert not any(math.isnan(x) for x in v_hat)
