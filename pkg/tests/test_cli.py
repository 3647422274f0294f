"""CLI behavior: config files, flag overrides, exit codes, output streams."""

from __future__ import annotations

import json

import pytest

from astd_monitor.cli import load_config, main, parse_config_text
from astd_monitor.detector import ConfigError
from astd_monitor.trace import TRACE_EVENTS, TRACE_USER

CONFIG_TEXT = """\
# window management
n = 3
k = 10
threshold = 0.001
max_gap_weeks = 3

# density model
bandwidth.method = silverman
kernel = gaussian
circular = false
"""


@pytest.fixture
def trace_input(tmp_path):
    path = tmp_path / "events.ldjson"
    path.write_text("".join(
        json.dumps({"Id": e, "CreationTime": t, "UserId": TRACE_USER}) + "\n"
        for e, t in TRACE_EVENTS))
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "monitor.conf"
    path.write_text(CONFIG_TEXT)
    return path


# --------------------------------------------------------------------------
# Config parsing
# --------------------------------------------------------------------------

def test_parse_config_text_full_file():
    values = parse_config_text(CONFIG_TEXT)
    assert values == {"n": 3, "k": 10, "threshold": 0.001, "max_gap_weeks": 3,
                      "bandwidth_method": "silverman", "kernel": "gaussian",
                      "circular": False}


def test_parse_config_reports_unknown_key_with_line_number():
    with pytest.raises(ConfigError, match="line 2.*mystery"):
        parse_config_text("n = 3\nmystery = 1\n")


def test_parse_config_reports_bad_value():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("n = many\n")
    with pytest.raises(ConfigError, match="true or false"):
        parse_config_text("circular = maybe\n")


def test_parse_config_requires_key_value_shape():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("just some words\n")


def test_load_config_applies_flag_overrides(config_file):
    config = load_config(str(config_file), {"k": 25, "circular": True})
    assert config.k == 25
    assert config.circular is True
    assert config.n == 3  # untouched file value survives


def test_load_config_without_file_uses_defaults():
    config = load_config(None, {})
    assert (config.n, config.k, config.threshold) == (3, 10, 0.001)


# --------------------------------------------------------------------------
# monitor run
# --------------------------------------------------------------------------

def run_cli(args):
    return main(args)


def test_run_end_to_end(tmp_path, trace_input, config_file, capsys):
    alerts_path = tmp_path / "alerts.ldjson"
    code = run_cli(["run", "--input", str(trace_input), "--config", str(config_file),
                    "--alerts", str(alerts_path), "--stats"])
    assert code == 0
    err = capsys.readouterr().err
    stats = json.loads(err.strip().splitlines()[-1])
    assert stats["events_read"] == 14
    assert stats["alerts_emitted"] == 1
    alerts = [json.loads(line) for line in alerts_path.read_text().splitlines()]
    assert [a["event_id"] for a in alerts] == ["e13"]


def test_run_warns_when_threshold_tops_uniform_density(tmp_path, trace_input,
                                                       config_file, capsys):
    code = run_cli(["run", "--input", str(trace_input), "--config", str(config_file),
                    "--alerts", str(tmp_path / "a.ldjson")])
    assert code == 0
    assert "uniform density" in capsys.readouterr().err


def test_run_quiet_when_threshold_is_below_uniform(tmp_path, trace_input,
                                                   config_file, capsys):
    code = run_cli(["run", "--input", str(trace_input), "--config", str(config_file),
                    "--alerts", str(tmp_path / "a.ldjson"), "--threshold", "0.0001"])
    assert code == 0
    assert "uniform density" not in capsys.readouterr().err


def test_run_missing_input_exits_1(tmp_path, config_file, capsys):
    code = run_cli(["run", "--input", str(tmp_path / "absent.ldjson"),
                    "--config", str(config_file),
                    "--alerts", str(tmp_path / "a.ldjson")])
    assert code == 1
    assert "cannot read input" in capsys.readouterr().err


def test_run_invalid_config_exits_2(tmp_path, trace_input, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("n = 0\n")
    code = run_cli(["run", "--input", str(trace_input), "--config", str(bad),
                    "--alerts", str(tmp_path / "a.ldjson")])
    assert code == 2


def test_run_invalid_flag_override_exits_2(tmp_path, trace_input, config_file):
    code = run_cli(["run", "--input", str(trace_input), "--config", str(config_file),
                    "--alerts", str(tmp_path / "a.ldjson"), "--k", "0"])
    assert code == 2


def test_run_bad_workers_exits_2(tmp_path, trace_input, config_file):
    code = run_cli(["run", "--input", str(trace_input), "--config", str(config_file),
                    "--alerts", str(tmp_path / "a.ldjson"), "--workers", "0"])
    assert code == 2


def test_run_corrupt_state_in_exits_1(tmp_path, trace_input, config_file, capsys):
    snapshot = tmp_path / "state.json"
    snapshot.write_text('{"schema": "astd-monitor/state/1", "config"')
    code = run_cli(["run", "--input", str(trace_input), "--config", str(config_file),
                    "--alerts", str(tmp_path / "a.ldjson"),
                    "--state-in", str(snapshot)])
    assert code == 1
    assert "bad state file" in capsys.readouterr().err


def test_run_state_round_trip_through_files(tmp_path, config_file, capsys):
    lines = [json.dumps({"Id": e, "CreationTime": t, "UserId": TRACE_USER}) + "\n"
             for e, t in TRACE_EVENTS]
    first = tmp_path / "first.ldjson"
    first.write_text("".join(lines[:8]))
    rest = tmp_path / "rest.ldjson"
    rest.write_text("".join(lines[8:]))
    state = tmp_path / "state.json"
    alerts = tmp_path / "alerts.ldjson"

    assert run_cli(["run", "--input", str(first), "--config", str(config_file),
                    "--alerts", str(tmp_path / "first-alerts.ldjson"),
                    "--state-out", str(state)]) == 0
    assert run_cli(["run", "--input", str(rest), "--config", str(config_file),
                    "--alerts", str(alerts), "--state-in", str(state)]) == 0
    emitted = [json.loads(line) for line in alerts.read_text().splitlines()]
    assert [a["event_id"] for a in emitted] == ["e13"]


def test_run_alerts_to_stdout(trace_input, config_file, capsys):
    code = run_cli(["run", "--input", str(trace_input), "--config", str(config_file),
                    "--alerts", "-"])
    assert code == 0
    out = capsys.readouterr().out
    assert json.loads(out.strip().splitlines()[-1])["event_id"] == "e13"


# --------------------------------------------------------------------------
# monitor replay-trace
# --------------------------------------------------------------------------

def test_replay_trace_passes_and_reports(capsys):
    code = run_cli(["replay-trace"])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("PASS") == 5
    assert "one short of k=10" in out        # the window-advance deferral note
    assert "alerts: ['e13']" in out
