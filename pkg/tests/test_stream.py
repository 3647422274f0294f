"""Ingestion, run statistics, sharding, and state snapshots."""

from __future__ import annotations

import io
import json

import numpy as np
import pytest

from astd_monitor.detector import DetectorConfig, MonitorEngine
from astd_monitor.stream import (
    MalformedRecord,
    ParsedEvent,
    RestoreError,
    alert_to_json,
    dump_state,
    parse_record,
    resident_memory_bytes,
    restore_state,
    run_monitor,
)
from astd_monitor.trace import TRACE_EVENTS, TRACE_USER

CONFIG = DetectorConfig(n=3, k=10, threshold=0.001)


def trace_lines(events=TRACE_EVENTS, user=TRACE_USER):
    return [json.dumps({"Id": e, "CreationTime": t, "UserId": user}) + "\n"
            for e, t in events]


# --------------------------------------------------------------------------
# parse_record
# --------------------------------------------------------------------------

def test_parse_record_accepts_a_valid_line():
    record = parse_record('{"ID":"e1","CreationTime":"2022-06-22T10:15:00Z","UserId":"u1"}')
    assert isinstance(record, ParsedEvent)
    assert record.event_id == "e1"
    assert record.user_id == "u1"
    assert (record.creation.hour, record.creation.minute) == (10, 15)


def test_parse_record_accepts_both_id_spellings():
    assert parse_record('{"Id":"a","CreationTime":"2022-06-22T10:15:00Z","UserId":"u"}').event_id == "a"
    assert parse_record('{"ID":"b","CreationTime":"2022-06-22T10:15:00Z","UserId":"u"}').event_id == "b"


@pytest.mark.parametrize("line,reason", [
    ('{"ID":"e2","UserId":"u1"}', "missing CreationTime"),
    ('{"ID":"e3","CreationTime":"2022-06-22 10:15","UserId":"u1"}', "bad timestamp"),
    ('{"CreationTime":"2022-06-22T10:15:00Z","UserId":"u1"}', "missing Id"),
    ('{"ID":"e4","CreationTime":"2022-06-22T10:15:00Z"}', "missing UserId"),
    ('{"ID":"e5","CreationTime":"2022-06-22T10:15:00Z","UserId":""}', "bad UserId"),
    ('{"ID":"","CreationTime":"2022-06-22T10:15:00Z","UserId":"u1"}', "bad Id"),
    ('{"ID":"e6","CreationTime":17,"UserId":"u1"}', "bad timestamp"),
    ('nonsense', "bad JSON"),
    ('[1,2,3]', "not a JSON object"),
])
def test_parse_record_flags_malformed_lines(line, reason):
    record = parse_record(line)
    assert isinstance(record, MalformedRecord)
    assert record.reason == reason


def test_extra_fields_are_ignored():
    record = parse_record('{"Id":"e1","CreationTime":"2022-06-22T10:15:00Z",'
                          '"UserId":"u1","Operation":"FileAccessed","Workload":"x"}')
    assert isinstance(record, ParsedEvent)


# --------------------------------------------------------------------------
# run_monitor
# --------------------------------------------------------------------------

def test_run_monitor_over_the_reference_trace():
    alerts = []
    stats, engines = run_monitor(trace_lines(), CONFIG, alerts.append)
    assert stats.events_read == 14
    assert stats.events_malformed == 0
    assert stats.events_processed == 14
    assert stats.users_seen == 1
    assert stats.profiles_computed >= 1
    assert stats.alerts_emitted == 1
    assert [a.event_id for a in alerts] == ["e13"]
    assert engines[0].entity_state(TRACE_USER) is not None


def test_run_monitor_empty_input():
    stats, _ = run_monitor([], CONFIG, None)
    assert (stats.events_read, stats.events_malformed, stats.events_processed,
            stats.users_seen, stats.alerts_emitted) == (0, 0, 0, 0, 0)


def test_blank_lines_are_skipped_not_counted():
    lines = ["\n", "   \n"] + trace_lines()[:1] + ["\n"]
    stats, _ = run_monitor(lines, CONFIG, None)
    assert stats.events_read == 1
    assert stats.events_malformed == 0


def test_malformed_lines_never_touch_engine_state():
    lines = ['busted\n', '{"Id":"x","UserId":"u9"}\n']
    stats, engines = run_monitor(lines, CONFIG, None)
    assert stats.events_malformed == 2
    assert stats.events_processed == 0
    assert engines[0].users_seen == 0


def test_runs_are_deterministic_byte_for_byte():
    def run_once():
        out = io.StringIO()
        run_monitor(trace_lines(), CONFIG,
                    lambda a: out.write(alert_to_json(a) + "\n"))
        return out.getvalue()
    assert run_once() == run_once()


def test_stats_invariant_processed_equals_read_minus_malformed():
    lines = trace_lines() + ["garbage\n", '{"Id":"y"}\n']
    stats, _ = run_monitor(lines, CONFIG, None)
    assert stats.events_processed == stats.events_read - stats.events_malformed
    assert stats.wall_time_s > 0


def test_sharded_run_matches_single_shard_per_user():
    rng = np.random.default_rng(11)
    users = [f"user-{i}" for i in range(6)]
    lines = []
    counter = 0
    for event_id, ts in TRACE_EVENTS * 2:
        for user in users:
            if rng.random() < 0.7:
                counter += 1
                lines.append(json.dumps(
                    {"Id": f"{event_id}-{user}-{counter}", "CreationTime": ts,
                     "UserId": user}) + "\n")

    def collect(workers):
        alerts = []
        stats, engines = run_monitor(lines, CONFIG, alerts.append, workers=workers)
        per_user = {}
        for a in alerts:
            per_user.setdefault(a.user_id, []).append(a.event_id)
        return stats, per_user, engines

    stats1, alerts1, _ = collect(1)
    stats3, alerts3, engines3 = collect(3)
    assert alerts1 == alerts3  # per-user alert order is preserved
    assert stats1.events_read == stats3.events_read
    assert stats1.users_seen == stats3.users_seen == 6
    assert stats1.alerts_emitted == stats3.alerts_emitted
    assert stats1.profiles_computed == stats3.profiles_computed
    assert sum(e.users_seen for e in engines3) == 6
    assert max(e.users_seen for e in engines3) < 6  # users actually spread out


def test_resident_memory_is_measurable():
    assert resident_memory_bytes() > 0


def test_alert_json_has_exactly_the_record_fields():
    alerts = []
    run_monitor(trace_lines(), CONFIG, alerts.append)
    obj = json.loads(alert_to_json(alerts[0]))
    assert set(obj) == {"event_id", "user_id", "period", "minute",
                        "density", "threshold"}
    assert obj["event_id"] == "e13"
    assert obj["density"] <= obj["threshold"]


# --------------------------------------------------------------------------
# Snapshots
# --------------------------------------------------------------------------

def test_dump_fresh_engine_has_zero_users():
    doc = dump_state(MonitorEngine(CONFIG))
    assert doc["schema"] == "astd-monitor/state/1"
    assert doc["users"] == {}


def test_snapshot_text_round_trip_is_identity():
    _, engines = run_monitor(trace_lines(), CONFIG, None)
    doc = dump_state(engines[0])
    text = json.dumps(doc)
    restored = restore_state(text)
    assert json.dumps(dump_state(restored)) == text


def test_restore_then_finish_matches_uninterrupted_run():
    lines = trace_lines()
    _, engines = run_monitor(lines[:8], CONFIG, None)
    restored = restore_state(json.dumps(dump_state(engines[0])))
    resumed_alerts = []
    stats, resumed = run_monitor(lines[8:], restored.config, resumed_alerts.append,
                                 initial_users=restored.export_users())
    straight_alerts = []
    _, straight = run_monitor(lines, CONFIG, straight_alerts.append)
    a = resumed[0].entity_state(TRACE_USER)
    b = straight[0].entity_state(TRACE_USER)
    assert a.used_periods == b.used_periods
    assert a.events_by_week == b.events_by_week
    assert a.alerts == b.alerts
    assert np.array_equal(a.profile.densities, b.profile.densities)
    assert [x.event_id for x in resumed_alerts] == ["e13"]


def test_restore_rejects_truncated_document():
    _, engines = run_monitor(trace_lines(), CONFIG, None)
    text = json.dumps(dump_state(engines[0]))
    with pytest.raises(RestoreError, match="invalid JSON"):
        restore_state(text[: len(text) // 2])


@pytest.mark.parametrize("mutate,location", [
    (lambda d: d.update(schema="other/2"), "schema"),
    (lambda d: d.update(config={"n": 0, "k": 1, "threshold": 1.0}), "config"),
    (lambda d: d["users"].update(bad="not an object"), "users\\['bad'\\]"),
    (lambda d: d["users"]["u1"].pop("used_periods"), "used_periods"),
    (lambda d: d["users"]["u1"].update(start_kde=True), "start_kde"),
    (lambda d: d["users"]["u1"]["events_by_week"].update({"xyz": [1]}), "bad period key"),
    (lambda d: d["users"]["u1"].update(used_periods=[202228, 202225]), "ascending"),
    (lambda d: d["users"]["u1"]["profile"].update(densities=[1.0, 2.0]), "densities"),
])
def test_restore_names_the_corrupt_location(mutate, location):
    _, engines = run_monitor(trace_lines(), CONFIG, None)
    doc = json.loads(json.dumps(dump_state(engines[0])))
    mutate(doc)
    with pytest.raises(RestoreError, match=location):
        restore_state(doc)


def test_restored_profile_scores_like_the_original():
    lines = trace_lines()
    _, engines = run_monitor(lines[:12], CONFIG, None)  # profile exists now
    restored = restore_state(json.dumps(dump_state(engines[0])))
    original_alerts = engines[0].process("probe", TRACE_USER, "2022-07-19T03:00:00Z")
    restored_alerts = restored.process("probe", TRACE_USER, "2022-07-19T03:00:00Z")
    assert [a.density for a in original_alerts] == [a.density for a in restored_alerts]
