"""Line-delimited JSON ingestion, engine driving, and state snapshots.

Events arrive one JSON object per line with fields ``Id`` (or ``ID``),
``CreationTime`` (UTC, ``YYYY-mm-ddTHH:MM:ssZ``), and ``UserId``; any
other fields are ignored. Input order is processing order: the window
manager is built for out-of-order arrival, so no re-sorting happens here.

Malformed lines are counted and skipped; they never touch engine state.

Snapshots serialize every user's window state and fitted profile into one
versioned JSON document. Restoring a snapshot and replaying the remaining
events is equivalent to an uninterrupted run: profile densities round-trip
exactly through JSON (repr-based float encoding).
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
import zlib
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .calendar_periods import TimestampError, parse_timestamp
from .detector import (
    AlertRecord,
    ConfigError,
    DetectorConfig,
    EntityState,
    MonitorEngine,
)
from .kde import GRID_MINUTES, KdeProfile

STATE_SCHEMA = "astd-monitor/state/1"


class RestoreError(ValueError):
    """A snapshot document is unreadable; the message names the location."""


@dataclass(frozen=True)
class ParsedEvent:
    event_id: str
    user_id: str
    creation: datetime


@dataclass(frozen=True)
class MalformedRecord:
    reason: str


def parse_record(line: str) -> ParsedEvent | MalformedRecord:
    """Parse one input line; never raises."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return MalformedRecord("bad JSON")
    if not isinstance(obj, dict):
        return MalformedRecord("not a JSON object")
    event_id = obj.get("Id")
    if event_id is None:
        event_id = obj.get("ID")
    if event_id is None:
        return MalformedRecord("missing Id")
    if not isinstance(event_id, str) or not event_id:
        return MalformedRecord("bad Id")
    raw_creation = obj.get("CreationTime")
    if raw_creation is None:
        return MalformedRecord("missing CreationTime")
    user_id = obj.get("UserId")
    if user_id is None:
        return MalformedRecord("missing UserId")
    if not isinstance(user_id, str) or not user_id:
        return MalformedRecord("bad UserId")
    if not isinstance(raw_creation, str):
        return MalformedRecord("bad timestamp")
    try:
        creation = parse_timestamp(raw_creation)
    except TimestampError:
        return MalformedRecord("bad timestamp")
    return ParsedEvent(event_id, user_id, creation)


@dataclass
class RunStats:
    events_read: int = 0
    events_malformed: int = 0
    events_processed: int = 0
    users_seen: int = 0
    profiles_computed: int = 0
    alerts_emitted: int = 0
    wall_time_s: float = 0.0
    peak_rss_bytes: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


try:
    _PAGE_SIZE = os.sysconf("SC_PAGE_SIZE")
except (ValueError, OSError, AttributeError):
    _PAGE_SIZE = 4096


def resident_memory_bytes() -> int:
    """Current resident set size of this process, or 0 if unavailable."""
    try:
        with open("/proc/self/statm", "rb") as fh:
            return int(fh.read().split()[1]) * _PAGE_SIZE
    except (OSError, IndexError, ValueError):
        return 0


def alert_to_json(alert: AlertRecord) -> str:
    return json.dumps(asdict(alert), separators=(",", ":"))


def _shard_of(user_id: str, workers: int) -> int:
    return zlib.crc32(user_id.encode("utf-8")) % workers


ProgressHook = Callable[[int, Sequence[MonitorEngine]], None]


def run_monitor(source: Iterable[str], config: DetectorConfig,
                alert_sink: Callable[[AlertRecord], None] | None = None, *,
                initial_users: Mapping[str, EntityState] | None = None,
                workers: int = 1,
                on_progress: ProgressHook | None = None,
                progress_every: int = 100_000) -> tuple[RunStats, list[MonitorEngine]]:
    """Stream every line of ``source`` through the engine.

    ``workers`` > 1 partitions users across that many independent engines
    by a stable hash of the user id; per-user event order is preserved.
    ``on_progress`` fires every ``progress_every`` read lines (single
    worker only) with the running line count and the live engines.

    Returns the final statistics and the engines (one per worker).
    """
    config.validate()
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    engines = [MonitorEngine(config) for _ in range(workers)]
    if initial_users:
        for user_id, state in initial_users.items():
            engines[_shard_of(user_id, workers)].adopt_user(user_id, state)
    emit = alert_sink if alert_sink is not None else (lambda alert: None)

    stats = RunStats()
    peak_rss = resident_memory_bytes()
    started = time.perf_counter()

    if workers == 1:
        engine = engines[0]
        for line in source:
            if not line.strip():
                continue
            stats.events_read += 1
            record = parse_record(line)
            if isinstance(record, MalformedRecord):
                stats.events_malformed += 1
            else:
                for alert in engine.process(record.event_id, record.user_id,
                                            record.creation):
                    emit(alert)
            if progress_every and stats.events_read % progress_every == 0:
                peak_rss = max(peak_rss, resident_memory_bytes())
                if on_progress is not None:
                    on_progress(stats.events_read, engines)
    else:
        stats.events_malformed = _run_sharded(source, engines, emit, stats)

    stats.events_processed = stats.events_read - stats.events_malformed
    stats.users_seen = sum(e.users_seen for e in engines)
    stats.profiles_computed = sum(e.profiles_computed for e in engines)
    stats.alerts_emitted = sum(e.alerts_emitted for e in engines)
    stats.wall_time_s = time.perf_counter() - started
    stats.peak_rss_bytes = max(peak_rss, resident_memory_bytes())
    return stats, engines


def _run_sharded(source: Iterable[str], engines: list[MonitorEngine],
                 emit: Callable[[AlertRecord], None], stats: RunStats) -> int:
    """Fan events out to one thread per engine; returns the malformed count."""
    sink_lock = threading.Lock()
    queues: list[queue.Queue] = [queue.Queue(maxsize=10_000) for _ in engines]
    failures: list[BaseException] = []

    def worker(engine: MonitorEngine, inbox: queue.Queue) -> None:
        while True:
            record = inbox.get()
            if record is None:
                return
            try:
                alerts = engine.process(record.event_id, record.user_id,
                                        record.creation)
                if alerts:
                    with sink_lock:
                        for alert in alerts:
                            emit(alert)
            except BaseException as exc:  # surfaced after join
                failures.append(exc)
                return

    threads = [threading.Thread(target=worker, args=(engine, inbox), daemon=True)
               for engine, inbox in zip(engines, queues)]
    for t in threads:
        t.start()
    malformed = 0
    workers = len(engines)
    for line in source:
        if not line.strip():
            continue
        stats.events_read += 1
        record = parse_record(line)
        if isinstance(record, MalformedRecord):
            malformed += 1
        else:
            queues[_shard_of(record.user_id, workers)].put(record)
        if failures:
            break
    for inbox in queues:
        inbox.put(None)
    for t in threads:
        t.join()
    if failures:
        raise failures[0]
    return malformed


# --------------------------------------------------------------------------
# State snapshots
# --------------------------------------------------------------------------

def _profile_to_json(profile: KdeProfile | None) -> dict[str, Any] | None:
    if profile is None:
        return None
    return {
        "bandwidth": profile.bandwidth,
        "sample_count": profile.sample_count,
        "densities": profile.densities.tolist(),
    }


def _state_to_json(state: EntityState) -> dict[str, Any]:
    return {
        "events_by_week": {str(p): list(v) for p, v in sorted(state.events_by_week.items())},
        "used_periods": list(state.used_periods),
        "accumulated_periods": list(state.accumulated_periods),
        "start_kde": state.start_kde,
        "alerts": list(state.alerts),
        "profile": _profile_to_json(state.profile),
    }


def dump_state(engine: MonitorEngine | Sequence[MonitorEngine]) -> dict[str, Any]:
    """Serialize engine state (one engine or a list of shards) to a JSON
    document. Must be called at a step boundary."""
    engines = [engine] if isinstance(engine, MonitorEngine) else list(engine)
    if not engines:
        raise ValueError("dump_state needs at least one engine")
    users: dict[str, EntityState] = {}
    for e in engines:
        users.update(e.export_users())
    return {
        "schema": STATE_SCHEMA,
        "config": engines[0].config.to_dict(),
        "users": {u: _state_to_json(users[u]) for u in sorted(users)},
    }


def _require(mapping: Mapping[str, Any], key: str, kind: type, where: str) -> Any:
    if key not in mapping:
        raise RestoreError(f"{where}: missing key {key!r}")
    value = mapping[key]
    if not isinstance(value, kind):
        raise RestoreError(f"{where}.{key}: expected {kind.__name__}, "
                           f"got {type(value).__name__}")
    return value


def _profile_from_json(data: Any, where: str) -> KdeProfile | None:
    if data is None:
        return None
    if not isinstance(data, dict):
        raise RestoreError(f"{where}: expected object or null")
    bandwidth = _require(data, "bandwidth", (int, float), where)
    sample_count = _require(data, "sample_count", int, where)
    densities = _require(data, "densities", list, where)
    if len(densities) != GRID_MINUTES:
        raise RestoreError(f"{where}.densities: expected {GRID_MINUTES} values, "
                           f"got {len(densities)}")
    try:
        return KdeProfile(np.asarray(densities, dtype=np.float64),
                          float(bandwidth), sample_count)
    except (TypeError, ValueError) as exc:
        raise RestoreError(f"{where}: {exc}") from exc


def _state_from_json(data: Any, where: str) -> EntityState:
    if not isinstance(data, dict):
        raise RestoreError(f"{where}: expected an object")
    raw_events = _require(data, "events_by_week", dict, where)
    events: dict[int, list[int]] = {}
    for raw_period, minutes in raw_events.items():
        try:
            period = int(raw_period)
        except (TypeError, ValueError):
            raise RestoreError(f"{where}.events_by_week: bad period key "
                               f"{raw_period!r}") from None
        if not isinstance(minutes, list) or not all(isinstance(m, int) for m in minutes):
            raise RestoreError(f"{where}.events_by_week[{raw_period}]: "
                               f"expected a list of integers")
        events[period] = list(minutes)
    used = _require(data, "used_periods", list, where)
    accumulated = _require(data, "accumulated_periods", list, where)
    for name, periods in (("used_periods", used), ("accumulated_periods", accumulated)):
        if not all(isinstance(p, int) for p in periods):
            raise RestoreError(f"{where}.{name}: expected a list of integers")
    start_kde = _require(data, "start_kde", bool, where)
    alerts = _require(data, "alerts", list, where)
    if not all(isinstance(a, str) for a in alerts):
        raise RestoreError(f"{where}.alerts: expected a list of strings")
    profile = _profile_from_json(data.get("profile"), f"{where}.profile")
    state = EntityState(
        events_by_week=events,
        used_periods=list(used),
        accumulated_periods=list(accumulated),
        start_kde=start_kde,
        profile=profile,
        alerts=list(alerts),
        n=0, k=0, threshold=0.0,  # filled from config on adoption
    )
    return state


def restore_state(snapshot: Mapping[str, Any] | str) -> MonitorEngine:
    """Rebuild an engine from a snapshot document (parsed or raw JSON text).

    Raises RestoreError naming the offending location on any corruption.
    """
    if isinstance(snapshot, str):
        try:
            snapshot = json.loads(snapshot)
        except json.JSONDecodeError as exc:
            raise RestoreError(f"invalid JSON: {exc}") from exc
    if not isinstance(snapshot, Mapping):
        raise RestoreError("snapshot: expected a JSON object")
    schema = snapshot.get("schema")
    if schema != STATE_SCHEMA:
        raise RestoreError(f"schema: expected {STATE_SCHEMA!r}, got {schema!r}")
    raw_config = snapshot.get("config")
    if not isinstance(raw_config, dict):
        raise RestoreError("config: expected an object")
    try:
        config = DetectorConfig.from_dict(raw_config)
    except ConfigError as exc:
        raise RestoreError(f"config: {exc}") from exc
    raw_users = snapshot.get("users")
    if not isinstance(raw_users, dict):
        raise RestoreError("users: expected an object")
    engine = MonitorEngine(config)
    for user_id, raw_state in raw_users.items():
        where = f"users[{user_id!r}]"
        state = _state_from_json(raw_state, where)
        state.n, state.k, state.threshold = config.n, config.k, config.threshold
        try:
            state.check_invariants()
        except ValueError as exc:
            raise RestoreError(f"{where}: {exc}") from exc
        engine.adopt_user(user_id, state)
    return engine
