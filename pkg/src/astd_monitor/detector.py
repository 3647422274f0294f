"""Per-user activity monitor wired from the state-machine runtime.

The composition is an interleave over the event's user id; each user gets
an isolated two-automaton pipeline sharing one attribute scope:

* ``training``: an unguarded self-loop whose transition action records the
  event into the sliding week window, and whose node action refits the
  density profile whenever the window manager raised the refresh flag.
* ``alerting``: a self-loop guarded on "a profile exists" whose transition
  action scores the event's minute of day and emits an alert at or below
  the density threshold.

The training side runs first within each step, so the very event that
completes a window is scored against the profile that window produced.

Window management: ``used_periods`` holds the weeks feeding the current
profile; once it spans at least ``n`` weeks holding at least ``k`` events,
newer weeks collect in ``accumulated_periods``. The first event of the
first accumulated week raises ``start_kde`` (profile refit over the used
window). When the window minus its oldest week plus the accumulated weeks
reaches ``k`` events again (with at least two accumulated events), the
window advances: oldest week dropped, accumulated weeks adopted, the
accumulator cleared. Weeks more than ``max_gap_weeks`` older than the
window head are never adopted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from datetime import datetime
from typing import Any, Callable, Mapping, MutableMapping

from .astd import (
    AstdInstance,
    AttributeDecl,
    Automaton,
    EventMessage,
    Flow,
    Interleave,
    StepReport,
    Transition,
    build,
    step,
)
from .calendar_periods import (
    DEFAULT_MAX_GAP_WEEKS,
    compute_minute,
    compute_period,
    count_events,
    insert_period,
    parse_timestamp,
    week_distance,
)
from .kde import KdeProfile, density_at, fit_profile, fuse_samples, select_bandwidth

EVENT_LABEL = "activity"
USER_VAR = "user"


class ConfigError(ValueError):
    """A monitor configuration value is out of range or unsupported."""


@dataclass
class DetectorConfig:
    """Tuning knobs for the window manager and the density model.

    ``n``: minimum number of weeks in a full training window.
    ``k``: minimum number of events in a full training window.
    ``threshold``: density at or below which a minute is anomalous.
    ``max_gap_weeks``: reject weeks this much older than the window head.
    ``bandwidth_method``: "silverman" (data-driven) or "fixed".
    ``bandwidth_value``: kernel bandwidth in minutes when fixed.
    ``kernel``: only "gaussian" is supported.
    ``circular``: wrap minute distances around midnight when fitting.
    """

    n: int = 3
    k: int = 10
    threshold: float = 0.001
    max_gap_weeks: int = DEFAULT_MAX_GAP_WEEKS
    bandwidth_method: str = "silverman"
    bandwidth_value: float | None = None
    kernel: str = "gaussian"
    circular: bool = False

    def validate(self) -> None:
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"n must be an integer >= 1, got {self.n!r}")
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"k must be an integer >= 1, got {self.k!r}")
        if not (isinstance(self.threshold, (int, float)) and self.threshold > 0):
            raise ConfigError(f"threshold must be > 0, got {self.threshold!r}")
        if not isinstance(self.max_gap_weeks, int) or self.max_gap_weeks < 0:
            raise ConfigError(f"max_gap_weeks must be an integer >= 0, got {self.max_gap_weeks!r}")
        if self.bandwidth_method not in ("silverman", "fixed"):
            raise ConfigError(f"bandwidth_method must be 'silverman' or 'fixed', got {self.bandwidth_method!r}")
        if self.bandwidth_method == "fixed":
            if not (isinstance(self.bandwidth_value, (int, float)) and self.bandwidth_value > 0):
                raise ConfigError(f"fixed bandwidth requires bandwidth_value > 0, got {self.bandwidth_value!r}")
        if self.kernel != "gaussian":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")
        if not isinstance(self.circular, bool):
            raise ConfigError(f"circular must be a boolean, got {self.circular!r}")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DetectorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        config = cls(**dict(data))
        config.validate()
        return config


@dataclass(frozen=True)
class AlertRecord:
    """One anomalous event: its density was at or below the threshold."""

    event_id: str
    user_id: str
    period: int
    minute: int
    density: float
    threshold: float

    def __post_init__(self):
        if self.density > self.threshold:
            raise ValueError(
                f"alert density {self.density} exceeds threshold {self.threshold}"
            )


@dataclass
class EntityState:
    """Deep-copied view of one user's attribute scope at a step boundary."""

    events_by_week: dict[int, list[int]]
    used_periods: list[int]
    accumulated_periods: list[int]
    start_kde: bool
    profile: KdeProfile | None
    alerts: list[str]
    n: int
    k: int
    threshold: float

    @classmethod
    def capture(cls, attrs: Mapping[str, Any]) -> "EntityState":
        return cls(
            events_by_week={p: list(v) for p, v in attrs["events_by_week"].items()},
            used_periods=list(attrs["used_periods"]),
            accumulated_periods=list(attrs["accumulated_periods"]),
            start_kde=attrs["start_kde"],
            profile=attrs["user_kde"],
            alerts=list(attrs["alerts"]),
            n=attrs["n"],
            k=attrs["k"],
            threshold=attrs["threshold"],
        )

    def check_invariants(self) -> None:
        """Raise ValueError on the first violated state invariant."""
        for name, periods in (("used_periods", self.used_periods),
                              ("accumulated_periods", self.accumulated_periods)):
            for a, b in zip(periods, periods[1:]):
                if week_distance(a, b) <= 0:
                    raise ValueError(f"{name} not strictly ascending: {a} before {b}")
        overlap = set(self.used_periods) & set(self.accumulated_periods)
        if overlap:
            raise ValueError(f"used and accumulated periods overlap: {sorted(overlap)}")
        if self.accumulated_periods:
            if not self.used_periods:
                raise ValueError("accumulated periods present with an empty window")
            if week_distance(self.used_periods[-1], self.accumulated_periods[0]) <= 0:
                raise ValueError(
                    f"accumulated period {self.accumulated_periods[0]} does not follow "
                    f"window end {self.used_periods[-1]}"
                )
        if self.start_kde:
            raise ValueError("start_kde is set between steps")
        if self.profile is not None and not isinstance(self.profile, KdeProfile):
            raise ValueError(f"profile has unexpected type {type(self.profile).__name__}")
        for period, minutes in self.events_by_week.items():
            for m in minutes:
                if not 0 <= m <= 1439:
                    raise ValueError(f"minute {m} out of range in week {period}")
        for alert in self.alerts:
            if not isinstance(alert, str):
                raise ValueError(f"alert id {alert!r} is not a string")


# --------------------------------------------------------------------------
# The three registered actions
# --------------------------------------------------------------------------

def add_event(attrs: MutableMapping[str, Any], creation: datetime,
              config: DetectorConfig) -> None:
    """Record one event and advance the sliding week window.

    The minute is always appended to its week's list, even when the week
    itself is too stale to join the window; such orphaned weeks are purged
    at the next profile refresh.
    """
    period = compute_period(creation)
    minute = compute_minute(creation)
    events = attrs["events_by_week"]
    events.setdefault(period, []).append(minute)

    used = attrs["used_periods"]
    if (not used
            or count_events(events, used) < config.k
            or len(used) < config.n
            or period <= used[-1]):
        # Window still filling, or the event belongs to a current or past
        # window week: try to adopt the week into the window.
        if period not in used:
            attrs["used_periods"] = insert_period(used, period, config.max_gap_weeks)
    else:
        # Window full and the week is strictly newer: accumulate it. The
        # first accumulated week marks the window as complete, which
        # triggers the profile refresh for this step.
        acc = attrs["accumulated_periods"]
        if not acc:
            attrs["start_kde"] = True
        if period not in acc:
            attrs["accumulated_periods"] = insert_period(acc, period, config.max_gap_weeks)

    used = attrs["used_periods"]
    acc = attrs["accumulated_periods"]
    renewed = used[1:] + acc
    if (len(used) >= config.n
            and count_events(events, acc) >= 2
            and count_events(events, renewed) >= config.k):
        events.pop(used[0], None)
        attrs["used_periods"] = renewed
        attrs["accumulated_periods"] = []


def refresh_profile(attrs: MutableMapping[str, Any], config: DetectorConfig) -> bool:
    """Refit the density profile if the window manager requested it.

    Returns True when a profile was computed. Also purges event weeks that
    belong to neither list, bounding memory between refreshes.
    """
    if not attrs["start_kde"]:
        return False
    attrs["user_kde"] = None
    events = attrs["events_by_week"]
    live = set(attrs["used_periods"]) | set(attrs["accumulated_periods"])
    for period in [p for p in events if p not in live]:
        del events[period]
    sample = fuse_samples(events, attrs["used_periods"])
    if not sample:
        raise AssertionError("profile refresh requested with no training data")
    if config.bandwidth_method == "fixed":
        bandwidth = float(config.bandwidth_value)
    else:
        bandwidth = select_bandwidth(sample)
    attrs["user_kde"] = fit_profile(sample, bandwidth, circular=config.circular)
    attrs["start_kde"] = False
    return True


def check_event(attrs: MutableMapping[str, Any], event_id: str, user_id: str,
                creation: datetime) -> AlertRecord | None:
    """Score one event against the current profile; alert when at or below
    the threshold. Callers must ensure a profile exists."""
    minute = compute_minute(creation)
    density = density_at(attrs["user_kde"], minute)
    threshold = attrs["threshold"]
    if density <= threshold:
        attrs["alerts"].append(event_id)
        return AlertRecord(
            event_id=event_id,
            user_id=user_id,
            period=compute_period(creation),
            minute=minute,
            density=density,
            threshold=threshold,
        )
    return None


# --------------------------------------------------------------------------
# Composition and registry
# --------------------------------------------------------------------------

def detector_spec() -> Interleave:
    """The monitor's composition tree.

    All mutable state is declared on the per-user pipeline node, so both
    automata share it while users stay fully isolated from each other.
    """
    training = Automaton(
        name="training",
        states=("ready",),
        initial="ready",
        transitions=(
            Transition(event=EVENT_LABEL, source="ready", target="ready",
                       action="add_event"),
        ),
        action="refresh_profile",
    )
    alerting = Automaton(
        name="alerting",
        states=("ready",),
        initial="ready",
        transitions=(
            Transition(event=EVENT_LABEL, source="ready", target="ready",
                       guard="profile_exists", action="check_event"),
        ),
    )
    pipeline = Flow(
        name="user_pipeline",
        left=training,
        right=alerting,
        attributes=(
            AttributeDecl("events_by_week", "init_events_by_week"),
            AttributeDecl("used_periods", "init_period_list"),
            AttributeDecl("accumulated_periods", "init_period_list"),
            AttributeDecl("start_kde", "init_false"),
            AttributeDecl("user_kde", "init_no_profile"),
            AttributeDecl("alerts", "init_alert_list"),
            AttributeDecl("n", "init_n"),
            AttributeDecl("k", "init_k"),
            AttributeDecl("threshold", "init_threshold"),
        ),
    )
    return Interleave(name="monitor", variable=USER_VAR, child=pipeline)


def make_registry(config: DetectorConfig) -> dict[str, Callable]:
    """Guards, actions, and initializers closed over one configuration."""

    def _add_event(payload, attrs):
        add_event(attrs, payload["creation"], config)

    def _refresh_profile(payload, attrs):
        return refresh_profile(attrs, config)

    def _profile_exists(payload, attrs):
        return attrs["user_kde"] is not None

    def _check_event(payload, attrs):
        return check_event(attrs, payload["event_id"], payload[USER_VAR],
                           payload["creation"])

    return {
        "init_events_by_week": dict,
        "init_period_list": list,
        "init_false": lambda: False,
        "init_no_profile": lambda: None,
        "init_alert_list": list,
        "init_n": lambda: config.n,
        "init_k": lambda: config.k,
        "init_threshold": lambda: config.threshold,
        "add_event": _add_event,
        "refresh_profile": _refresh_profile,
        "profile_exists": _profile_exists,
        "check_event": _check_event,
    }


def build_detector(config: DetectorConfig) -> AstdInstance:
    """Validate the config and build a fresh monitor instance."""
    try:
        config.validate()
    except ConfigError:
        raise
    return build(detector_spec(), make_registry(config))


# --------------------------------------------------------------------------
# Engine facade
# --------------------------------------------------------------------------

class MonitorEngine:
    """Drives the composition tree one event at a time and collects alerts."""

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config if config is not None else DetectorConfig()
        self.root = build_detector(self.config)
        self.profiles_computed = 0
        self.alerts_emitted = 0
        self.events_delivered = 0
        self.last_report: StepReport | None = None

    @property
    def users_seen(self) -> int:
        return len(self.root.children)

    def process(self, event_id: str, user_id: str,
                creation: datetime | str) -> list[AlertRecord]:
        """Deliver one event; return the alerts it raised (empty or one)."""
        if isinstance(creation, str):
            creation = parse_timestamp(creation)
        ev = EventMessage(EVENT_LABEL, {
            USER_VAR: user_id,
            "event_id": event_id,
            "creation": creation,
        })
        report = step(self.root, ev)
        self.last_report = report
        self.events_delivered += 1
        alerts: list[AlertRecord] = []
        for run in report.actions:
            if run.action == "refresh_profile" and run.result is True:
                self.profiles_computed += 1
            elif run.action == "check_event" and isinstance(run.result, AlertRecord):
                alerts.append(run.result)
        self.alerts_emitted += len(alerts)
        return alerts

    def entity_state(self, user_id: str) -> EntityState | None:
        """Deep-copied state of one user, or None if never seen."""
        child = self.root.children.get(user_id)
        if child is None:
            return None
        return EntityState.capture(child.scope)

    def export_users(self) -> dict[str, EntityState]:
        return {user: EntityState.capture(child.scope)
                for user, child in self.root.children.items()}

    def adopt_user(self, user_id: str, state: EntityState) -> None:
        """Install a previously captured state for one user."""
        if state.start_kde:
            raise ValueError("cannot adopt a state captured mid-step (start_kde set)")
        child = self.root.ensure_child(user_id)
        scope = child.scope
        scope["events_by_week"] = {int(p): [int(m) for m in v]
                                   for p, v in state.events_by_week.items()}
        scope["used_periods"] = [int(p) for p in state.used_periods]
        scope["accumulated_periods"] = [int(p) for p in state.accumulated_periods]
        scope["start_kde"] = False
        scope["user_kde"] = state.profile
        scope["alerts"] = list(state.alerts)
