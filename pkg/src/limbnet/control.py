"""Shared-control mode machine: edge control with a local failsafe.

The limb runs under edge control (full dexterity) until commands stop
arriving in time or the link drops, then falls back to the local
controller (gross motions only) and alerts the user. Returning to edge
control needs a streak of on-time commands over a live link, so a link
coming back up is not enough on its own.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

from .units import Number, as_fraction


class Mode(str, enum.Enum):
    EDGE_ACTIVE = "EdgeActive"
    LOCAL_FALLBACK = "LocalFallback"


class Capability(str, enum.Enum):
    FULL_DEXTERITY = "FullDexterity"
    GROSS_MOTIONS = "GrossMotions"


class Cause(str, enum.Enum):
    TIMEOUT_STREAK = "TimeoutStreak"
    LINK_DOWN = "LinkDown"
    RECOVERY_STREAK = "RecoveryStreak"
    LINK_UP_PROBES = "LinkUp+Probes"


class Outcome(str, enum.Enum):
    ON_TIME = "on_time"
    MISSED = "missed"


class LinkEvent(str, enum.Enum):
    UP = "up"
    DOWN = "down"


class ClockError(ValueError):
    pass


@dataclass(frozen=True)
class FailsafeConfig:
    miss_threshold: int = 3
    # None means "use the latency budget's upper bound"
    command_deadline: Optional[Fraction] = None
    recovery_probes: int = 10
    alert_channel: str = "haptic_feedback"

    def __post_init__(self) -> None:
        if self.command_deadline is not None:
            object.__setattr__(self, "command_deadline", as_fraction(self.command_deadline))
            if self.command_deadline <= 0:
                raise ValueError("command_deadline must be > 0")
        if self.miss_threshold < 1:
            raise ValueError("miss_threshold must be >= 1")
        if self.recovery_probes < 1:
            raise ValueError("recovery_probes must be >= 1")

    def to_json(self) -> dict[str, Any]:
        deadline = self.command_deadline
        return {
            "miss_threshold": self.miss_threshold,
            "command_deadline_ms": None if deadline is None else float(deadline),
            "recovery_probes": self.recovery_probes,
            "alert_channel": self.alert_channel,
        }


_CAPABILITY = {Mode.EDGE_ACTIVE: Capability.FULL_DEXTERITY,
               Mode.LOCAL_FALLBACK: Capability.GROSS_MOTIONS}


@dataclass(frozen=True)
class ControlMode:
    mode: Mode
    capability: Capability
    since: Fraction


@dataclass(frozen=True)
class ModeTransition:
    time: Fraction
    from_mode: Mode
    to_mode: Mode
    cause: Cause
    alert_emitted: bool = True
    alert_channel: Optional[str] = None

    def to_json(self) -> dict[str, Any]:
        return {
            "type": "mode_transition",
            "time": float(self.time),
            "from": self.from_mode.value,
            "to": self.to_mode.value,
            "cause": self.cause.value,
            "alert_emitted": self.alert_emitted,
            "alert_channel": self.alert_channel,
        }


@dataclass
class FailsafeController:
    config: FailsafeConfig = field(default_factory=FailsafeConfig)
    mode: Mode = Mode.EDGE_ACTIVE
    since: Fraction = Fraction(0)
    miss_streak: int = 0
    probe_streak: int = 0
    link_up: bool = True
    # set when the link dropped at some point during the current fallback
    lost_link: bool = False
    last_time: Optional[Fraction] = None
    transitions: list[ModeTransition] = field(default_factory=list)

    @property
    def state(self) -> ControlMode:
        return ControlMode(self.mode, _CAPABILITY[self.mode], self.since)

    def capability(self) -> Capability:
        return _CAPABILITY[self.mode]

    def _tick(self, now: Number) -> Fraction:
        now = as_fraction(now)
        if self.last_time is not None and now < self.last_time:
            raise ClockError(f"non-monotone clock: {now} < {self.last_time}")
        self.last_time = now
        return now

    def _switch(self, to: Mode, cause: Cause, now: Fraction) -> ModeTransition:
        transition = ModeTransition(now, self.mode, to, cause, True, self.config.alert_channel)
        self.mode = to
        self.since = now
        self.miss_streak = 0
        self.probe_streak = 0
        if to is Mode.EDGE_ACTIVE:
            self.lost_link = False
        self.transitions.append(transition)
        return transition

    def on_command_outcome(self, outcome: Outcome, now: Number) -> Optional[ModeTransition]:
        now = self._tick(now)
        outcome = Outcome(outcome)
        if self.mode is Mode.EDGE_ACTIVE:
            if outcome is Outcome.ON_TIME:
                self.miss_streak = 0
                return None
            self.miss_streak += 1
            if self.miss_streak >= self.config.miss_threshold:
                return self._switch(Mode.LOCAL_FALLBACK, Cause.TIMEOUT_STREAK, now)
            return None

        if outcome is Outcome.MISSED:
            self.probe_streak = 0
            return None
        if not self.link_up:
            # a command cannot be a recovery probe while the link is known down
            return None
        self.probe_streak += 1
        if self.probe_streak >= self.config.recovery_probes:
            cause = Cause.LINK_UP_PROBES if self.lost_link else Cause.RECOVERY_STREAK
            return self._switch(Mode.EDGE_ACTIVE, cause, now)
        return None

    def on_link_event(self, event: LinkEvent, now: Number) -> Optional[ModeTransition]:
        now = self._tick(now)
        event = LinkEvent(event)
        if event is LinkEvent.UP:
            self.link_up = True
            return None
        self.link_up = False
        self.lost_link = True
        if self.mode is Mode.EDGE_ACTIVE:
            return self._switch(Mode.LOCAL_FALLBACK, Cause.LINK_DOWN, now)
        self.probe_streak = 0
        return None

    def fallback_time(self, end: Number) -> Fraction:
        """Total time spent in local fallback up to *end*."""
        end = as_fraction(end)
        total = Fraction(0)
        entered: Optional[Fraction] = None
        for t in self.transitions:
            if t.to_mode is Mode.LOCAL_FALLBACK:
                entered = t.time
            elif entered is not None:
                total += t.time - entered
                entered = None
        if entered is not None and end > entered:
            total += end - entered
        return total

    @property
    def fallback_episodes(self) -> int:
        return sum(1 for t in self.transitions if t.to_mode is Mode.LOCAL_FALLBACK)
