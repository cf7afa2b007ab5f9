import pytest
from hypothesis import given, strategies as st

from limbnet.control import (Capability, Cause, ClockError, FailsafeConfig, FailsafeController,
                             LinkEvent, Mode, Outcome)

from oracles import failsafe_reference

MISS, OK = Outcome.MISSED, Outcome.ON_TIME


def feed(ctrl, events):
    for t, ev in enumerate(events):
        if isinstance(ev, LinkEvent):
            ctrl.on_link_event(ev, t)
        else:
            ctrl.on_command_outcome(ev, t)
    return ctrl


def test_three_misses_fall_back_with_one_alert():
    ctrl = feed(FailsafeController(), [MISS, MISS, MISS])
    assert ctrl.mode is Mode.LOCAL_FALLBACK
    assert len(ctrl.transitions) == 1
    t = ctrl.transitions[0]
    assert (t.time, t.cause, t.alert_emitted, t.alert_channel) == (2, Cause.TIMEOUT_STREAK, True,
                                                                   "haptic_feedback")


def test_on_time_resets_miss_streak():
    ctrl = feed(FailsafeController(), [MISS, OK, MISS, MISS])
    assert ctrl.mode is Mode.EDGE_ACTIVE
    assert ctrl.transitions == []


def test_single_probe_recovery():
    ctrl = FailsafeController(FailsafeConfig(miss_threshold=1, recovery_probes=1))
    feed(ctrl, [MISS, OK])
    assert ctrl.mode is Mode.EDGE_ACTIVE
    assert ctrl.transitions[-1].cause is Cause.RECOVERY_STREAK


def test_link_down_falls_back_immediately():
    ctrl = FailsafeController()
    tr = ctrl.on_link_event(LinkEvent.DOWN, 5)
    assert tr.cause is Cause.LINK_DOWN and ctrl.mode is Mode.LOCAL_FALLBACK


def test_link_up_alone_does_not_recover():
    ctrl = feed(FailsafeController(), [LinkEvent.DOWN, LinkEvent.UP])
    assert ctrl.mode is Mode.LOCAL_FALLBACK


def test_second_down_adds_no_alert():
    ctrl = feed(FailsafeController(), [LinkEvent.DOWN, LinkEvent.DOWN])
    assert len(ctrl.transitions) == 1


def test_recovery_after_link_comes_back():
    ctrl = feed(FailsafeController(), [LinkEvent.DOWN, LinkEvent.UP] + [OK] * 10)
    assert ctrl.capability() is Capability.FULL_DEXTERITY
    assert ctrl.transitions[-1].cause is Cause.LINK_UP_PROBES
    assert len(ctrl.transitions) == 2


def test_on_time_while_down_is_not_a_probe():
    ctrl = feed(FailsafeController(FailsafeConfig(recovery_probes=2)),
                [LinkEvent.DOWN, OK, OK, OK, LinkEvent.UP, OK])
    assert ctrl.mode is Mode.LOCAL_FALLBACK
    ctrl.on_command_outcome(OK, 10)
    assert ctrl.mode is Mode.EDGE_ACTIVE


def test_capability_labels():
    ctrl = FailsafeController()
    assert ctrl.capability() is Capability.FULL_DEXTERITY
    ctrl.on_link_event(LinkEvent.DOWN, 0)
    assert ctrl.state.capability is Capability.GROSS_MOTIONS


def test_clock_regression_rejected():
    ctrl = FailsafeController()
    ctrl.on_command_outcome(OK, 10)
    with pytest.raises(ClockError, match="non-monotone clock"):
        ctrl.on_command_outcome(OK, 9)


def test_fallback_time_and_episodes():
    ctrl = FailsafeController(FailsafeConfig(miss_threshold=1, recovery_probes=1))
    ctrl.on_command_outcome(MISS, 10)
    ctrl.on_command_outcome(OK, 25)
    ctrl.on_command_outcome(MISS, 40)
    assert ctrl.fallback_episodes == 2
    assert ctrl.fallback_time(100) == 15 + 60


def test_transition_json():
    ctrl = FailsafeController()
    doc = ctrl.on_link_event(LinkEvent.DOWN, 3).to_json()
    assert doc == {"type": "mode_transition", "time": 3.0, "from": "EdgeActive",
                   "to": "LocalFallback", "cause": "LinkDown", "alert_emitted": True,
                   "alert_channel": "haptic_feedback"}


def test_config_validation():
    with pytest.raises(ValueError):
        FailsafeConfig(miss_threshold=0)
    with pytest.raises(ValueError):
        FailsafeConfig(recovery_probes=0)


_TOKENS = {"miss": MISS, "ok": OK, "up": LinkEvent.UP, "down": LinkEvent.DOWN}


@given(st.lists(st.sampled_from(sorted(_TOKENS)), max_size=40),
       st.integers(1, 4), st.integers(1, 5))
def test_matches_reference_interpreter(events, threshold, probes):
    ctrl = FailsafeController(FailsafeConfig(miss_threshold=threshold, recovery_probes=probes))
    expected = failsafe_reference(events, threshold, probes)
    for t, (ev, (mode, transition)) in enumerate(zip(events, expected)):
        before = len(ctrl.transitions)
        feed_one = ctrl.on_link_event if ev in ("up", "down") else ctrl.on_command_outcome
        feed_one(_TOKENS[ev], t)
        got = ctrl.transitions[before:]
        assert ctrl.mode.value == {"edge": "EdgeActive", "local": "LocalFallback"}[mode]
        if transition is None:
            assert got == []
        else:
            assert len(got) == 1 and got[0].cause.value == transition[2]


def test_dead_link_reaches_fallback_within_bound():
    # commands every 33.3 ms, none answered; deadline 125 ms
    ctrl = FailsafeController()
    period, deadline = 100 / 3, 125
    for k in range(10):
        ctrl.on_command_outcome(MISS, k * period + deadline)
        if ctrl.mode is Mode.LOCAL_FALLBACK:
            break
    assert ctrl.transitions[0].time <= 3 * period + deadline


def test_healthy_link_recovers_within_probe_periods():
    ctrl = FailsafeController(FailsafeConfig(miss_threshold=1))
    ctrl.on_command_outcome(MISS, 0)
    for k in range(1, 11):
        ctrl.on_command_outcome(OK, k)
    assert ctrl.mode is Mode.EDGE_ACTIVE
    assert ctrl.transitions[-1].time == 10
