"""Scenario files: JSON schema, validation and conversion to :class:`Scenario`."""
from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Mapping, Union

import jsonschema

from .catalog import catalog_by_id, stream_from_json
from .control import FailsafeConfig
from .engine import EdgeProcessing, Scenario, ScenarioError
from .link import JitterMode, LatencyBudget, LinkProfile, RttModel, get_profile
from .scheduler import SchedulerPolicy
from .units import as_fraction

_number = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_positive = {"type": "number", "exclusiveMinimum": 0}

_INLINE_STREAM = {
    "type": "object",
    "required": ["id", "kind", "direction", "priority_rank"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "kind": {"enum": ["SampledSensor", "Video", "Feedback", "Command"]},
        "direction": {"enum": ["Uplink", "Downlink"]},
        "priority_rank": {"type": "integer", "minimum": 0},
        "channels": {"type": "integer", "minimum": 0},
        "sample_rate": _nonneg,
        "bits_per_sample": {"type": "integer", "minimum": 1, "maximum": 64},
        "width": {"type": "integer", "minimum": 0},
        "height": {"type": "integer", "minimum": 0},
        "bits_per_pixel": {"type": "integer", "minimum": 0},
        "fps": _positive,
        # a string holds an exact ratio such as "1/30"
        "frame_interval_s": {"oneOf": [_positive, {"type": "string", "pattern": r"^[0-9]+/[1-9][0-9]*$"}]},
        "rate_bps": _nonneg,
        "payload_bits": {"type": "integer", "minimum": 1},
    },
}

_INLINE_LINK = {
    "type": "object",
    "required": ["name", "generation", "bandwidth_mhz", "optimized", "ul_mbps", "dl_mbps", "rtt_ms"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "label": {"type": "string"},
        "generation": {"enum": ["LTE", "NR"]},
        "bandwidth_mhz": {"type": "integer", "minimum": 0},
        "optimized": {"type": "boolean"},
        "ul_mbps": _positive,
        "dl_mbps": _positive,
        "rtt_ms": _positive,
        "radio_params": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["dl_slots", "ul_slots", "sr_period", "ul_modulation"],
                    "properties": {
                        "dl_slots": {"type": "integer", "minimum": 0},
                        "ul_slots": {"type": "integer", "minimum": 0},
                        "sr_period": {"type": "integer", "minimum": 0},
                        "ul_modulation": {"enum": ["QAM64", "QAM256"]},
                    },
                },
            ]
        },
    },
}

SCENARIO_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["streams", "link"],
    "properties": {
        "streams": {
            "type": "array",
            "minItems": 1,
            "items": {"oneOf": [{"type": "string", "minLength": 1}, _INLINE_STREAM]},
        },
        "link": {"oneOf": [{"type": "string"}, _INLINE_LINK]},
        "rtt_model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mode"],
            "properties": {
                "mode": {"enum": ["deterministic", "lognormal"]},
                "mean_ms": _positive,
                "sigma": _nonneg,
                "minimum_ms": _positive,
            },
        },
        "qos": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "discipline": {"enum": ["strict", "sliced"]},
                "slices": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["rank", "fraction"],
                        "properties": {
                            "rank": {"type": "integer", "minimum": 0},
                            "fraction": {"type": "number", "minimum": 0, "maximum": 1},
                        },
                    },
                },
                "preemptive": {"type": "boolean"},
                "queue_limit": {"type": "integer", "minimum": 1},
            },
        },
        "edge_processing_ms": {
            "oneOf": [
                _nonneg,
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mean"],
                    "properties": {"mean": _nonneg, "sigma": _nonneg},
                },
            ]
        },
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"lower_ms": _positive, "upper_ms": _positive},
        },
        "failsafe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "miss_threshold": {"type": "integer", "minimum": 1},
                "command_deadline_ms": {"oneOf": [{"type": "null"}, _positive]},
                "recovery_probes": {"type": "integer", "minimum": 1},
                "alert_channel": {"type": "string"},
            },
        },
        "duration_s": _positive,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "link_events": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["time_ms", "event"],
                "properties": {"time_ms": _nonneg, "event": {"enum": ["up", "down"]}},
            },
        },
    },
}

DEFAULT_SCENARIO: dict[str, Any] = {
    "streams": ["rgbd_camera", "command"],
    "link": "5g100opt",
    "rtt_model": {"mode": "deterministic"},
    "qos": {"discipline": "strict", "slices": [], "preemptive": True, "queue_limit": 3},
    "edge_processing_ms": 0,
    "budget": {"lower_ms": 100, "upper_ms": 125},
    "failsafe": {"miss_threshold": 3, "command_deadline_ms": None, "recovery_probes": 10,
                 "alert_channel": "haptic_feedback"},
    "duration_s": 2,
    "seed": 0,
    "link_events": [],
}

_validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


def _path(error: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in error.absolute_path]
    return ".".join(parts) if parts else "<root>"


def validate_document(doc: Any) -> None:
    """Schema check; raises :class:`ScenarioError` for the first problem found."""
    errors = sorted(_validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        error = errors[0]
        raise ScenarioError(_path(error), error.message)


def merge_defaults(doc: Mapping[str, Any]) -> dict[str, Any]:
    """Fill every optional section so the result is fully explicit."""
    merged = copy.deepcopy(DEFAULT_SCENARIO)
    for key, value in doc.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **copy.deepcopy(value)}
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def scenario_from_dict(doc: Any) -> Scenario:
    validate_document(doc)
    doc = merge_defaults(doc)
    catalog = catalog_by_id()

    streams = []
    for i, item in enumerate(doc["streams"]):
        if isinstance(item, str):
            if item not in catalog:
                raise ScenarioError(f"streams.{i}", f"unknown builtin stream {item!r}")
            streams.append(catalog[item])
        else:
            try:
                streams.append(stream_from_json(item))
            except (KeyError, ValueError, TypeError) as exc:
                raise ScenarioError(f"streams.{i}", str(exc)) from None

    if isinstance(doc["link"], str):
        try:
            link = get_profile(doc["link"])
        except KeyError as exc:
            raise ScenarioError("link", exc.args[0]) from None
    else:
        try:
            link = LinkProfile.from_json(doc["link"])
        except ValueError as exc:
            raise ScenarioError("link", str(exc)) from None

    rtt = doc["rtt_model"]
    try:
        rtt_model = RttModel(
            mean=as_fraction(rtt.get("mean_ms", link.rtt_mean)),
            mode=JitterMode(rtt["mode"]),
            sigma=float(rtt.get("sigma", 0.0)),
            minimum=as_fraction(rtt["minimum_ms"]) if "minimum_ms" in rtt else None,
        )
    except ValueError as exc:
        raise ScenarioError("rtt_model", str(exc)) from None

    try:
        qos = SchedulerPolicy.from_json(doc["qos"])
    except ValueError as exc:
        raise ScenarioError("qos", str(exc)) from None

    edge = doc["edge_processing_ms"]
    if isinstance(edge, dict):
        edge_processing = EdgeProcessing(as_fraction(edge["mean"]), as_fraction(edge.get("sigma", 0)))
    else:
        edge_processing = EdgeProcessing(as_fraction(edge))

    try:
        budget = LatencyBudget(as_fraction(doc["budget"]["lower_ms"]), as_fraction(doc["budget"]["upper_ms"]))
    except ValueError as exc:
        raise ScenarioError("budget", str(exc)) from None

    fs = doc["failsafe"]
    deadline = fs.get("command_deadline_ms")
    failsafe = FailsafeConfig(
        miss_threshold=fs["miss_threshold"],
        command_deadline=None if deadline is None else as_fraction(deadline),
        recovery_probes=fs["recovery_probes"],
        alert_channel=fs["alert_channel"],
    )

    return Scenario(
        streams=tuple(streams),
        link=link,
        rtt_model=rtt_model,
        qos=qos,
        edge_processing=edge_processing,
        budget=budget,
        failsafe=failsafe,
        duration=as_fraction(doc["duration_s"]),
        seed=doc["seed"],
        link_events=tuple((as_fraction(e["time_ms"]), e["event"]) for e in doc["link_events"]),
    )


def load_scenario(path: Union[str, Path]) -> tuple[Scenario, dict[str, Any]]:
    """Read a scenario file; returns the scenario and its fully explicit document."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("<json>", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    scenario = scenario_from_dict(doc)
    return scenario, merge_defaults(doc)


def set_override(doc: dict[str, Any], assignment: str) -> None:
    """Apply ``dotted.key=value`` to *doc*; the value is parsed as JSON when possible."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ScenarioError("<override>", f"expected key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target = doc
    parts = key.split(".")
    for part in parts[:-1]:
        target = target.setdefault(part, {})
        if not isinstance(target, dict):
            raise ScenarioError(key, "cannot override inside a non-object value")
    target[parts[-1]] = value
