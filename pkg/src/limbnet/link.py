"""Measured 4G/5G link profiles and access-network latency accounting.

All latency arithmetic is exact (``Fraction`` milliseconds); rounding to
whole milliseconds happens only when results are presented.
"""
from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Optional, Union

from .units import DataRate, Number, as_fraction, round_half_up


class Generation(str, enum.Enum):
    LTE = "LTE"
    NR = "NR"


class Modulation(str, enum.Enum):
    QAM64 = "QAM64"
    QAM256 = "QAM256"


class Verdict(str, enum.Enum):
    FEASIBLE = "Feasible"
    MARGINAL = "Marginal"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class RadioParams:
    """TDD/scheduler settings of the cell. Informational only."""

    dl_slots: int
    ul_slots: int
    sr_period_ms: int
    ul_modulation: Modulation

    def to_json(self) -> dict[str, Any]:
        return {"dl_slots": self.dl_slots, "ul_slots": self.ul_slots,
                "sr_period": self.sr_period_ms, "ul_modulation": self.ul_modulation.value}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> RadioParams:
        return cls(int(doc["dl_slots"]), int(doc["ul_slots"]), int(doc["sr_period"]),
                   Modulation(doc["ul_modulation"]))


NR_STANDARD = RadioParams(dl_slots=6, ul_slots=3, sr_period_ms=20, ul_modulation=Modulation.QAM64)
NR_UPLINK_OPTIMIZED = RadioParams(dl_slots=2, ul_slots=7, sr_period_ms=10, ul_modulation=Modulation.QAM256)


@dataclass(frozen=True)
class LinkProfile:
    name: str
    label: str
    generation: Generation
    bandwidth_mhz: int
    optimized: bool
    uplink_rate: DataRate
    downlink_rate: DataRate
    rtt_mean: Fraction
    radio_params: Optional[RadioParams] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rtt_mean", as_fraction(self.rtt_mean))
        if not self.uplink_rate or not self.downlink_rate:
            raise ValueError(f"{self.name}: link rates must be > 0")
        if self.rtt_mean <= 0:
            raise ValueError(f"{self.name}: rtt_mean must be > 0")

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "label": self.label,
            "generation": self.generation.value,
            "bandwidth_mhz": self.bandwidth_mhz,
            "optimized": self.optimized,
            "ul_mbps": _num(self.uplink_rate.in_mbps),
            "dl_mbps": _num(self.downlink_rate.in_mbps),
            "rtt_ms": _num(self.rtt_mean),
            "radio_params": self.radio_params.to_json() if self.radio_params else None,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> LinkProfile:
        radio = doc.get("radio_params")
        return cls(
            name=doc["name"],
            label=doc.get("label", doc["name"]),
            generation=Generation(doc["generation"]),
            bandwidth_mhz=int(doc["bandwidth_mhz"]),
            optimized=bool(doc["optimized"]),
            uplink_rate=DataRate.mbps(as_fraction(doc["ul_mbps"])),
            downlink_rate=DataRate.mbps(as_fraction(doc["dl_mbps"])),
            rtt_mean=as_fraction(doc["rtt_ms"]),
            radio_params=RadioParams.from_json(radio) if radio else None,
        )


def _num(value: Fraction) -> Union[int, float]:
    return int(value) if value.denominator == 1 else float(value)


def builtin_profiles() -> list[LinkProfile]:
    """The six measured testbed configurations."""
    lte, nr = Generation.LTE, Generation.NR

    def p(name, label, gen, bw, opt, ul, dl, rtt, radio):
        return LinkProfile(name, label, gen, bw, opt, DataRate.mbps(ul), DataRate.mbps(dl), rtt, radio)

    return [
        p("4g10", "4G (10 MHz)", lte, 10, False, 22, 47, 24, None),
        p("4g20", "4G (20 MHz)", lte, 20, False, 48, 93, 27, None),
        p("5g60", "5G (60 MHz)", nr, 60, False, 60, 302, 23, NR_STANDARD),
        p("5g100", "5G (100 MHz)", nr, 100, False, 107, 244, 30, NR_STANDARD),
        p("5g60opt", "5G (60 MHz) opt.", nr, 60, True, 180, 99, 27, NR_UPLINK_OPTIMIZED),
        p("5g100opt", "5G (100 MHz) opt.", nr, 100, True, 236, 160, 27, NR_UPLINK_OPTIMIZED),
    ]


def get_profile(name: str) -> LinkProfile:
    for profile in builtin_profiles():
        if profile.name == name:
            return profile
    known = ", ".join(p.name for p in builtin_profiles())
    raise KeyError(f"unknown link profile {name!r} (known: {known})")


@dataclass(frozen=True)
class LatencyBudget:
    """End-to-end response window for comfortable prosthesis control."""

    lower: Fraction = Fraction(100)
    upper: Fraction = Fraction(125)

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", as_fraction(self.lower))
        object.__setattr__(self, "upper", as_fraction(self.upper))
        if not 0 < self.lower <= self.upper:
            raise ValueError(f"latency budget needs 0 < lower <= upper, got [{self.lower}, {self.upper}]")


def frame_transmission_time(frame_bits: Number, uplink_rate: DataRate) -> Fraction:
    """Milliseconds needed to push *frame_bits* through *uplink_rate*."""
    if uplink_rate.bits_per_second <= 0:
        raise ValueError("nonpositive link rate")
    return as_fraction(frame_bits) / uplink_rate.bits_per_ms


def access_network_latency(tx_time: Number, rtt: Number) -> Fraction:
    """Uplink transmission time plus round-trip time; the few-byte downlink
    command leg is ignored."""
    tx_time, rtt = as_fraction(tx_time), as_fraction(rtt)
    if tx_time < 0 or rtt < 0:
        raise ValueError("latency components must be nonnegative")
    return tx_time + rtt


def remaining_budget(access_latency: Number, budget: LatencyBudget = LatencyBudget()) -> Fraction:
    return budget.upper - as_fraction(access_latency)


def budget_verdict(access_latency: Number, edge_processing: Number,
                   budget: LatencyBudget = LatencyBudget()) -> Verdict:
    total = as_fraction(access_latency) + as_fraction(edge_processing)
    if total > budget.upper:
        return Verdict.INFEASIBLE
    if total > budget.lower:
        return Verdict.MARGINAL
    return Verdict.FEASIBLE


class JitterMode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    SHIFTED_LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class RttModel:
    """Round-trip time distribution.

    ``SHIFTED_LOGNORMAL`` draws ``minimum + LogNormal(mu, sigma)`` with
    ``mu`` chosen so that the distribution mean equals ``mean``.
    """

    mean: Fraction
    mode: JitterMode = JitterMode.DETERMINISTIC
    sigma: float = 0.0
    minimum: Optional[Fraction] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", as_fraction(self.mean))
        object.__setattr__(self, "mode", JitterMode(self.mode))
        if self.mean <= 0:
            raise ValueError("rtt mean must be > 0")
        if self.sigma < 0:
            raise ValueError(f"rtt sigma must be >= 0, got {self.sigma}")
        if self.minimum is None:
            object.__setattr__(self, "minimum", self.mean / 2)
        else:
            object.__setattr__(self, "minimum", as_fraction(self.minimum))
        if self.mode is JitterMode.SHIFTED_LOGNORMAL and not 0 < self.minimum < self.mean:
            raise ValueError("rtt minimum must satisfy 0 < minimum < mean")

    @classmethod
    def deterministic(cls, mean: Number) -> RttModel:
        return cls(as_fraction(mean))

    @property
    def mu(self) -> float:
        return math.log(self.mean - self.minimum) - self.sigma**2 / 2

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"mode": self.mode.value, "mean_ms": _num(self.mean)}
        if self.mode is JitterMode.SHIFTED_LOGNORMAL:
            doc.update(sigma=self.sigma, minimum_ms=_num(self.minimum))
        return doc


def sample_rtt(model: RttModel, rng: random.Random) -> Fraction:
    """Draw one RTT in milliseconds, quantized to whole nanoseconds."""
    if model.mode is JitterMode.DETERMINISTIC or model.sigma == 0:
        return model.mean
    excess = rng.lognormvariate(model.mu, model.sigma)
    return model.minimum + Fraction(round(excess * 1_000_000), 1_000_000)


def table1_rows(profiles: Optional[list[LinkProfile]] = None) -> list[dict[str, Any]]:
    profiles = builtin_profiles() if profiles is None else profiles
    return [{"configuration": p.label, "uplink_mbps": _num(p.uplink_rate.in_mbps),
             "downlink_mbps": _num(p.downlink_rate.in_mbps), "rtt_ms": _num(p.rtt_mean)}
            for p in profiles]


def table2_rows(frame_bits: Number, profiles: Optional[list[LinkProfile]] = None) -> list[dict[str, Any]]:
    """Per-profile frame transmission time and access latency, whole ms."""
    profiles = builtin_profiles() if profiles is None else profiles
    rows = []
    for p in profiles:
        tx = frame_transmission_time(frame_bits, p.uplink_rate)
        access = access_network_latency(tx, p.rtt_mean)
        rows.append({
            "configuration": p.label,
            "frame_tx_ms": round_half_up(tx),
            "access_latency_ms": round_half_up(access),
            "remaining_budget_ms": round_half_up(remaining_budget(access)),
            "verdict": budget_verdict(access, 0).value,
        })
    return rows
