"""Seeded synthetic PMU streams with labeled grid events.

Stands in for confidential utility data so the whole pipeline is runnable
and testable. Each event perturbs a flat nominal baseline (VMag 1.0 pu,
VAng 0.0 deg, IMag 1.0 pu, Freq 60.0 Hz) only inside its own time slot:

* line outage (0): current drop and voltage sag with exponential recovery
  on a PMU subset; one brief zero-mean frequency wobble.
* transformer outage (1): persistent voltage magnitude/angle steps on a
  subset, current step on a sub-subset, small persistent frequency shift.
* frequency event (2): system-wide linear frequency dip with slow linear
  recovery.
* oscillation (3): damped sinusoid on frequency and (on a subset) voltage.

Frequency is a system-wide quantity, so every class's frequency signature
is applied to all PMUs; magnitude/angle signatures only reach the drawn
subset. Class overlap, and with it task difficulty, is tuned via noise_std.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Iterator, Sequence

import numpy as np

from .ingest import (
    EventClass,
    EventLogEntry,
    Quantity,
    SignalChannel,
    SUPPORTED_FPS,
)
from .seeding import generator

NOMINAL = {
    Quantity.VMAG: 1.0,
    Quantity.VANG: 0.0,
    Quantity.IMAG: 1.0,
    Quantity.FREQ: 60.0,
}

# Each slot holds one event at slot_start + 60 s + jitter; the 4-minute
# window then always fits inside the slot.
MIN_SLOT_SECONDS = 250.0
MAX_JITTER_SECONDS = 10.0
LEAD_SECONDS = 60.0


class InvalidConfig(ValueError):
    """Synthetic-dataset configuration out of bounds."""


class OutOfRange(ValueError):
    """Event time too close to a stream boundary for a full window."""


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for one synthetic dataset."""

    events_per_class: dict[EventClass, int]
    pmus: int = 5
    fps: int = 60
    noise_std: float = 1e-3
    missing_rate: float = 0.01
    seed: int = 0
    events_per_day: int = 12
    slot_seconds: float = 250.0
    start_day: date = date(2016, 1, 1)

    def __post_init__(self):
        counts = {EventClass(k): int(v) for k, v in self.events_per_class.items()}
        for cls in EventClass:
            counts.setdefault(cls, 0)
        object.__setattr__(self, "events_per_class", counts)
        if any(v < 0 for v in counts.values()):
            raise InvalidConfig("events_per_class values must be >= 0")
        if self.pmus < 1:
            raise InvalidConfig("pmus must be >= 1")
        if self.fps not in SUPPORTED_FPS:
            raise InvalidConfig(f"fps must be one of {SUPPORTED_FPS}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise InvalidConfig("missing_rate must be in [0, 1)")
        if self.noise_std < 0.0:
            raise InvalidConfig("noise_std must be >= 0")
        if self.events_per_day < 1:
            raise InvalidConfig("events_per_day must be >= 1")
        if self.slot_seconds < MIN_SLOT_SECONDS:
            raise InvalidConfig(f"slot_seconds must be >= {MIN_SLOT_SECONDS}")

    @property
    def total_events(self) -> int:
        return sum(self.events_per_class.values())

    @property
    def n_days(self) -> int:
        return max(1, math.ceil(self.total_events / self.events_per_day))

    @property
    def pmu_ids(self) -> tuple[str, ...]:
        return tuple(f"PMU{i + 1:02d}" for i in range(self.pmus))

    def day_start(self, day_index: int) -> datetime:
        base = datetime(self.start_day.year, self.start_day.month, self.start_day.day,
                        tzinfo=timezone.utc)
        return base + timedelta(days=day_index)

    @property
    def samples_per_day(self) -> int:
        return round(self.events_per_day * self.slot_seconds * self.fps)


@dataclass(frozen=True)
class EventParams:
    """The drawn realization of one event's signal template."""

    class_label: EventClass
    values: dict[str, float]
    affected_pmus: tuple[str, ...]
    imag_pmus: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScheduledEvent:
    event_id: str
    class_label: EventClass
    day_index: int
    utc_time: datetime
    params: EventParams

    @property
    def epoch(self) -> float:
        return self.utc_time.timestamp()


def _draw_subset(pmu_ids: Sequence[str], rng: np.random.Generator) -> tuple[str, ...]:
    size = int(rng.integers(1, len(pmu_ids) + 1))
    picked = rng.choice(len(pmu_ids), size=size, replace=False)
    return tuple(pmu_ids[i] for i in sorted(picked))


def draw_event_params(
    class_label: EventClass,
    pmu_ids: Sequence[str],
    rng: np.random.Generator,
    fps: int,
) -> EventParams:
    """Draw one event's template parameters (uniform over the design
    ranges) and its affected-PMU subset."""
    cls = EventClass(class_label)
    u = rng.uniform
    sign = lambda: float(rng.choice([-1.0, 1.0]))
    values: dict[str, float]
    imag_pmus: tuple[str, ...] = ()
    affected = _draw_subset(pmu_ids, rng)

    if cls == EventClass.LINE_OUTAGE:
        values = {
            "vmag_sag": u(0.02, 0.08),
            "vmag_tau": u(1.0, 10.0),
            "imag_level": u(0.2, 0.6),
            "imag_tau": u(1.0, 10.0),
            "freq_amp": u(0.02, 0.05),
            "freq_period": u(0.25, 0.5),
        }
        imag_pmus = affected
    elif cls == EventClass.XFMR_OUTAGE:
        values = {
            "vmag_step": sign() * u(0.01, 0.05),
            "vang_step": sign() * u(0.5, 3.0),
            "imag_step": sign() * u(0.05, 0.2),
            "freq_step": -u(0.015, 0.04),
            "freq_ramp": u(0.15, 0.5),
        }
        sub = _draw_subset(affected, rng)
        imag_pmus = sub
    elif cls == EventClass.FREQUENCY_EVENT:
        # Ramp duration is snapped to the frame grid so the dip depth is
        # realized exactly at one sample.
        ramp = round(u(2.0, 10.0) * fps) / fps
        values = {
            "dip_depth": u(0.05, 0.3),
            "ramp_seconds": ramp,
            "recovery_seconds": 4.0 * ramp,
        }
        affected = tuple(pmu_ids)  # system-wide
    elif cls == EventClass.OSCILLATION:
        values = {
            "freq_amp": u(0.01, 0.05),
            "osc_hz": u(0.1, 2.0),
            "damping": u(0.01, 0.1),
            "duration": u(10.0, 60.0),
            "vmag_amp": u(0.005, 0.02),
        }
    else:  # pragma: no cover
        raise ValueError(f"unknown class {class_label}")
    return EventParams(cls, values, affected, imag_pmus)


def _freq_delta(params: EventParams, t: np.ndarray) -> np.ndarray:
    v = params.values
    cls = params.class_label
    d = np.zeros_like(t)
    if cls == EventClass.LINE_OUTAGE:
        period = v["freq_period"]
        m = (t >= 0.0) & (t < period)
        d[m] = v["freq_amp"] * np.sin(2.0 * np.pi * t[m] / period)
    elif cls == EventClass.XFMR_OUTAGE:
        ramp = v["freq_ramp"]
        m = (t >= 0.0) & (t < ramp)
        d[m] = v["freq_step"] * 0.5 * (1.0 - np.cos(np.pi * t[m] / ramp))
        d[t >= ramp] = v["freq_step"]
    elif cls == EventClass.FREQUENCY_EVENT:
        dip, ramp, rec = v["dip_depth"], v["ramp_seconds"], v["recovery_seconds"]
        m = (t >= 0.0) & (t < ramp)
        d[m] = -dip * t[m] / ramp
        m = (t >= ramp) & (t < ramp + rec)
        d[m] = -dip * (1.0 - (t[m] - ramp) / rec)
    elif cls == EventClass.OSCILLATION:
        m = (t >= 0.0) & (t < v["duration"])
        w = 2.0 * np.pi * v["osc_hz"]
        d[m] = v["freq_amp"] * np.exp(-v["damping"] * w * t[m]) * np.sin(w * t[m])
    return d


def _vmag_delta(params: EventParams, t: np.ndarray) -> np.ndarray:
    v = params.values
    cls = params.class_label
    d = np.zeros_like(t)
    after = t >= 0.0
    if cls == EventClass.LINE_OUTAGE:
        d[after] = -v["vmag_sag"] * np.exp(-t[after] / v["vmag_tau"])
    elif cls == EventClass.XFMR_OUTAGE:
        d[after] = v["vmag_step"]
    elif cls == EventClass.OSCILLATION:
        m = after & (t < v["duration"])
        w = 2.0 * np.pi * v["osc_hz"]
        d[m] = v["vmag_amp"] * np.exp(-v["damping"] * w * t[m]) * np.sin(w * t[m])
    return d


def _vang_delta(params: EventParams, t: np.ndarray) -> np.ndarray:
    d = np.zeros_like(t)
    if params.class_label == EventClass.XFMR_OUTAGE:
        d[t >= 0.0] = params.values["vang_step"]
    return d


def _imag_delta(params: EventParams, t: np.ndarray) -> np.ndarray:
    v = params.values
    cls = params.class_label
    d = np.zeros_like(t)
    after = t >= 0.0
    if cls == EventClass.LINE_OUTAGE:
        d[after] = -(1.0 - v["imag_level"]) * np.exp(-t[after] / v["imag_tau"])
    elif cls == EventClass.XFMR_OUTAGE:
        d[after] = v["imag_step"]
    return d


_DELTA = {
    Quantity.FREQ: _freq_delta,
    Quantity.VMAG: _vmag_delta,
    Quantity.VANG: _vang_delta,
    Quantity.IMAG: _imag_delta,
}


def _event_touches(params: EventParams, quantity: Quantity, pmu_id: str) -> bool:
    if quantity == Quantity.FREQ:
        return True  # frequency is system-wide
    if quantity == Quantity.IMAG:
        return pmu_id in params.imag_pmus
    return pmu_id in params.affected_pmus


def apply_event(
    samples: np.ndarray,
    start_epoch: float,
    fps: int,
    quantity: Quantity,
    pmu_id: str,
    params: EventParams,
    event_epoch: float,
) -> None:
    """Add one event's template, in place, to a raw sample array."""
    if not _event_touches(params, quantity, pmu_id):
        return
    t = np.arange(len(samples)) / fps + (start_epoch - event_epoch)
    samples += _DELTA[quantity](params, t)


def inject_event(
    channels: Iterable[SignalChannel],
    class_label: EventClass,
    utc: datetime,
    rng: np.random.Generator,
) -> tuple[list[SignalChannel], EventParams]:
    """Draw an event template and apply it to copies of the given channels.

    Non-event spans are untouched. Returns the modified channels together
    with the drawn parameters so callers can check the realized signature.
    """
    channels = list(channels)
    pmu_ids = sorted({ch.pmu_id for ch in channels})
    epoch = utc.timestamp()
    for ch in channels:
        if (utc - ch.start_utc).total_seconds() < LEAD_SECONDS or \
                (ch.end_utc - utc).total_seconds() < 180.0:
            raise OutOfRange(
                f"event at {utc.isoformat()} too close to the bounds of "
                f"PMU {ch.pmu_id} {ch.quantity.value}"
            )
    params = draw_event_params(class_label, pmu_ids, rng, channels[0].fps)
    out = []
    for ch in channels:
        samples = ch.samples.copy()
        apply_event(samples, ch.start_utc.timestamp(), ch.fps, ch.quantity,
                    ch.pmu_id, params, epoch)
        out.append(SignalChannel(ch.pmu_id, ch.quantity, ch.fps, ch.start_utc, samples))
    return out, params


def schedule_events(config: SynthConfig) -> list[ScheduledEvent]:
    """Lay events out one per slot, in a seeded shuffled class order, and
    draw every template parameter up front from a single seeded source."""
    rng = generator(config.seed, "events")
    labels = [cls for cls in EventClass for _ in range(config.events_per_class[cls])]
    if labels:
        labels = [labels[i] for i in rng.permutation(len(labels))]
    events = []
    for i, label in enumerate(labels):
        day, slot = divmod(i, config.events_per_day)
        jitter_frames = int(rng.integers(0, round(MAX_JITTER_SECONDS * config.fps)))
        offset = slot * config.slot_seconds + LEAD_SECONDS + jitter_frames / config.fps
        utc = config.day_start(day) + timedelta(seconds=offset)
        params = draw_event_params(label, config.pmu_ids, rng, config.fps)
        events.append(ScheduledEvent(f"ev{i:04d}", label, day, utc, params))
    return events


def day_channels(
    config: SynthConfig,
    day_index: int,
    day_events: Sequence[ScheduledEvent],
) -> list[SignalChannel]:
    """Build one day's channels: baseline + events + noise + missing mask.

    Noise and missing draws come from a per-(day, PMU, quantity) child seed,
    so output is identical whether days are built serially or in parallel.
    """
    n = config.samples_per_day
    start = config.day_start(day_index)
    start_epoch = start.timestamp()
    channels = []
    for pmu_id in config.pmu_ids:
        for quantity in Quantity:
            arr = np.full(n, NOMINAL[quantity])
            for ev in day_events:
                apply_event(arr, start_epoch, config.fps, quantity, pmu_id,
                            ev.params, ev.epoch)
            rng = generator(config.seed, "channel", day_index, pmu_id, quantity.value)
            if config.noise_std > 0.0:
                arr += rng.normal(0.0, config.noise_std, n)
            if config.missing_rate > 0.0:
                arr[rng.random(n) < config.missing_rate] = np.nan
            channels.append(SignalChannel(pmu_id, quantity, config.fps, start, arr))
    return channels


def iter_days(config: SynthConfig) -> Iterator[tuple[int, list[SignalChannel], list[ScheduledEvent]]]:
    """Yield (day_index, channels, events) per day; bounded memory for
    large datasets."""
    schedule = schedule_events(config)
    by_day: dict[int, list[ScheduledEvent]] = {}
    for ev in schedule:
        by_day.setdefault(ev.day_index, []).append(ev)
    for day in range(config.n_days):
        events = by_day.get(day, [])
        yield day, day_channels(config, day, events), events


def generate_dataset(config: SynthConfig) -> tuple[list[SignalChannel], list[EventLogEntry]]:
    """Generate the full synthetic dataset: all channels plus the event log.

    Deterministic for a fixed seed. With zero events the output is one day
    of pure-noise baseline streams and an empty log.
    """
    channels: list[SignalChannel] = []
    entries: list[EventLogEntry] = []
    for _, day_chs, day_evs in iter_days(config):
        channels.extend(day_chs)
        entries.extend(EventLogEntry(ev.event_id, ev.utc_time, ev.class_label)
                       for ev in day_evs)
    return channels, entries
