"""PMU stream files, event logs, data availability, and event windowing.

Stream CSV format: one file per PMU per day, header exactly
``utc,pmu_id,vmag_pu,vang_deg,imag_pu,freq_hz``. ``utc`` is ISO-8601 with
millisecond precision; a missing measurement is an empty field or the
literal ``NaN``. In memory, missing samples are NaN entries in a float
array; they are never silently zero-filled.

Event log CSV: header exactly ``event_id,utc,class_label``.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STREAM_HEADER = ["utc", "pmu_id", "vmag_pu", "vang_deg", "imag_pu", "freq_hz"]
EVENT_LOG_HEADER = ["event_id", "utc", "class_label"]

SUPPORTED_FPS = (30, 60)
WINDOW_BEFORE_S = 60.0
WINDOW_AFTER_S = 180.0
WINDOW_SECONDS = 240
DEFAULT_MAX_GAP_RATIO = 0.1

N_CLASSES = 4


class MalformedHeader(ValueError):
    """Stream or log file header does not match the expected column set."""


class NonMonotonicTimestamps(ValueError):
    """Timestamps within one PMU's rows are not strictly increasing."""


class UnsupportedFps(ValueError):
    """Inferred or declared frame rate is not 30 or 60 fps."""


class WindowOutOfRange(ValueError):
    """The stream does not cover the requested event window span."""


class TooManyMissing(ValueError):
    """Missing-sample ratio in the window span exceeds the gap limit."""


class Quantity(str, enum.Enum):
    """Measured quantity carried by one signal channel."""

    VMAG = "vmag"   # positive-sequence voltage magnitude, per unit
    VANG = "vang"   # voltage angle, degrees
    IMAG = "imag"   # positive-sequence current magnitude, per unit
    FREQ = "freq"   # frequency, Hz


_QUANTITY_COLUMN = {
    Quantity.VMAG: "vmag_pu",
    Quantity.VANG: "vang_deg",
    Quantity.IMAG: "imag_pu",
    Quantity.FREQ: "freq_hz",
}


class EventClass(enum.IntEnum):
    """The four event classes, encoded 0..3."""

    LINE_OUTAGE = 0
    XFMR_OUTAGE = 1
    FREQUENCY_EVENT = 2
    OSCILLATION = 3


@dataclass(frozen=True)
class SignalChannel:
    """One PMU's time series for one measured quantity.

    Sample k is implicitly timestamped ``start_utc + k / fps`` seconds;
    no per-sample timestamps are stored. Missing samples are NaN.
    """

    pmu_id: str
    quantity: Quantity
    fps: int
    start_utc: datetime
    samples: np.ndarray

    def __post_init__(self):
        if self.fps not in SUPPORTED_FPS:
            raise UnsupportedFps(f"fps must be one of {SUPPORTED_FPS}, got {self.fps}")
        if self.start_utc.tzinfo is None:
            raise ValueError("start_utc must be timezone-aware UTC")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    def __len__(self) -> int:
        return len(self.samples)

    def sample_time(self, k: int) -> datetime:
        return self.start_utc + timedelta(seconds=k / self.fps)

    @property
    def end_utc(self) -> datetime:
        """Timestamp one frame past the last sample (exclusive end)."""
        return self.start_utc + timedelta(seconds=len(self.samples) / self.fps)

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.samples)


@dataclass(frozen=True)
class EventLogEntry:
    """One logged grid event: id, UTC time of occurrence, class label."""

    event_id: str
    utc_time: datetime
    class_label: EventClass

    def __post_init__(self):
        object.__setattr__(self, "class_label", EventClass(self.class_label))
        if self.utc_time.tzinfo is None:
            raise ValueError("utc_time must be timezone-aware UTC")


@dataclass(frozen=True)
class EventWindow:
    """A 4-minute labeled slice of one channel: 1 min before the logged
    event time, 3 min after, start-inclusive end-exclusive.

    Length is exactly ``240 * fps`` samples. Missing samples may still be
    present right after extraction; they are filled (or the window dropped)
    before feature building.
    """

    event_id: str
    class_label: EventClass
    pmu_id: str
    quantity: Quantity
    fps: int
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))
        expected = WINDOW_SECONDS * self.fps
        if len(self.samples) != expected:
            raise ValueError(
                f"window must hold {expected} samples at {self.fps} fps, "
                f"got {len(self.samples)}"
            )


@dataclass(frozen=True)
class AvailabilityMatrix:
    """Binary PMU-by-day data presence. Entry (i, j) is 1 iff PMU i has at
    least one non-missing sample on day j; it says nothing about gaps
    within the day."""

    pmu_ids: tuple[str, ...]
    days: tuple[date, ...]
    bits: np.ndarray

    def row_sums(self) -> np.ndarray:
        return self.bits.sum(axis=1)


def format_utc(t: datetime) -> str:
    """ISO-8601 UTC with millisecond precision, e.g. 2016-01-01T00:00:00.000Z."""
    t = t.astimezone(timezone.utc)
    ms = round(t.microsecond / 1000.0)
    if ms == 1000:
        t = t + timedelta(seconds=1)
        ms = 0
    return t.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms:03d}Z"


def parse_utc(text: str) -> datetime:
    t = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def _parse_value(field: str) -> float:
    field = field.strip()
    if not field:
        return float("nan")
    try:
        return float(field)  # the "NaN" literal parses to NaN here
    except ValueError:
        return float("nan")


def parse_stream_file(path: str | Path) -> list[SignalChannel]:
    """Parse one stream CSV into channels, one per (pmu_id, quantity).

    Non-numeric or empty value fields become NaN samples. The frame rate is
    inferred per PMU from the timestamp span and must be 30 or 60 fps.
    Rows absent from the frame grid also surface as NaN.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        if [h.strip() for h in header] != STREAM_HEADER:
            raise MalformedHeader(f"{path}: expected header {STREAM_HEADER}, got {header}")

        per_pmu: dict[str, list[tuple[float, list[float]]]] = {}
        for row in reader:
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(STREAM_HEADER):
                raise MalformedHeader(f"{path}: row has {len(row)} fields, expected {len(STREAM_HEADER)}")
            epoch = parse_utc(row[0]).timestamp()
            values = [_parse_value(f) for f in row[2:6]]
            per_pmu.setdefault(row[1], []).append((epoch, values))

    channels: list[SignalChannel] = []
    for pmu_id in sorted(per_pmu):
        rows = per_pmu[pmu_id]
        times = np.array([r[0] for r in rows])
        if np.any(np.diff(times) <= 0):
            raise NonMonotonicTimestamps(f"{path}: timestamps for PMU {pmu_id} not strictly increasing")
        if len(times) < 2:
            raise UnsupportedFps(f"{path}: PMU {pmu_id} has fewer than 2 rows; cannot infer fps")
        fps = round((len(times) - 1) / (times[-1] - times[0]))
        if fps not in SUPPORTED_FPS:
            raise UnsupportedFps(f"{path}: inferred {fps} fps for PMU {pmu_id}, expected one of {SUPPORTED_FPS}")

        indices = np.rint((times - times[0]) * fps).astype(int)
        n = int(indices[-1]) + 1
        data = np.full((4, n), np.nan)
        for (epoch, values), k in zip(rows, indices):
            for q in range(4):
                data[q, k] = values[q]

        start = datetime.fromtimestamp(times[0], tz=timezone.utc)
        for q, quantity in enumerate(Quantity):
            channels.append(SignalChannel(pmu_id, quantity, fps, start, data[q]))
    return channels


def write_stream_file(channels: Sequence[SignalChannel], path: str | Path) -> None:
    """Write channels to one stream CSV. Values carry 9 significant digits;
    NaN samples become empty fields. Channels are grouped by PMU; each
    PMU's channels must agree on fps, start time, and length."""
    path = Path(path)
    by_pmu: dict[str, dict[Quantity, SignalChannel]] = {}
    for ch in channels:
        by_pmu.setdefault(ch.pmu_id, {})[ch.quantity] = ch

    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STREAM_HEADER)
        for pmu_id in sorted(by_pmu):
            group = by_pmu[pmu_id]
            ref = next(iter(group.values()))
            for ch in group.values():
                if (ch.fps, ch.start_utc, len(ch)) != (ref.fps, ref.start_utc, len(ref)):
                    raise ValueError(f"channels for PMU {pmu_id} disagree on fps/start/length")
            start_epoch = ref.start_utc.timestamp()
            for k in range(len(ref)):
                t = datetime.fromtimestamp(start_epoch + k / ref.fps, tz=timezone.utc)
                fields = [format_utc(t), pmu_id]
                for quantity in Quantity:
                    ch = group.get(quantity)
                    v = ch.samples[k] if ch is not None else float("nan")
                    fields.append("" if np.isnan(v) else format(v, ".9g"))
                writer.writerow(fields)


def read_event_log(path: str | Path) -> list[EventLogEntry]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        if [h.strip() for h in header] != EVENT_LOG_HEADER:
            raise MalformedHeader(f"{path}: expected header {EVENT_LOG_HEADER}, got {header}")
        entries = []
        for row in reader:
            if not row or all(not f.strip() for f in row):
                continue
            label = int(row[2])
            if label not in (0, 1, 2, 3):
                raise ValueError(f"{path}: class_label must be 0..3, got {label}")
            entries.append(EventLogEntry(row[0], parse_utc(row[1]), EventClass(label)))
    return entries


def write_event_log(entries: Iterable[EventLogEntry], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_LOG_HEADER)
        for e in entries:
            writer.writerow([e.event_id, format_utc(e.utc_time), int(e.class_label)])


def availability_matrix(
    channels: Iterable[SignalChannel], calendar: Sequence[date]
) -> AvailabilityMatrix:
    """Binary PMU-by-day presence over the given calendar days.

    A cell is 1 iff the PMU has at least one non-missing sample (any
    quantity) whose timestamp falls on that UTC day. An empty channel set
    yields an all-zero matrix over the PMUs seen (none).
    """
    if len(calendar) == 0:
        raise ValueError("calendar must be non-empty")
    day_col = {d: j for j, d in enumerate(calendar)}
    epoch0 = datetime(1970, 1, 1, tzinfo=timezone.utc)
    day_of_epoch = {d: (datetime(d.year, d.month, d.day, tzinfo=timezone.utc) - epoch0).days
                    for d in calendar}
    col_by_dayindex = {day_of_epoch[d]: day_col[d] for d in calendar}

    pmu_ids = sorted({ch.pmu_id for ch in channels})
    row = {p: i for i, p in enumerate(pmu_ids)}
    bits = np.zeros((len(pmu_ids), len(calendar)), dtype=np.int8)
    for ch in channels:
        ok = np.flatnonzero(~np.isnan(ch.samples))
        if ok.size == 0:
            continue
        start_epoch = ch.start_utc.timestamp()
        day_idx = np.unique(np.floor((start_epoch + ok / ch.fps) / 86400.0).astype(int))
        for di in day_idx:
            j = col_by_dayindex.get(int(di))
            if j is not None:
                bits[row[ch.pmu_id], j] = 1
    return AvailabilityMatrix(tuple(pmu_ids), tuple(calendar), bits)


def write_availability_csv(matrix: AvailabilityMatrix, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pmu_id"] + [d.isoformat() for d in matrix.days])
        for i, pmu in enumerate(matrix.pmu_ids):
            writer.writerow([pmu] + [int(b) for b in matrix.bits[i]])


def extract_window(
    channel: SignalChannel,
    event: EventLogEntry,
    max_gap_ratio: float = DEFAULT_MAX_GAP_RATIO,
) -> EventWindow:
    """Cut the [event - 60 s, event + 180 s) slice out of a channel.

    The event time is aligned to the channel's frame grid by nearest-frame
    rounding, so the window holds exactly ``240 * fps`` samples. Missing
    samples are kept as NaN; if their ratio exceeds ``max_gap_ratio`` the
    window is rejected so the instance can be dropped.
    """
    fps = channel.fps
    offset = (event.utc_time - channel.start_utc).total_seconds()
    k_event = round(offset * fps)
    k0 = k_event - round(WINDOW_BEFORE_S) * fps
    n = WINDOW_SECONDS * fps
    if k0 < 0 or k0 + n > len(channel.samples):
        raise WindowOutOfRange(
            f"event {event.event_id}: window [{k0}, {k0 + n}) outside stream of "
            f"{len(channel.samples)} samples"
        )
    span = channel.samples[k0:k0 + n].copy()
    gap_ratio = float(np.isnan(span).mean())
    if gap_ratio > max_gap_ratio:
        raise TooManyMissing(
            f"event {event.event_id}, PMU {channel.pmu_id}: missing ratio "
            f"{gap_ratio:.3f} exceeds {max_gap_ratio}"
        )
    return EventWindow(event.event_id, event.class_label, channel.pmu_id,
                       channel.quantity, fps, span)
