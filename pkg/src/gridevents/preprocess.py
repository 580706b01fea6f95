"""Gap filling and feature derivation for event windows.

Features are per-second signal derivatives: GV/GI/GV-angle/GF are gradients
of voltage magnitude, current magnitude, voltage angle, and frequency;
ROCOF is the frequency time-derivative in Hz/s. Each feature instance is
one (event, PMU) pair's full 4-minute vector, optionally z-scored.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import (
    DEFAULT_MAX_GAP_RATIO,
    EventClass,
    EventWindow,
    Quantity,
    SignalChannel,
)

INSTANCE_HEADER = ["event_id", "class_label", "pmu_id", "feature_kind", "fps"]


class AllMissing(ValueError):
    """Channel has no usable samples to interpolate from."""


class GapRatioExceeded(ValueError):
    """Missing-sample ratio is above the configured limit."""


class TooShort(ValueError):
    """Gradient needs at least 2 samples."""


class QuantityMismatch(ValueError):
    """Window quantity does not match the feature kind's source quantity."""


class FeatureKind(str, enum.Enum):
    """Derived input features fed to the classifier."""

    GV = "gv"               # gradient of voltage magnitude
    GI = "gi"               # gradient of current magnitude
    GV_ANGLE = "gv-angle"   # gradient of voltage angle
    GF = "gf"               # gradient of frequency
    ROCOF = "rocof"         # rate of change of frequency, Hz/s


SOURCE_QUANTITY = {
    FeatureKind.GV: Quantity.VMAG,
    FeatureKind.GI: Quantity.IMAG,
    FeatureKind.GV_ANGLE: Quantity.VANG,
    FeatureKind.GF: Quantity.FREQ,
    FeatureKind.ROCOF: Quantity.FREQ,
}


@dataclass(frozen=True)
class FeatureInstance:
    """One classifier input: a single PMU's feature vector for one event.

    ``normalization`` records the (mean, std) removed by z-scoring, or None
    when the vector passed through unscaled.
    """

    event_id: str
    class_label: EventClass
    pmu_id: str
    feature_kind: FeatureKind
    fps: int
    values: np.ndarray
    normalization: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


def fill_values(values: np.ndarray) -> np.ndarray:
    """Piece-wise linear gap filling on a 1-D array.

    Interior NaN runs are linearly interpolated between their nearest
    non-missing neighbors; leading/trailing runs take the nearest value.
    Non-missing samples pass through untouched.
    """
    values = np.asarray(values, dtype=float)
    ok = ~np.isnan(values)
    if not ok.any():
        raise AllMissing("no non-missing samples to interpolate from")
    if ok.all():
        return values.copy()
    idx = np.arange(len(values))
    return np.interp(idx, idx[ok], values[ok])


def fill_missing(
    channel: SignalChannel, max_gap_ratio: float = DEFAULT_MAX_GAP_RATIO
) -> SignalChannel:
    """Return a copy of the channel with every gap filled.

    Raises GapRatioExceeded when more than ``max_gap_ratio`` of the samples
    are missing, AllMissing when nothing is left to interpolate from.
    """
    mask = channel.missing_mask()
    ratio = float(mask.mean()) if len(mask) else 0.0
    if ratio > max_gap_ratio:
        raise GapRatioExceeded(
            f"PMU {channel.pmu_id} {channel.quantity.value}: missing ratio "
            f"{ratio:.3f} exceeds {max_gap_ratio}"
        )
    return replace(channel, samples=fill_values(channel.samples))


def fill_window(window: EventWindow) -> EventWindow:
    """Fill any remaining gaps in an extracted window (gap ratio was already
    checked at extraction time)."""
    if not np.isnan(window.samples).any():
        return window
    return replace(window, samples=fill_values(window.samples))


def gradient(values: np.ndarray, fps: int) -> np.ndarray:
    """Per-second derivative: central differences at interior points,
    one-sided at the endpoints. Exact for linear signals; output length
    equals input length."""
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        raise TooShort(f"gradient needs at least 2 samples, got {n}")
    out = np.empty(n)
    out[1:-1] = (values[2:] - values[:-2]) * (0.5 * fps)
    out[0] = (values[1] - values[0]) * fps
    out[-1] = (values[-1] - values[-2]) * fps
    return out


def rocof(freq_values: np.ndarray, fps: int) -> np.ndarray:
    """Rate of change of frequency in Hz/s (the gradient of the frequency
    channel)."""
    return gradient(freq_values, fps)


def build_instances(
    windows: Iterable[EventWindow],
    kind: FeatureKind,
    normalize: bool = True,
) -> list[FeatureInstance]:
    """Derive one feature instance per (event, PMU) window.

    Every window must carry the feature's source quantity and be gap-free.
    With ``normalize`` each vector is z-scored with its own mean/std and the
    pair recorded; zero-variance vectors pass through unscaled.
    Output is sorted by (event_id, pmu_id) for deterministic downstream use.
    """
    source = SOURCE_QUANTITY[kind]
    instances = []
    for w in windows:
        if w.quantity != source:
            raise QuantityMismatch(
                f"feature {kind.value} derives from {source.value}, "
                f"got a {w.quantity.value} window"
            )
        if np.isnan(w.samples).any():
            raise ValueError(f"window {w.event_id}/{w.pmu_id} still has missing samples")
        values = gradient(w.samples, w.fps)
        norm = None
        if normalize:
            mean = float(values.mean())
            std = float(values.std())
            if std > 0.0:
                values = (values - mean) / std
                norm = (mean, std)
        instances.append(FeatureInstance(w.event_id, w.class_label, w.pmu_id,
                                         kind, w.fps, values, norm))
    instances.sort(key=lambda inst: (inst.event_id, inst.pmu_id))
    return instances


def save_instances(instances: Sequence[FeatureInstance], path: str | Path) -> None:
    """Persist instances as CSV: the metadata header columns followed by the
    raw value vector, one instance per row."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INSTANCE_HEADER)
        for inst in instances:
            row = [inst.event_id, int(inst.class_label), inst.pmu_id,
                   inst.feature_kind.value, inst.fps]
            row.extend(repr(float(v)) for v in inst.values)
            writer.writerow(row)


def load_instances(path: str | Path) -> list[FeatureInstance]:
    """Read instances back from CSV. Values are taken as-is (any z-scoring
    happened before saving), so normalization is marked identity."""
    path = Path(path)
    instances = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[: len(INSTANCE_HEADER)] != INSTANCE_HEADER:
            raise ValueError(f"{path}: expected header starting with {INSTANCE_HEADER}")
        for row in reader:
            if not row:
                continue
            values = np.array([float(v) for v in row[5:]])
            instances.append(FeatureInstance(
                row[0], EventClass(int(row[1])), row[2],
                FeatureKind(row[3]), int(row[4]), values))
    return instances
