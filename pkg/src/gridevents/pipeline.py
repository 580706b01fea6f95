"""End-to-end orchestration: data -> windows -> instances -> tuned model.

The library entry points here are what the CLI and the comparison
experiments run; they keep memory bounded by consuming synthetic data one
day at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import bayesopt, evaluation, nn, preprocess, synth
from .ingest import (
    DEFAULT_MAX_GAP_RATIO,
    EventClass,
    EventLogEntry,
    EventWindow,
    SignalChannel,
    TooManyMissing,
    WindowOutOfRange,
    extract_window,
)
from .preprocess import FeatureInstance, FeatureKind, SOURCE_QUANTITY
from .seeding import subseed


@dataclass(frozen=True)
class DroppedInstance:
    event_id: str
    pmu_id: str
    reason: str


@dataclass(frozen=True)
class TuneResult:
    """Outcome of one search campaign plus the retrained best model."""

    best_trial: bayesopt.Trial
    history: list[bayesopt.Trial]
    model: nn.MlpModel
    metrics: evaluation.MetricsReport
    predictions: list[tuple[str, str, int, int]]  # (event_id, pmu_id, true, pred)
    validation_accuracy: float


def windows_from_channels(
    channels: Iterable[SignalChannel],
    events: Sequence[EventLogEntry],
    kind: FeatureKind,
    max_gap_ratio: float = DEFAULT_MAX_GAP_RATIO,
) -> tuple[list[EventWindow], list[DroppedInstance]]:
    """Cut and gap-fill one window per (event, PMU) for the feature's
    source quantity. Rejected pairs land in the drop list with a reason."""
    source = SOURCE_QUANTITY[kind]
    windows: list[EventWindow] = []
    drops: list[DroppedInstance] = []
    for channel in channels:
        if channel.quantity != source:
            continue
        for event in events:
            offset = (event.utc_time - channel.start_utc).total_seconds()
            if offset < 0 or offset > len(channel.samples) / channel.fps:
                continue  # event belongs to another day's stream
            try:
                windows.append(preprocess.fill_window(
                    extract_window(channel, event, max_gap_ratio)))
            except WindowOutOfRange:
                drops.append(DroppedInstance(event.event_id, channel.pmu_id,
                                             "window-out-of-range"))
            except TooManyMissing:
                drops.append(DroppedInstance(event.event_id, channel.pmu_id,
                                             "too-many-missing"))
    return windows, drops


def instances_from_synth(
    config: synth.SynthConfig,
    kind: FeatureKind,
    normalize: bool = True,
    max_gap_ratio: float = DEFAULT_MAX_GAP_RATIO,
) -> tuple[list[FeatureInstance], list[DroppedInstance]]:
    """Generate a synthetic dataset and reduce it to feature instances,
    one generated day at a time."""
    all_windows: list[EventWindow] = []
    drops: list[DroppedInstance] = []
    for _, channels, day_events in synth.iter_days(config):
        if not day_events:
            continue
        entries = [EventLogEntry(ev.event_id, ev.utc_time, ev.class_label)
                   for ev in day_events]
        windows, day_drops = windows_from_channels(channels, entries, kind, max_gap_ratio)
        all_windows.extend(windows)
        drops.extend(day_drops)
    return preprocess.build_instances(all_windows, kind, normalize), drops


def _instances_matrix(instances: Sequence[FeatureInstance]):
    X = np.stack([inst.values for inst in instances])
    y = np.array([int(inst.class_label) for inst in instances])
    return X, y


def evaluate_model(
    model: nn.MlpModel,
    instances: Sequence[FeatureInstance],
) -> tuple[evaluation.MetricsReport, list[tuple[str, str, int, int]]]:
    """Predict every instance and report metrics plus the raw predictions."""
    X, y = _instances_matrix(instances)
    preds = nn.predict_batch(model, X)
    predictions = [(inst.event_id, inst.pmu_id, int(t), int(p))
                   for inst, t, p in zip(instances, y, preds)]
    return evaluation.report_from_predictions(y, preds), predictions


def tune(
    instances: Sequence[FeatureInstance],
    train_cfg: nn.TrainConfig,
    n_calls: int = 100,
    n_init: int = 10,
    xi: float = 0.01,
    seed: int = 0,
    initial_trials: Sequence[bayesopt.Trial] = (),
    on_trial=None,
) -> TuneResult:
    """Search the hyperparameter space, retrain the best architecture, and
    evaluate it on the held-out validation split.

    Every candidate trains against the same event-level split (fixed by
    train_cfg.seed), so the campaign maximizes a deterministic objective.
    """
    space = bayesopt.default_search_space()
    n_init = min(n_init, n_calls)

    def objective(params: dict) -> float:
        arch = nn.MlpArchitecture.from_dict(params)
        _, accuracy = nn.train(arch, instances, train_cfg)
        return accuracy

    best, history = bayesopt.optimize(
        objective, space, n_calls=n_calls, n_init=n_init,
        seed=subseed(seed, "bo"), xi=xi,
        initial_trials=initial_trials, on_trial=on_trial)

    best_arch = nn.MlpArchitecture.from_dict(best.params)
    model, val_accuracy = nn.train(best_arch, instances, train_cfg)

    _, val_idx = nn.split_by_event(
        instances, train_cfg.train_fraction,
        np.random.default_rng(subseed(train_cfg.seed, "split")))
    val_instances = [instances[i] for i in val_idx]
    metrics, predictions = evaluate_model(model, val_instances)
    return TuneResult(best, history, model, metrics, predictions, val_accuracy)


@dataclass(frozen=True)
class CellConfig:
    """Shared settings for one experiment grid."""

    base_synth: synth.SynthConfig
    base_weeks: int = 6
    normalize: bool = True
    max_gap_ratio: float = DEFAULT_MAX_GAP_RATIO
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    n_calls: int = 25
    n_init: int = 10
    xi: float = 0.01
    seed: int = 0


@dataclass(frozen=True)
class CellResult:
    metrics: evaluation.MetricsReport
    validation_accuracy: float
    n_instances: int


def run_cell(config: CellConfig, feature: str, weeks: int, fps: int) -> CellResult:
    """One experiment cell: scale the event inventory to the requested
    size, regenerate at the requested rate, tune, and report."""
    scale = weeks / config.base_weeks
    counts = {cls: int(round(n * scale))
              for cls, n in config.base_synth.events_per_class.items()}
    cell_synth = replace(config.base_synth, events_per_class=counts, fps=fps,
                         seed=subseed(config.seed, "synth", feature, weeks, fps))
    kind = FeatureKind(feature)
    instances, _ = instances_from_synth(cell_synth, kind, config.normalize,
                                        config.max_gap_ratio)
    result = tune(instances, config.train, n_calls=config.n_calls,
                  n_init=config.n_init, xi=config.xi,
                  seed=subseed(config.seed, "tune", feature, weeks, fps))
    return CellResult(result.metrics, result.validation_accuracy, len(instances))
