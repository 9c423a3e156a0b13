"""End-to-end checkpoint collection: the adaptive-schedule training loop, the
baseline collectors, convergence detection, and checkpoint persistence.

Runs are bit-deterministic: the same configs and seed reproduce the metrics
log byte-for-byte, and every logged rate can be recomputed from the schedule
module's pure functions, so the log is a complete witness of a run.
"""

from __future__ import annotations

import json
import os
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .diversity import DiversityProbe, cycle_should_end
from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    CollectionFailureError,
    ConfigurationError,
    NumericError,
)
from .netcore import (
    Batch,
    Metrics,
    ModelParams,
    evaluate,
    init_model,
    probe_weights,
    train_epoch,
)
from .schedule import (
    Phase,
    ScheduleConfig,
    ScheduleEvents,
    ae_step,
    cosine_cycle_ends,
    cosine_cycle_lr,
    initial_state,
    step_decay_lr,
    triangular_lr,
    triangular_trough,
)

BASELINE_METHODS = ("ind", "sse", "fge", "ce", "rie")


@dataclass
class ConvergenceDetector:
    """Loss-plateau detector.

    Raw losses are smoothed with a trailing mean before entering the history
    ring; convergence is reported only once the ring is full and the relative
    drop from its oldest to its newest entry falls below ``rel_tol``.
    """

    window: int = 5
    rel_tol: float = 1e-3
    history: deque = field(init=False)
    _raw: deque = field(init=False, repr=False)

    def __post_init__(self):
        if self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window}")
        if self.rel_tol <= 0.0:
            raise ConfigurationError(f"rel_tol must be positive, got {self.rel_tol}")
        self.history = deque(maxlen=self.window)
        self._raw = deque(maxlen=self.window)

    def update(self, new_loss: float) -> bool:
        """Push one raw loss and report whether the plateau test fires."""
        if not np.isfinite(new_loss):
            raise NumericError(f"non-finite loss {new_loss}")
        self._raw.append(float(new_loss))
        self.history.append(sum(self._raw) / len(self._raw))
        return self.check()

    def check(self) -> bool:
        if len(self.history) < self.window:
            return False
        oldest, newest = self.history[0], self.history[-1]
        return (oldest - newest) / max(oldest, 1e-12) < self.rel_tol

    def reset(self):
        self.history.clear()
        self._raw.clear()


@dataclass
class CheckpointRecord:
    """A converged parameter snapshot plus its probe vector and metrics."""

    id: int
    params: ModelParams
    probe: np.ndarray
    collected_at_step: int
    train_metrics: Metrics | None = None
    val_metrics: Metrics | None = None


def make_checkpoint(
    cid: int,
    params: ModelParams,
    step: int,
    train_metrics: Metrics | None = None,
    val_metrics: Metrics | None = None,
) -> CheckpointRecord:
    snap = params.copy()
    return CheckpointRecord(
        id=cid,
        params=snap,
        probe=probe_weights(snap),
        collected_at_step=step,
        train_metrics=train_metrics,
        val_metrics=val_metrics,
    )


@dataclass(frozen=True)
class StopPolicy:
    """Stop collection at a checkpoint quota, a rate ceiling, or a hard step
    budget. The ceiling defaults to twice the schedule's high bound."""

    max_checkpoints: int = 10
    lr_ceiling: float | None = None
    max_steps: int = 600

    def __post_init__(self):
        if self.max_checkpoints < 1:
            raise ConfigurationError(f"max_checkpoints must be >= 1, got {self.max_checkpoints}")
        if self.lr_ceiling is not None and self.lr_ceiling <= 0.0:
            raise ConfigurationError(f"lr_ceiling must be positive, got {self.lr_ceiling}")
        if self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be >= 1, got {self.max_steps}")

    def ceiling_for(self, config: ScheduleConfig) -> float:
        return self.lr_ceiling if self.lr_ceiling is not None else 2.0 * config.lr_high


@dataclass(frozen=True)
class ModelSpec:
    """Architecture and minibatch size used by the training loops."""

    layer_dims: tuple[int, ...]
    batch_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class BaselineConfig:
    """Knobs for the fixed comparison collectors."""

    epochs: int = 120
    base_lr: float = 0.1
    milestones: tuple[int, ...] = (60, 90)
    decay_factor: float = 0.1
    sse_alpha0: float = 0.1
    sse_cycle_len: int = 40
    sse_ensemble_last: int = 5
    fge_lo: float = 0.01
    fge_hi: float = 0.1
    fge_cycle_len: int = 20
    rie_members: int = 5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.rie_members < 1:
            raise ConfigurationError(f"rie_members must be >= 1, got {self.rie_members}")
        if self.sse_ensemble_last < 1:
            raise ConfigurationError(
                f"sse_ensemble_last must be >= 1, got {self.sse_ensemble_last}"
            )


def _shuffle_rng(seed: int) -> np.random.Generator:
    # keyed off the run seed but distinct from the init stream
    return np.random.default_rng([seed, 1])


def _log_row(step, phase, lr, train_m, val_m, d1=None, d2=None, event=None) -> dict:
    return {
        "step": step,
        "phase": phase,
        "lr": lr,
        "train_loss": train_m.mean_loss,
        "train_acc": train_m.accuracy,
        "val_acc": val_m.accuracy,
        "d1": d1,
        "d2": d2,
        "event": event,
    }


def run_auto_ensemble(
    model_spec: ModelSpec,
    sched_config: ScheduleConfig,
    probe: DiversityProbe,
    stop: StopPolicy,
    train: Batch,
    val: Batch,
    seed: int,
    *,
    conv_window: int = 5,
    conv_rel_tol: float = 1e-3,
) -> tuple[list[CheckpointRecord], list[dict]]:
    """Collect converged checkpoints in a single run by cycling the rate.

    One schedule step is one epoch. Each step trains at the emitted rate and
    evaluates; the plateau detector gates checkpoint collection during the
    decline/floor segments (with a forced collection after 3x decline_steps
    stuck on the floor, flagged in the log), and the probe's escape-distance
    gate ends each rise. Stops at the checkpoint quota, the rate ceiling, or
    the step budget; raises if the budget expires with nothing collected.
    """
    params = init_model(model_spec.layer_dims, seed)
    rng = _shuffle_rng(seed)
    state = initial_state(sched_config)
    detector = ConvergenceDetector(window=conv_window, rel_tol=conv_rel_tol)
    ceiling = stop.ceiling_for(sched_config)
    max_floor_dwell = 3 * sched_config.decline_steps
    records: list[CheckpointRecord] = []
    log: list[dict] = []
    events = ScheduleEvents()
    floor_dwell = 0

    while state.n < stop.max_steps:
        lr, state = ae_step(state, sched_config, events)
        if lr > ceiling:
            break
        events = ScheduleEvents()
        params, _ = train_epoch(params, train, lr, model_spec.batch_size, rng)
        train_m = evaluate(params, train)
        val_m = evaluate(params, val)

        event = None
        d1 = d2 = None
        if state.phase in (Phase.DECLINE, Phase.FLOOR):
            floor_dwell = floor_dwell + 1 if state.phase is Phase.FLOOR else 0
            fired = detector.update(train_m.mean_loss)
            forced = not fired and state.phase is Phase.FLOOR and floor_dwell >= max_floor_dwell
            if fired or forced:
                probe.record_checkpoint(probe_weights(params))
                records.append(
                    make_checkpoint(len(records) + 1, params, state.n, train_m, val_m)
                )
                event = "checkpoint_forced" if forced else "checkpoint"
                events = ScheduleEvents(converged=True)
                d1 = probe.d1
        elif state.phase in (Phase.RISE_RAPID, Phase.RISE_EXPLORE):
            floor_dwell = 0
            probe.record_rise_sample(probe_weights(params))
            d1, d2 = probe.d1, probe.d2
            if state.phase is Phase.RISE_EXPLORE and cycle_should_end(probe):
                probe.record_peak(probe_weights(params))
                event = "cycle_end"
                events = ScheduleEvents(cycle_end=True)
                detector.reset()

        log.append(_log_row(state.n, state.phase.value, lr, train_m, val_m, d1, d2, event))
        if event in ("checkpoint", "checkpoint_forced") and len(records) >= stop.max_checkpoints:
            break

    if not records:
        raise CollectionFailureError(
            f"no checkpoint collected within {stop.max_steps} steps", log=log
        )
    return records, log


def _run_fixed_schedule(
    method: str,
    model_spec: ModelSpec,
    config: BaselineConfig,
    train: Batch,
    val: Batch,
    seed: int,
    step_offset: int = 0,
    id_offset: int = 0,
) -> tuple[list[CheckpointRecord], list[dict]]:
    params = init_model(model_spec.layer_dims, seed)
    rng = _shuffle_rng(seed)
    records: list[CheckpointRecord] = []
    log: list[dict] = []
    for t in range(config.epochs):
        if method in ("ind", "ce", "rie"):
            lr = step_decay_lr(config.base_lr, config.milestones, config.decay_factor, t)
            collect = t == config.epochs - 1 if method in ("ind", "rie") else True
        elif method == "sse":
            lr = cosine_cycle_lr(config.sse_alpha0, config.sse_cycle_len, t)
            collect = cosine_cycle_ends(config.sse_cycle_len, t)
        elif method == "fge":
            lr = triangular_lr(config.fge_lo, config.fge_hi, config.fge_cycle_len, t)
            collect = triangular_trough(config.fge_cycle_len, t)
        else:
            raise ConfigurationError(f"unknown baseline method {method!r}")
        params, _ = train_epoch(params, train, lr, model_spec.batch_size, rng)
        train_m = evaluate(params, train)
        val_m = evaluate(params, val)
        step = step_offset + t + 1
        event = None
        if collect:
            records.append(
                make_checkpoint(id_offset + len(records) + 1, params, step, train_m, val_m)
            )
            event = "checkpoint"
        log.append(_log_row(step, method, lr, train_m, val_m, event=event))
    return records, log


def run_baseline(
    method: str,
    model_spec: ModelSpec,
    config: BaselineConfig,
    train: Batch,
    val: Batch,
    seed: int,
) -> tuple[list[CheckpointRecord], list[dict]]:
    """Collect checkpoints with one of the fixed comparison schedules.

    ind: stepwise decay, one final model. sse: cosine restarts, one snapshot
    per cycle end (callers typically ensemble the last few, see
    ``sse_ensemble_members``). fge: triangular wave, one snapshot per trough.
    ce: stepwise decay, one snapshot every epoch (selection is the ensemble
    module's job). rie: ``rie_members`` independent reruns seeded seed+i,
    one final model each, logs concatenated with globally increasing steps.
    """
    if method == "rie":
        records: list[CheckpointRecord] = []
        log: list[dict] = []
        for i in range(config.rie_members):
            member_records, member_log = _run_fixed_schedule(
                "rie",
                model_spec,
                config,
                train,
                val,
                seed + i,
                step_offset=i * config.epochs,
                id_offset=len(records),
            )
            records.extend(member_records)
            log.extend(member_log)
        return records, log
    if method not in BASELINE_METHODS:
        raise ConfigurationError(
            f"unknown method {method!r}; expected one of {BASELINE_METHODS}"
        )
    return _run_fixed_schedule(method, model_spec, config, train, val, seed)


def sse_ensemble_members(records, last: int = 5) -> list:
    """The snapshots the cosine-restart collector ensembles: the last
    ``last`` of the run, which had the most training behind them."""
    return list(records[-last:]) if last < len(records) else list(records)


CHECKPOINT_MAGIC = b"AECK"
CHECKPOINT_VERSION = 1


def _metrics_to_json(m: Metrics | None):
    if m is None:
        return None
    return {"mean_loss": m.mean_loss, "accuracy": m.accuracy}


def _metrics_from_json(obj) -> Metrics | None:
    if obj is None:
        return None
    return Metrics(mean_loss=float(obj["mean_loss"]), accuracy=float(obj["accuracy"]))


def save_checkpoint(record: CheckpointRecord, path):
    """Serialize a checkpoint record; atomic write-then-rename.

    Layout: magic ``AECK``, u16 version, u16 layer count, u32 dims, then per
    layer the weights then biases as little-endian float64, then a
    u32-length-prefixed JSON metadata block.
    """
    dims = record.params.layer_dims
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<HH", CHECKPOINT_VERSION, len(dims)),
        struct.pack(f"<{len(dims)}I", *dims),
    ]
    for w, b in zip(record.params.weights, record.params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    meta = json.dumps(
        {
            "id": record.id,
            "step": record.collected_at_step,
            "rng_seed": record.params.rng_seed,
            "train_metrics": _metrics_to_json(record.train_metrics),
            "val_metrics": _metrics_to_json(record.val_metrics),
        },
        sort_keys=True,
    ).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    blob = b"".join(parts)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise CheckpointCorruptionError(
                f"file ends at byte {len(self.blob)} but {self.pos + count} are needed"
            )
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out


def load_checkpoint(path) -> CheckpointRecord:
    """Read a checkpoint written by ``save_checkpoint``; round-trips are
    bit-exact."""
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic in {path}")
    version, n_dims = struct.unpack("<HH", reader.take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version} in {path}")
    if n_dims < 2:
        raise CheckpointFormatError(f"layer count {n_dims} is too small in {path}")
    dims = struct.unpack(f"<{n_dims}I", reader.take(4 * n_dims))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(reader.take(8 * fan_in * fan_out), dtype="<f8")
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(np.frombuffer(reader.take(8 * fan_out), dtype="<f8").copy())
    (meta_len,) = struct.unpack("<I", reader.take(4))
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable metadata in {path}: {exc}") from exc
    if reader.pos != len(blob):
        raise CheckpointFormatError(f"{len(blob) - reader.pos} trailing bytes in {path}")
    params = ModelParams(
        layer_dims=dims, weights=weights, biases=biases, rng_seed=int(meta["rng_seed"])
    )
    return CheckpointRecord(
        id=int(meta["id"]),
        params=params,
        probe=probe_weights(params),
        collected_at_step=int(meta["step"]),
        train_metrics=_metrics_from_json(meta.get("train_metrics")),
        val_metrics=_metrics_from_json(meta.get("val_metrics")),
    )
