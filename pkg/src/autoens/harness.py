"""Reproducible experiment front door: dataset generation and ingestion,
flat-key config parsing, the method comparison runner, and report emission.

Everything emitted is a deterministic function of the config plus the seed;
no file carries timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collect import (
    BaselineConfig,
    CheckpointRecord,
    ModelSpec,
    StopPolicy,
    run_auto_ensemble,
    run_baseline,
    save_checkpoint,
    sse_ensemble_members,
)
from .diversity import DiversityProbe, pairwise_output_correlation, write_correlation_csv
from .ensemble import (
    EnsembleReport,
    EnsembleSpec,
    evaluate_ensemble,
    select_top_k,
    train_combiner,
)
from .errors import ConfigurationError, CsvParseError, StratificationError
from .netcore import Batch, evaluate
from .schedule import AccuracyLrCurve, ScheduleConfig

ALL_METHODS = ("ae", "sse", "fge", "ce", "rie", "ind")


@dataclass
class Dataset:
    """Feature matrix plus class labels, with provenance for reproducibility."""

    inputs: np.ndarray
    labels: np.ndarray
    feature_names: list[str] | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.labels)


def _class_counts(n: int, classes: int) -> list[int]:
    # balanced within +-1: the first n % classes classes get one extra
    base, extra = divmod(n, classes)
    return [base + (1 if c < extra else 0) for c in range(classes)]


def gen_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half circles; a classic not-linearly-separable pair."""
    _check_gen_args(n, noise)
    rng = np.random.default_rng(seed)
    n0, n1 = _class_counts(n, 2)
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    inputs = np.vstack([upper, lower]) + rng.normal(0.0, noise, size=(n, 2))
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return Dataset(
        inputs=inputs,
        labels=labels,
        feature_names=["x0", "x1"],
        provenance={
            "synthetic": {"kind": "two_moons", "params": {"n": n, "noise": noise}, "seed": seed}
        },
    )


def gen_blobs(n: int, classes: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters centered on a circle, one per class."""
    _check_gen_args(n, spread)
    if classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    counts = _class_counts(n, classes)
    blocks, labels = [], []
    for c, count in enumerate(counts):
        angle = 2.0 * np.pi * c / classes
        center = 3.0 * np.array([np.cos(angle), np.sin(angle)])
        blocks.append(center + rng.normal(0.0, spread, size=(count, 2)))
        labels.append(np.full(count, c, dtype=np.int64))
    return Dataset(
        inputs=np.vstack(blocks),
        labels=np.concatenate(labels),
        feature_names=["x0", "x1"],
        provenance={
            "synthetic": {
                "kind": "blobs",
                "params": {"n": n, "classes": classes, "spread": spread},
                "seed": seed,
            }
        },
    )


def gen_spirals(n: int, classes: int, noise: float, seed: int) -> Dataset:
    """Interleaved spiral arms, one per class; separable only with curvature."""
    _check_gen_args(n, noise)
    if classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    counts = _class_counts(n, classes)
    blocks, labels = [], []
    for c, count in enumerate(counts):
        t = np.linspace(0.25, 1.0, count)
        radius = 2.0 * t
        angle = 2.0 * np.pi * c / classes + 4.0 * t
        arm = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
        blocks.append(arm + rng.normal(0.0, noise, size=(count, 2)))
        labels.append(np.full(count, c, dtype=np.int64))
    return Dataset(
        inputs=np.vstack(blocks),
        labels=np.concatenate(labels),
        feature_names=["x0", "x1"],
        provenance={
            "synthetic": {
                "kind": "spirals",
                "params": {"n": n, "classes": classes, "noise": noise},
                "seed": seed,
            }
        },
    )


def _check_gen_args(n: int, scale: float):
    if n < 10:
        raise ConfigurationError(f"need n >= 10, got {n}")
    if scale < 0.0:
        raise ConfigurationError(f"noise/spread must be >= 0, got {scale}")


def load_csv(path, label_column: str) -> Dataset:
    """Load a headered CSV: numeric feature columns plus one label column.

    Labels map to dense class indices in first-appearance order; the file's
    content hash is recorded in the provenance.
    """
    path = Path(path)
    blob = path.read_bytes()
    rows = list(csv.reader(blob.decode("utf-8").splitlines()))
    if not rows:
        raise CsvParseError(f"{path} is empty; a header row is required")
    header = rows[0]
    if label_column not in header:
        raise CsvParseError(f"label column {label_column!r} not in header {header}")
    label_idx = header.index(label_column)
    feature_names = [name for i, name in enumerate(header) if i != label_idx]
    class_of: dict[str, int] = {}
    inputs, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvParseError(f"row {r} has {len(row)} cells, header has {len(header)}")
        feats = []
        for i, cell in enumerate(row):
            if i == label_idx:
                continue
            try:
                feats.append(float(cell))
            except ValueError:
                raise CsvParseError(
                    f"non-numeric value {cell!r} at row {r}, column {header[i]!r}"
                ) from None
        label = row[label_idx]
        if label not in class_of:
            class_of[label] = len(class_of)
        inputs.append(feats)
        labels.append(class_of[label])
    if not inputs:
        raise CsvParseError(f"{path} has a header but no data rows")
    return Dataset(
        inputs=np.array(inputs, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        feature_names=feature_names,
        provenance={"csv": {"path": str(path), "sha256": hashlib.sha256(blob).hexdigest()}},
    )


def _largest_remainder(total: int, fractions) -> list[int]:
    quotas = [total * f for f in fractions]
    counts = [int(q) for q in quotas]
    remainders = sorted(
        range(len(fractions)), key=lambda i: (counts[i] - quotas[i], i)
    )  # biggest fractional part first, ties by position
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def split(dataset: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified train/val/test split, standardized with train statistics.

    Deterministic under the seed. Every class must have at least as many
    samples as there are splits.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigurationError(f"need train/val/test fractions, got {len(fractions)}")
    if any(f <= 0.0 for f in fractions):
        raise ConfigurationError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in np.unique(dataset.labels):
        idx = np.nonzero(dataset.labels == c)[0]
        if idx.size < 3:
            raise StratificationError(
                f"class {int(c)} has {idx.size} samples; need at least 3 for 3 splits"
            )
        idx = rng.permutation(idx)
        counts = _largest_remainder(idx.size, fractions)
        offset = 0
        for part, count in zip(parts, counts):
            part.append(idx[offset : offset + count])
            offset += count
    index_sets = [np.sort(np.concatenate(part)) for part in parts]
    train_inputs = dataset.inputs[index_sets[0]]
    mean = train_inputs.mean(axis=0)
    std = train_inputs.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    out = []
    for name, indices in zip(("train", "val", "test"), index_sets):
        out.append(
            Dataset(
                inputs=(dataset.inputs[indices] - mean) / std,
                labels=dataset.labels[indices],
                feature_names=dataset.feature_names,
                provenance={**dataset.provenance, "split": name},
            )
        )
    return out[0], out[1], out[2]


# --- experiment configuration ------------------------------------------------

_CONFIG_DEFAULTS: dict[str, str] = {
    "dataset.kind": "two_moons",
    "dataset.n": "2000",
    "dataset.noise": "0.25",
    "dataset.classes": "3",
    "dataset.spread": "0.5",
    "dataset.path": "",
    "dataset.label_column": "label",
    "split.train": "0.6",
    "split.val": "0.2",
    "split.test": "0.2",
    "model.layer_dims": "2,32,32,2",
    "model.batch_size": "32",
    "sched.method": "ae",
    "sched.alpha1": "0.5",
    "sched.alpha2": "0.01",
    "sched.N": "25",
    "sched.a": "5",
    "sched.b": "25",
    "sched.m": "5",
    "sched.pretrain_steps": "20",
    "sched.pretrain_lr": "",
    "sched.epochs": "120",
    "sched.base_lr": "0.1",
    "sched.milestones": "60,90",
    "sched.decay_factor": "0.1",
    "sched.sse_alpha0": "0.1",
    "sched.sse_cycle_len": "40",
    "sched.sse_ensemble_last": "5",
    "sched.fge_lo": "0.01",
    "sched.fge_hi": "0.1",
    "sched.fge_cycle_len": "20",
    "sched.rie_members": "5",
    "div.alpha_ratio": "1.5",
    "conv.window": "5",
    "conv.rel_tol": "1e-3",
    "stop.max_checkpoints": "10",
    "stop.lr_ceiling": "",
    "stop.max_steps": "600",
    "ensemble.mode": "simple",
    "ensemble.combiner_lr": "0.01",
    "ensemble.combiner_steps": "200",
    "ensemble.ce_top_k": "10",
    "compare.methods": "ae,sse,fge,ce,rie,ind",
    "scan.lo": "1e-4",
    "scan.hi": "1.0",
    "scan.steps": "60",
    "seed": "",
}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines with dotted keys; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno} is not key=value: {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _CONFIG_DEFAULTS:
            raise ConfigurationError(f"unknown config key {key!r} on line {lineno}")
        values[key] = value.strip()
    return values


def _as_int(values, key):
    try:
        return int(values[key])
    except ValueError:
        raise ConfigurationError(f"{key} must be an integer, got {values[key]!r}") from None


def _as_float(values, key):
    try:
        return float(values[key])
    except ValueError:
        raise ConfigurationError(f"{key} must be a number, got {values[key]!r}") from None


def _as_opt_float(values, key):
    return None if values[key] == "" else _as_float(values, key)


def _as_int_list(values, key):
    raw = values[key].strip()
    if not raw:
        return ()
    try:
        return tuple(int(part.strip()) for part in raw.split(","))
    except ValueError:
        raise ConfigurationError(f"{key} must be comma-separated integers, got {raw!r}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; built from flat dotted-key text."""

    seed: int
    dataset_kind: str
    dataset_n: int
    dataset_noise: float
    dataset_classes: int
    dataset_spread: float
    dataset_path: str
    dataset_label_column: str
    fractions: tuple[float, float, float]
    model: ModelSpec
    method: str
    schedule: ScheduleConfig
    baseline: BaselineConfig
    escape_ratio: float
    conv_window: int
    conv_rel_tol: float
    stop: StopPolicy
    ensemble_mode: str
    combiner_lr: float
    combiner_steps: int
    ce_top_k: int
    methods: tuple[str, ...]
    scan_lo: float
    scan_hi: float
    scan_steps: int
    raw: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_mapping(cls, overrides: dict[str, str], seed: int | None = None) -> "ExperimentConfig":
        values = dict(_CONFIG_DEFAULTS)
        values.update(overrides)
        if seed is not None:
            values["seed"] = str(seed)
        if values["seed"] == "":
            raise ConfigurationError("seed is mandatory (config key 'seed' or --seed)")
        kind = values["dataset.kind"]
        if kind not in ("two_moons", "blobs", "spirals", "csv"):
            raise ConfigurationError(f"unknown dataset.kind {values['dataset.kind']!r}")
        method = values["sched.method"]
        if method not in ALL_METHODS:
            raise ConfigurationError(f"sched.method must be one of {ALL_METHODS}, got {method!r}")
        mode = values["ensemble.mode"]
        if mode not in ("simple", "weighted"):
            raise ConfigurationError(f"ensemble.mode must be simple|weighted, got {mode!r}")
        methods = tuple(m.strip() for m in values["compare.methods"].split(",") if m.strip())
        for m in methods:
            if m not in ALL_METHODS:
                raise ConfigurationError(f"compare.methods contains unknown method {m!r}")
        schedule = ScheduleConfig(
            lr_high=_as_float(values, "sched.alpha1"),
            lr_low=_as_float(values, "sched.alpha2"),
            decline_steps=_as_int(values, "sched.N"),
            rapid_divisor=_as_float(values, "sched.a"),
            explore_divisor=_as_float(values, "sched.b"),
            rapid_steps=_as_int(values, "sched.m"),
            pretrain_steps=_as_int(values, "sched.pretrain_steps"),
            pretrain_lr=_as_opt_float(values, "sched.pretrain_lr"),
        )
        baseline = BaselineConfig(
            epochs=_as_int(values, "sched.epochs"),
            base_lr=_as_float(values, "sched.base_lr"),
            milestones=_as_int_list(values, "sched.milestones"),
            decay_factor=_as_float(values, "sched.decay_factor"),
            sse_alpha0=_as_float(values, "sched.sse_alpha0"),
            sse_cycle_len=_as_int(values, "sched.sse_cycle_len"),
            sse_ensemble_last=_as_int(values, "sched.sse_ensemble_last"),
            fge_lo=_as_float(values, "sched.fge_lo"),
            fge_hi=_as_float(values, "sched.fge_hi"),
            fge_cycle_len=_as_int(values, "sched.fge_cycle_len"),
            rie_members=_as_int(values, "sched.rie_members"),
        )
        return cls(
            seed=_as_int(values, "seed"),
            dataset_kind=kind,
            dataset_n=_as_int(values, "dataset.n"),
            dataset_noise=_as_float(values, "dataset.noise"),
            dataset_classes=_as_int(values, "dataset.classes"),
            dataset_spread=_as_float(values, "dataset.spread"),
            dataset_path=values["dataset.path"],
            dataset_label_column=values["dataset.label_column"],
            fractions=(
                _as_float(values, "split.train"),
                _as_float(values, "split.val"),
                _as_float(values, "split.test"),
            ),
            model=ModelSpec(
                layer_dims=_as_int_list(values, "model.layer_dims"),
                batch_size=_as_int(values, "model.batch_size"),
            ),
            method=method,
            schedule=schedule,
            baseline=baseline,
            escape_ratio=_as_float(values, "div.alpha_ratio"),
            conv_window=_as_int(values, "conv.window"),
            conv_rel_tol=_as_float(values, "conv.rel_tol"),
            stop=StopPolicy(
                max_checkpoints=_as_int(values, "stop.max_checkpoints"),
                lr_ceiling=_as_opt_float(values, "stop.lr_ceiling"),
                max_steps=_as_int(values, "stop.max_steps"),
            ),
            ensemble_mode=mode,
            combiner_lr=_as_float(values, "ensemble.combiner_lr"),
            combiner_steps=_as_int(values, "ensemble.combiner_steps"),
            ce_top_k=_as_int(values, "ensemble.ce_top_k"),
            methods=methods,
            scan_lo=_as_float(values, "scan.lo"),
            scan_hi=_as_float(values, "scan.hi"),
            scan_steps=_as_int(values, "scan.steps"),
            raw=values,
        )

    @classmethod
    def from_text(cls, text: str, seed: int | None = None) -> "ExperimentConfig":
        return cls.from_mapping(parse_config_text(text), seed=seed)

    @classmethod
    def from_file(cls, path, seed: int | None = None) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, seed=seed)


def make_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_kind == "two_moons":
        return gen_two_moons(cfg.dataset_n, cfg.dataset_noise, cfg.seed)
    if cfg.dataset_kind == "blobs":
        return gen_blobs(cfg.dataset_n, cfg.dataset_classes, cfg.dataset_spread, cfg.seed)
    if cfg.dataset_kind == "spirals":
        return gen_spirals(cfg.dataset_n, cfg.dataset_classes, cfg.dataset_noise, cfg.seed)
    if not cfg.dataset_path:
        raise ConfigurationError("dataset.kind=csv requires dataset.path")
    return load_csv(cfg.dataset_path, cfg.dataset_label_column)


def prepare_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    return split(make_dataset(cfg), cfg.fractions, cfg.seed)


# --- running methods ----------------------------------------------------------


@dataclass
class MethodRun:
    """Everything one method produced under the shared config."""

    method: str
    records: list[CheckpointRecord]
    members: list[CheckpointRecord]
    log: list[dict]
    spec: EnsembleSpec
    report: EnsembleReport
    member_val_accs: list[float]
    total_steps: int
    correlation: np.ndarray | None = None


def run_one_method(cfg: ExperimentConfig, method: str, out_dir=None) -> MethodRun:
    """Run one collector end to end: collect, pick members, combine, score."""
    train_ds, val_ds, test_ds = prepare_splits(cfg)
    train, val, test = train_ds.as_batch(), val_ds.as_batch(), test_ds.as_batch()
    if method == "ae":
        probe = DiversityProbe(escape_ratio=cfg.escape_ratio)
        records, log = run_auto_ensemble(
            cfg.model,
            cfg.schedule,
            probe,
            cfg.stop,
            train,
            val,
            cfg.seed,
            conv_window=cfg.conv_window,
            conv_rel_tol=cfg.conv_rel_tol,
        )
        members = list(records)
    elif method in ("ind", "sse", "fge", "ce", "rie"):
        records, log = run_baseline(method, cfg.model, cfg.baseline, train, val, cfg.seed)
        if method == "sse":
            members = sse_ensemble_members(records, cfg.baseline.sse_ensemble_last)
        elif method == "ce":
            members = select_top_k(records, min(cfg.ce_top_k, len(records)), val)
        else:
            members = list(records)
    else:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {ALL_METHODS}")

    spec = EnsembleSpec(
        members=members,
        mode=cfg.ensemble_mode,
        combiner_lr=cfg.combiner_lr,
        combiner_steps=cfg.combiner_steps,
    )
    if spec.mode == "weighted":
        train_combiner(spec, val)
    report = evaluate_ensemble(spec, test)
    member_val_accs = [evaluate(r.params, val).accuracy for r in members]
    correlation = (
        pairwise_output_correlation([r.params for r in members], test)
        if len(members) >= 2
        else None
    )
    run = MethodRun(
        method=method,
        records=records,
        members=members,
        log=log,
        spec=spec,
        report=report,
        member_val_accs=member_val_accs,
        total_steps=len(log),
        correlation=correlation,
    )
    if out_dir is not None:
        write_run_artifacts(run, out_dir)
    return run


@dataclass(frozen=True)
class MethodRow:
    method: str
    ensemble_acc: float | None = None
    best_single_acc: float | None = None
    improvement: float | None = None
    avg_steps_per_member: float | None = None
    ensemble_size: int | None = None
    error: str | None = None


@dataclass
class ComparisonReport:
    rows: list[MethodRow]

    @property
    def has_errors(self) -> bool:
        return any(row.error for row in self.rows)


def compare_methods(cfg: ExperimentConfig, methods, out_root=None) -> ComparisonReport:
    """Run each method on the shared dataset/model/seed and tabulate.

    A failing method becomes an error row; the remaining methods still run.
    """
    rows = []
    for method in methods:
        out_dir = Path(out_root) / method if out_root is not None else None
        try:
            run = run_one_method(cfg, method, out_dir)
        except Exception as exc:  # noqa: BLE001 - per-method isolation is the contract
            rows.append(MethodRow(method=method, error=f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(
            MethodRow(
                method=method,
                ensemble_acc=run.report.metrics.accuracy,
                best_single_acc=run.report.best_member_acc,
                improvement=run.report.metrics.accuracy - run.report.best_member_acc,
                avg_steps_per_member=run.total_steps / len(run.members),
                ensemble_size=len(run.members),
            )
        )
    return ComparisonReport(rows=rows)


# --- report emission ----------------------------------------------------------

_COMPARISON_COLUMNS = (
    "method",
    "ensemble_acc",
    "best_single_acc",
    "improvement",
    "avg_steps_per_member",
    "ensemble_size",
    "error",
)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def comparison_to_csv(report: ComparisonReport) -> str:
    lines = [",".join(_COMPARISON_COLUMNS)]
    for row in report.rows:
        lines.append(",".join(_cell(getattr(row, col)) for col in _COMPARISON_COLUMNS))
    return "\n".join(lines) + "\n"


def comparison_to_markdown(report: ComparisonReport) -> str:
    header = "| " + " | ".join(_COMPARISON_COLUMNS) + " |"
    rule = "|" + "|".join(" --- " for _ in _COMPARISON_COLUMNS) + "|"
    lines = [header, rule]
    for row in report.rows:
        lines.append(
            "| " + " | ".join(_cell(getattr(row, col)) for col in _COMPARISON_COLUMNS) + " |"
        )
    return "\n".join(lines) + "\n"


def comparison_to_jsonl(report: ComparisonReport) -> str:
    lines = [
        json.dumps({col: getattr(row, col) for col in _COMPARISON_COLUMNS}, sort_keys=True)
        for row in report.rows
    ]
    return "\n".join(lines) + "\n"


def members_table(run: MethodRun) -> list[dict]:
    weights = (
        run.spec.weights
        if run.spec.mode == "weighted"
        else np.full(len(run.members), 1.0 / len(run.members))
    )
    return [
        {
            "member_id": record.id,
            "val_acc": val_acc,
            "test_acc": test_acc,
            "weight": float(weight),
        }
        for record, val_acc, test_acc, weight in zip(
            run.members, run.member_val_accs, run.report.member_accuracies, weights
        )
    ]


def _table_to_csv(rows: list[dict], columns) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(row[col]) for col in columns))
    return "\n".join(lines) + "\n"


def _table_to_markdown(rows: list[dict], columns) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join(" --- " for _ in columns) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(_cell(row[col]) for col in columns) + " |")
    return "\n".join(lines) + "\n"


def _table_to_jsonl(rows: list[dict]) -> str:
    return "\n".join(json.dumps(row, sort_keys=True) for row in rows) + "\n"


_MEMBER_COLUMNS = ("member_id", "val_acc", "test_acc", "weight")
_FORMAT_SUFFIX = {"csv": "csv", "jsonl": "jsonl", "md": "md"}


def render_table(rows: list[dict], columns, fmt: str) -> str:
    if fmt == "csv":
        return _table_to_csv(rows, columns)
    if fmt == "jsonl":
        return _table_to_jsonl(rows)
    if fmt == "md":
        return _table_to_markdown(rows, columns)
    raise ConfigurationError(f"unknown format {fmt!r}; expected csv, jsonl, or md")


def write_metrics_log(log: list[dict], path):
    with open(path, "w") as fh:
        for row in log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_metrics_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_lr_series(log: list[dict], path):
    """Plot-ready step/lr series; parses back bit-equal to the log."""
    with open(path, "w") as fh:
        fh.write("step,lr\n")
        for row in log:
            fh.write(f"{row['step']},{repr(float(row['lr']))}\n")


def write_scan_curve(curve: AccuracyLrCurve, path):
    with open(path, "w") as fh:
        fh.write("lr,accuracy\n")
        for lr, acc in curve.points:
            fh.write(f"{repr(float(lr))},{repr(float(acc))}\n")


def summary_dict(run: MethodRun) -> dict:
    return {
        "method": run.method,
        "mode": run.spec.mode,
        "T": len(run.members),
        "ensemble_test_acc": run.report.metrics.accuracy,
        "best_member_acc": run.report.best_member_acc,
        "mean_member_acc": run.report.mean_member_acc,
        "improvement": run.report.improvement,
        "member_ids": [r.id for r in run.members],
        "total_steps": run.total_steps,
    }


def write_run_artifacts(run: MethodRun, out_dir, fmt: str = "csv"):
    """Persist one method's run: checkpoints, metrics log, tables, summary."""
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for record in run.records:
        save_checkpoint(record, ckpt_dir / f"ckpt_{record.id:04d}.aeck")
    write_metrics_log(run.log, out_dir / "metrics.jsonl")
    write_lr_series(run.log, out_dir / "lr_vs_step.csv")
    table = members_table(run)
    suffix = _FORMAT_SUFFIX.get(fmt)
    if suffix is None:
        raise ConfigurationError(f"unknown format {fmt!r}; expected csv, jsonl, or md")
    (out_dir / f"members.{suffix}").write_text(render_table(table, _MEMBER_COLUMNS, fmt))
    (out_dir / "summary.json").write_text(
        json.dumps(summary_dict(run), sort_keys=True, indent=2) + "\n"
    )
    if run.correlation is not None:
        write_correlation_csv(
            run.correlation, [r.id for r in run.members], out_dir / "correlation.csv"
        )
