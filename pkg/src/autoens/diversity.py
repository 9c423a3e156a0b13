"""Model-diversity measurement: probe-vector distances that gate rise cycles,
the affine normalization used to plot distances next to correlations, and
pairwise softmax-output correlation diagnostics.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, ShapeError, StateError
from .netcore import Batch, ModelParams, forward


def euclidean_distance(u, v) -> float:
    """sqrt of the summed squared coordinate differences."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"vector shapes differ: {u.shape} vs {v.shape}")
    return float(np.linalg.norm(u - v))


@dataclass
class DiversityProbe:
    """Distances between probe vectors that decide when a rise cycle ends.

    ``d1`` freezes at each checkpoint: the distance from the new checkpoint
    to the previous cycle's peak probe (0.0 on the first cycle, which has no
    previous peak, so any movement ends it). ``d2`` tracks the distance from
    the checkpoint to the latest rise sample; the cycle is over once
    ``d2 > escape_ratio * d1``. Ratios outside (1, 2] tend to collect either
    near-duplicates or runaways, so they require an explicit override.
    """

    escape_ratio: float = 1.5
    allow_any_ratio: bool = False
    w_checkpoint: np.ndarray | None = None
    w_prev_peak: np.ndarray | None = None
    w_current: np.ndarray | None = None
    d1: float | None = None
    d2: float | None = None

    def __post_init__(self):
        if not self.allow_any_ratio and not (1.0 < self.escape_ratio <= 2.0):
            raise ConfigurationError(
                f"escape_ratio must lie in (1, 2], got {self.escape_ratio}; "
                "pass allow_any_ratio=True to override"
            )

    def _prepared(self, w) -> np.ndarray:
        w = np.array(w, dtype=np.float64, copy=True)
        for existing in (self.w_checkpoint, self.w_prev_peak, self.w_current):
            if existing is not None and existing.shape != w.shape:
                raise ShapeError(
                    f"probe length changed mid-run: {existing.shape} vs {w.shape}"
                )
        return w

    def record_checkpoint(self, w):
        """Freeze d1 against the previous peak and reset the rise tracking."""
        w = self._prepared(w)
        self.w_checkpoint = w
        self.d1 = (
            euclidean_distance(w, self.w_prev_peak) if self.w_prev_peak is not None else 0.0
        )
        self.w_current = None
        self.d2 = None

    def record_peak(self, w):
        """Store the probe at the end of the current rise for the next cycle's d1."""
        self.w_prev_peak = self._prepared(w)

    def record_rise_sample(self, w):
        """Track the latest probe during a rise and recompute d2."""
        if self.w_checkpoint is None:
            raise StateError("rise sample before any checkpoint")
        w = self._prepared(w)
        self.w_current = w
        self.d2 = euclidean_distance(self.w_checkpoint, w)


def cycle_should_end(probe: DiversityProbe) -> bool:
    """True once the rise has moved past escape_ratio times the previous
    escape distance (any movement ends the first cycle, where d1 is 0)."""
    if probe.d1 is None or probe.d2 is None:
        raise StateError("cycle test outside a rise (no checkpoint or no rise sample)")
    return probe.d2 > probe.escape_ratio * probe.d1


@dataclass(frozen=True)
class NormalizationMap:
    """Affine map sending raw distances [x_min, x_max] onto [y_min, y_max],
    reversed: the largest distance lands on y_min."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ConfigurationError(f"need x_max > x_min, got {self.x_max} and {self.x_min}")
        if not self.y_max > self.y_min:
            raise ConfigurationError(f"need y_max > y_min, got {self.y_max} and {self.y_min}")


class NormalizedDistance(NamedTuple):
    value: float
    clamped: bool


def normalize_distance(nmap: NormalizationMap, x: float) -> NormalizedDistance:
    """Map a raw distance onto the display range, largest-to-smallest.

    x_min lands exactly on y_max and x_max exactly on y_min; values outside
    the raw bounds are clamped and flagged.
    """
    clamped = False
    if x < nmap.x_min:
        x, clamped = nmap.x_min, True
    elif x > nmap.x_max:
        x, clamped = nmap.x_max, True
    if x == nmap.x_min:
        return NormalizedDistance(nmap.y_max, clamped)
    if x == nmap.x_max:
        return NormalizedDistance(nmap.y_min, clamped)
    span = (x - nmap.x_min) / (nmap.x_max - nmap.x_min)
    return NormalizedDistance(nmap.y_max - (nmap.y_max - nmap.y_min) * span, clamped)


def _pearson(u: np.ndarray, v: np.ndarray) -> float:
    uc = u - u.mean()
    vc = v - v.mean()
    su = float(np.sqrt(np.mean(uc**2)))
    sv = float(np.sqrt(np.mean(vc**2)))
    if su == 0.0 or sv == 0.0:
        warnings.warn("zero-variance outputs in correlation; using identity convention")
        return 1.0 if np.array_equal(u, v) else 0.0
    r = float(np.mean(uc * vc) / (su * sv))
    return min(1.0, max(-1.0, r))


def pairwise_output_correlation(members: Sequence[ModelParams], data: Batch) -> np.ndarray:
    """Pearson correlation between the flattened softmax outputs of every
    member pair over the dataset; unit diagonal."""
    if len(members) < 2:
        raise InputError(f"need at least 2 members, got {len(members)}")
    outputs = [forward(m, data.inputs).ravel() for m in members]
    size = outputs[0].size
    if any(o.size != size for o in outputs):
        raise ShapeError("members produce outputs of different sizes")
    t = len(outputs)
    matrix = np.eye(t)
    for i in range(t):
        for j in range(i + 1, t):
            r = _pearson(outputs[i], outputs[j])
            matrix[i, j] = matrix[j, i] = r
    return matrix


def mean_offdiagonal(matrix: np.ndarray) -> float:
    """Mean of the off-diagonal entries of a square matrix."""
    t = matrix.shape[0]
    if t < 2:
        raise InputError("need a matrix of order >= 2")
    return float((matrix.sum() - np.trace(matrix)) / (t * (t - 1)))


def write_correlation_csv(matrix: np.ndarray, member_ids: Sequence, path):
    """Write a correlation matrix as CSV with a header row of member ids."""
    if matrix.shape[0] != matrix.shape[1] or matrix.shape[0] != len(member_ids):
        raise ShapeError("matrix order and member id count must match")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["member_id", *member_ids])
        for mid, row in zip(member_ids, matrix):
            writer.writerow([mid, *[repr(float(v)) for v in row]])
