"""Learning-rate generators: the adaptive cyclic state machine that drives
checkpoint collection, the fixed schedulers used as comparison baselines, and
the range-scan procedure for choosing rate bounds.

The adaptive schedule walks a fixed loop of segments. A decline drops the
rate linearly from its anchor toward the floor value; the floor holds until
the caller reports convergence; the following rise first climbs steeply to
escape the reached optimum, then shallowly to search new ground, until the
caller reports the cycle is over. All segment arithmetic lives in pure
functions so that an emitted schedule can be replayed and checked
bit-for-bit from its log.
"""

from __future__ import annotations

import enum
import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    InputError,
    NoSignalError,
    NumericError,
    StateError,
)
from .netcore import Batch, ModelParams, evaluate, train_epoch

SMOOTH_WINDOW = 5  # trailing-mean width for range-scan accuracies


class Phase(enum.Enum):
    PRETRAIN = "pretrain"
    DECLINE = "decline"
    FLOOR = "floor"
    RISE_RAPID = "rise_rapid"
    RISE_EXPLORE = "rise_explore"


@dataclass(frozen=True)
class ScheduleConfig:
    """Constants of the adaptive cyclic schedule.

    ``lr_high``/``lr_low`` bound the cycle (typically two orders of magnitude
    apart): the high end speeds descent, the low end lets the model settle
    into a wide optimum. The decline spans ``decline_steps`` schedule steps.
    The two rise rates divide the decline rate by ``rapid_divisor`` and
    ``explore_divisor``; ``rapid_steps`` is the length of the steep first
    rise segment. An optional pretrain phase emits a constant ``pretrain_lr``
    (default ``lr_high / 5``) before the first decline.
    """

    lr_high: float
    lr_low: float
    decline_steps: int = 25
    rapid_divisor: float = 5.0
    explore_divisor: float = 25.0
    rapid_steps: int = 5
    pretrain_steps: int = 0
    pretrain_lr: float | None = None

    def __post_init__(self):
        if not (self.lr_high > self.lr_low > 0.0):
            raise ConfigurationError(
                f"need lr_high > lr_low > 0, got {self.lr_high} and {self.lr_low}"
            )
        if self.decline_steps < 1:
            raise ConfigurationError(f"decline_steps must be >= 1, got {self.decline_steps}")
        if self.rapid_steps < 1:
            raise ConfigurationError(f"rapid_steps must be >= 1, got {self.rapid_steps}")
        if self.rapid_divisor <= 0.0 or self.explore_divisor <= 0.0:
            raise ConfigurationError("rise-rate divisors must be positive")
        if self.pretrain_steps < 0:
            raise ConfigurationError(f"pretrain_steps must be >= 0, got {self.pretrain_steps}")
        if self.pretrain_lr is not None and self.pretrain_lr <= 0.0:
            raise ConfigurationError(f"pretrain_lr must be positive, got {self.pretrain_lr}")
        if self.rapid_rate <= self.explore_rate:
            warnings.warn(
                "rapid rise rate <= explore rise rate: the escape segment will be "
                "the shallow one (rapid_divisor should be smaller than explore_divisor)",
                stacklevel=2,
            )

    @property
    def decline_rate(self) -> float:
        return (self.lr_high - self.lr_low) / self.decline_steps

    @property
    def rapid_rate(self) -> float:
        return (self.lr_high - self.lr_low) / (self.rapid_divisor * self.decline_steps)

    @property
    def explore_rate(self) -> float:
        return (self.lr_high - self.lr_low) / (self.explore_divisor * self.decline_steps)

    @property
    def effective_pretrain_lr(self) -> float:
        return self.pretrain_lr if self.pretrain_lr is not None else self.lr_high / 5.0


@dataclass(frozen=True)
class ScheduleState:
    """Live position of the adaptive schedule.

    After a step, ``phase`` names the segment that emitted it, ``n`` counts
    emitted steps, and ``segment_step`` is the index of the next step within
    the segment (the two rise segments share one counter). ``checkpoint_step``
    records ``n`` at the latest checkpoint, ``handoff_lr`` the rate reached
    at the end of the steep rise segment, and ``decline_anchor`` the rate the
    current decline started from.
    """

    phase: Phase
    n: int = 0
    checkpoint_step: int = 0
    handoff_lr: float = 0.0
    current_lr: float = 0.0
    segment_step: int = 0
    decline_anchor: float = 0.0


@dataclass(frozen=True)
class ScheduleEvents:
    converged: bool = False
    cycle_end: bool = False


def initial_state(config: ScheduleConfig) -> ScheduleState:
    phase = Phase.PRETRAIN if config.pretrain_steps > 0 else Phase.DECLINE
    return ScheduleState(phase=phase, decline_anchor=config.lr_high)


def decline_lr(config: ScheduleConfig, k: int, anchor: float | None = None) -> float:
    """Rate k steps into a decline from ``anchor`` (default ``lr_high``).

    Linear with slope ``decline_rate``; held at ``lr_low`` once reached, at
    the latest after ``decline_steps`` steps.
    """
    if k < 0:
        raise InputError(f"step index must be >= 0, got {k}")
    start = config.lr_high if anchor is None else anchor
    if k >= config.decline_steps:
        return config.lr_low
    value = start - config.decline_rate * k
    return value if value > config.lr_low else config.lr_low


def rise_lr(config: ScheduleConfig, state: ScheduleState, k: int) -> float:
    """Rate k steps into a rise (k counts from the start of the steep segment).

    Steep segment for ``k < rapid_steps`` starting at ``lr_low``; from
    ``k = rapid_steps`` onward the shallow segment continues exactly at the
    recorded ``handoff_lr``.
    """
    if k < 0:
        raise InputError(f"step index must be >= 0, got {k}")
    if k < config.rapid_steps:
        return config.rapid_rate * k + config.lr_low
    return config.explore_rate * (k - config.rapid_steps) + state.handoff_lr


def ae_step(
    state: ScheduleState, config: ScheduleConfig, events: ScheduleEvents = ScheduleEvents()
) -> tuple[float, ScheduleState]:
    """Advance the adaptive schedule by one step.

    Returns the rate to train the next step at, plus the updated state.
    ``events`` reflect what the training loop observed after the previous
    step: ``converged`` may only arrive during decline/floor (it records the
    checkpoint step and starts the steep rise); ``cycle_end`` only during
    the shallow rise (it starts a new decline anchored at the smaller of the
    reached rate and ``lr_high``). Events in any other segment signal an
    orchestration bug and raise.
    """
    if events.cycle_end and state.phase is not Phase.RISE_EXPLORE:
        raise StateError(f"cycle_end event outside the explore segment (phase={state.phase.value})")
    if events.converged and state.phase not in (Phase.DECLINE, Phase.FLOOR):
        raise StateError(f"converged event outside decline/floor (phase={state.phase.value})")

    phase, k = state.phase, state.segment_step
    checkpoint_step = state.checkpoint_step
    handoff_lr = state.handoff_lr
    anchor = state.decline_anchor

    if events.converged:
        checkpoint_step = state.n
        phase, k = Phase.RISE_RAPID, 0
    elif events.cycle_end:
        anchor = min(state.current_lr, config.lr_high)
        phase, k = Phase.DECLINE, 0

    # reposition across natural segment boundaries before emitting, so the
    # returned state's phase always names the segment this step came from
    if phase is Phase.PRETRAIN and k >= config.pretrain_steps:
        phase, k, anchor = Phase.DECLINE, 0, config.lr_high
    if phase is Phase.DECLINE and decline_lr(config, k, anchor) <= config.lr_low:
        phase, k = Phase.FLOOR, 0
    if phase is Phase.RISE_RAPID and k >= config.rapid_steps:
        handoff_lr = config.rapid_rate * config.rapid_steps + config.lr_low
        phase = Phase.RISE_EXPLORE  # k keeps counting across the handoff

    if phase is Phase.PRETRAIN:
        lr = config.effective_pretrain_lr
    elif phase is Phase.DECLINE:
        lr = decline_lr(config, k, anchor)
    elif phase is Phase.FLOOR:
        lr = config.lr_low
    elif phase is Phase.RISE_RAPID:
        lr = rise_lr(config, state, k)
    else:
        lr = config.explore_rate * (k - config.rapid_steps) + handoff_lr

    new_state = ScheduleState(
        phase=phase,
        n=state.n + 1,
        checkpoint_step=checkpoint_step,
        handoff_lr=handoff_lr,
        current_lr=lr,
        segment_step=k + 1,
        decline_anchor=anchor,
    )
    return lr, new_state


def cosine_cycle_lr(alpha0: float, cycle_len: int, t: int) -> float:
    """Cosine decay from ``alpha0`` restarting every ``cycle_len`` steps."""
    if alpha0 <= 0.0:
        raise ConfigurationError(f"alpha0 must be positive, got {alpha0}")
    if cycle_len < 1:
        raise ConfigurationError(f"cycle_len must be >= 1, got {cycle_len}")
    if t < 0:
        raise InputError(f"t must be >= 0, got {t}")
    pos = t % cycle_len
    return (alpha0 / 2.0) * (math.cos(math.pi * pos / cycle_len) + 1.0)


def cosine_cycle_ends(cycle_len: int, t: int) -> bool:
    """Checkpoint hint: true on the last step of each cosine cycle."""
    return t % cycle_len == cycle_len - 1


def triangular_lr(lo: float, hi: float, cycle_len: int, t: int) -> float:
    """Triangular wave: hi down to lo over the first half-cycle, back up over
    the second."""
    if not (hi > lo > 0.0):
        raise ConfigurationError(f"need hi > lo > 0, got {hi} and {lo}")
    if cycle_len < 2 or cycle_len % 2:
        raise ConfigurationError(f"cycle_len must be even and >= 2, got {cycle_len}")
    if t < 0:
        raise InputError(f"t must be >= 0, got {t}")
    half = cycle_len // 2
    pos = t % cycle_len
    if pos == 0:
        return hi
    if pos == half:
        return lo
    if pos < half:
        return hi - (hi - lo) * (pos / half)
    return lo + (hi - lo) * ((pos - half) / half)


def triangular_trough(cycle_len: int, t: int) -> bool:
    """Checkpoint hint: true at each trough of the triangular wave."""
    return t % cycle_len == cycle_len // 2


def step_decay_lr(base: float, milestones, factor: float, t: int) -> float:
    """Stepwise decay: multiply ``base`` by ``factor`` at each milestone."""
    if base <= 0.0:
        raise ConfigurationError(f"base rate must be positive, got {base}")
    ms = list(milestones)
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ConfigurationError(f"milestones must strictly increase, got {ms}")
    if not (0.0 < factor < 1.0):
        raise ConfigurationError(f"factor must lie in (0, 1), got {factor}")
    if t < 0:
        raise InputError(f"t must be >= 0, got {t}")
    drops = sum(1 for m in ms if m <= t)
    return base * factor**drops


@dataclass
class AccuracyLrCurve:
    """(learning rate, smoothed training accuracy) pairs from a linear ramp."""

    points: list[tuple[float, float]]

    def __post_init__(self):
        lrs = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(lrs, lrs[1:])):
            raise ConfigurationError("curve learning rates must strictly increase")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def lrs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def lr_range_scan(
    model: ModelParams,
    data: Batch,
    lo: float,
    hi: float,
    steps: int,
    *,
    batch_size: int = 32,
    seed: int = 0,
) -> AccuracyLrCurve:
    """Train a fresh copy of ``model`` while the rate ramps linearly lo..hi.

    One training epoch per ramp step; after each, the training accuracy is
    recorded as a trailing mean over the last five steps. The scan truncates
    at the first non-finite loss and returns the prefix gathered so far.
    """
    if not 0.0 < lo < hi:
        raise ConfigurationError(f"need 0 < lo < hi, got {lo} and {hi}")
    if steps < 10:
        raise ConfigurationError(f"need at least 10 scan steps, got {steps}")
    params = model.copy()
    rng = np.random.default_rng(seed)
    recent: deque[float] = deque(maxlen=SMOOTH_WINDOW)
    points: list[tuple[float, float]] = []
    for lr in np.linspace(lo, hi, steps):
        # probing into divergence is the point here; keep log-of-zero quiet
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            try:
                params, epoch_loss = train_epoch(params, data, float(lr), batch_size, rng)
            except NumericError:
                break
            metrics = evaluate(params, data)
        if not (np.isfinite(epoch_loss) and np.isfinite(metrics.mean_loss)):
            break
        recent.append(metrics.accuracy)
        points.append((float(lr), sum(recent) / len(recent)))
    return AccuracyLrCurve(points=points)


def suggest_bounds(curve: AccuracyLrCurve):
    """Candidate ranges for the schedule's low and high rate bounds.

    The low-bound range is the first contiguous run of curve segments whose
    accuracy slope reaches the 75th percentile of all positive slopes (the
    early stretch where accuracy improves fastest). The high-bound range
    starts where the 3-segment trailing mean of the slope, searched from the
    steepest segment onward, first drops below 10% of the peak slope, and
    extends to the end of the curve. Both are rough intervals, not values.
    """
    if len(curve) < 10:
        raise InputError(f"need at least 10 curve points, got {len(curve)}")
    lrs = curve.lrs
    accs = curve.accuracies
    slopes = np.diff(accs) / np.diff(lrs)
    positive = slopes[slopes > 0.0]
    if positive.size == 0:
        raise NoSignalError("accuracy never improves across the scan")
    threshold = float(np.percentile(positive, 75.0))
    above = np.nonzero(slopes >= threshold)[0]
    start = int(above[0])
    end = start
    while end + 1 < slopes.size and slopes[end + 1] >= threshold:
        end += 1
    low_range = (float(lrs[start]), float(lrs[end + 1]))

    peak_idx = int(np.argmax(slopes))
    peak = float(slopes[peak_idx])
    flat_start = None
    for j in range(peak_idx, slopes.size):
        trailing = float(np.mean(slopes[max(0, j - 2) : j + 1]))
        if trailing < 0.1 * peak:
            flat_start = j
            break
    if flat_start is None:
        raise NoSignalError("curve never flattens after its steepest rise")
    high_range = (float(lrs[flat_start]), float(lrs[-1]))
    return low_range, high_range
