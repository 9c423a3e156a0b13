import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoens.errors import ConfigurationError, InputError, NoSignalError, StateError
from autoens.harness import gen_two_moons, split
from autoens.netcore import Batch, init_model
from autoens.schedule import (
    AccuracyLrCurve,
    Phase,
    ScheduleConfig,
    ScheduleEvents,
    ScheduleState,
    ae_step,
    cosine_cycle_ends,
    cosine_cycle_lr,
    decline_lr,
    initial_state,
    lr_range_scan,
    rise_lr,
    step_decay_lr,
    suggest_bounds,
    triangular_lr,
    triangular_trough,
)

REF = dict(lr_high=0.5, lr_low=0.01, decline_steps=25, rapid_divisor=5.0, explore_divisor=25.0, rapid_steps=5)


def ref_config(**overrides):
    return ScheduleConfig(**{**REF, **overrides})


class TestDeclineLr:
    def test_starts_at_high_bound(self):
        assert decline_lr(ref_config(), 0) == 0.5

    def test_reaches_low_bound_exactly_at_length(self):
        assert decline_lr(ref_config(), 25) == 0.01

    def test_holds_low_bound_beyond_length(self):
        assert decline_lr(ref_config(), 40) == 0.01

    def test_continuous_at_boundary(self):
        cfg = ref_config()
        before = decline_lr(cfg, 24)
        assert before > 0.01
        assert abs(before - 0.01) <= cfg.decline_rate * (1 + 1e-12)

    def test_anchor_shifts_start(self):
        cfg = ref_config()
        assert decline_lr(cfg, 0, anchor=0.1) == 0.1
        assert decline_lr(cfg, 1, anchor=0.1) == 0.1 - cfg.decline_rate

    def test_anchored_decline_floors_early(self):
        cfg = ref_config()
        assert decline_lr(cfg, 5, anchor=0.05) == 0.01

    def test_negative_step_rejected(self):
        with pytest.raises(InputError):
            decline_lr(ref_config(), -1)


class TestRiseLr:
    def test_rapid_origin_is_low_bound(self):
        cfg = ref_config()
        state = initial_state(cfg)
        assert rise_lr(cfg, state, 0) == 0.01

    def test_rapid_slope(self):
        cfg = ref_config()
        state = initial_state(cfg)
        got = rise_lr(cfg, state, 3)
        assert math.isclose(got, 0.02176, rel_tol=1e-12)
        assert got == (0.5 - 0.01) / (5.0 * 25) * 3 + 0.01

    def test_explore_continues_exactly_at_handoff(self):
        cfg = ref_config()
        handoff = cfg.rapid_rate * cfg.rapid_steps + cfg.lr_low
        state = ScheduleState(phase=Phase.RISE_EXPLORE, handoff_lr=handoff)
        assert rise_lr(cfg, state, cfg.rapid_steps) == handoff

    def test_explore_slope(self):
        cfg = ref_config()
        handoff = cfg.rapid_rate * cfg.rapid_steps + cfg.lr_low
        state = ScheduleState(phase=Phase.RISE_EXPLORE, handoff_lr=handoff)
        one_in = rise_lr(cfg, state, cfg.rapid_steps + 1)
        assert one_in == cfg.explore_rate * 1 + handoff
        assert math.isclose(one_in - handoff, 0.49 / 625, rel_tol=1e-12)


class TestScheduleConfig:
    def test_bounds_must_be_ordered(self):
        with pytest.raises(ConfigurationError):
            ScheduleConfig(lr_high=0.01, lr_low=0.5)

    def test_bounds_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            ScheduleConfig(lr_high=0.5, lr_low=0.0)

    def test_lengths_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            ref_config(decline_steps=0)
        with pytest.raises(ConfigurationError):
            ref_config(rapid_steps=0)

    def test_shallow_escape_warns(self):
        with pytest.warns(UserWarning):
            ref_config(rapid_divisor=25.0, explore_divisor=5.0)

    def test_default_pretrain_lr_is_fifth_of_high(self):
        assert ref_config().effective_pretrain_lr == 0.5 / 5.0
        assert ref_config(pretrain_lr=0.03).effective_pretrain_lr == 0.03


class TestAeStep:
    def test_pretrain_emits_constant_then_declines(self):
        cfg = ref_config(pretrain_steps=3, pretrain_lr=0.07)
        state = initial_state(cfg)
        lrs, phases = [], []
        for _ in range(5):
            lr, state = ae_step(state, cfg)
            lrs.append(lr)
            phases.append(state.phase)
        assert lrs[:3] == [0.07, 0.07, 0.07]
        assert phases[:3] == [Phase.PRETRAIN] * 3
        assert lrs[3] == 0.5 and phases[3] is Phase.DECLINE
        assert lrs[4] == decline_lr(cfg, 1)

    def test_decline_start_emits_high_bound(self):
        cfg = ref_config()
        lr, state = ae_step(initial_state(cfg), cfg)
        assert lr == 0.5
        assert state.phase is Phase.DECLINE

    def test_floor_holds_until_converged(self):
        cfg = ref_config()
        state = initial_state(cfg)
        lrs = []
        for _ in range(40):
            lr, state = ae_step(state, cfg)
            lrs.append(lr)
        assert state.phase is Phase.FLOOR
        assert lrs[25:] == [0.01] * 15
        assert lrs[25] == 0.01  # step index N emits the floor value

    def test_converged_in_floor_records_checkpoint_step(self):
        cfg = ref_config()
        state = ScheduleState(phase=Phase.FLOOR, n=100, current_lr=0.01, decline_anchor=0.5)
        lr, state = ae_step(state, cfg, ScheduleEvents(converged=True))
        assert state.phase is Phase.RISE_RAPID
        assert state.checkpoint_step == 100
        assert lr == 0.01  # steep rise starts back at the low bound

    def test_converged_during_decline_skips_floor(self):
        cfg = ref_config()
        state = ScheduleState(phase=Phase.DECLINE, n=10, segment_step=10, current_lr=0.3, decline_anchor=0.5)
        _, state = ae_step(state, cfg, ScheduleEvents(converged=True))
        assert state.phase is Phase.RISE_RAPID

    def test_rapid_phase_lasts_m_steps_then_explore(self):
        cfg = ref_config()
        state = ScheduleState(phase=Phase.FLOOR, n=50, current_lr=0.01, decline_anchor=0.5)
        lrs, phases = [], []
        events = ScheduleEvents(converged=True)
        for _ in range(cfg.rapid_steps + 2):
            lr, state = ae_step(state, cfg, events)
            events = ScheduleEvents()
            lrs.append(lr)
            phases.append(state.phase)
        assert phases[: cfg.rapid_steps] == [Phase.RISE_RAPID] * cfg.rapid_steps
        assert phases[cfg.rapid_steps] is Phase.RISE_EXPLORE
        handoff = cfg.rapid_rate * cfg.rapid_steps + cfg.lr_low
        assert lrs[cfg.rapid_steps] == handoff
        assert state.handoff_lr == handoff

    def test_cycle_end_anchors_next_decline_at_reached_rate(self):
        cfg = ref_config()
        state = ScheduleState(
            phase=Phase.RISE_EXPLORE, n=60, handoff_lr=0.0296, current_lr=0.04, segment_step=9
        )
        lr, state = ae_step(state, cfg, ScheduleEvents(cycle_end=True))
        assert state.phase is Phase.DECLINE
        assert state.decline_anchor == 0.04
        assert lr == 0.04

    def test_cycle_end_anchor_clamped_to_high_bound(self):
        cfg = ref_config()
        state = ScheduleState(
            phase=Phase.RISE_EXPLORE, n=60, handoff_lr=0.0296, current_lr=0.9, segment_step=40
        )
        lr, state = ae_step(state, cfg, ScheduleEvents(cycle_end=True))
        assert state.decline_anchor == 0.5
        assert lr == 0.5

    def test_cycle_end_outside_explore_rejected(self):
        cfg = ref_config()
        state = ScheduleState(phase=Phase.FLOOR, n=5, decline_anchor=0.5)
        with pytest.raises(StateError):
            ae_step(state, cfg, ScheduleEvents(cycle_end=True))

    def test_converged_outside_decline_floor_rejected(self):
        cfg = ref_config()
        state = ScheduleState(phase=Phase.RISE_RAPID, n=5, decline_anchor=0.5)
        with pytest.raises(StateError):
            ae_step(state, cfg, ScheduleEvents(converged=True))

    def test_step_counter_monotone(self):
        cfg = ref_config(pretrain_steps=2)
        state = initial_state(cfg)
        for expected in range(1, 20):
            _, state = ae_step(state, cfg)
            assert state.n == expected


ALLOWED_EDGES = {
    (Phase.PRETRAIN, Phase.PRETRAIN),
    (Phase.PRETRAIN, Phase.DECLINE),
    (Phase.DECLINE, Phase.DECLINE),
    (Phase.DECLINE, Phase.FLOOR),
    (Phase.DECLINE, Phase.RISE_RAPID),
    (Phase.FLOOR, Phase.FLOOR),
    (Phase.FLOOR, Phase.RISE_RAPID),
    (Phase.RISE_RAPID, Phase.RISE_RAPID),
    (Phase.RISE_RAPID, Phase.RISE_EXPLORE),
    (Phase.RISE_EXPLORE, Phase.RISE_EXPLORE),
    (Phase.RISE_EXPLORE, Phase.DECLINE),
}


class TestTransitionGraph:
    @settings(max_examples=200, deadline=None)
    @given(
        events=st.lists(
            st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60
        ),
        pretrain=st.integers(min_value=0, max_value=4),
    )
    def test_phase_sequence_follows_allowed_edges(self, events, pretrain):
        cfg = ScheduleConfig(
            lr_high=0.5, lr_low=0.01, decline_steps=4, rapid_steps=2, pretrain_steps=pretrain
        )
        state = initial_state(cfg)
        prev_phase = None
        for converged, cycle_end in events:
            ev = ScheduleEvents(converged=converged, cycle_end=cycle_end)
            try:
                lr, state = ae_step(state, cfg, ev)
            except StateError:
                assert (cycle_end and state.phase is not Phase.RISE_EXPLORE) or (
                    converged and state.phase not in (Phase.DECLINE, Phase.FLOOR)
                )
                continue
            assert lr > 0.0 and np.isfinite(lr)
            if prev_phase is not None:
                assert (prev_phase, state.phase) in ALLOWED_EDGES
            assert state.checkpoint_step <= state.n
            prev_phase = state.phase


class TestCosine:
    def test_cycle_start_emits_alpha0(self):
        assert cosine_cycle_lr(0.1, 40, 0) == 0.1

    def test_midpoint_is_half(self):
        assert math.isclose(cosine_cycle_lr(0.1, 40, 20), 0.05, rel_tol=1e-12)

    def test_restart_is_exactly_periodic(self):
        for t in range(45):
            assert cosine_cycle_lr(0.1, 40, t) == cosine_cycle_lr(0.1, 40, t + 40)

    def test_cycle_end_hint(self):
        hints = [t for t in range(85) if cosine_cycle_ends(40, t)]
        assert hints == [39, 79]

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            cosine_cycle_lr(0.0, 40, 1)
        with pytest.raises(ConfigurationError):
            cosine_cycle_lr(0.1, 0, 1)
        with pytest.raises(InputError):
            cosine_cycle_lr(0.1, 40, -1)


class TestTriangular:
    def test_wave_origin_is_high(self):
        assert triangular_lr(0.01, 0.1, 20, 0) == 0.1

    def test_trough_is_low(self):
        assert triangular_lr(0.01, 0.1, 20, 10) == 0.01

    def test_ascending_midpoint(self):
        assert math.isclose(triangular_lr(0.01, 0.1, 20, 15), 0.055, rel_tol=1e-12)

    def test_exactly_periodic(self):
        for t in range(25):
            assert triangular_lr(0.01, 0.1, 20, t) == triangular_lr(0.01, 0.1, 20, t + 20)

    def test_trough_hint(self):
        hints = [t for t in range(45) if triangular_trough(20, t)]
        assert hints == [10, 30]

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            triangular_lr(0.1, 0.01, 20, 0)
        with pytest.raises(ConfigurationError):
            triangular_lr(0.01, 0.1, 15, 0)


class TestStepDecay:
    def test_before_first_milestone(self):
        assert step_decay_lr(0.1, [50, 75], 0.1, 10) == 0.1

    def test_after_first_milestone(self):
        assert math.isclose(step_decay_lr(0.1, [50, 75], 0.1, 60), 0.01, rel_tol=1e-12)

    def test_after_second_milestone(self):
        assert math.isclose(step_decay_lr(0.1, [50, 75], 0.1, 80), 0.001, rel_tol=1e-12)

    def test_milestones_must_increase(self):
        with pytest.raises(ConfigurationError):
            step_decay_lr(0.1, [75, 50], 0.1, 0)

    def test_factor_bounds(self):
        with pytest.raises(ConfigurationError):
            step_decay_lr(0.1, [50], 1.5, 0)


def drive_and_check(cfg, total_steps, floor_dwell, explore_dwell):
    """Independent tracker: plans segment boundaries itself and checks every
    emission against literal closed-form arithmetic."""
    a1, a2 = cfg.lr_high, cfg.lr_low
    n_dec, a_div, b_div, m = cfg.decline_steps, cfg.rapid_divisor, cfg.explore_divisor, cfg.rapid_steps
    beta = (a1 - a2) / n_dec
    beta1 = (a1 - a2) / (a_div * n_dec)
    beta2 = (a1 - a2) / (b_div * n_dec)
    handoff = beta1 * m + a2

    state = initial_state(cfg)
    events = ScheduleEvents()
    segment, k = ("pretrain" if cfg.pretrain_steps else "decline"), 0
    anchor = a1
    floor_seen = explore_seen = 0
    last_lr = None
    for _ in range(total_steps):
        lr, state = ae_step(state, cfg, events)
        events = ScheduleEvents()
        # advance the reference tracker to this step's segment
        if segment == "pretrain" and k >= cfg.pretrain_steps:
            segment, k = "decline", 0
        if segment == "decline" and (k >= n_dec or anchor - beta * k <= a2):
            segment, k = "floor", 0
        if segment == "rise" and k == m:
            pass  # handoff happens inside the same rise segment
        # expected value per closed form
        if segment == "pretrain":
            expected, phase = cfg.effective_pretrain_lr, Phase.PRETRAIN
        elif segment == "decline":
            value = anchor - beta * k
            expected = value if value > a2 else a2
            phase = Phase.DECLINE
        elif segment == "floor":
            expected, phase = a2, Phase.FLOOR
        elif k < m:
            expected, phase = beta1 * k + a2, Phase.RISE_RAPID
        else:
            expected, phase = beta2 * (k - m) + handoff, Phase.RISE_EXPLORE
        assert lr == expected, f"step {state.n}: {lr} != {expected} in {segment}[{k}]"
        assert state.phase is phase
        last_lr = lr
        # plan events exactly like the orchestration contract allows
        k += 1
        if segment == "floor":
            floor_seen += 1
            if floor_seen >= floor_dwell:
                events = ScheduleEvents(converged=True)
                segment, k, floor_seen = "rise", 0, 0
        elif segment == "rise" and k > m:
            explore_seen += 1
            if explore_seen >= explore_dwell:
                events = ScheduleEvents(cycle_end=True)
                anchor = min(last_lr, a1)
                segment, k, explore_seen = "decline", 0, 0
    return state


class TestEmissionExactness:
    def test_500_steps_bit_for_bit(self):
        cfg = ref_config(pretrain_steps=10)
        drive_and_check(cfg, 500, floor_dwell=4, explore_dwell=7)

    def test_500_steps_alternate_dwells(self):
        cfg = ref_config()
        drive_and_check(cfg, 500, floor_dwell=1, explore_dwell=13)


def scan_batch():
    ds = gen_two_moons(240, 0.25, 3)
    train, _, _ = split(ds, (0.6, 0.2, 0.2), 3)
    return train.as_batch()


class TestLrRangeScan:
    def test_lrs_strictly_increasing_and_bounded(self):
        data = scan_batch()
        model = init_model([2, 8, 2], 3)
        curve = lr_range_scan(model, data, 1e-4, 0.5, 12, batch_size=16, seed=0)
        lrs = curve.lrs
        assert len(curve) <= 12
        assert np.all(np.diff(lrs) > 0)
        assert lrs[0] == 1e-4

    def test_deterministic(self):
        data = scan_batch()
        model = init_model([2, 8, 2], 3)
        a = lr_range_scan(model, data, 1e-4, 0.5, 12, batch_size=16, seed=5)
        b = lr_range_scan(model, data, 1e-4, 0.5, 12, batch_size=16, seed=5)
        assert a.points == b.points

    def test_model_not_mutated(self):
        data = scan_batch()
        model = init_model([2, 8, 2], 3)
        before = [w.copy() for w in model.weights]
        lr_range_scan(model, data, 1e-4, 0.5, 12, batch_size=16, seed=0)
        for w, old in zip(model.weights, before):
            assert np.array_equal(w, old)

    def test_bad_bounds_rejected(self):
        data = scan_batch()
        model = init_model([2, 8, 2], 3)
        with pytest.raises(ConfigurationError):
            lr_range_scan(model, data, 0.5, 0.5, 12)
        with pytest.raises(ConfigurationError):
            lr_range_scan(model, data, 1e-4, 0.5, 9)

    def test_divergence_truncates_to_prefix(self):
        # unlearnable labels at huge rates push the true-class probability to
        # underflow, so the loss goes non-finite and the scan stops early
        rng = np.random.default_rng(0)
        data = Batch(rng.normal(size=(64, 2)), rng.integers(0, 2, size=64))
        model = init_model([2, 8, 2], 0)
        curve = lr_range_scan(model, data, 10.0, 5000.0, 40, batch_size=8, seed=0)
        assert len(curve) < 40


class TestSuggestBounds:
    @staticmethod
    def synthetic_curve():
        # steep early rise, sustained moderate middle, flat tail past 0.4
        lrs = np.concatenate(
            [
                np.linspace(1e-4, 1e-2, 10),
                np.linspace(0.05, 0.4, 10),
                np.linspace(0.45, 0.8, 10),
            ]
        )
        accs = np.concatenate(
            [
                np.linspace(0.50, 0.59, 10),
                np.linspace(0.63, 1.035, 10),  # raw slope ~1.05, a tenth of the early ~9.1
                np.full(10, 1.04),
            ]
        )
        return AccuracyLrCurve(points=list(zip(lrs.tolist(), accs.tolist())))

    def test_synthetic_shape_recovers_stated_ranges(self):
        low, high = suggest_bounds(self.synthetic_curve())
        assert 1e-4 <= low[0] < low[1] <= 1e-2
        assert high[0] >= 0.4
        assert high[1] == 0.8

    def test_constant_curve_is_no_signal(self):
        flat = AccuracyLrCurve(points=[(0.01 * (i + 1), 0.5) for i in range(12)])
        with pytest.raises(NoSignalError):
            suggest_bounds(flat)

    def test_too_few_points_rejected(self):
        with pytest.raises(InputError):
            suggest_bounds(AccuracyLrCurve(points=[(0.1, 0.5), (0.2, 0.6)]))

    def test_seeded_scan_matches_independent_slope_table(self):
        data = scan_batch()
        model = init_model([2, 8, 2], 3)
        curve = lr_range_scan(model, data, 1e-4, 1.0, 24, batch_size=16, seed=3)
        low, high = suggest_bounds(curve)

        # independent recomputation of both rules from the raw points
        lrs = np.array([p[0] for p in curve.points])
        accs = np.array([p[1] for p in curve.points])
        slopes = (accs[1:] - accs[:-1]) / (lrs[1:] - lrs[:-1])
        positive = [s for s in slopes if s > 0]
        threshold = float(np.percentile(positive, 75.0))
        start = next(i for i, s in enumerate(slopes) if s >= threshold)
        end = start
        while end + 1 < len(slopes) and slopes[end + 1] >= threshold:
            end += 1
        assert low == (float(lrs[start]), float(lrs[end + 1]))
        peak_idx = int(np.argmax(slopes))
        peak = slopes[peak_idx]
        flat = next(
            j
            for j in range(peak_idx, len(slopes))
            if float(np.mean(slopes[max(0, j - 2) : j + 1])) < 0.1 * peak
        )
        assert high == (float(lrs[flat]), float(lrs[-1]))
