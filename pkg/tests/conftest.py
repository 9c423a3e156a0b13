import numpy as np
import pytest

from autoens.collect import ModelSpec, StopPolicy, run_auto_ensemble
from autoens.diversity import DiversityProbe
from autoens.harness import gen_two_moons, split
from autoens.schedule import ScheduleConfig


QUICK_SCHED = dict(
    lr_high=0.5,
    lr_low=0.01,
    decline_steps=8,
    rapid_divisor=4.0,
    explore_divisor=10.0,
    rapid_steps=3,
    pretrain_steps=6,
)


def quick_sched_config(**overrides) -> ScheduleConfig:
    return ScheduleConfig(**{**QUICK_SCHED, **overrides})


@pytest.fixture(scope="session")
def quick_splits():
    ds = gen_two_moons(500, 0.2, 7)
    train, val, test = split(ds, (0.6, 0.2, 0.2), 7)
    return train.as_batch(), val.as_batch(), test.as_batch()


def quick_ae(train, val, seed=7, **stop_kw):
    stop = StopPolicy(**{"max_checkpoints": 4, "max_steps": 220, **stop_kw})
    probe = DiversityProbe(escape_ratio=1.5)
    return run_auto_ensemble(
        ModelSpec((2, 16, 2)),
        quick_sched_config(),
        probe,
        stop,
        train,
        val,
        seed,
        conv_window=4,
        conv_rel_tol=2e-3,
    )


@pytest.fixture(scope="session")
def quick_ae_run(quick_splits):
    train, val, _ = quick_splits
    return quick_ae(train, val)
