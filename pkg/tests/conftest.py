from __future__ import annotations

import pytest

from warpkit.diffusion import Schedule, ScheduleConfig
from warpkit.mmdit import MMDiT, ModelConfig
from warpkit.scenes import Scene, make_scene

SMALL = ModelConfig(layers=2, dim=32, heads=2, frames=2, grid_h=4, grid_w=4)
"""Narrow random-init model for gradient and training tests."""


@pytest.fixture(scope="session")
def identity_model() -> MMDiT:
    return MMDiT.initialize(ModelConfig(init="content_identity"), seed=0, precision="f64")


@pytest.fixture(scope="session")
def identity_model_f32() -> MMDiT:
    return MMDiT.initialize(ModelConfig(init="content_identity"), seed=0, precision="f32")


@pytest.fixture(scope="session")
def random_model() -> MMDiT:
    return MMDiT.initialize(ModelConfig(), seed=7, precision="f64")


@pytest.fixture(scope="session")
def random_model_f32() -> MMDiT:
    return MMDiT.initialize(ModelConfig(), seed=7, precision="f32")


@pytest.fixture(scope="session")
def small_model() -> MMDiT:
    return MMDiT.initialize(SMALL, seed=3, precision="f64")


@pytest.fixture(scope="session")
def schedule() -> Schedule:
    return Schedule()


@pytest.fixture(scope="session")
def short_schedule() -> Schedule:
    return Schedule(config=ScheduleConfig(steps=10))


@pytest.fixture(scope="session")
def scene() -> Scene:
    return make_scene(3)
