import numpy as np
import pytest

from lttr.config import RunConfig
from lttr.tensor import Parameter


def tiny_config(**overrides) -> RunConfig:
    """Desk geometry with narrow layers, small enough for exhaustive finite differences."""
    base = dict(channels_3d=[4, 4, 4], channels_2d=[8, 8], feature_dim=8,
                region_dim=16, point_dim=16, heads=2, layers=1)
    base.update(overrides)
    return RunConfig(**base)


def randomize(params, rng, scale=0.3):
    """Move every parameter (biases and gains included) off its init so no kink sits at 0."""
    for p in params:
        p.data[...] = p.data + rng.normal(0.0, scale, p.data.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape, name="p"):
    return Parameter(rng.normal(size=shape), name=name)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
