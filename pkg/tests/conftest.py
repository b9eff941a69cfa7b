import numpy as np
import pytest

from intercache.config import ModelConfig
from intercache.denoiser import init_weights
from intercache.world import Scene, SceneObject, Vocabulary

SMALL = ModelConfig(frames=2, grid_h=8, grid_w=8, d=16, heads=2, blocks=1, steps=4)
SMALL64 = ModelConfig(frames=2, grid_h=8, grid_w=8, d=16, heads=2, blocks=2, steps=4, dtype="float64")


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary(0)


@pytest.fixture(scope="session")
def small():
    return SMALL


@pytest.fixture(scope="session")
def small64():
    return SMALL64


@pytest.fixture(scope="session")
def small_weights():
    return init_weights(SMALL)


@pytest.fixture(scope="session")
def small64_weights():
    return init_weights(SMALL64)


def tok(vocab, name):
    return vocab.ids[name]


def make_scene(vocab, background="beach", objects=(("spotted", "dog", "runs", (2, 5), (2, 5), (0, 0)),)):
    objs = tuple(SceneObject(vocab.ids[o], vocab.ids[a], vocab.ids[v], rows, cols, motion)
                 for a, o, v, rows, cols, motion in objects)
    return Scene(vocab.ids[background], objs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
