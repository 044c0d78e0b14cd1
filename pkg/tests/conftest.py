import numpy as np
import pytest

from jndvqa.dataset import Observations
from jndvqa.jnd_model import make_generative_params
from jndvqa.simulator import SimulationConfig, simulate_dataset

# 51 * sum_l 2^-l * (1 + exp(-0.7 l)) / 2, evaluated with mpmath at 40 digits
EXPECTED_JND_DEFAULT = 33.522365010887603


@pytest.fixture(scope="session")
def sim_15x37():
    gen = make_generative_params(15, 37, content_sigma=0.02, subject_sigma=0.02,
                                 subject_mu_spread=0.05)
    return simulate_dataset(SimulationConfig(gen, 15, 37, seed=7))


@pytest.fixture
def additive_2x2():
    return Observations(("c1", "c2"), ("s1", "s2"), [[10.0, 20.0], [20.0, 30.0]])


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def random_obs(rng, n_c, n_s, missing=0.0):
    scores = rng.uniform(10, 45, size=(n_c, n_s))
    if missing:
        drop = rng.random((n_c, n_s)) < missing
        scores[drop] = np.nan
    return Observations(tuple(f"c{i}" for i in range(n_c)),
                        tuple(f"s{j}" for j in range(n_s)), scores)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
