"""Synthetic JND tests drawn from the per-round confidence model.

Random streams
--------------
Every draw comes from numpy's PCG64 bit generator seeded through a
``SeedSequence(seed, spawn_key=key)``:

* ``key = (0,)``     content factors ``eps_c``, drawn in content order
* ``key = (1,)``     subject factors ``delta_s``, drawn in subject order
* ``key = (2, c)``   decision uniforms for content ``c``

Cell ``(c, s)`` owns the block of ``L`` doubles starting at position
``s * L`` of its content's stream, i.e. the stream after
``PCG64.advance(s * L)`` (see :func:`cell_stream`).  Blocks never overlap,
so any cell can be simulated on its own and the matrix does not depend on
the order in which cells are visited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import QP_MAX, QP_MIN, Observations
from .jnd_model import GenerativeParams, ModelParams, decompose

MODES = ("continuous", "discrete")


@dataclass(frozen=True)
class SimulationConfig:
    gen: GenerativeParams
    n_contents: int
    n_subjects: int
    seed: int = 0
    mode: str = "continuous"

    def __post_init__(self):
        if self.n_contents < 2 or self.n_subjects < 2:
            raise ValueError("need at least 2 contents and 2 subjects")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gen.n_contents != self.n_contents or self.gen.n_subjects != self.n_subjects:
            raise ValueError("generative parameter lengths do not match the dataset shape")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return {"gen": self.gen.to_dict(), "n_contents": self.n_contents,
                "n_subjects": self.n_subjects, "seed": int(self.seed), "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        return cls(GenerativeParams.from_dict(d["gen"]), int(d["n_contents"]),
                   int(d["n_subjects"]), int(d.get("seed", 0)), d.get("mode", "continuous"))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    model: ModelParams
    realized_epsilon: np.ndarray
    realized_delta: np.ndarray

    def to_dict(self) -> dict:
        m = self.model
        return {
            "model": {"y_c": m.y_c.tolist(), "v_c": m.v_c.tolist(),
                      "b_s": m.b_s.tolist(), "v_s": m.v_s.tolist(), "kappa": m.kappa},
            "realized_epsilon": self.realized_epsilon.tolist(),
            "realized_delta": self.realized_delta.tolist(),
        }


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def cell_stream(seed: int, c: int, s: int, rounds: int) -> np.random.Generator:
    """Generator positioned at the first uniform of cell ``(c, s)``."""
    bits = np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2, c)))
    bits.advance(s * rounds)
    return np.random.Generator(bits)


def sample_confidence(gen: GenerativeParams, eps_c: float, delta_s: float, l: int) -> float:
    """Probability of an "unnoticeable" decision in round ``l``, clamped to [0, 1]."""
    if not 1 <= l <= gen.schedule.rounds:
        raise ValueError(f"round {l} outside 1..{gen.schedule.rounds}")
    mu_l = 0.5 * (1.0 + math.exp(-gen.confidence.gamma * l))
    return min(1.0, max(0.0, mu_l + gen.alpha * eps_c + gen.beta * delta_s))


def _confidences(gen: GenerativeParams, eps_c, delta_s) -> np.ndarray:
    mu = gen.confidence.means(gen.schedule.rounds)
    return np.clip(mu + gen.alpha * eps_c + gen.beta * delta_s, 0.0, 1.0)


def _finish(jnd: float, mode: str) -> float:
    if mode == "discrete":
        # round half up; the last reachable location is below 51
        return float(min(QP_MAX, max(QP_MIN, math.floor(jnd + 0.5))))
    return jnd


def simulate_sequence(gen: GenerativeParams, eps_c: float, delta_s: float,
                      rng: np.random.Generator, mode: str = "continuous"):
    """Draw one subject's decisions on one content.

    Returns ``(decisions, jnd)``; ``decisions[l-1]`` is 1 for an
    "unnoticeable" answer in round ``l``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    p = _confidences(gen, eps_c, delta_s)
    decisions = (rng.random(p.size) < p).astype(np.int8)
    jnd = float(np.dot(decisions, gen.schedule.intervals()))
    return decisions, _finish(jnd, mode)


def simulate_dataset(config: SimulationConfig) -> tuple[Observations, GroundTruth]:
    gen = config.gen
    eps = stream(config.seed, 0).normal(gen.content_mu, gen.content_sigma)
    delta = stream(config.seed, 1).normal(gen.subject_mu, gen.subject_sigma)
    rounds = gen.schedule.rounds
    mu = gen.confidence.means(rounds)
    intervals = gen.schedule.intervals()
    scores = np.empty((config.n_contents, config.n_subjects))
    for c in range(config.n_contents):
        u = stream(config.seed, 2, c).random((config.n_subjects, rounds))
        p = np.clip(mu + gen.alpha * eps[c] + gen.beta * delta[:, None], 0.0, 1.0)
        scores[c] = (u < p).astype(float) @ intervals
    if config.mode == "discrete":
        scores = np.clip(np.floor(scores + 0.5), QP_MIN, QP_MAX)
    contents = tuple(f"c{c + 1:03d}" for c in range(config.n_contents))
    subjects = tuple(f"s{s + 1:03d}" for s in range(config.n_subjects))
    model = decompose(gen)
    model = ModelParams(model.y_c, model.v_c, model.b_s, model.v_s, model.kappa,
                        contents, subjects)
    return Observations(contents, subjects, scores), GroundTruth(model, eps, delta)


def plant_bias(obs: Observations, subjects, shift: float) -> Observations:
    """Shift every cell of ``subjects`` by ``shift`` QP, clipped to [0, 51]."""
    idx = [obs.subjects.index(s) for s in subjects]
    scores = np.array(obs.scores)
    scores[:, idx] = np.clip(scores[:, idx] + shift, QP_MIN, QP_MAX)
    return Observations(obs.contents, obs.subjects, scores)


def planted_subjects(subjects, n: int) -> tuple:
    """``n`` evenly spaced subject ids, used as the default outlier set."""
    if not 0 <= n <= len(subjects):
        raise ValueError(f"cannot pick {n} of {len(subjects)} subjects")
    m = len(subjects)
    return tuple(subjects[(2 * i + 1) * m // (2 * n)] for i in range(n))
