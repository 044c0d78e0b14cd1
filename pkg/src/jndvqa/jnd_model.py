"""Closed-form pieces of the JND model.

A JND search starts from the lossless anchor and halves the QP search
interval each round.  A subject's "unnoticeable" decision in round ``l``
adds that round's interval to the current offset, so the final location
is ``sum_l X_l * dQP_l``.  Replacing each decision by its probability
gives the expected location, and the additive content/subject
perturbations of that probability map to QP offsets through ``kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SearchSchedule:
    initial_interval: float = 51.0
    rounds: int = 6

    def __post_init__(self):
        if not self.initial_interval > 0:
            raise ValueError("initial_interval must be positive")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise ValueError("rounds must be an integer >= 1")

    def intervals(self) -> np.ndarray:
        """All round intervals ``dQP_1 .. dQP_L``."""
        return self.initial_interval * 0.5 ** np.arange(1, self.rounds + 1)


@dataclass(frozen=True)
class ConfidenceSchedule:
    gamma: float = 0.7

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def means(self, rounds: int) -> np.ndarray:
        return 0.5 * (1.0 + np.exp(-self.gamma * np.arange(1, rounds + 1)))


def _as_floats(values) -> tuple:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class GenerativeParams:
    """Hyperparameters of the per-round confidence model.

    The round-``l`` probability of an "unnoticeable" decision is
    ``mu_l + alpha * eps_c + beta * delta_s`` with
    ``eps_c ~ N(content_mu[c], content_sigma[c]**2)`` and
    ``delta_s ~ N(subject_mu[s], subject_sigma[s]**2)``.
    """

    content_mu: tuple
    content_sigma: tuple
    subject_mu: tuple
    subject_sigma: tuple
    schedule: SearchSchedule = field(default_factory=SearchSchedule)
    confidence: ConfidenceSchedule = field(default_factory=ConfidenceSchedule)
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("content_mu", "content_sigma", "subject_mu", "subject_sigma"):
            object.__setattr__(self, name, _as_floats(getattr(self, name)))
        if len(self.content_mu) != len(self.content_sigma):
            raise ValueError("content_mu and content_sigma lengths differ")
        if len(self.subject_mu) != len(self.subject_sigma):
            raise ValueError("subject_mu and subject_sigma lengths differ")
        if min(self.content_sigma + self.subject_sigma) < 0:
            raise ValueError("sigmas must be non-negative")
        if not all(map(math.isfinite, self.content_mu + self.subject_mu)):
            raise ValueError("mu values must be finite")

    @property
    def n_contents(self) -> int:
        return len(self.content_mu)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_mu)

    def to_dict(self) -> dict:
        return {
            "schedule": {"initial_interval": self.schedule.initial_interval,
                         "rounds": self.schedule.rounds},
            "confidence": {"gamma": self.confidence.gamma},
            "alpha": self.alpha,
            "beta": self.beta,
            "content_mu": list(self.content_mu),
            "content_sigma": list(self.content_sigma),
            "subject_mu": list(self.subject_mu),
            "subject_sigma": list(self.subject_sigma),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerativeParams":
        sched = d.get("schedule", {})
        conf = d.get("confidence", {})
        return cls(
            content_mu=d["content_mu"],
            content_sigma=d["content_sigma"],
            subject_mu=d["subject_mu"],
            subject_sigma=d["subject_sigma"],
            schedule=SearchSchedule(float(sched.get("initial_interval", 51.0)),
                                    int(sched.get("rounds", 6))),
            confidence=ConfidenceSchedule(float(conf.get("gamma", 0.7))),
            alpha=float(d.get("alpha", 1.0)),
            beta=float(d.get("beta", 1.0)),
        )


def make_generative_params(n_contents: int, n_subjects: int, *,
                           gamma: float = 0.7, alpha: float = 1.0, beta: float = 1.0,
                           content_mu: float = 0.0, content_sigma: float = 0.0,
                           subject_sigma: float = 0.0, subject_mu_spread: float = 0.0,
                           schedule: SearchSchedule | None = None) -> GenerativeParams:
    """Homogeneous hyperparameters with an optional spread of subject biases.

    ``subject_mu_spread`` is the standard deviation of the subject bias
    means (confidence units).  The means are placed deterministically at
    the normal quantiles ``(j + 0.5) / n_subjects``, so they are symmetric
    about zero and need no random draws.
    """
    from statistics import NormalDist

    if subject_mu_spread < 0:
        raise ValueError("subject_mu_spread must be non-negative")
    q = NormalDist()
    subject_mu = [subject_mu_spread * q.inv_cdf((j + 0.5) / n_subjects) + 0.0
                  for j in range(n_subjects)]
    return GenerativeParams(
        content_mu=[content_mu] * n_contents,
        content_sigma=[content_sigma] * n_contents,
        subject_mu=subject_mu,
        subject_sigma=[subject_sigma] * n_subjects,
        schedule=schedule or SearchSchedule(),
        confidence=ConfidenceSchedule(gamma),
        alpha=alpha,
        beta=beta,
    )


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Per-content location/difficulty and per-subject bias/inconsistency, in QP."""

    y_c: np.ndarray
    v_c: np.ndarray
    b_s: np.ndarray
    v_s: np.ndarray
    kappa: float = float("nan")
    contents: tuple = ()
    subjects: tuple = ()

    def __post_init__(self):
        for name in ("y_c", "v_c", "b_s", "v_s"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.y_c.shape != self.v_c.shape or self.b_s.shape != self.v_s.shape:
            raise ValueError("per-content / per-subject array lengths differ")
        if not self.contents:
            object.__setattr__(self, "contents",
                               tuple(f"c{i + 1:03d}" for i in range(len(self.y_c))))
        if not self.subjects:
            object.__setattr__(self, "subjects",
                               tuple(f"s{j + 1:03d}" for j in range(len(self.b_s))))
        if len(self.contents) != len(self.y_c) or len(self.subjects) != len(self.b_s):
            raise ValueError("identifier lists do not match parameter lengths")

    def recentered(self) -> "ModelParams":
        """Shift so that the subject biases sum to zero; ``y_c + b_s`` is unchanged."""
        offset = self.b_s.mean()
        return ModelParams(self.y_c + offset, self.v_c, self.b_s - offset, self.v_s,
                           self.kappa, self.contents, self.subjects)


def interval(schedule: SearchSchedule, l: int) -> float:
    if not 1 <= l <= schedule.rounds:
        raise ValueError(f"round {l} outside 1..{schedule.rounds}")
    return schedule.initial_interval * 0.5 ** l


def mean_confidence(conf: ConfidenceSchedule, l: int) -> float:
    if l < 1:
        raise ValueError("round index must be >= 1")
    return 0.5 * (1.0 + math.exp(-conf.gamma * l))


def accumulate_jnd(schedule: SearchSchedule, decisions) -> float:
    """JND location reached by a sequence of binary decisions (1 = unnoticeable)."""
    x = np.asarray(decisions)
    if x.shape != (schedule.rounds,):
        raise ValueError(f"expected {schedule.rounds} decisions, got shape {x.shape}")
    if not np.isin(x, (0, 1)).all():
        raise ValueError("decisions must be 0 or 1")
    return float(np.dot(x.astype(float), schedule.intervals()))


def expected_jnd(schedule: SearchSchedule, confidences) -> float:
    p = np.asarray(confidences, dtype=float)
    if p.shape != (schedule.rounds,):
        raise ValueError(f"expected {schedule.rounds} confidences, got shape {p.shape}")
    if np.any((p < 0) | (p > 1)) or np.isnan(p).any():
        raise ValueError("confidences must lie in [0, 1]")
    return float(np.dot(p, schedule.intervals()))


def kappa(schedule: SearchSchedule) -> float:
    return float(schedule.intervals().sum())


def decompose(gen: GenerativeParams, recenter: bool = True) -> ModelParams:
    """Map generative hyperparameters to QP-space model parameters.

    The content weight ``alpha`` and subject weight ``beta`` scale the
    Gaussian factors before they enter the sum, so
    ``y_c = sum_l dQP_l (mu_l + alpha mu_c)``, ``v_c = kappa |alpha| sigma_c``,
    ``b_s = kappa beta mu_s`` and ``v_s = kappa |beta| sigma_s``.  Biases are
    re-centred to sum to zero with the offset folded into every ``y_c``
    unless ``recenter`` is false.
    """
    sched = gen.schedule
    k = kappa(sched)
    base = expected_jnd(sched, gen.confidence.means(sched.rounds))
    y_c = base + k * gen.alpha * np.asarray(gen.content_mu)
    v_c = k * abs(gen.alpha) * np.asarray(gen.content_sigma)
    b_s = k * gen.beta * np.asarray(gen.subject_mu)
    v_s = k * abs(gen.beta) * np.asarray(gen.subject_sigma)
    params = ModelParams(y_c, v_c, b_s, v_s, k)
    return params.recentered() if recenter else params
