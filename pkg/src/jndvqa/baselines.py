"""Reference estimators: per-content MOS and a z-score subject screen."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Observations
from .mle import Z_95


@dataclass(frozen=True, eq=False)
class MosResult:
    contents: tuple
    mean: np.ndarray
    std: np.ndarray
    ci_halfwidth: np.ndarray
    n: np.ndarray

    def to_dict(self) -> dict:
        return {
            "method": "mos",
            "contents": [
                {"content": c, "mean": float(m), "std": float(s), "ci": float(h), "n": int(k)}
                for c, m, s, h, k in zip(self.contents, self.mean, self.std,
                                         self.ci_halfwidth, self.n)
            ],
        }


@dataclass(frozen=True, eq=False)
class ZScoreReport:
    subjects: tuple
    max_abs_z: np.ndarray
    threshold: float
    flagged: tuple

    def to_dict(self) -> dict:
        return {"threshold": self.threshold,
                "max_abs_z": {s: float(z) for s, z in zip(self.subjects, self.max_abs_z)},
                "flagged": list(self.flagged)}


def mos_estimate(obs: Observations, z: float = Z_95) -> MosResult:
    """Per-content mean, sample std (n-1) and normal-quantile CI halfwidth."""
    mask = obs.mask
    n = mask.sum(axis=1)
    mean = np.nanmean(obs.scores, axis=1)
    std = np.nanstd(obs.scores, axis=1, ddof=1)
    return MosResult(obs.contents, mean, std, z * std / np.sqrt(n), n)


def zscore_screen(obs: Observations, threshold: float = 3.0) -> ZScoreReport:
    """Flag subjects whose largest per-content |z| exceeds ``threshold``.

    Scores are standardized against each content's mean and sample std over
    all its observers; contents with zero spread contribute ``z = 0``.
    """
    mean = np.nanmean(obs.scores, axis=1, keepdims=True)
    std = np.nanstd(obs.scores, axis=1, ddof=1, keepdims=True)
    if not (std > 0).any():
        raise ValueError("every content has zero spread; z-scores are undefined")
    safe = np.where(std > 0, std, 1.0)
    z = np.where(std > 0, (obs.scores - mean) / safe, 0.0)
    max_abs = np.nanmax(np.abs(np.where(obs.mask, z, np.nan)), axis=0)
    flagged = tuple(s for s, m in zip(obs.subjects, max_abs) if m > threshold)
    return ZScoreReport(obs.subjects, max_abs, float(threshold), flagged)
