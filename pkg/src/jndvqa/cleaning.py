"""Subject rejection driven by fitted bias and inconsistency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import DataError, Observations
from .jnd_model import ModelParams

MODES = ("absolute", "robust")
MAD_SCALE = 1.4826
MIN_ROBUST_SUBJECTS = 4
DEFAULT_THRESHOLDS = {
    ("bias", "absolute"): 10.0,
    ("bias", "robust"): 2.0,
    ("inconsistency", "robust"): 2.0,
}


class CleaningConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CleaningConfig:
    """Rejection rules.

    In absolute mode a threshold is in QP.  In robust mode it is a multiple
    of the MAD-scaled spread (1.4826 * MAD) around the population median.
    ``None`` picks the mode's default; absolute inconsistency has no
    default and must be given.
    """

    bias_mode: str = "robust"
    bias_threshold: float | None = None
    inconsistency_mode: str = "robust"
    inconsistency_threshold: float | None = None

    def __post_init__(self):
        for kind in ("bias", "inconsistency"):
            mode = getattr(self, f"{kind}_mode")
            if mode not in MODES:
                raise CleaningConfigError(f"{kind}_mode must be one of {MODES}")
            thr = getattr(self, f"{kind}_threshold")
            if thr is None:
                if (kind, mode) not in DEFAULT_THRESHOLDS:
                    raise CleaningConfigError(
                        f"{kind}_threshold is required in {mode} mode")
                object.__setattr__(self, f"{kind}_threshold", DEFAULT_THRESHOLDS[kind, mode])
            elif not thr > 0:
                raise CleaningConfigError(f"{kind}_threshold must be positive")


@dataclass(frozen=True)
class CleaningReport:
    flagged: tuple                      # ((subject_id, reason), ...)
    n_subjects: int
    thresholds: dict = field(default_factory=dict)
    removed_cell_count: int | None = None

    @property
    def flagged_subjects(self) -> tuple:
        return tuple(s for s, _ in self.flagged)

    @property
    def fraction_removed(self) -> float:
        return len(self.flagged) / self.n_subjects

    def to_dict(self) -> dict:
        return {
            "flagged": [{"subject": s, "reason": r} for s, r in self.flagged],
            "thresholds": self.thresholds,
            "n_subjects": self.n_subjects,
            "removed_cell_count": self.removed_cell_count,
            "fraction_removed": self.fraction_removed,
        }


def _robust_center_spread(x: np.ndarray) -> tuple[float, float]:
    med = float(np.median(x))
    return med, MAD_SCALE * float(np.median(np.abs(x - med)))


def flag_subjects(params: ModelParams, config: CleaningConfig = CleaningConfig(),
                  obs: Observations | None = None) -> CleaningReport:
    """Flag subjects by bias ``|b_s|`` and inconsistency ``v_s``.

    Robust bias rule: ``|b_s - median| > t * 1.4826 * MAD``.  Robust
    inconsistency rule (one-sided): ``v_s > median + t * 1.4826 * MAD``.
    When ``obs`` is given the number of cells that removal would drop is
    filled in.
    """
    b, v = params.b_s, params.v_s
    n = len(b)
    robust = config.bias_mode == "robust" or config.inconsistency_mode == "robust"
    if robust and n < MIN_ROBUST_SUBJECTS:
        raise CleaningConfigError(
            f"robust mode needs at least {MIN_ROBUST_SUBJECTS} subjects, got {n}")

    if config.bias_mode == "absolute":
        bias_flag = np.abs(b) > config.bias_threshold
        bias_rule = {"mode": "absolute", "threshold": config.bias_threshold,
                     "lower": -config.bias_threshold, "upper": config.bias_threshold}
    else:
        med, spread = _robust_center_spread(b)
        half = config.bias_threshold * spread
        bias_flag = np.abs(b - med) > half
        bias_rule = {"mode": "robust", "threshold": config.bias_threshold,
                     "median": med, "scaled_mad": spread,
                     "lower": med - half, "upper": med + half}

    if config.inconsistency_mode == "absolute":
        cut = config.inconsistency_threshold
        inc_rule = {"mode": "absolute", "threshold": cut, "upper": cut}
    else:
        med, spread = _robust_center_spread(v)
        cut = med + config.inconsistency_threshold * spread
        inc_rule = {"mode": "robust", "threshold": config.inconsistency_threshold,
                    "median": med, "scaled_mad": spread, "upper": cut}
    inc_flag = v > cut

    flagged = []
    for s, fb, fi in zip(params.subjects, bias_flag, inc_flag):
        if fb and fi:
            flagged.append((s, "both"))
        elif fb:
            flagged.append((s, "bias"))
        elif fi:
            flagged.append((s, "inconsistency"))

    removed = None
    if obs is not None:
        cols = [obs.subjects.index(s) for s, _ in flagged if s in obs.subjects]
        removed = int(obs.mask[:, cols].sum())
    return CleaningReport(tuple(flagged), n,
                          {"bias": bias_rule, "inconsistency": inc_rule}, removed)


def filter_dataset(obs: Observations, report: CleaningReport) -> Observations:
    """Drop every cell of the flagged subjects; coverage is re-validated."""
    if not report.flagged:
        return obs
    try:
        return obs.drop_subjects(report.flagged_subjects)
    except DataError as exc:
        raise DataError(f"cleaning would break dataset coverage: {exc}") from exc
