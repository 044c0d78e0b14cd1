"""JND observation matrices and their canonical long-form CSV storage.

A dataset is a content x subject matrix of measured JND locations in QP
units.  Missing cells are stored as NaN.  On disk the matrix is kept in
long form, one observed cell per row::

    content_id,subject_id,jnd
    c001,s001,33.500000
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

QP_MIN = 0.0
QP_MAX = 51.0
CSV_HEADER = ("content_id", "subject_id", "jnd")


class DataError(ValueError):
    """Raised when observations violate a dataset invariant."""


def natural_key(identifier: str):
    """Sort key that orders ``s2`` before ``s10``."""
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok)
            for tok in re.split(r"(\d+)", identifier) if tok]


@dataclass(frozen=True, eq=False)
class Observations:
    """Content x subject JND matrix with NaN marking missing cells.

    ``scores[i, j]`` is the JND of subject ``subjects[j]`` on content
    ``contents[i]``.  The array is copied and made read-only.
    """

    contents: tuple
    subjects: tuple
    scores: np.ndarray

    def __post_init__(self):
        contents = tuple(str(c) for c in self.contents)
        subjects = tuple(str(s) for s in self.subjects)
        scores = np.array(self.scores, dtype=float, copy=True)
        if scores.shape != (len(contents), len(subjects)):
            raise DataError(
                f"scores shape {scores.shape} does not match "
                f"{len(contents)} contents x {len(subjects)} subjects")
        if len(set(contents)) != len(contents):
            raise DataError("duplicate content identifiers")
        if len(set(subjects)) != len(subjects):
            raise DataError("duplicate subject identifiers")
        if np.isinf(scores).any():
            raise DataError("JND values must be finite")
        observed = ~np.isnan(scores)
        vals = scores[observed]
        if vals.size and (vals.min() < QP_MIN or vals.max() > QP_MAX):
            raise DataError(f"JND values must lie in [{QP_MIN:g}, {QP_MAX:g}]")
        _check_coverage(contents, subjects, observed)
        scores.setflags(write=False)
        object.__setattr__(self, "contents", contents)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "scores", scores)

    @classmethod
    def from_cells(cls, cells: Iterable[tuple[str, str, float]]) -> "Observations":
        """Build from ``(content_id, subject_id, jnd)`` triples in any order."""
        cells = list(cells)
        seen = set()
        for c, s, _ in cells:
            if (c, s) in seen:
                raise DataError(f"duplicate cell for content {c!r}, subject {s!r}")
            seen.add((c, s))
        contents = sorted({c for c, _, _ in cells}, key=natural_key)
        subjects = sorted({s for _, s, _ in cells}, key=natural_key)
        ci = {c: i for i, c in enumerate(contents)}
        si = {s: j for j, s in enumerate(subjects)}
        scores = np.full((len(contents), len(subjects)), np.nan)
        for c, s, y in cells:
            scores[ci[c], si[s]] = y
        return cls(tuple(contents), tuple(subjects), scores)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.scores)

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape

    def cells(self):
        """Yield observed ``(content_id, subject_id, jnd)`` in natural-sorted order."""
        corder = sorted(range(len(self.contents)), key=lambda i: natural_key(self.contents[i]))
        sorder = sorted(range(len(self.subjects)), key=lambda j: natural_key(self.subjects[j]))
        for i in corder:
            for j in sorder:
                y = self.scores[i, j]
                if not math.isnan(y):
                    yield self.contents[i], self.subjects[j], float(y)

    def drop_subjects(self, subjects: Sequence[str]) -> "Observations":
        drop = set(subjects)
        unknown = drop - set(self.subjects)
        if unknown:
            raise DataError(f"unknown subjects: {sorted(unknown, key=natural_key)}")
        keep = [j for j, s in enumerate(self.subjects) if s not in drop]
        return Observations(self.contents,
                            tuple(self.subjects[j] for j in keep),
                            self.scores[:, keep])

    def equals(self, other: "Observations", atol: float = 0.0) -> bool:
        if self.contents != other.contents or self.subjects != other.subjects:
            return False
        if not np.array_equal(self.mask, other.mask):
            return False
        m = self.mask
        return bool(np.all(np.abs(self.scores[m] - other.scores[m]) <= atol))


def _check_coverage(contents, subjects, observed):
    per_content = observed.sum(axis=1)
    per_subject = observed.sum(axis=0)
    if not contents or not subjects:
        raise DataError("dataset has no observed cells")
    bad_c = [c for c, n in zip(contents, per_content) if n < 2]
    if bad_c:
        raise DataError(f"contents with fewer than 2 observed subjects: {bad_c}")
    bad_s = [s for s, n in zip(subjects, per_subject) if n < 2]
    if bad_s:
        raise DataError(f"subjects with fewer than 2 observed contents: {bad_s}")


@dataclass(frozen=True)
class DatasetSummary:
    n_contents: int
    n_subjects: int
    n_cells: int
    per_content_mean: tuple
    per_content_std: tuple


def summarize(obs: Observations) -> DatasetSummary:
    """Per-content mean and sample std (n-1) over observed cells."""
    means, stds = [], []
    for row in obs.scores:
        vals = row[~np.isnan(row)]
        means.append(float(vals.mean()))
        stds.append(float(vals.std(ddof=1)))
    return DatasetSummary(len(obs.contents), len(obs.subjects), obs.n_cells,
                          tuple(means), tuple(stds))


def load_csv(path) -> Observations:
    path = Path(path)
    cells = []
    seen = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: header must be exactly {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            content, subject, raw = (f.strip() for f in row)
            if not content or not subject:
                raise DataError(f"{path}:{lineno}: empty identifier")
            try:
                jnd = float(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric jnd {raw!r}") from None
            if not math.isfinite(jnd) or not QP_MIN <= jnd <= QP_MAX:
                raise DataError(
                    f"{path}:{lineno}: jnd {raw} outside [{QP_MIN:g}, {QP_MAX:g}]")
            key = (content, subject)
            if key in seen:
                raise DataError(
                    f"{path}:{lineno}: duplicate (content, subject) pair "
                    f"{key}, first seen on line {seen[key]}")
            seen[key] = lineno
            cells.append((content, subject, jnd))
    if not cells:
        raise DataError(f"{path}: no data rows")
    return Observations.from_cells(cells)


def format_csv(obs: Observations) -> str:
    lines = [",".join(CSV_HEADER)]
    lines.extend(f"{c},{s},{y:.6f}" for c, s, y in obs.cells())
    return "\n".join(lines) + "\n"


def write_csv(obs: Observations, path) -> None:
    """Write observed cells sorted by (content, subject), LF line endings."""
    text = format_csv(obs)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
