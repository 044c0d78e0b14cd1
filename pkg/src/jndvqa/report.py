"""Flat CSV and SVG error-bar charts from MLE / MOS result documents."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dataset import DataError, natural_key  # noqa: E402

# family -> (output stem, axis label, id key)
FAMILIES = {
    "jnd_location": ("JND location (QP)", "content"),
    "content_difficulty": ("content difficulty v_c (QP)", "content"),
    "subject_bias": ("subject bias b_s (QP)", "subject"),
    "subject_inconsistency": ("subject inconsistency v_s (QP)", "subject"),
}
_MLE_KEYS = {"jnd_location": "y", "content_difficulty": "v_c",
             "subject_bias": "b", "subject_inconsistency": "v_s"}


@dataclass(frozen=True)
class Series:
    label: str
    method: str
    families: dict  # family -> list of (id, estimate, ci or None)


def series_from_result(doc: dict, label: str) -> Series:
    method = doc.get("method")
    if method == "mle":
        fams = {}
        for fam, key in _MLE_KEYS.items():
            idkey = FAMILIES[fam][1]
            fams[fam] = [(r[idkey], float(r["estimate"]), r.get("ci")) for r in doc[key]]
        return Series(label, method, fams)
    if method == "mos":
        rows = [(r["content"], float(r["mean"]), r.get("ci")) for r in doc["contents"]]
        return Series(label, method, {"jnd_location": rows})
    raise ValueError(f"unknown result method {method!r}")


def check_compatible(series: list[Series]):
    sets = [frozenset(i for i, _, _ in s.families["jnd_location"]) for s in series]
    if any(x != sets[0] for x in sets[1:]):
        raise DataError("result files cover different content sets")


def estimates_csv(series: list[Series]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "series", "id", "estimate", "ci"])
    for fam in FAMILIES:
        for s in series:
            for ident, est, ci in sorted(s.families.get(fam, ()), key=lambda r: natural_key(r[0])):
                w.writerow([fam, s.label, ident, f"{est:.6f}", "" if ci is None else f"{ci:.6f}"])
    return buf.getvalue()


def _errorbar_svg(fam: str, series: list[Series]) -> str:
    ylabel, idkey = FAMILIES[fam]
    present = [s for s in series if fam in s.families]
    ids = sorted({i for s in present for i, _, _ in s.families[fam]}, key=natural_key)
    pos = {i: k for k, i in enumerate(ids)}
    width = 0.6 / max(len(present), 1)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.28 * len(ids) + 2.0), 4.0))
    for k, s in enumerate(present):
        offset = (k - (len(present) - 1) / 2) * width
        rows = s.families[fam]
        x = [pos[i] + offset for i, _, _ in rows]
        y = [e for _, e, _ in rows]
        err = [0.0 if c is None else c for _, _, c in rows]
        ax.errorbar(x, y, yerr=err, fmt="o", ms=3, capsize=2, lw=1, label=s.label)
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels(ids, rotation=90, fontsize=7)
    ax.set_xlabel(idkey)
    ax.set_ylabel(ylabel)
    ax.grid(True, lw=0.3)
    if len(present) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    buf = io.StringIO()
    with plt.rc_context({"svg.hashsalt": "jndvqa", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def write_report(series: list[Series], out_dir) -> list[Path]:
    """Write ``estimates.csv`` plus one SVG per parameter family present."""
    check_compatible(series)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / "estimates.csv"
    path.write_text(estimates_csv(series), encoding="utf-8")
    written.append(path)
    for fam in FAMILIES:
        if any(fam in s.families for s in series):
            path = out_dir / f"{fam}.svg"
            path.write_text(_errorbar_svg(fam, series), encoding="utf-8")
            written.append(path)
    return written
