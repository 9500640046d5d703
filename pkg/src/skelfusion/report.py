"""Classification metrics, box-plot statistics and result rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ValidationError


def _check(preds, labels, num_classes=None):
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.size == 0 or labels.size == 0:
        raise ValidationError("empty prediction or label list")
    if preds.shape != labels.shape:
        raise ValidationError(f"{preds.size} predictions for {labels.size} labels")
    if num_classes is not None:
        for a in (preds, labels):
            if a.min() < 0 or a.max() >= num_classes:
                raise ValidationError(f"class index outside [0, {num_classes})")
    return preds, labels


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """``C[i, j]`` counts samples with label ``i`` predicted as ``j``."""
    preds, labels = _check(preds, labels, num_classes)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def mean_class_accuracy(preds, labels, num_classes: int) -> float:
    """Unweighted mean of per-class recall over classes present in ``labels``."""
    cm = confusion_matrix(preds, labels, num_classes)
    support = cm.sum(axis=1)
    present = support > 0
    # exact rational mean, rounded once: independent of summation order
    recalls = [Fraction(int(c), int(n)) for c, n in zip(np.diag(cm)[present], support[present])]
    return float(sum(recalls) / len(recalls))


def top1_accuracy(preds, labels) -> float:
    preds, labels = _check(preds, labels)
    return float(np.mean(preds == labels))


@dataclass(frozen=True)
class BoxStats:
    n: int
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple
    min: float
    max: float

    def as_dict(self) -> dict:
        return {"n": self.n, "median": self.median, "q1": self.q1, "q3": self.q3,
                "whisker_lo": self.whisker_lo, "whisker_hi": self.whisker_hi,
                "outliers": list(self.outliers), "min": self.min, "max": self.max}


def boxplot_stats(values: Sequence[float], whis: float = 1.5) -> BoxStats:
    """Quartiles by linear interpolation; whiskers reach the most extreme
    points within ``whis * IQR`` of the box, everything beyond is an outlier."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValidationError("boxplot_stats needs at least one value")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - whis * iqr, q3 + whis * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = tuple(float(x) for x in v[(v < lo_fence) | (v > hi_fence)])
    return BoxStats(
        n=int(v.size), median=float(med), q1=float(q1), q3=float(q3),
        whisker_lo=float(inside.min()), whisker_hi=float(inside.max()),
        outliers=outliers, min=float(v[0]), max=float(v[-1]),
    )


def format_cell(macc: float, top1: float) -> str:
    """Table cell in percent: ``"52.8 (60.3)"``."""
    return f"{100 * macc:.1f} ({100 * top1:.1f})"


# ---------------------------------------------------------------------------
# rendering


def _ok_runs(summary):
    return [r for r in summary.runs if r.status == "ok"]


def best_run(summary):
    """Run with the highest test mAcc (earliest on ties) or ``None``."""
    runs = _ok_runs(summary)
    if not runs:
        return None
    return max(runs, key=lambda r: r.test_mAcc)


def best_results_table(summaries) -> tuple[list[str], list[list[str]]]:
    """Rows per backbone family, one column per skeleton group, best over fusion modes."""
    families = sorted({s.family for s in summaries})
    groups = []
    for s in summaries:
        if s.group not in groups:
            groups.append(s.group)
    header = ["backbone"] + groups
    rows = []
    for fam in families:
        row = [fam]
        for g in groups:
            cands = [best_run(s) for s in summaries if s.family == fam and s.group == g]
            cands = [c for c in cands if c is not None]
            if not cands:
                row.append("-")
                continue
            b = max(cands, key=lambda r: r.test_mAcc)
            row.append(format_cell(b.test_mAcc, b.test_top1))
        rows.append(row)
    return header, rows


def detail_rows(summaries) -> list[dict]:
    out = []
    for s in summaries:
        b = best_run(s)
        st = s.box.get("test_mAcc")
        out.append({
            "family": s.family, "group": s.group, "mode": s.mode,
            "runs": len(s.runs), "failed": s.failures,
            "median_mAcc": "" if st is None else f"{100 * st.median:.2f}",
            "best": "-" if b is None else format_cell(b.test_mAcc, b.test_top1),
        })
    return out


def _text_table(header, rows) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep] + [line(r) for r in rows]) + "\n"


def render_report(summaries, out_dir) -> dict:
    """Write box plots (one PNG per backbone family), the best-results table
    (CSV and text) and a per-summary detail CSV.  Returns the written paths and
    the number of boxes per plot."""
    if not summaries:
        raise ValidationError("render_report needs at least one summary")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {"plots": [], "boxes": {}}

    for fam in sorted({s.family for s in summaries}):
        subset = [s for s in summaries if s.family == fam]
        fig, axes = plt.subplots(1, 2, figsize=(max(6, 1.2 * len(subset) + 3), 4), squeeze=False)
        labels = [f"{s.group}\n{s.mode}" for s in subset]
        for ax, metric in zip(axes[0], ("test_mAcc", "test_top1")):
            stats = []
            for s, lab in zip(subset, labels):
                b = s.box.get(metric)
                if b is None:
                    stats.append({"label": lab, "med": np.nan, "q1": np.nan, "q3": np.nan,
                                  "whislo": np.nan, "whishi": np.nan, "fliers": []})
                    continue
                stats.append({"label": lab, "med": 100 * b.median, "q1": 100 * b.q1, "q3": 100 * b.q3,
                              "whislo": 100 * b.whisker_lo, "whishi": 100 * b.whisker_hi,
                              "fliers": [100 * x for x in b.outliers]})
            ax.bxp(stats, showfliers=True)
            ax.set_title(f"{fam}: {metric} [%]")
            ax.tick_params(axis="x", labelrotation=90, labelsize=7)
            ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"boxplot_{fam}.png"
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written["plots"].append(str(path))
        written["boxes"][fam] = len(subset)

    header, rows = best_results_table(summaries)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([header] + rows)
    (out_dir / "best_results.csv").write_text(buf.getvalue())
    (out_dir / "best_results.txt").write_text(
        "Best results: mAcc (top1) in percent\n\n" + _text_table(header, rows)
    )
    details = detail_rows(summaries)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(details[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(details)
    (out_dir / "summary.csv").write_text(buf.getvalue())
    written["tables"] = [str(out_dir / n) for n in ("best_results.csv", "best_results.txt", "summary.csv")]
    return written
