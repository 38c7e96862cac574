"""Evaluation protocol: confusion aggregation, class-balanced one-vs-all
metrics, macro averages, and bootstrap confidence intervals.

All chained computations run at full precision; integer rounding (half-up)
is presentation-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from sleepspec.stages import NUM_STAGES, STAGE_NAMES

METRIC_NAMES = ("precision", "sensitivity", "f1", "accuracy")


class EmptyList(ValueError):
    pass


class ZeroRow(ValueError):
    pass


class TooFewSubjects(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """5x5 counts; rows are true stages (W, N1, N2, N3, R), columns predicted."""

    counts: np.ndarray
    model_tag: str = ""
    subject: str | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (NUM_STAGES, NUM_STAGES):
            raise ValueError(f"expected a 5x5 matrix, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        counts.setflags(write=False)

    @classmethod
    def from_predictions(
        cls,
        true_idx: Sequence[int],
        pred_idx: Sequence[int],
        model_tag: str = "",
        subject: str | None = None,
    ) -> "ConfusionMatrix":
        counts = np.zeros((NUM_STAGES, NUM_STAGES), dtype=np.int64)
        for t, p in zip(true_idx, pred_idx, strict=True):
            counts[t, p] += 1
        return cls(counts=counts, model_tag=model_tag, subject=subject)


class StageScores(NamedTuple):
    precision: float
    sensitivity: float
    f1: float
    accuracy: float


@dataclass(frozen=True)
class ClassMetrics:
    """Per-class one-vs-all scores, in percent."""

    per_class: dict[str, StageScores]

    def rounded(self) -> dict[str, tuple[int, int, int, int]]:
        return {
            name: tuple(int(round_half_up(v)) for v in scores)
            for name, scores in self.per_class.items()
        }


def round_half_up(x: float) -> float:
    return float(np.floor(np.asarray(x, dtype=np.float64) + 0.5))


def aggregate(matrices: Iterable[ConfusionMatrix]) -> ConfusionMatrix:
    """Elementwise sum over (model, subject) folds."""
    matrices = list(matrices)
    if not matrices:
        raise EmptyList("no confusion matrices to aggregate")
    total = np.zeros((NUM_STAGES, NUM_STAGES), dtype=np.int64)
    for m in matrices:
        total += m.counts
    return ConfusionMatrix(counts=total, model_tag=matrices[0].model_tag, subject=None)


def _balanced_rows(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1)
    zero = np.flatnonzero(sums == 0)
    if zero.size:
        raise ZeroRow(f"row(s) {[STAGE_NAMES[i] for i in zero]} are all zero")
    return counts / sums[:, None]


def row_normalize(matrix: ConfusionMatrix | np.ndarray) -> np.ndarray:
    """Rows rescaled to percentages (as printed next to the raw counts)."""
    counts = matrix.counts if isinstance(matrix, ConfusionMatrix) else matrix
    return _balanced_rows(counts) * 100.0


def per_class_metrics(matrix: ConfusionMatrix | np.ndarray) -> ClassMetrics:
    """Class-balanced one-vs-all scores.

    Each row is first normalized to sum 1 (removing class prevalence); for
    class c the negatives collapse into one row renormalized by the C-1
    other classes, giving precision TP/(TP+FP'), sensitivity TP/(TP+FN),
    their harmonic mean, and accuracy (TP+TN')/2, all in percent.
    """
    counts = matrix.counts if isinstance(matrix, ConfusionMatrix) else matrix
    balanced = _balanced_rows(counts)
    c = NUM_STAGES
    out: dict[str, StageScores] = {}
    for k, name in enumerate(STAGE_NAMES):
        tp = balanced[k, k]
        fn = 1.0 - tp
        fp = balanced[:, k].sum() - tp
        tn = (c - 1) - fp
        fp_renorm = fp / (c - 1)
        tn_renorm = tn / (c - 1)
        precision = tp / (tp + fp_renorm) if tp + fp_renorm > 0 else 0.0
        sensitivity = tp / (tp + fn)
        f1 = (
            2 * precision * sensitivity / (precision + sensitivity)
            if precision + sensitivity > 0
            else 0.0
        )
        accuracy = (tp + tn_renorm) / 2.0
        out[name] = StageScores(
            precision=100.0 * precision,
            sensitivity=100.0 * sensitivity,
            f1=100.0 * f1,
            accuracy=100.0 * accuracy,
        )
    return ClassMetrics(per_class=out)


def macro_average(metrics: ClassMetrics) -> StageScores:
    """Unweighted mean over classes of each metric."""
    stacked = np.array([list(s) for s in metrics.per_class.values()])
    return StageScores(*(float(v) for v in stacked.mean(axis=0)))


def bootstrap_ci(
    matrices: Sequence[ConfusionMatrix],
    iterations: int = 1000,
    seed: int = 0,
) -> dict[str, tuple[float, float, float]]:
    """Percentile bootstrap over per-subject confusion matrices.

    Each iteration resamples n-of-n matrices with replacement, aggregates,
    and computes macro metrics; the sorted per-metric samples are read at
    1-based positions 26, 500, and 975 (low, mid, high). Iterations use
    per-index seed substreams, so results do not depend on execution order.
    """
    matrices = list(matrices)
    if len(matrices) < 2:
        raise TooFewSubjects(f"bootstrap needs >= 2 subjects, got {len(matrices)}")
    counts = np.stack([m.counts for m in matrices])
    n = len(matrices)
    samples = np.empty((iterations, len(METRIC_NAMES)), dtype=np.float64)
    for it in range(iterations):
        rng = np.random.default_rng([seed, it])
        chosen = rng.integers(0, n, size=n)
        agg = counts[chosen].sum(axis=0)
        samples[it] = list(macro_average(per_class_metrics(agg)))
    samples.sort(axis=0)
    # literal 1-based positions 26/500/975 at 1000 iterations, scaled
    # proportionally for other iteration counts
    positions = [
        min(iterations, max(1, round(p * iterations / 1000))) - 1
        for p in (26, 500, 975)
    ]
    return {
        name: tuple(float(samples[p, j]) for p in positions)
        for j, name in enumerate(METRIC_NAMES)
    }


# ---------------------------------------------------------------------------
# Report assembly


def build_report(
    matrices: Sequence[ConfusionMatrix],
    model_tag: str = "",
    iterations: int = 1000,
    seed: int = 0,
) -> dict:
    """Aggregate report: raw/normalized matrices, per-class and macro
    metrics, and bootstrap CI triples (when >= 2 subjects)."""
    total = aggregate(matrices)
    normalized = row_normalize(total)
    metrics = per_class_metrics(total)
    macro = macro_average(metrics)
    report = {
        "model": model_tag or total.model_tag,
        "subjects": [m.subject for m in matrices],
        "stage_order": list(STAGE_NAMES),
        "raw_counts": total.counts.tolist(),
        "normalized_pct": normalized.tolist(),
        "per_class": {
            name: dict(zip(METRIC_NAMES, scores))
            for name, scores in metrics.per_class.items()
        },
        "macro": dict(zip(METRIC_NAMES, macro)),
    }
    if len(matrices) >= 2:
        report["bootstrap_ci"] = {
            name: list(triple)
            for name, triple in bootstrap_ci(matrices, iterations, seed).items()
        }
    return report


def format_report(report: dict) -> str:
    """Human-readable tables mirroring the aggregate/normalized/metrics layout."""
    names = report["stage_order"]
    raw = np.asarray(report["raw_counts"])
    norm = np.asarray(report["normalized_pct"])
    lines = [f"Model: {report['model']}"]
    header = (
        "      "
        + "".join(f"{n:>7}" for n in names)
        + "   |"
        + "".join(f"{n:>5}" for n in names)
        + "   | Pre.  Sen.   F1  Acc."
    )
    lines.append(header)
    for i, name in enumerate(names):
        row = f"{name:>4}  " + "".join(f"{int(raw[i, j]):>7}" for j in range(len(names)))
        row += "   |" + "".join(
            f"{int(round_half_up(norm[i, j])):>5}" for j in range(len(names))
        )
        scores = report["per_class"][name]
        row += "   |" + "".join(
            f"{int(round_half_up(scores[m])):>6}" for m in METRIC_NAMES
        )
        lines.append(row)
    macro = report["macro"]
    lines.append(
        "mean  "
        + " " * (7 * len(names))
        + "   |"
        + " " * (5 * len(names))
        + "   |"
        + "".join(f"{int(round_half_up(macro[m])):>6}" for m in METRIC_NAMES)
    )
    if "bootstrap_ci" in report:
        lines.append("")
        lines.append("95% bootstrap CI (low-mid-high):")
        for m in METRIC_NAMES:
            lo, mid, hi = report["bootstrap_ci"][m]
            lines.append(
                f"  {m:>11}: "
                f"{int(round_half_up(lo))}-{int(round_half_up(mid))}-{int(round_half_up(hi))}"
            )
    return "\n".join(lines) + "\n"
