"""ROC analysis for membership scores: TPR at fixed FPR, AUC, MI accuracy.

The ROC is the achievable step function: thresholds sweep the unique observed
scores in descending order (plus a sentinel above all scores), predicting
"member" iff score >= threshold.  No interpolation is applied anywhere, so
results are reproducible bit-for-bit across implementations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_FPR_TARGETS = (0.001, 0.01, 0.05, 0.10)


@dataclass
class RocCurve:
    """Step-function ROC points sorted by FPR, from (0, .) to (1, 1)."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


@dataclass
class MetricReport:
    tpr_at: dict[float, float]
    auc: float
    mi_accuracy: float
    n_in: int
    n_out: int
    fpr_resolution: float = 0.0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tpr_at": {repr(k): v for k, v in sorted(self.tpr_at.items())},
            "auc": self.auc,
            "mi_accuracy": self.mi_accuracy,
            "n_in": self.n_in,
            "n_out": self.n_out,
            "fpr_resolution": self.fpr_resolution,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _as_scores(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty score list")
    return arr


def roc_curve(scores_in, scores_out) -> RocCurve:
    """Threshold sweep over unique scores, descending; member iff score >= t."""
    s_in, s_out = _as_scores(scores_in), _as_scores(scores_out)
    thresholds = np.unique(np.concatenate([s_in, s_out]))[::-1]
    thresholds = np.concatenate([[np.inf], thresholds])
    tpr = np.array([np.mean(s_in >= t) for t in thresholds])
    fpr = np.array([np.mean(s_out >= t) for t in thresholds])
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds)


def tpr_at_fpr(curve: RocCurve, fpr_target: float) -> float:
    """Max TPR over curve points with FPR <= target (step reading)."""
    if not 0 <= fpr_target <= 1:
        raise ValueError("fpr_target must be in [0, 1]")
    ok = curve.fpr <= fpr_target
    return float(curve.tpr[ok].max()) if ok.any() else 0.0


def auc(scores_in, scores_out) -> float:
    """P(random IN score > random OUT score), ties counted 1/2."""
    s_in, s_out = _as_scores(scores_in), _as_scores(scores_out)
    # Midranks over the pooled sample give the Mann-Whitney statistic.
    pooled = np.concatenate([s_in, s_out])
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(pooled.size)
    sorted_vals = pooled[order]
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    r_in = ranks[:s_in.size].sum()
    u = r_in - s_in.size * (s_in.size + 1) / 2.0
    return float(u / (s_in.size * s_out.size))


def mi_accuracy(scores_in, scores_out) -> float:
    """Best balanced accuracy (TPR + TNR)/2 over the threshold sweep."""
    curve = roc_curve(scores_in, scores_out)
    return float(np.max((curve.tpr + 1.0 - curve.fpr) / 2.0))


def compute_report(scores_in, scores_out,
                   fpr_targets=DEFAULT_FPR_TARGETS) -> MetricReport:
    """Full metric report; warns when a target FPR is below 1/n_out."""
    s_in, s_out = _as_scores(scores_in), _as_scores(scores_out)
    curve = roc_curve(s_in, s_out)
    resolution = 1.0 / s_out.size
    notes = []
    for t in fpr_targets:
        if 0 < t < resolution:
            msg = (f"requested FPR {t} is below the resolution {resolution:.6g} "
                   f"achievable with {s_out.size} OUT observations")
            notes.append(msg)
            logger.warning(msg)
    return MetricReport(
        tpr_at={float(t): tpr_at_fpr(curve, t) for t in fpr_targets},
        auc=auc(s_in, s_out),
        mi_accuracy=float(np.max((curve.tpr + 1.0 - curve.fpr) / 2.0)),
        n_in=s_in.size,
        n_out=s_out.size,
        fpr_resolution=resolution,
        notes=notes,
    )


def write_roc_csv(path: str, curve: RocCurve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("fpr,tpr,threshold\n")
        for fp, tp, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            f.write(f"{fp!r},{tp!r},{th!r}\n")
