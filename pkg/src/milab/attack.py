"""Label-only distinguishing tests: the neighborhood misclassification score
and the correct/incorrect baseline.

Target models are reached only through :class:`LabelOnlyModel`, which exposes
predicted labels and a query counter but no confidences, so every attack here
is label-only by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .neighborhood import NeighborhoodSet

CHAMELEON = "chameleon"
GAP = "gap"


class LabelOnlyModel:
    """Label-only query facade over a trained model; counts every query.

    Wraps anything exposing ``predict_proba_batch`` and surfaces only argmax
    labels (ties resolved to the lowest class index).
    """

    def __init__(self, model):
        self._model = model
        self.query_count = 0

    def predict_label(self, x: np.ndarray) -> int:
        return int(self.predict_label_batch(np.atleast_2d(x))[0])

    def predict_label_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        self.query_count += X.shape[0]
        return np.argmax(self._model.predict_proba_batch(X), axis=1)


@dataclass
class ScoreRecord:
    """One membership score for a (target model, challenge point) pair.

    Higher score means stronger evidence of membership; ``truth`` is the
    ground-truth membership bit.
    """

    challenge_index: int
    target_model_id: int
    score: float
    truth: bool
    attack_name: str

    def __post_init__(self):
        if not 0 <= self.score <= 1:
            raise ValueError("score must be in [0, 1]")


def misclassification_score(target, challenge: tuple[np.ndarray, int],
                            neighborhood: NeighborhoodSet) -> float:
    """Fraction of the point and its n neighbors the target mislabels.

    Issues exactly n+1 label queries.
    """
    x, y = challenge
    queries = [np.asarray(x, dtype=np.float64)]
    queries.extend(m.x_c for m in neighborhood.members)
    labels = target.predict_label_batch(np.stack(queries))
    return float(np.mean(labels != y))


def chameleon_score(target, challenge: tuple[np.ndarray, int],
                    neighborhood: NeighborhoodSet, *, challenge_index: int = -1,
                    model_id: int = -1, truth: bool = False) -> ScoreRecord:
    """Membership score 1 - misclassification fraction over the neighborhood."""
    frac = misclassification_score(target, challenge, neighborhood)
    return ScoreRecord(challenge_index=challenge_index, target_model_id=model_id,
                       score=1.0 - frac, truth=truth, attack_name=CHAMELEON)


def gap_score(target, challenge: tuple[np.ndarray, int], *,
              challenge_index: int = -1, model_id: int = -1,
              truth: bool = False) -> ScoreRecord:
    """Baseline: member iff the target labels the point correctly (one query)."""
    x, y = challenge
    score = 1.0 if target.predict_label(x) == y else 0.0
    return ScoreRecord(challenge_index=challenge_index, target_model_id=model_id,
                       score=score, truth=truth, attack_name=GAP)


def write_scores_csv(path: str, records: list[ScoreRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["attack", "challenge_index", "model_id", "truth", "score"])
        for r in records:
            writer.writerow([r.attack_name, r.challenge_index, r.target_model_id,
                             int(r.truth), repr(r.score)])


def read_scores_csv(path: str) -> list[ScoreRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            records.append(ScoreRecord(
                challenge_index=int(row["challenge_index"]),
                target_model_id=int(row["model_id"]),
                score=float(row["score"]),
                truth=bool(int(row["truth"])),
                attack_name=row["attack"],
            ))
    return records


def split_scores(records: list[ScoreRecord], attack_name: str) -> tuple[list[float], list[float]]:
    """Scores of one attack partitioned into (members, non-members)."""
    s_in = [r.score for r in records if r.attack_name == attack_name and r.truth]
    s_out = [r.score for r in records if r.attack_name == attack_name and not r.truth]
    return s_in, s_out
