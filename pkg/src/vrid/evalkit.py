"""Matching metrics, plate-tolerance comparison, and cross-validation.

Precision/recall/F-score are counted at pair level over the matching
class. Per-round F-scores are averaged arithmetically across rounds
(the averaged F is deliberately not the harmonic mean of the averaged
precision and recall).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .alphabet import validate_plate_string
from .pairgen import MATCHING, PairSample, SplitPlan

PLATE_SLOTS = 7


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """P = tp/(tp+fp), R = tp/(tp+fn); 0 where the denominator is 0."""
    for name, v in (("tp", tp), ("fp", fp), ("fn", fn)):
        if v < 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


def f_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError(f"precision/recall must lie in [0, 1], got ({precision}, {recall})")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def plate_match_tolerance(s1: str, s2: str, k: int) -> bool:
    """True iff the plates disagree in at most ``k`` of the 7 slots.

    Strings are left-aligned to 7 slots; a slot where exactly one string
    has a character counts as a mismatch (two equally short readings can
    still match perfectly).
    """
    if k not in (0, 1, 2):
        raise ValueError(f"tolerance k must be 0, 1, or 2, got {k}")
    for s in (s1, s2):
        validate_plate_string(s)
        if len(s) > PLATE_SLOTS:
            raise ValueError(f"plate string {s!r} longer than {PLATE_SLOTS} slots")
    mismatches = 0
    for i in range(PLATE_SLOTS):
        a = s1[i] if i < len(s1) else None
        b = s2[i] if i < len(s2) else None
        if a != b:
            mismatches += 1
    return mismatches <= k


def confusion_from_predictions(true_labels: Sequence[str],
                               predicted_labels: Sequence[str]) -> tuple[int, int, int]:
    """(tp, fp, fn) over the matching class."""
    if len(true_labels) != len(predicted_labels):
        raise ValueError("label lists differ in length")
    tp = fp = fn = 0
    for truth, pred in zip(true_labels, predicted_labels):
        if pred == MATCHING and truth == MATCHING:
            tp += 1
        elif pred == MATCHING:
            fp += 1
        elif truth == MATCHING:
            fn += 1
    return tp, fp, fn


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int  # 1-based
    train_sets: tuple[str, ...]
    val_sets: tuple[str, ...]
    test_sets: tuple[str, ...]
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    fscore: float


@dataclass(frozen=True)
class MetricsReport:
    rounds: tuple[RoundMetrics, ...]
    avg_precision: float
    avg_recall: float
    avg_fscore: float

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["round", "train", "val", "test", "tp", "fp", "fn",
                         "precision", "recall", "f_score"])
        for r in self.rounds:
            writer.writerow([r.round_index, "+".join(r.train_sets), "+".join(r.val_sets),
                             "+".join(r.test_sets), r.tp, r.fp, r.fn,
                             f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.fscore:.6f}"])
        writer.writerow(["average", "", "", "", "", "", "",
                         f"{self.avg_precision:.6f}", f"{self.avg_recall:.6f}",
                         f"{self.avg_fscore:.6f}"])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "rounds": [asdict(r) for r in self.rounds],
            "average": {"precision": self.avg_precision, "recall": self.avg_recall,
                        "f_score": self.avg_fscore},
        }, indent=2)

    def save_plot(self, path: str | Path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        labels = [str(r.round_index) for r in self.rounds] + ["avg"]
        series = {
            "precision": [r.precision for r in self.rounds] + [self.avg_precision],
            "recall": [r.recall for r in self.rounds] + [self.avg_recall],
            "f_score": [r.fscore for r in self.rounds] + [self.avg_fscore],
        }
        fig, ax = plt.subplots(figsize=(7, 4))
        width = 0.25
        for i, (name, values) in enumerate(series.items()):
            ax.bar([x + (i - 1) * width for x in range(len(labels))], values, width, label=name)
        ax.set_xticks(range(len(labels)), labels)
        ax.set_xlabel("cross-validation round")
        ax.set_ylim(0, 1.05)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


class PairClassifier(Protocol):
    """What a cross-validation round needs from a model."""

    def fit(self, train_pairs: list[PairSample], val_pairs: list[PairSample]) -> None: ...

    def predict(self, pairs: list[PairSample]) -> list[str]: ...


def metrics_for_round(round_index: int, plan_round, true_labels, predicted_labels) -> RoundMetrics:
    tp, fp, fn = confusion_from_predictions(true_labels, predicted_labels)
    precision, recall = precision_recall(tp, fp, fn)
    return RoundMetrics(round_index, plan_round.train, plan_round.val, plan_round.test,
                        tp, fp, fn, precision, recall, f_score(precision, recall))


def run_cross_validation(pair_sets: dict[str, list[PairSample]], plan: SplitPlan,
                         model_factory: Callable[[], PairClassifier],
                         log=None) -> MetricsReport:
    """Train/validate/test once per round and average the per-round metrics."""
    needed = {s for rnd in plan.rounds for s in rnd.all_sets()}
    missing = sorted(needed - set(pair_sets))
    if missing:
        raise ValueError(f"pair sets missing for: {missing}")

    rounds: list[RoundMetrics] = []
    for i, rnd in enumerate(plan.rounds, start=1):
        train = [p for s in rnd.train for p in pair_sets[s]]
        val = [p for s in rnd.val for p in pair_sets[s]]
        test = [p for s in rnd.test for p in pair_sets[s]]
        model = model_factory()
        model.fit(train, val)
        predicted = model.predict(test)
        metrics = metrics_for_round(i, rnd, [p.label for p in test], predicted)
        rounds.append(metrics)
        if log is not None:
            log(f"round {i}: P {metrics.precision:.4f}, R {metrics.recall:.4f}, "
                f"F {metrics.fscore:.4f}")

    n = len(rounds)
    return MetricsReport(
        rounds=tuple(rounds),
        avg_precision=sum(r.precision for r in rounds) / n,
        avg_recall=sum(r.recall for r in rounds) / n,
        avg_fscore=sum(r.fscore for r in rounds) / n,
    )
