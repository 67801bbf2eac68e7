"""
Threshold-free evaluation: average precision, ROC AUC and top-k temporal localization.
"""
from typing import Iterable, Optional, Sequence
import numpy as np
from app.schemas.report_schemas import CategoryMetrics, LabeledScores, MetricsReport
from app.services.scoring import localization_hit, localize
from app.utils.errors import DataError


def _arrays(ls: LabeledScores) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(ls.scores, dtype=np.float64)
    labels = np.asarray(ls.labels, dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise DataError("scores must be finite")
    if ls.n_fake == 0 or ls.n_real == 0:
        raise DataError(f"need both classes, got {ls.n_real} real and {ls.n_fake} fake")
    return scores, labels


# Function to compute average precision
def average_precision(ls: LabeledScores) -> float:
    """
    Mean over positives (fakes) of the precision at each positive's rank.

    Ranking is by score descending; within tied scores reals are ranked first (pessimistic).

    - **Raises**:
        - DataError: If only one class is present.
    """
    scores, labels = _arrays(ls)
    # lexsort: last key is primary
    order = np.lexsort((labels, -scores))
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    positives = ranked == 1
    return float(np.mean(hits[positives] / ranks[positives]))


# Function to compute the ROC AUC
def roc_auc(ls: LabeledScores) -> float:
    """
    Mann-Whitney statistic: fraction of (fake, real) pairs where the fake scores higher, ties
    counting 1/2.

    - **Raises**:
        - DataError: If only one class is present.
    """
    scores, labels = _arrays(ls)
    fakes = scores[labels == 1][:, None]
    reals = scores[labels == 0][None, :]
    wins = np.sum(fakes > reals) + 0.5 * np.sum(fakes == reals)
    return float(wins / (fakes.size * reals.size))


def localization_accuracy(reports: Iterable[tuple[Sequence[float], tuple[int, int]]], k: int = 5) -> float:
    """
    Fraction of videos where one of the top-k frames falls inside the annotated interval.

    - **Parameters**:
        - `reports`: (frame_scores, (start, end)) per video.
        - `k`: Frames returned per video (capped at the video length).

    - **Raises**:
        - DataError: If `reports` is empty or an interval is invalid.
    """
    reports = list(reports)
    if not reports:
        raise DataError("localization accuracy needs at least one video")
    hits = 0
    for frame_scores, interval in reports:
        start, end = interval
        if not 0 <= start < end:
            raise DataError(f"invalid interval {list(interval)}")
        hits += localization_hit(localize(frame_scores, min(k, len(frame_scores))), interval)
    return hits / len(reports)


def metrics_report(ls: LabeledScores, categories: Optional[Sequence[Optional[str]]] = None,
                   localization: Optional[Sequence[tuple[Sequence[float], tuple[int, int]]]] = None,
                   k: int = 5) -> MetricsReport:
    """
    AP/AUC over all items, per fake category (each category against all reals), and top-k
    localization when interval reports are given.
    """
    per_category: dict[str, CategoryMetrics] = {}
    if categories is not None:
        if len(categories) != len(ls.labels):
            raise DataError("one category entry per item is required")
        real_idx = [i for i, label in enumerate(ls.labels) if label == 0]
        tags = sorted({c for c, label in zip(categories, ls.labels) if label == 1 and c is not None})
        for tag in tags:
            fake_idx = [i for i, (c, label) in enumerate(zip(categories, ls.labels)) if label == 1 and c == tag]
            subset = LabeledScores(
                scores=[ls.scores[i] for i in real_idx + fake_idx],
                labels=[0] * len(real_idx) + [1] * len(fake_idx),
            )
            per_category[tag] = CategoryMetrics(
                ap=average_precision(subset), auc=roc_auc(subset), n_fake=len(fake_idx)
            )
    report = MetricsReport(
        ap=average_precision(ls),
        auc=roc_auc(ls),
        n_real=ls.n_real,
        n_fake=ls.n_fake,
        per_category=per_category,
    )
    if localization:
        report = report.model_copy(update={
            "localization_k": k,
            "localization": localization_accuracy(localization, k),
        })
    return report
