"""Agreement statistics over rater-by-item matrices.

Covers per-item median/IQR, pairwise exact agreement, Krippendorff's alpha
(nominal and ordinal, coincidence-matrix construction with missing ratings
excluded), binary label collapsing and Gwet's AC1 on collapsed labels.
All aggregation runs on exact fractions; floats appear only in returned values.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Literal, Mapping

from .errors import InsufficientData, UndefinedAgreement

logger = logging.getLogger(__name__)

#: Rating criteria used by the human evaluation rubric.
DEFAULT_CRITERIA = ("TCC", "MS", "ATA", "VC")

Metric = Literal["nominal", "ordinal"]


@dataclass(frozen=True)
class Scale:
    kind: Literal["ordinal", "binary"]
    min: int
    max: int


FOUR_POINT = Scale("ordinal", 1, 4)
BINARY = Scale("binary", 0, 1)


@dataclass(frozen=True)
class RatingMatrix:
    """Partial raters x items rating assignment on a fixed scale."""

    raters: tuple[str, ...]
    items: tuple[str, ...]
    ratings: Mapping[tuple[str, str], int]
    scale: Scale = FOUR_POINT

    def __post_init__(self):
        raters = set(self.raters)
        items = set(self.items)
        for (rater, item), label in self.ratings.items():
            if rater not in raters:
                raise ValueError(f"rating by unknown rater {rater!r}")
            if item not in items:
                raise ValueError(f"rating for unknown item {item!r}")
            if not (self.scale.min <= label <= self.scale.max):
                raise ValueError(
                    f"label {label} for ({rater!r}, {item!r}) outside scale "
                    f"[{self.scale.min}, {self.scale.max}]"
                )

    def item_ratings(self, item: str) -> list[int]:
        """Ratings present for one item, in rater order."""
        return [
            self.ratings[(rater, item)] for rater in self.raters if (rater, item) in self.ratings
        ]

    def rater_ratings(self, rater: str) -> list[int]:
        return [self.ratings[(rater, item)] for item in self.items if (rater, item) in self.ratings]


def _quantile_inclusive(sorted_values: list[int], p: Fraction) -> Fraction:
    """Linear interpolation over order statistics, inclusive method."""
    n = len(sorted_values)
    if n == 1:
        return Fraction(sorted_values[0])
    h = p * (n - 1)
    lo = int(h)  # floor; h >= 0
    frac = h - lo
    if lo + 1 >= n:
        return Fraction(sorted_values[-1])
    return Fraction(sorted_values[lo]) + frac * (sorted_values[lo + 1] - sorted_values[lo])


def median_iqr(matrix: RatingMatrix, item: str) -> dict[str, float]:
    """Median (midpoint convention) and IQR (inclusive quartiles) for one item."""
    values = sorted(matrix.item_ratings(item))
    if not values:
        raise InsufficientData(f"no ratings for item {item!r}")
    n = len(values)
    if n % 2:
        median = Fraction(values[n // 2])
    else:
        median = Fraction(values[n // 2 - 1] + values[n // 2], 2)
    q1 = _quantile_inclusive(values, Fraction(1, 4))
    q3 = _quantile_inclusive(values, Fraction(3, 4))
    return {"median": float(median), "iqr": float(q3 - q1)}


def _co_rated_pairs(matrix: RatingMatrix) -> tuple[int, int]:
    """(agreeing, total) unordered co-rated pairs across all items."""
    agree = 0
    total = 0
    for item in matrix.items:
        values = matrix.item_ratings(item)
        m = len(values)
        if m < 2:
            continue
        for i in range(m):
            for j in range(i + 1, m):
                total += 1
                if values[i] == values[j]:
                    agree += 1
    return agree, total


def exact_agreement(matrix: RatingMatrix) -> float:
    """Percentage of concordant rating pairs over all co-rated pairs."""
    agree, total = _co_rated_pairs(matrix)
    if total == 0:
        raise InsufficientData("no item has two or more ratings")
    return float(Fraction(agree * 100, total))


def _coincidence(matrix: RatingMatrix):
    """Coincidence counts o[c][k], marginals n_c and total n (all Fractions)."""
    o: dict[tuple[int, int], Fraction] = {}
    for item in matrix.items:
        values = matrix.item_ratings(item)
        m = len(values)
        if m < 2:
            continue
        weight = Fraction(1, m - 1)
        for i in range(m):
            for j in range(m):
                if i != j:
                    key = (values[i], values[j])
                    o[key] = o.get(key, Fraction(0)) + weight
    marginals: dict[int, Fraction] = {}
    for (c, _k), count in o.items():
        marginals[c] = marginals.get(c, Fraction(0)) + count
    total = sum(marginals.values(), Fraction(0))
    return o, marginals, total


def _ordinal_delta_sq(categories: list[int], marginals: dict[int, Fraction]):
    """delta^2(c, k) for every category pair under the ordinal metric."""
    deltas: dict[tuple[int, int], Fraction] = {}
    for a_idx, c in enumerate(categories):
        for b_idx in range(a_idx, len(categories)):
            k = categories[b_idx]
            span = sum(
                (marginals[g] for g in categories[a_idx : b_idx + 1]), Fraction(0)
            )
            d = (span - Fraction(marginals[c] + marginals[k], 2)) ** 2
            deltas[(c, k)] = d
            deltas[(k, c)] = d
    return deltas


def krippendorff_alpha(matrix: RatingMatrix, metric: Metric = "ordinal") -> float:
    """Krippendorff's alpha = 1 - D_o/D_e over the coincidence matrix.

    Items with fewer than two ratings are excluded. Raises UndefinedAgreement
    when expected disagreement is zero (no label variation).
    """
    o, marginals, n = _coincidence(matrix)
    if n == 0:
        raise InsufficientData("no item has two or more ratings")
    categories = sorted(marginals)
    if metric == "ordinal":
        delta = _ordinal_delta_sq(categories, marginals)
    else:
        delta = {
            (c, k): Fraction(0 if c == k else 1) for c in categories for k in categories
        }
    d_observed = sum((count * delta[key] for key, count in o.items()), Fraction(0)) / n
    d_expected = sum(
        (marginals[c] * marginals[k] * delta[(c, k)] for c in categories for k in categories),
        Fraction(0),
    ) / (n * (n - 1))
    if d_expected == 0:
        raise UndefinedAgreement("no label variation: expected disagreement is zero")
    return float(1 - d_observed / d_expected)


def collapse(matrix: RatingMatrix, threshold: int = 3) -> RatingMatrix:
    """Recode a 4-point matrix to binary: below ``threshold`` -> 0, else 1.

    Already-binary matrices are returned unchanged, making collapse idempotent.
    Missing ratings stay missing.
    """
    if matrix.scale.kind == "binary":
        return matrix
    recoded = {
        key: (1 if label >= threshold else 0) for key, label in matrix.ratings.items()
    }
    return RatingMatrix(
        raters=matrix.raters, items=matrix.items, ratings=recoded, scale=BINARY
    )


def gwet_ac1(matrix: RatingMatrix) -> float:
    """Gwet's AC1 on binary labels: (p_a - p_e) / (1 - p_e), p_e = 2*pi*(1-pi)."""
    if matrix.scale.kind != "binary":
        raise InsufficientData("gwet_ac1 expects a binary matrix; collapse first")
    agree, total = _co_rated_pairs(matrix)
    if total == 0:
        raise InsufficientData("no item has two or more ratings")
    p_a = Fraction(agree, total)
    proportions = []
    for rater in matrix.raters:
        values = matrix.rater_ratings(rater)
        if values:
            proportions.append(Fraction(sum(values), len(values)))
    if not proportions:
        raise InsufficientData("no ratings present")
    pi = sum(proportions, Fraction(0)) / len(proportions)
    p_e = 2 * pi * (1 - pi)
    if p_e == 1:
        raise UndefinedAgreement("degenerate chance agreement (p_e = 1)")
    return float((p_a - p_e) / (1 - p_e))


def load_ratings_csv(path, criteria_vocabulary: Iterable[str] = DEFAULT_CRITERIA):
    """Read ``rater,artifact,criterion,label`` rows into one matrix per criterion."""
    vocabulary = set(criteria_vocabulary)
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"rater", "artifact", "criterion", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InsufficientData(
                f"ratings CSV must have columns rater,artifact,criterion,label; "
                f"found {reader.fieldnames}"
            )
        for row in reader:
            rows.append(
                (row["rater"], row["artifact"], row["criterion"], int(row["label"]))
            )
    by_criterion: dict[str, dict] = {}
    for rater, artifact, criterion, label in rows:
        if criterion not in vocabulary:
            if criterion not in by_criterion:
                logger.warning("criterion %r not in configured vocabulary %s", criterion, sorted(vocabulary))
        bucket = by_criterion.setdefault(criterion, {"raters": [], "items": [], "ratings": {}})
        if rater not in bucket["raters"]:
            bucket["raters"].append(rater)
        if artifact not in bucket["items"]:
            bucket["items"].append(artifact)
        bucket["ratings"][(rater, artifact)] = label
    return {
        criterion: RatingMatrix(
            raters=tuple(b["raters"]), items=tuple(b["items"]), ratings=b["ratings"]
        )
        for criterion, b in by_criterion.items()
    }


def heatmap_tables(by_criterion: Mapping[str, RatingMatrix]) -> dict:
    """Median and IQR tables (artifact rows x criterion columns) for plotting."""
    artifacts: list[str] = []
    for matrix in by_criterion.values():
        for item in matrix.items:
            if item not in artifacts:
                artifacts.append(item)
    median_table: dict[str, dict[str, float]] = {}
    iqr_table: dict[str, dict[str, float]] = {}
    for artifact in artifacts:
        median_table[artifact] = {}
        iqr_table[artifact] = {}
        for criterion, matrix in by_criterion.items():
            if artifact in matrix.items and matrix.item_ratings(artifact):
                result = median_iqr(matrix, artifact)
                median_table[artifact][criterion] = result["median"]
                iqr_table[artifact][criterion] = result["iqr"]
    return {"median": median_table, "iqr": iqr_table}


def agreement_summary(matrix: RatingMatrix) -> dict:
    """Exact agreement plus ordinal/nominal alpha (None where undefined)."""
    summary: dict[str, float | None] = {"exact_agreement_pct": exact_agreement(matrix)}
    for metric in ("ordinal", "nominal"):
        try:
            summary[f"alpha_{metric}"] = krippendorff_alpha(matrix, metric)  # type: ignore[arg-type]
        except UndefinedAgreement:
            summary[f"alpha_{metric}"] = None
    return summary
