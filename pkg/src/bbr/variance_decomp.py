"""Empirical examiner/item decomposition of inconclusive variability.

For each examiner the proportion of their responses that were
inconclusive is computed, likewise for each item.  The share of the total
variance that comes from examiners,

    ratio = var(examiner props) / (var(examiner props) + var(item props)),

is the fraction of inconclusives attributed to the examiners.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .study_data import StudyDataset, StudyDataError

__all__ = [
    "DecompositionResult",
    "UndefinedRatio",
    "variance_ratio",
    "decompose",
    "decompose_by_group",
    "decompose_matrix",
    "proportions",
]


class UndefinedRatio(ArithmeticError):
    """Both variances are zero, so no share can be attributed."""

    def __init__(self, result: "DecompositionResult | None" = None):
        super().__init__("examiner and item variances are both zero; ratio undefined")
        self.result = result


@dataclass(frozen=True)
class DecompositionResult:
    examiner_props: Mapping[str, float]
    item_props: Mapping[str, float]
    sigma2_I: float
    sigma2_J: float
    ratio: float | None
    # population-variance (n denominator) variant, kept for sensitivity reporting
    sigma2_I_pop: float = field(default=0.0)
    sigma2_J_pop: float = field(default=0.0)
    ratio_pop: float | None = field(default=None)


def variance_ratio(examiner_var: float, item_var: float) -> float | None:
    """``examiner_var / (examiner_var + item_var)``; ``None`` when both are 0."""
    if examiner_var < 0 or item_var < 0:
        raise ValueError("variances must be non-negative")
    total = examiner_var + item_var
    if total == 0:
        return None
    return examiner_var / total


def _var(x: np.ndarray, ddof: int) -> float:
    # a single proportion carries no spread
    if x.size <= ddof:
        return 0.0
    v = float(np.var(x, ddof=ddof))
    return max(v, 0.0)


def proportions(incon: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row and column inconclusive proportions over assigned cells."""
    m = mask.astype(float)
    vals = np.where(mask, incon, 0).astype(float)
    n_i = m.sum(axis=1)
    n_j = m.sum(axis=0)
    if np.any(n_i == 0) or np.any(n_j == 0):
        raise StudyDataError("every examiner and item needs at least one response")
    return vals.sum(axis=1) / n_i, vals.sum(axis=0) / n_j


def decompose_matrix(incon: np.ndarray, mask: np.ndarray) -> tuple[float, float, float | None]:
    """``(sigma2_I, sigma2_J, ratio)`` from an inconclusive indicator matrix.

    This is the hot path for posterior-predictive simulation; ``ratio`` is
    ``None`` when undefined.
    """
    p_i, p_j = proportions(incon, mask)
    s_i, s_j = _var(p_i, 1), _var(p_j, 1)
    return s_i, s_j, variance_ratio(s_i, s_j)


def decompose(dataset: StudyDataset) -> DecompositionResult:
    """Decompose inconclusive variability for one ground-truth class.

    Unsuitable responses count as non-conclusive.  Sample variances use the
    n - 1 denominator.  Raises :class:`UndefinedRatio` (carrying the partial
    result) when every proportion is constant.
    """
    if len(dataset.ground_truths()) > 1:
        raise StudyDataError(
            "decompose expects a single ground truth; filter same- and "
            "different-source items first"
        )
    examiners, items, X, mask = dataset.conclusive_matrix()
    incon = 1 - X
    p_i, p_j = proportions(incon, mask)
    s_i, s_j = _var(p_i, 1), _var(p_j, 1)
    s_i0, s_j0 = _var(p_i, 0), _var(p_j, 0)
    result = DecompositionResult(
        examiner_props=dict(zip(examiners, p_i.tolist())),
        item_props=dict(zip(items, p_j.tolist())),
        sigma2_I=s_i,
        sigma2_J=s_j,
        ratio=variance_ratio(s_i, s_j),
        sigma2_I_pop=s_i0,
        sigma2_J_pop=s_j0,
        ratio_pop=variance_ratio(s_i0, s_j0),
    )
    if result.ratio is None:
        raise UndefinedRatio(result)
    return result


def decompose_by_group(
    dataset: StudyDataset, groups: Mapping[str, object]
) -> dict[object, DecompositionResult]:
    """Run :func:`decompose` on each examiner group.

    Item proportions are recomputed from the group's own responses.  A group
    whose ratio is undefined maps to a result with ``ratio=None``.
    """
    members: dict[object, list[str]] = {}
    for e in dataset.examiners:
        members.setdefault(groups[e], []).append(e)
    out = {}
    for g in sorted(members, key=str):
        try:
            out[g] = decompose(dataset.subset_examiners(members[g]))
        except UndefinedRatio as exc:
            out[g] = exc.result
    return out
