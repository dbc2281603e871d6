"""Model-based ratios, posterior-predictive intervals and failure rates."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .error_rates import ContingencyTable, RateOption, failure_rate, rates
from .latent_model import ResponseMatrix, simulate_matrix, skew_normal_sd
from .sampler import PosteriorDraws
from .study_data import GroundTruth, StudyDataset
from .variance_decomp import decompose_matrix

__all__ = [
    "RatioBasis",
    "RatioEstimate",
    "PredictiveInterval",
    "FailureRateRow",
    "model_ratio",
    "model_ratio_draws",
    "predictive_ratio_interval",
    "adjusted_failure_rates",
    "default_n_sims",
]


class RatioBasis(str, enum.Enum):
    SCALE = "scale"
    VARIANCE = "variance"


@dataclass(frozen=True)
class RatioEstimate:
    point: float
    lower: float
    upper: float
    basis: RatioBasis
    examiner_component: float = math.nan
    item_component: float = math.nan
    ratio_of_means: float = math.nan


@dataclass(frozen=True)
class PredictiveInterval:
    predicted: float
    lower: float
    upper: float
    observed: float | None
    n_sims: int
    n_undefined: int = 0


def _group_index(draws: PosteriorDraws, group) -> int:
    if group is None:
        if draws.n_groups != 1:
            raise ValueError(f"draws have groups {draws.group_labels}; pick one")
        return 0
    try:
        return draws.group_labels.index(str(group))
    except ValueError:
        raise KeyError(f"unknown group {group!r}") from None


def model_ratio_draws(draws: PosteriorDraws, basis: RatioBasis | str = RatioBasis.SCALE, group=None):
    """Per-draw ``(ratio, examiner component, item component)`` arrays."""
    basis = RatioBasis(basis)
    g = _group_index(draws, group)
    sd_theta = skew_normal_sd(draws.omega()[:, g], draws.alpha()[:, g])
    sd_zeta = draws.sigma_zeta()
    if basis is RatioBasis.SCALE:
        v_theta, v_zeta = sd_theta, sd_zeta
    else:
        v_theta, v_zeta = sd_theta**2, sd_zeta**2
    return v_theta / (v_theta + v_zeta), v_theta, v_zeta


def model_ratio(
    draws: PosteriorDraws, basis: RatioBasis | str = RatioBasis.SCALE, group=None, level: float = 0.95
) -> RatioEstimate:
    """Examiner share of latent variability, averaged over posterior draws.

    Under the scale basis the components are the standard deviations of the
    examiner and item tendency distributions; under the variance basis their
    squares.
    """
    r, v_theta, v_zeta = model_ratio_draws(draws, basis, group)
    lo, hi = np.quantile(r, [(1 - level) / 2, 1 - (1 - level) / 2])
    m_theta, m_zeta = float(v_theta.mean()), float(v_zeta.mean())
    return RatioEstimate(
        point=float(r.mean()),
        lower=float(lo),
        upper=float(hi),
        basis=RatioBasis(basis),
        examiner_component=m_theta,
        item_component=m_zeta,
        ratio_of_means=m_theta / (m_theta + m_zeta),
    )


def default_n_sims(draws: PosteriorDraws) -> int:
    return min(1000, draws.n_chains * draws.n_retained)


def predictive_ratio_interval(
    draws: PosteriorDraws,
    study: StudyDataset | Mapping[str, Iterable[str]],
    n_sims: int | None = None,
    seed: int = 0,
    examiners: Iterable[str] | None = None,
    level: float = 0.95,
) -> PredictiveInterval:
    """Posterior-predictive distribution of the empirical ratio.

    For evenly strided posterior draws a replicate study is simulated over
    the original examiner x item assignment and decomposed; ``examiners``
    restricts the decomposition to one examiner group.  When ``study`` is a
    dataset the observed ratio is computed from it as well.  Replicates
    whose ratio is undefined are dropped and counted.
    """
    total = draws.n_chains * draws.n_retained
    n_sims = default_n_sims(draws) if n_sims is None else int(n_sims)
    if not 1 <= n_sims <= total:
        raise ValueError(f"n_sims must be between 1 and {total}")

    e_pos = {e: k for k, e in enumerate(draws.examiner_ids)}
    i_pos = {i: k for k, i in enumerate(draws.item_ids)}
    mask = np.zeros((len(e_pos), len(i_pos)), dtype=bool)
    observed = None
    if isinstance(study, StudyDataset):
        assignment = study.assignment
    else:
        assignment = study
    for e, items in assignment.items():
        for it in items:
            mask[e_pos[e], i_pos[it]] = True

    rows = np.arange(len(e_pos)) if examiners is None else np.array(sorted(e_pos[e] for e in examiners))
    sub_mask = mask[rows]
    cols = np.flatnonzero(sub_mask.any(axis=0))
    sub_mask = sub_mask[:, cols]

    if isinstance(study, StudyDataset):
        ds = study if examiners is None else study.subset_examiners(examiners)
        _, _, X, m = _aligned(ds, draws, rows, cols)
        observed = decompose_matrix(1 - X, m)[2]

    theta_all = draws.theta(centered=False)[:, rows]
    zeta_all = draws.zeta(centered=False)[:, cols]
    picks = (np.arange(n_sims) * total) // n_sims
    values = []
    undefined = 0
    for k, idx in enumerate(picks):
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, k]))
        X = simulate_matrix(theta_all[idx], zeta_all[idx], sub_mask, rng)
        r = decompose_matrix(1 - X, sub_mask)[2]
        if r is None:
            undefined += 1
        else:
            values.append(r)
    if not values:
        return PredictiveInterval(math.nan, math.nan, math.nan, observed, n_sims, undefined)
    v = np.sort(np.asarray(values))
    lo, hi = np.quantile(v, [(1 - level) / 2, 1 - (1 - level) / 2])
    return PredictiveInterval(float(v.mean()), float(lo), float(hi), observed, n_sims, undefined)


def _aligned(ds: StudyDataset, draws: PosteriorDraws, rows, cols):
    rm = ResponseMatrix.from_dataset(
        ds,
        [draws.examiner_ids[r] for r in rows],
        [draws.item_ids[c] for c in cols],
    )
    return rm.examiner_ids, rm.item_ids, rm.X, rm.mask


@dataclass(frozen=True)
class FailureRateRow:
    ground_truth: GroundTruth
    group: str
    obs_ratio: float | None
    model_ratio: float | None
    lower: float | None
    upper: float | None
    inc_correct: float | None
    inc_incorrect: float | None
    obs_failure: float | None
    model_failure: float | None

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ground_truth"] = self.ground_truth.value
        return d


def _safe_failure(lo, hi, r):
    if lo is None or hi is None or r is None or (isinstance(r, float) and math.isnan(r)):
        return None
    return float(failure_rate(lo, hi, r))


def adjusted_failure_rates(
    tables: Mapping[tuple[GroundTruth, str], ContingencyTable],
    ratios: Mapping[tuple[GroundTruth, str], RatioEstimate | float | None],
    observed: Mapping[tuple[GroundTruth, str], float | None] | None = None,
) -> list[FailureRateRow]:
    """Failure rates per (ground truth, group) from a model ratio and, when
    given, the observed empirical ratio."""
    observed = observed or {}
    rows = []
    for key, table in tables.items():
        truth, group = key
        lo = rates(table, RateOption.CORRECT).rate(truth)
        hi = rates(table, RateOption.INCORRECT).rate(truth)
        est = ratios.get(key)
        if isinstance(est, RatioEstimate):
            point, lower, upper = est.point, est.lower, est.upper
        else:
            point, lower, upper = est, None, None
        obs = observed.get(key)
        rows.append(FailureRateRow(
            ground_truth=truth,
            group=group,
            obs_ratio=obs,
            model_ratio=point,
            lower=lower,
            upper=upper,
            inc_correct=None if lo is None else float(lo),
            inc_incorrect=None if hi is None else float(hi),
            obs_failure=_safe_failure(lo, hi, obs),
            model_failure=_safe_failure(lo, hi, point),
        ))
    return rows
