"""Latent-tendency model for conclusive vs inconclusive responses.

Examiner i answers item j conclusively with probability

    P(X_ij = 1) = 1 / (1 + exp(-(theta_i + zeta_j)))

with examiner tendencies ``theta_i ~ SkewNormal(0, omega, alpha)``, item
tendencies ``zeta_j ~ Normal(0, sigma_zeta)`` and hyperpriors
``sigma_zeta, omega ~ Half-t3`` and ``alpha ~ t3``.

Examiners may be split into groups that each get their own ``omega`` and
``alpha`` while sharing the item distribution.  With a single group this is
exactly the model above.

The unconstrained parameter vector used by the sampler and the gradient is
``[theta (I), zeta (J), log sigma_zeta, log omega (G), alpha (G)]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, gammaln, log_ndtr

from .study_data import (
    Conclusion,
    GroundTruth,
    Response,
    StudyDataset,
)

__all__ = [
    "ModelConfig",
    "Parameters",
    "SkewNormalMoments",
    "ResponseMatrix",
    "prob_conclusive",
    "skew_normal_logpdf",
    "skew_normal_moments",
    "skew_normal_sample",
    "normal_logpdf",
    "t3_logpdf",
    "half_t3_logpdf",
    "log_prior",
    "log_likelihood",
    "LogPosterior",
    "simulate_responses",
    "simulate_matrix",
]

LOG2 = math.log(2.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
T3_CONST = float(gammaln(2.0) - gammaln(1.5) - 0.5 * math.log(3.0 * math.pi))


@dataclass(frozen=True)
class ModelConfig:
    hyperprior_scale: float = 1.0
    seed: int = 0
    center_items: bool = True

    def __post_init__(self):
        if not self.hyperprior_scale > 0:
            raise ValueError("hyperprior_scale must be positive")


@dataclass(frozen=True)
class SkewNormalMoments:
    mean: float
    variance: float

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


# -- densities --------------------------------------------------------------


def prob_conclusive(theta, zeta):
    """Probability of a conclusive response; saturates smoothly to 0 and 1."""
    return expit(np.add(theta, zeta))


def normal_logpdf(x, sd):
    z = np.divide(x, sd)
    return -0.5 * z * z - np.log(sd) - HALF_LOG_2PI


def skew_normal_logpdf(x, omega, alpha):
    """log of ``2/omega * phi(x/omega) * Phi(alpha x / omega)`` (location 0)."""
    z = np.divide(x, omega)
    return LOG2 - np.log(omega) - 0.5 * z * z - HALF_LOG_2PI + log_ndtr(np.multiply(alpha, z))


def t3_logpdf(x, scale=1.0):
    y = np.divide(x, scale)
    return T3_CONST - 2.0 * np.log1p(y * y / 3.0) - np.log(scale)


def half_t3_logpdf(x, scale=1.0):
    """Student t3 truncated to the positive axis; ``-inf`` for ``x <= 0``."""
    x = np.asarray(x, dtype=float)
    out = LOG2 + t3_logpdf(np.where(x > 0, x, 1.0), scale)
    return np.where(x > 0, out, -np.inf)


def skew_normal_moments(omega: float, alpha: float) -> SkewNormalMoments:
    if not omega > 0:
        raise ValueError("omega must be positive")
    if math.isinf(alpha):
        delta = math.copysign(1.0, alpha)
    else:
        delta = alpha / math.sqrt(1.0 + alpha * alpha)
    mean = omega * math.sqrt(2.0 / math.pi) * delta
    variance = omega * omega * (1.0 - 2.0 * delta * delta / math.pi)
    return SkewNormalMoments(mean, variance)


def skew_normal_sd(omega, alpha):
    """Vectorised standard deviation of SkewNormal(0, omega, alpha)."""
    omega = np.asarray(omega, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    d2 = alpha * alpha / (1.0 + alpha * alpha)
    return omega * np.sqrt(1.0 - 2.0 * d2 / np.pi)


def skew_normal_sample(rng: np.random.Generator, omega, alpha, size=None):
    """Draw from SkewNormal(0, omega, alpha) via the half-normal
    representation ``delta |U| + sqrt(1 - delta^2) V``."""
    alpha = np.asarray(alpha, dtype=float)
    delta = alpha / np.sqrt(1.0 + alpha * alpha)
    if size is None:
        size = np.broadcast(np.asarray(omega), alpha).shape
    u = np.abs(rng.standard_normal(size))
    v = rng.standard_normal(size)
    return np.asarray(omega) * (delta * u + np.sqrt(1.0 - delta * delta) * v)


def _mills(z):
    """phi(z) / Phi(z), stable for large negative z."""
    return np.exp(-0.5 * z * z - HALF_LOG_2PI - log_ndtr(z))


# -- parameters -------------------------------------------------------------


@dataclass
class Parameters:
    """Model parameters with the rosters they refer to.

    ``omega`` and ``alpha`` hold one entry per examiner group;
    ``examiner_group[i]`` indexes into them.
    """

    theta: np.ndarray
    zeta: np.ndarray
    sigma_zeta: float
    omega: np.ndarray
    alpha: np.ndarray
    examiner_group: np.ndarray | None = None
    examiner_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None
    item_ground_truth: tuple[GroundTruth, ...] | None = None
    group_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.zeta = np.asarray(self.zeta, dtype=float).reshape(-1)
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.sigma_zeta = float(self.sigma_zeta)
        n_i, n_j, n_g = len(self.theta), len(self.zeta), len(self.omega)
        if self.examiner_group is None:
            self.examiner_group = np.zeros(n_i, dtype=int)
        self.examiner_group = np.asarray(self.examiner_group, dtype=int)
        if self.examiner_ids is None:
            self.examiner_ids = tuple(f"E{i + 1}" for i in range(n_i))
        if self.item_ids is None:
            self.item_ids = tuple(f"I{j + 1}" for j in range(n_j))
        if self.item_ground_truth is None:
            self.item_ground_truth = (GroundTruth.SAME_SOURCE,) * n_j
        self.item_ground_truth = tuple(GroundTruth(g) for g in self.item_ground_truth)
        if self.group_labels is None:
            self.group_labels = ("all",) if n_g == 1 else tuple(f"g{k}" for k in range(n_g))
        self.examiner_ids = tuple(self.examiner_ids)
        self.item_ids = tuple(self.item_ids)
        self.group_labels = tuple(self.group_labels)

        if len(self.alpha) != n_g or len(self.group_labels) != n_g:
            raise ValueError("omega, alpha and group_labels must have one entry per group")
        if len(self.examiner_group) != n_i or len(self.examiner_ids) != n_i:
            raise ValueError("examiner_group and examiner_ids must match theta")
        if len(self.item_ids) != n_j or len(self.item_ground_truth) != n_j:
            raise ValueError("item_ids and item_ground_truth must match zeta")
        if n_i and (self.examiner_group.min() < 0 or self.examiner_group.max() >= n_g):
            raise ValueError("examiner_group index out of range")

    @property
    def n_groups(self) -> int:
        return len(self.omega)

    def in_support(self) -> bool:
        return self.sigma_zeta > 0 and bool(np.all(self.omega > 0))

    def to_vector(self) -> np.ndarray:
        """Unconstrained layout; requires a point in the support."""
        return np.concatenate([
            self.theta, self.zeta, [math.log(self.sigma_zeta)], np.log(self.omega), self.alpha,
        ])

    def with_vector(self, vec) -> "Parameters":
        vec = np.asarray(vec, dtype=float)
        n_i, n_j, n_g = len(self.theta), len(self.zeta), self.n_groups
        o = n_i + n_j
        return Parameters(
            theta=vec[:n_i],
            zeta=vec[n_i:o],
            sigma_zeta=math.exp(vec[o]),
            omega=np.exp(vec[o + 1:o + 1 + n_g]),
            alpha=vec[o + 1 + n_g:o + 1 + 2 * n_g],
            examiner_group=self.examiner_group,
            examiner_ids=self.examiner_ids,
            item_ids=self.item_ids,
            item_ground_truth=self.item_ground_truth,
            group_labels=self.group_labels,
        )

    def to_json(self) -> dict:
        single = self.n_groups == 1
        out = {
            "theta": self.theta.tolist(),
            "zeta": self.zeta.tolist(),
            "sigma_zeta": self.sigma_zeta,
            "omega": float(self.omega[0]) if single else self.omega.tolist(),
            "alpha": float(self.alpha[0]) if single else self.alpha.tolist(),
            "examiner_ids": list(self.examiner_ids),
            "item_ids": list(self.item_ids),
            "item_ground_truth": [g.value for g in self.item_ground_truth],
        }
        if not single:
            out["group_labels"] = list(self.group_labels)
            out["examiner_group"] = self.examiner_group.tolist()
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "Parameters":
        try:
            return cls(
                theta=obj["theta"],
                zeta=obj["zeta"],
                sigma_zeta=obj["sigma_zeta"],
                omega=obj["omega"],
                alpha=obj["alpha"],
                examiner_group=obj.get("examiner_group"),
                examiner_ids=obj.get("examiner_ids"),
                item_ids=obj.get("item_ids"),
                item_ground_truth=obj.get("item_ground_truth"),
                group_labels=obj.get("group_labels"),
            )
        except KeyError as exc:
            raise ValueError(f"parameter file is missing {exc.args[0]!r}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Parameters":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# -- data -------------------------------------------------------------------


@dataclass(frozen=True)
class ResponseMatrix:
    """Dense conclusive indicators aligned to a parameter layout."""

    examiner_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    X: np.ndarray
    mask: np.ndarray
    item_ground_truth: tuple[GroundTruth, ...] = field(default=())

    @classmethod
    def from_dataset(
        cls,
        dataset: StudyDataset,
        examiner_ids: Sequence[str] | None = None,
        item_ids: Sequence[str] | None = None,
    ) -> "ResponseMatrix":
        ex, it, X, mask = dataset.conclusive_matrix()
        if examiner_ids is not None or item_ids is not None:
            examiner_ids = tuple(examiner_ids if examiner_ids is not None else ex)
            item_ids = tuple(item_ids if item_ids is not None else it)
            e_pos = {e: k for k, e in enumerate(examiner_ids)}
            i_pos = {i: k for k, i in enumerate(item_ids)}
            missing = [e for e in ex if e not in e_pos] + [i for i in it if i not in i_pos]
            if missing:
                raise KeyError(f"dataset ids not in parameter layout: {missing[:5]}")
            X2 = np.zeros((len(examiner_ids), len(item_ids)), dtype=np.int8)
            m2 = np.zeros(X2.shape, dtype=bool)
            rows = [e_pos[e] for e in ex]
            cols = [i_pos[i] for i in it]
            X2[np.ix_(rows, cols)] = X
            m2[np.ix_(rows, cols)] = mask
            X, mask, ex, it = X2, m2, examiner_ids, item_ids
        truth = tuple(dataset.items.get(i, GroundTruth.SAME_SOURCE) for i in it)
        return cls(tuple(ex), tuple(it), X, mask, truth)

    @property
    def n_responses(self) -> int:
        return int(self.mask.sum())


def _loglik_cells(eta, X, mask):
    # X log(pi) + (1 - X) log(1 - pi) == X eta - log(1 + exp(eta))
    return np.where(mask, X * eta - np.logaddexp(0.0, eta), 0.0)


def log_likelihood(params: Parameters, data: StudyDataset | ResponseMatrix) -> float:
    """Bernoulli log-likelihood of every observed (examiner, item) response."""
    if isinstance(data, StudyDataset):
        data = ResponseMatrix.from_dataset(data, params.examiner_ids, params.item_ids)
    eta = params.theta[:, None] + params.zeta[None, :]
    return float(_loglik_cells(eta, data.X, data.mask).sum())


def log_prior(params: Parameters, config: ModelConfig = ModelConfig()) -> float:
    if not params.in_support():
        return -math.inf
    s = config.hyperprior_scale
    g = params.examiner_group
    lp = float(np.sum(skew_normal_logpdf(params.theta, params.omega[g], params.alpha[g])))
    lp += float(np.sum(normal_logpdf(params.zeta, params.sigma_zeta)))
    lp += float(half_t3_logpdf(params.sigma_zeta, s))
    lp += float(np.sum(half_t3_logpdf(params.omega, s)))
    lp += float(np.sum(t3_logpdf(params.alpha, s)))
    return lp


class LogPosterior:
    """Unnormalised log posterior on the unconstrained vector, with gradient.

    Includes the log-Jacobian of the ``log sigma_zeta`` and ``log omega``
    transforms.
    """

    def __init__(self, template: Parameters, data: ResponseMatrix, config: ModelConfig = ModelConfig()):
        if data.X.shape != (len(template.theta), len(template.zeta)):
            raise ValueError("data matrix does not match the parameter layout")
        self.template = template
        self.config = config
        self.X = data.X.astype(float)
        self.mask = data.mask
        self.n_i, self.n_j = data.X.shape
        self.n_g = template.n_groups
        self.group = template.examiner_group

    @property
    def dim(self) -> int:
        return self.n_i + self.n_j + 1 + 2 * self.n_g

    def split(self, vec):
        vec = np.asarray(vec, dtype=float)
        i, j, g = self.n_i, self.n_j, self.n_g
        o = i + j
        return vec[:i], vec[i:o], vec[o], vec[o + 1:o + 1 + g], vec[o + 1 + g:o + 1 + 2 * g]

    def __call__(self, vec) -> float:
        theta, zeta, log_sz, log_om, alpha = self.split(vec)
        p = self.template.with_vector(vec)
        eta = theta[:, None] + zeta[None, :]
        ll = float(_loglik_cells(eta, self.X, self.mask).sum())
        return ll + log_prior(p, self.config) + log_sz + float(np.sum(log_om))

    def grad(self, vec) -> np.ndarray:
        theta, zeta, log_sz, log_om, alpha = self.split(vec)
        s = self.config.hyperprior_scale
        sz = math.exp(log_sz)
        om = np.exp(log_om)
        g = self.group

        eta = theta[:, None] + zeta[None, :]
        resid = np.where(self.mask, self.X - expit(eta), 0.0)
        d_theta = resid.sum(axis=1)
        d_zeta = resid.sum(axis=0)

        # skew-normal block
        om_i, al_i = om[g], alpha[g]
        z = theta / om_i
        m = _mills(al_i * z)
        d_theta += -z / om_i + al_i / om_i * m
        d_om_i = -1.0 / om_i + z * z / om_i - al_i * z / om_i * m
        d_al_i = z * m
        d_log_om = np.bincount(g, weights=d_om_i * om_i, minlength=self.n_g)
        d_alpha = np.bincount(g, weights=d_al_i, minlength=self.n_g)

        # item block
        d_zeta += -zeta / sz**2
        d_sz = float(np.sum(-1.0 / sz + zeta**2 / sz**3))

        # hyperpriors and Jacobian
        d_sz += -4.0 * sz / (3.0 * s * s + sz * sz)
        d_log_sz = d_sz * sz + 1.0
        d_log_om += -4.0 * om * om / (3.0 * s * s + om * om) + 1.0
        d_alpha += -4.0 * alpha / (3.0 * s * s + alpha * alpha)

        return np.concatenate([d_theta, d_zeta, [d_log_sz], d_log_om, d_alpha])


# -- simulation -------------------------------------------------------------


def simulate_matrix(theta, zeta, mask, rng: np.random.Generator) -> np.ndarray:
    """Conclusive indicators for every cell of ``mask`` (0 off-mask)."""
    pi = prob_conclusive(np.asarray(theta)[:, None], np.asarray(zeta)[None, :])
    u = rng.random(pi.shape)
    return ((u < pi) & mask).astype(np.int8)


def simulate_responses(
    params: Parameters,
    assignment: Mapping[str, Sequence[str]] | None = None,
    seed: int = 0,
) -> StudyDataset:
    """Draw one synthetic study.

    ``assignment`` maps examiner ids to the item ids they answer (default:
    every examiner answers every item).  Conclusive responses are labelled
    Identification on same-source items and Exclusion on different-source
    items, so simulated studies contain no conclusive errors.
    """
    e_pos = {e: k for k, e in enumerate(params.examiner_ids)}
    i_pos = {i: k for k, i in enumerate(params.item_ids)}
    mask = np.zeros((len(e_pos), len(i_pos)), dtype=bool)
    if assignment is None:
        mask[:] = True
    else:
        for e, items in assignment.items():
            if e not in e_pos:
                raise KeyError(f"examiner {e!r} not in parameters")
            for it in items:
                if it not in i_pos:
                    raise KeyError(f"item {it!r} not in parameters")
                mask[e_pos[e], i_pos[it]] = True
    rng = np.random.default_rng(seed)
    X = simulate_matrix(params.theta, params.zeta, mask, rng)

    responses = []
    for i, e in enumerate(params.examiner_ids):
        for j in np.flatnonzero(mask[i]):
            truth = params.item_ground_truth[j]
            if X[i, j]:
                cat = Conclusion.IDENTIFICATION if truth is GroundTruth.SAME_SOURCE else Conclusion.EXCLUSION
            else:
                cat = Conclusion.INCONCLUSIVE
            responses.append(Response(
                examiner_id=e,
                item_id=params.item_ids[j],
                ground_truth=truth,
                raw_conclusion=cat.value,
                canonical=cat,
                sequence=len(responses),
            ))
    return StudyDataset.from_responses(responses)
