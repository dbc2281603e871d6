"""Adaptive Metropolis-within-Gibbs sampler for the latent-tendency model.

Each iteration updates, in order:

* every examiner tendency (coordinate-wise random walk; the coordinates are
  conditionally independent given the items, so they are proposed and
  accepted in one vectorised step),
* every item tendency, likewise,
* a joint translation ``theta + c, zeta - c`` which leaves the likelihood
  unchanged and moves along the weakly identified direction,
* joint rescalings of each tendency block together with its scale
  hyperparameter, which cross the funnel between the two,
* ``log sigma_zeta``, and ``log omega`` and ``alpha`` for each examiner group.

Proposal scales are tuned during warmup by a Robbins-Monro recursion
towards 44% acceptance and frozen afterwards.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .latent_model import (
    ModelConfig,
    Parameters,
    ResponseMatrix,
    _loglik_cells,
    half_t3_logpdf,
    normal_logpdf,
    skew_normal_logpdf,
    t3_logpdf,
)
from .study_data import GroundTruth, StudyDataError, StudyDataset

log = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "PosteriorDraws",
    "NonConvergenceWarning",
    "fit",
    "split_rhat",
    "ess",
    "diagnostics",
    "summarize",
    "chain_seed",
    "RHAT_WARNING",
    "metropolis_within_gibbs",
    "robbins_monro",
]

RHAT_WARNING = 1.05
TARGET_ACCEPT = 0.44
INIT_SD = 2.0
INIT_HYPER_RANGE = (0.1, 10.0)


class NonConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 5000
    warmup: int = 2500
    seed: int = 0
    target_accept: float = TARGET_ACCEPT
    step_bounds: tuple[float, float] = (1e-4, 20.0)
    progress: bool = False

    def __post_init__(self):
        if self.chains < 1 or self.iterations < 1:
            raise ValueError("chains and iterations must be positive")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("need 0 <= warmup < iterations")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        lo, hi = self.step_bounds
        if not 0 < lo < hi:
            raise ValueError("step_bounds must satisfy 0 < low < high")

    @property
    def retained(self) -> int:
        return self.iterations - self.warmup


def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    """Independent stream for ``chain`` derived from the run seed."""
    return np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, chain])


def _threads(n_tasks: int) -> int:
    env = os.environ.get("BBR_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer BBR_THREADS=%r", env)
    return max(1, min(cap, n_tasks))


# -- draws container --------------------------------------------------------

DRAWS_MAGIC = b"BBRDRAWS"
DRAWS_VERSION = 1


@dataclass
class PosteriorDraws:
    """Retained draws, shape ``(chains, iterations - warmup, parameters)``,
    stored on the unconstrained scale."""

    draws: np.ndarray
    parameter_names: tuple[str, ...]
    examiner_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    group_labels: tuple[str, ...]
    examiner_group: np.ndarray
    item_ground_truth: tuple[GroundTruth, ...]
    warmup: int = 0
    acceptance: dict[str, list[float]] = field(default_factory=dict)
    center_items: bool = True
    diagnostics: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        self.examiner_group = np.asarray(self.examiner_group, dtype=int)
        self.item_ground_truth = tuple(GroundTruth(g) for g in self.item_ground_truth)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.parameter_names):
            raise ValueError("draws must be (chains, iterations, parameters)")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_retained(self) -> int:
        return self.draws.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    def _slices(self):
        i, j, g = len(self.examiner_ids), len(self.item_ids), self.n_groups
        o = i + j
        return slice(0, i), slice(i, o), o, slice(o + 1, o + 1 + g), slice(o + 1 + g, o + 1 + 2 * g)

    def _pooled(self):
        return self.draws.reshape(-1, self.draws.shape[2])

    # constrained views over pooled draws (chain-major order)
    def theta(self, centered: bool | None = None) -> np.ndarray:
        th, ze, *_ = self._slices()
        out = self._pooled()[:, th]
        if centered if centered is not None else self.center_items:
            out = out + self._pooled()[:, ze].mean(axis=1, keepdims=True)
        return out

    def zeta(self, centered: bool | None = None) -> np.ndarray:
        _, ze, *_ = self._slices()
        out = self._pooled()[:, ze]
        if centered if centered is not None else self.center_items:
            out = out - out.mean(axis=1, keepdims=True)
        return out

    def sigma_zeta(self) -> np.ndarray:
        return np.exp(self._pooled()[:, self._slices()[2]])

    def omega(self) -> np.ndarray:
        return np.exp(self._pooled()[:, self._slices()[3]])

    def alpha(self) -> np.ndarray:
        return self._pooled()[:, self._slices()[4]]

    def constrained(self) -> tuple[np.ndarray, tuple[str, ...]]:
        """``(chains, iterations, parameters)`` on the natural scale."""
        out = self.draws.copy()
        names = list(self.parameter_names)
        for k, name in enumerate(names):
            if name.startswith("log_"):
                out[:, :, k] = np.exp(out[:, :, k])
                names[k] = name[4:]
        return out, tuple(names)

    def parameters_at(self, index: int) -> Parameters:
        """Parameters of pooled draw ``index`` (raw, uncentred)."""
        tmpl = self.template()
        return tmpl.with_vector(self._pooled()[index])

    def template(self) -> Parameters:
        return Parameters(
            theta=np.zeros(len(self.examiner_ids)),
            zeta=np.zeros(len(self.item_ids)),
            sigma_zeta=1.0,
            omega=np.ones(self.n_groups),
            alpha=np.zeros(self.n_groups),
            examiner_group=self.examiner_group,
            examiner_ids=self.examiner_ids,
            item_ids=self.item_ids,
            item_ground_truth=self.item_ground_truth,
            group_labels=self.group_labels,
        )

    # -- persistence ----------------------------------------------------------

    def _meta(self) -> dict:
        return {
            "parameter_names": list(self.parameter_names),
            "examiner_ids": list(self.examiner_ids),
            "item_ids": list(self.item_ids),
            "group_labels": list(self.group_labels),
            "examiner_group": self.examiner_group.tolist(),
            "item_ground_truth": [g.value for g in self.item_ground_truth],
            "warmup": self.warmup,
            "shape": list(self.draws.shape),
            "acceptance": self.acceptance,
            "center_items": self.center_items,
        }

    @classmethod
    def _from_meta(cls, meta: dict, draws: np.ndarray) -> "PosteriorDraws":
        out = cls(
            draws=draws,
            parameter_names=tuple(meta["parameter_names"]),
            examiner_ids=tuple(meta["examiner_ids"]),
            item_ids=tuple(meta["item_ids"]),
            group_labels=tuple(meta["group_labels"]),
            examiner_group=np.asarray(meta["examiner_group"], dtype=int),
            item_ground_truth=tuple(meta["item_ground_truth"]),
            warmup=int(meta["warmup"]),
            acceptance=meta.get("acceptance", {}),
            center_items=bool(meta.get("center_items", True)),
        )
        out.diagnostics = diagnostics(out)
        return out

    def to_csv(self, path: str | Path) -> None:
        """Long format ``chain,iteration,parameter,value``.

        Two leading ``#`` lines carry a format tag and the roster metadata as
        JSON.  ``iteration`` counts from the start of the chain, so the first
        retained row has ``iteration == warmup``.  Values use the shortest
        repr that round-trips exactly.
        """
        c, n, p = self.draws.shape
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# bbr-draws v{DRAWS_VERSION}\n")
            fh.write("# " + json.dumps(self._meta(), sort_keys=True) + "\n")
            fh.write("chain,iteration,parameter,value\n")
            for ch in range(c):
                for t in range(n):
                    it = self.warmup + t
                    row = self.draws[ch, t]
                    fh.writelines(
                        f"{ch},{it},{name},{float(v)!r}\n"
                        for name, v in zip(self.parameter_names, row)
                    )

    @classmethod
    def from_csv(cls, path: str | Path) -> "PosteriorDraws":
        with open(path, encoding="utf-8") as fh:
            tag = fh.readline()
            if not tag.startswith("# bbr-draws"):
                raise ValueError(f"{path} is not a bbr draws file")
            meta = json.loads(fh.readline()[2:])
            header = fh.readline().strip()
            if header != "chain,iteration,parameter,value":
                raise ValueError(f"unexpected header {header!r}")
            c, n, p = meta["shape"]
            pos = {name: k for k, name in enumerate(meta["parameter_names"])}
            draws = np.empty((c, n, p))
            warmup = int(meta["warmup"])
            for line in fh:
                ch, it, name, val = line.rstrip("\n").split(",")
                draws[int(ch), int(it) - warmup, pos[name]] = float(val)
        return cls._from_meta(meta, draws)

    def to_binary(self, path: str | Path) -> None:
        """Magic, version, JSON header, then little-endian float64 draws."""
        header = json.dumps(self._meta(), sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(DRAWS_MAGIC)
            fh.write(struct.pack("<HI", DRAWS_VERSION, len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.draws, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path: str | Path) -> "PosteriorDraws":
        data = Path(path).read_bytes()
        if data[:8] != DRAWS_MAGIC:
            raise ValueError(f"{path} is not a bbr binary draws file")
        version, hlen = struct.unpack("<HI", data[8:14])
        if version != DRAWS_VERSION:
            raise ValueError(f"unsupported draws version {version}")
        meta = json.loads(data[14:14 + hlen].decode("utf-8"))
        draws = np.frombuffer(data[14 + hlen:], dtype="<f8").reshape(meta["shape"]).astype(float)
        return cls._from_meta(meta, draws)


# -- diagnostics ------------------------------------------------------------


def _split(x: np.ndarray) -> np.ndarray:
    """(chains, n) -> (2 chains, n // 2), dropping a middle draw if n is odd."""
    c, n = x.shape
    h = n // 2
    return np.concatenate([x[:, :h], x[:, n - h:]], axis=0)


def split_rhat(x: np.ndarray) -> float:
    """Classic split R-hat for one parameter, ``x`` shaped (chains, n).

    Returns ``inf`` when chains are internally constant but disagree, and
    ``nan`` when there is too little data.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    s = _split(x)
    m, n = s.shape
    if m < 2 or n < 2:
        return math.nan
    means = s.mean(axis=1)
    W = float(np.mean(s.var(axis=1, ddof=1)))
    B_over_n = float(np.var(means, ddof=1))
    if W <= 0:
        return math.inf if B_over_n > 0 else math.nan
    var_plus = (n - 1) / n * W + B_over_n
    return math.sqrt(var_plus / W)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    xc = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=-1)
    ac = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return ac / n


def ess(x: np.ndarray) -> float:
    """Effective sample size over split chains.

    Autocorrelations are combined across chains and summed in consecutive
    pairs up to the first negative pair (Geyer's initial positive sequence),
    with the pair sums forced non-increasing.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    s = _split(x)
    m, n = s.shape
    if n < 4:
        return math.nan
    acov = _autocov(s)
    W = float(np.mean(acov[:, 0] * n / (n - 1)))
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(s.mean(axis=1), ddof=1))
    if var_plus <= 0:
        return math.nan
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    prev = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    tau = max(tau, 1.0 / math.log10(m * n))
    return m * n / tau


def diagnostics(draws: PosteriorDraws) -> dict[str, dict[str, float]]:
    out = {}
    for k, name in enumerate(draws.parameter_names):
        x = draws.draws[:, :, k]
        out[name] = {"split_rhat": split_rhat(x), "ess_bulk": ess(x)}
    return out


def summarize(
    draws: PosteriorDraws, level: float = 0.95, centered: bool | None = None
) -> dict[str, dict[str, float]]:
    """Mean, sd and equal-tailed interval of each natural-scale parameter
    over the pooled retained draws."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    cols = {}
    for e, v in zip(draws.examiner_ids, draws.theta(centered).T):
        cols[f"theta[{e}]"] = v
    for i, v in zip(draws.item_ids, draws.zeta(centered).T):
        cols[f"zeta[{i}]"] = v
    cols["sigma_zeta"] = draws.sigma_zeta()
    for label, om, al in zip(draws.group_labels, draws.omega().T, draws.alpha().T):
        suffix = "" if draws.n_groups == 1 else f"[{label}]"
        cols[f"omega{suffix}"] = om
        cols[f"alpha{suffix}"] = al
    out = {}
    for name, v in cols.items():
        lo, hi = np.quantile(v, [lo_q, hi_q])
        out[name] = {
            "mean": float(np.mean(v)),
            "sd": float(np.std(v, ddof=1)) if v.size > 1 else 0.0,
            "lower": float(lo),
            "upper": float(hi),
        }
    return out


# -- kernel -----------------------------------------------------------------


def robbins_monro(log_step, accepted, t: int, target: float, log_bounds) -> np.ndarray:
    """One adaptation step on log proposal scales towards ``target`` acceptance."""
    gamma = min(1.0, 2.0 * (t + 1) ** -0.6)
    lo, hi = log_bounds
    return np.clip(log_step + gamma * (np.asarray(accepted, dtype=float) - target), lo, hi)


def metropolis_within_gibbs(
    log_density,
    x0: Sequence[float],
    config: SamplerConfig = SamplerConfig(chains=1),
) -> tuple[np.ndarray, np.ndarray]:
    """Generic coordinate-wise random-walk sampler with the same adaptation.

    Runs a single chain on an arbitrary ``log_density`` and returns the
    retained draws ``(retained, dim)`` and per-coordinate acceptance rates.
    Useful for checking the accept rule and warmup adaptation on targets
    with known moments.
    """
    rng = np.random.default_rng(chain_seed(config.seed, 0))
    x = np.array(x0, dtype=float)
    cur = float(log_density(x))
    log_step = np.zeros(x.size)
    bounds = (math.log(config.step_bounds[0]), math.log(config.step_bounds[1]))
    out = np.empty((config.retained, x.size))
    accepts = np.zeros(x.size)
    for t in range(config.iterations):
        acc = np.zeros(x.size, dtype=bool)
        for k in range(x.size):
            prop = x.copy()
            prop[k] += math.exp(log_step[k]) * rng.standard_normal()
            new = float(log_density(prop))
            if np.log(rng.random()) < new - cur:
                x, cur, acc[k] = prop, new, True
        if t < config.warmup:
            log_step = robbins_monro(log_step, acc, t, config.target_accept, bounds)
        else:
            out[t - config.warmup] = x
            accepts += acc
    return out, accepts / config.retained



class _Chain:
    """State and adaptation for one chain."""

    def __init__(self, data: ResponseMatrix, group: np.ndarray, n_groups: int,
                 model: ModelConfig, cfg: SamplerConfig, rng: np.random.Generator):
        self.X = data.X.astype(float)
        self.mask = data.mask
        self.group = group
        self.G = n_groups
        self.s = model.hyperprior_scale
        self.cfg = cfg
        self.rng = rng
        n_i, n_j = self.X.shape
        self.members = [np.flatnonzero(group == g) for g in range(n_groups)]

        # over-dispersed start
        self.theta = rng.normal(0.0, INIT_SD, n_i)
        self.zeta = rng.normal(0.0, INIT_SD, n_j)
        self.log_sz = math.log(self._draw_half_t3())
        self.log_om = np.log([self._draw_half_t3() for _ in range(n_groups)])
        self.alpha = np.array([self._draw_t3() for _ in range(n_groups)])

        self.eta = self.theta[:, None] + self.zeta[None, :]
        self.L = _loglik_cells(self.eta, self.X, self.mask)

        lo, hi = cfg.step_bounds
        self.log_step_bounds = (math.log(lo), math.log(hi))
        self.step = {
            "theta": np.zeros(n_i),
            "zeta": np.zeros(n_j),
            "shift": np.zeros(1),
            "zeta_scale": np.full(1, -2.0),
            "theta_scale": np.full(n_groups, -2.0),
            "log_sigma_zeta": np.zeros(1),
            "log_omega": np.zeros(n_groups),
            "alpha": np.zeros(n_groups),
        }
        self.accepts = {k: np.zeros_like(v) for k, v in self.step.items()}
        self.tries = 0

    def _draw_half_t3(self) -> float:
        lo, hi = INIT_HYPER_RANGE
        while True:
            x = abs(self.rng.standard_t(3)) * self.s
            if lo <= x <= hi:
                return x

    def _draw_t3(self) -> float:
        lo, hi = INIT_HYPER_RANGE
        while True:
            x = self.rng.standard_t(3) * self.s
            if abs(x) <= hi:
                return x

    def _theta_prior(self, theta, log_om=None, alpha=None):
        log_om = self.log_om if log_om is None else log_om
        alpha = self.alpha if alpha is None else alpha
        g = self.group
        return skew_normal_logpdf(theta, np.exp(log_om)[g], alpha[g])

    def _mh(self, log_ratio):
        u = self.rng.random(np.shape(log_ratio))
        return np.log(u) < log_ratio

    def step_once(self):
        rng = self.rng
        steps = {k: np.exp(v) for k, v in self.step.items()}
        acc = {}
        sz = math.exp(self.log_sz)

        # examiner tendencies
        d = steps["theta"] * rng.standard_normal(self.theta.shape)
        prop = self.theta + d
        eta_p = self.eta + d[:, None]
        L_p = _loglik_cells(eta_p, self.X, self.mask)
        lr = (L_p.sum(axis=1) - self.L.sum(axis=1)
              + self._theta_prior(prop) - self._theta_prior(self.theta))
        a = self._mh(lr)
        self.theta = np.where(a, prop, self.theta)
        self.eta = np.where(a[:, None], eta_p, self.eta)
        self.L = np.where(a[:, None], L_p, self.L)
        acc["theta"] = a

        # item tendencies
        d = steps["zeta"] * rng.standard_normal(self.zeta.shape)
        prop = self.zeta + d
        eta_p = self.eta + d[None, :]
        L_p = _loglik_cells(eta_p, self.X, self.mask)
        lr = (L_p.sum(axis=0) - self.L.sum(axis=0)
              + normal_logpdf(prop, sz) - normal_logpdf(self.zeta, sz))
        a = self._mh(lr)
        self.zeta = np.where(a, prop, self.zeta)
        self.eta = np.where(a[None, :], eta_p, self.eta)
        self.L = np.where(a[None, :], L_p, self.L)
        acc["zeta"] = a

        # translation along theta + c, zeta - c (likelihood unchanged)
        c = steps["shift"][0] * rng.standard_normal()
        th_p, ze_p = self.theta + c, self.zeta - c
        lr = (np.sum(self._theta_prior(th_p)) - np.sum(self._theta_prior(self.theta))
              + np.sum(normal_logpdf(ze_p, sz)) - np.sum(normal_logpdf(self.zeta, sz)))
        a = self._mh(lr)
        if a:
            self.theta, self.zeta = th_p, ze_p
        acc["shift"] = np.atleast_1d(a)

        # rescale items with sigma_zeta
        c = steps["zeta_scale"][0] * rng.standard_normal()
        ze_p = self.zeta * math.exp(c)
        sp = sz * math.exp(c)
        eta_p = self.eta + (ze_p - self.zeta)[None, :]
        L_p = _loglik_cells(eta_p, self.X, self.mask)
        lr = (L_p.sum() - self.L.sum()
              + np.sum(normal_logpdf(ze_p, sp)) - np.sum(normal_logpdf(self.zeta, sz))
              + half_t3_logpdf(sp, self.s) - half_t3_logpdf(sz, self.s)
              + c * (len(self.zeta) + 1))
        a = self._mh(lr)
        if a:
            self.zeta, self.eta, self.L = ze_p, eta_p, L_p
            self.log_sz += c
            sz = sp
        acc["zeta_scale"] = np.atleast_1d(a)

        # rescale each examiner group with its omega
        acc_sc = np.zeros(self.G, dtype=bool)
        for g, idx in enumerate(self.members):
            c = steps["theta_scale"][g] * rng.standard_normal()
            om = math.exp(self.log_om[g])
            op = om * math.exp(c)
            al = self.alpha[g]
            th = self.theta[idx]
            th_p = th * math.exp(c)
            d = np.zeros_like(self.theta)
            d[idx] = th_p - th
            eta_p = self.eta + d[:, None]
            L_p = _loglik_cells(eta_p, self.X, self.mask)
            lr = (L_p.sum() - self.L.sum()
                  + np.sum(skew_normal_logpdf(th_p, op, al)) - np.sum(skew_normal_logpdf(th, om, al))
                  + half_t3_logpdf(op, self.s) - half_t3_logpdf(om, self.s)
                  + c * (len(idx) + 1))
            if self._mh(lr):
                self.theta = self.theta + d
                self.eta, self.L = eta_p, L_p
                self.log_om[g] += c
                acc_sc[g] = True
        acc["theta_scale"] = acc_sc

        # item scale
        prop = self.log_sz + steps["log_sigma_zeta"][0] * rng.standard_normal()
        sp = math.exp(prop)
        lr = (np.sum(normal_logpdf(self.zeta, sp)) - np.sum(normal_logpdf(self.zeta, sz))
              + half_t3_logpdf(sp, self.s) - half_t3_logpdf(sz, self.s)
              + prop - self.log_sz)
        a = self._mh(lr)
        if a:
            self.log_sz = prop
        acc["log_sigma_zeta"] = np.atleast_1d(a)

        # examiner hyperparameters, one group at a time
        acc_om = np.zeros(self.G, dtype=bool)
        acc_al = np.zeros(self.G, dtype=bool)
        for g, idx in enumerate(self.members):
            th = self.theta[idx]
            om, al = math.exp(self.log_om[g]), self.alpha[g]
            cur = float(np.sum(skew_normal_logpdf(th, om, al)))

            lp = self.log_om[g] + steps["log_omega"][g] * rng.standard_normal()
            op = math.exp(lp)
            new = float(np.sum(skew_normal_logpdf(th, op, al)))
            lr = new - cur + half_t3_logpdf(op, self.s) - half_t3_logpdf(om, self.s) + lp - self.log_om[g]
            if self._mh(lr):
                self.log_om[g], om, cur = lp, op, new
                acc_om[g] = True

            ap = al + steps["alpha"][g] * rng.standard_normal()
            new = float(np.sum(skew_normal_logpdf(th, om, ap)))
            lr = new - cur + t3_logpdf(ap, self.s) - t3_logpdf(al, self.s)
            if self._mh(lr):
                self.alpha[g] = ap
                acc_al[g] = True
        acc["log_omega"] = acc_om
        acc["alpha"] = acc_al
        return acc

    def adapt(self, acc, t: int):
        for k, a in acc.items():
            self.step[k] = robbins_monro(self.step[k], a, t, self.cfg.target_accept, self.log_step_bounds)

    def state(self) -> np.ndarray:
        return np.concatenate([self.theta, self.zeta, [self.log_sz], self.log_om, self.alpha])


def _run_chain(chain: int, data, group, n_groups, model, cfg) -> tuple[np.ndarray, dict]:
    rng = np.random.default_rng(chain_seed(cfg.seed, chain))
    st = _Chain(data, group, n_groups, model, cfg, rng)
    out = np.empty((cfg.retained, st.state().size))
    totals = {k: np.zeros_like(v) for k, v in st.step.items()}
    tick = max(1, cfg.iterations // 10)
    for t in range(cfg.iterations):
        acc = st.step_once()
        if t < cfg.warmup:
            st.adapt(acc, t)
        else:
            out[t - cfg.warmup] = st.state()
            for k, a in acc.items():
                totals[k] += a
        if cfg.progress and (t + 1) % tick == 0:
            log.info("chain %d: iteration %d/%d", chain, t + 1, cfg.iterations)
    acceptance = {k: float(np.mean(v) / cfg.retained) for k, v in totals.items()}
    return out, acceptance


def fit(
    dataset: StudyDataset | ResponseMatrix,
    model_config: ModelConfig = ModelConfig(),
    sampler_config: SamplerConfig = SamplerConfig(),
    groups: Mapping[str, object] | None = None,
) -> PosteriorDraws:
    """Sample the posterior of the latent-tendency model.

    ``groups`` optionally maps examiner ids to a group label; each group gets
    its own ``omega`` and ``alpha``.  Chains run in up to ``BBR_THREADS``
    threads and are individually deterministic given the seed.
    """
    data = dataset if isinstance(dataset, ResponseMatrix) else ResponseMatrix.from_dataset(dataset)
    n_i, n_j = data.X.shape
    if n_i < 2 or n_j < 2:
        raise StudyDataError("fitting needs at least two examiners and two items")

    if groups is None:
        labels = ("all",)
        group = np.zeros(n_i, dtype=int)
    else:
        labels = tuple(sorted({str(groups[e]) for e in data.examiner_ids}))
        pos = {g: k for k, g in enumerate(labels)}
        group = np.array([pos[str(groups[e])] for e in data.examiner_ids], dtype=int)

    _log_degenerate(data)

    def run(ch):
        return _run_chain(ch, data, group, len(labels), model_config, sampler_config)

    n_threads = _threads(sampler_config.chains)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(run, range(sampler_config.chains)))
    else:
        results = [run(ch) for ch in range(sampler_config.chains)]

    suffix = [""] if len(labels) == 1 else [f"[{g}]" for g in labels]
    names = (
        [f"theta[{e}]" for e in data.examiner_ids]
        + [f"zeta[{i}]" for i in data.item_ids]
        + ["log_sigma_zeta"]
        + [f"log_omega{s}" for s in suffix]
        + [f"alpha{s}" for s in suffix]
    )
    acceptance = {k: [r[1][k] for r in results] for k in results[0][1]}
    draws = PosteriorDraws(
        draws=np.stack([r[0] for r in results]),
        parameter_names=tuple(names),
        examiner_ids=data.examiner_ids,
        item_ids=data.item_ids,
        group_labels=labels,
        examiner_group=group,
        item_ground_truth=data.item_ground_truth or (GroundTruth.SAME_SOURCE,) * n_j,
        warmup=sampler_config.warmup,
        acceptance=acceptance,
        center_items=model_config.center_items,
    )
    draws.diagnostics = diagnostics(draws)
    bad = [n for n, d in draws.diagnostics.items() if d["split_rhat"] > RHAT_WARNING]
    if bad:
        warnings.warn(
            f"{len(bad)} parameters have split R-hat > {RHAT_WARNING} (e.g. {bad[0]})",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return draws


def _log_degenerate(data: ResponseMatrix) -> None:
    m = data.mask
    conc = np.where(m, data.X, 0).sum(axis=1)
    n = m.sum(axis=1)
    rows = int(np.sum((conc == 0) | (conc == n)))
    conc_j = np.where(m, data.X, 0).sum(axis=0)
    n_j = m.sum(axis=0)
    cols = int(np.sum((conc_j == 0) | (conc_j == n_j)))
    if rows or cols:
        log.info(
            "%d examiners and %d items have all-identical responses; the priors regularise them",
            rows, cols,
        )
