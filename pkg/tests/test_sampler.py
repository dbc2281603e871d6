import math

import numpy as np
import pytest
from conftest import dataset_from_matrix
from scipy import stats

from bbr.latent_model import ModelConfig, Parameters, ResponseMatrix, simulate_responses
from bbr.sampler import (
    NonConvergenceWarning,
    PosteriorDraws,
    SamplerConfig,
    ess,
    fit,
    metropolis_within_gibbs,
    split_rhat,
    summarize,
)
from bbr.study_data import GroundTruth, StudyDataError

NAMES = ("theta[E1]", "theta[E2]", "zeta[I1]", "zeta[I2]", "log_sigma_zeta", "log_omega", "alpha")


def _draws(arr):
    return PosteriorDraws(
        draws=arr, parameter_names=NAMES, examiner_ids=("E1", "E2"), item_ids=("I1", "I2"),
        group_labels=("all",), examiner_group=[0, 0], item_ground_truth=("SS", "SS"),
    )


@pytest.fixture(scope="module")
def small_study():
    rng = np.random.default_rng(5)
    p = Parameters(rng.normal(0.5, 1.0, 8), rng.normal(0, 1.0, 10), 1.0, [1.0], [0.0])
    return simulate_responses(p, seed=6)


@pytest.fixture(scope="module")
def small_fit(small_study):
    cfg = SamplerConfig(chains=2, iterations=300, warmup=150, seed=42)
    return fit(small_study, ModelConfig(), cfg)


# -- configuration ----------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(warmup=10, iterations=10), dict(chains=0),
                                dict(target_accept=1.0), dict(step_bounds=(1.0, 0.5))])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SamplerConfig(**kw)


def test_fit_needs_two_by_two():
    with pytest.raises(StudyDataError):
        fit(dataset_from_matrix([[1, 0, 1]]), ModelConfig(), SamplerConfig(chains=1, iterations=2, warmup=1))


# -- bookkeeping and determinism -------------------------------------------


def test_single_retained_draw(small_study):
    d = fit(small_study, ModelConfig(), SamplerConfig(chains=1, iterations=11, warmup=10))
    assert d.draws.shape == (1, 1, 8 + 10 + 3)
    assert all(v["lower"] == v["mean"] == v["upper"] for v in summarize(d).values())
    assert d.n_retained == 1


def test_retained_count_and_names(small_fit):
    assert small_fit.draws.shape == (2, 150, 21)
    assert small_fit.parameter_names[-3:] == ("log_sigma_zeta", "log_omega", "alpha")
    assert small_fit.warmup == 150


def test_bit_identical_reruns(small_study, small_fit):
    cfg = SamplerConfig(chains=2, iterations=300, warmup=150, seed=42)
    again = fit(small_study, ModelConfig(), cfg)
    assert np.array_equal(again.draws, small_fit.draws)


def test_thread_count_does_not_change_draws(small_study, small_fit, monkeypatch):
    monkeypatch.setenv("BBR_THREADS", "1")
    serial = fit(small_study, ModelConfig(), SamplerConfig(chains=2, iterations=300, warmup=150, seed=42))
    assert np.array_equal(serial.draws, small_fit.draws)


def test_prefix_extension(small_study):
    short = fit(small_study, ModelConfig(), SamplerConfig(chains=1, iterations=120, warmup=50, seed=7))
    long = fit(small_study, ModelConfig(), SamplerConfig(chains=1, iterations=200, warmup=50, seed=7))
    assert np.array_equal(long.draws[:, :70], short.draws)


def test_seed_changes_draws(small_study, small_fit):
    other = fit(small_study, ModelConfig(), SamplerConfig(chains=2, iterations=300, warmup=150, seed=43))
    assert not np.array_equal(other.draws, small_fit.draws)


def test_positive_scales(small_fit):
    assert np.all(small_fit.sigma_zeta() > 0) and np.all(small_fit.omega() > 0)
    nat, names = small_fit.constrained()
    assert "sigma_zeta" in names and "omega" in names
    assert np.all(nat[:, :, names.index("sigma_zeta")] > 0)


def test_centering(small_fit):
    z = small_fit.zeta()
    assert np.allclose(z.mean(axis=1), 0, atol=1e-12)
    # centering moves the item mean onto the examiners, so the sums are unchanged
    raw = small_fit.theta(False)[:, :1] + small_fit.zeta(False)
    assert np.allclose(small_fit.theta()[:, :1] + z, raw)


def test_grouped_fit(small_study):
    groups = {e: ("A" if k % 2 else "B") for k, e in enumerate(small_study.examiners)}
    d = fit(small_study, ModelConfig(), SamplerConfig(chains=1, iterations=40, warmup=20), groups=groups)
    assert d.group_labels == ("A", "B")
    assert d.omega().shape == (20, 2)
    assert {"omega[A]", "alpha[B]"} <= set(summarize(d))


def test_warmup_excluded_from_summaries(small_fit):
    s = summarize(small_fit)
    pooled = small_fit.sigma_zeta()
    assert pooled.size == 2 * 150
    assert s["sigma_zeta"]["mean"] == pytest.approx(pooled.mean())


def test_nonconvergence_warning():
    # tiny run from over-dispersed starts cannot mix
    ds = dataset_from_matrix(np.random.default_rng(0).integers(0, 2, (6, 6)))
    with pytest.warns(NonConvergenceWarning):
        fit(ds, ModelConfig(), SamplerConfig(chains=4, iterations=6, warmup=2, seed=1))


def test_degenerate_rows_logged(caplog):
    ds = dataset_from_matrix(np.zeros((3, 3), dtype=int))
    with caplog.at_level("INFO", logger="bbr.sampler"):
        fit(ds, ModelConfig(), SamplerConfig(chains=1, iterations=5, warmup=2))
    assert "all-identical" in caplog.text or "identical" in caplog.text


# -- persistence ------------------------------------------------------------


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_draws_round_trip(small_fit, tmp_path, fmt):
    path = tmp_path / f"draws.{fmt}"
    if fmt == "csv":
        small_fit.to_csv(path)
        back = PosteriorDraws.from_csv(path)
    else:
        small_fit.to_binary(path)
        back = PosteriorDraws.from_binary(path)
    assert np.array_equal(back.draws, small_fit.draws)
    assert back.parameter_names == small_fit.parameter_names
    assert back.item_ground_truth == small_fit.item_ground_truth
    assert back.warmup == small_fit.warmup


def test_csv_layout(small_fit, tmp_path):
    path = tmp_path / "d.csv"
    small_fit.to_csv(path)
    lines = path.read_text().splitlines()
    header = [ln for ln in lines if not ln.startswith("#")][0]
    assert header == "chain,iteration,parameter,value"
    first = [ln for ln in lines if not ln.startswith("#")][1].split(",")
    assert first[:3] == ["0", "150", "theta[E1]"]


def test_binary_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTDRAWS" + b"\0" * 16)
    with pytest.raises(ValueError):
        PosteriorDraws.from_binary(p)


# -- diagnostics ------------------------------------------------------------


def test_rhat_iid_normal():
    x = np.random.default_rng(0).standard_normal((4, 10_000))
    assert 0.99 <= split_rhat(x) <= 1.01


def test_rhat_constant_distinct_chains():
    x = np.vstack([np.zeros(100), np.ones(100)])
    assert split_rhat(x) == math.inf


def test_rhat_detects_shifted_chain():
    x = np.random.default_rng(1).standard_normal((4, 1000))
    x[0] += 3
    assert split_rhat(x) > 1.1


def test_ess_iid():
    x = np.random.default_rng(2).standard_normal((4, 2500))
    assert abs(ess(x) - 10_000) < 0.2 * 10_000


def test_ess_autocorrelated():
    rng = np.random.default_rng(3)
    n, phi = 20_000, 0.9
    x = np.empty(n)
    x[0] = rng.standard_normal()
    for t in range(1, n):
        x[t] = phi * x[t - 1] + rng.standard_normal()
    expected = n * (1 - phi) / (1 + phi)
    assert abs(ess(x[None, :]) - expected) < 0.25 * expected


# -- summaries --------------------------------------------------------------


def test_summary_constant_parameter():
    arr = np.zeros((2, 50, 7))
    arr[:, :, 4] = math.log(2.0)
    s = summarize(_draws(arr))
    assert s["sigma_zeta"] == {"mean": 2.0, "sd": 0.0, "lower": 2.0, "upper": 2.0}


def test_summary_uniform_quantiles():
    arr = np.zeros((4, 25_000, 7))
    arr[:, :, 6] = np.random.default_rng(4).random((4, 25_000))
    s = summarize(_draws(arr))["alpha"]
    assert s["lower"] == pytest.approx(0.025, abs=0.003)
    assert s["upper"] == pytest.approx(0.975, abs=0.003)


def test_summary_chain_order_invariant():
    arr = np.random.default_rng(5).normal(size=(3, 40, 7))
    a = summarize(_draws(arr))
    b = summarize(_draws(arr[::-1]))
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-12)


def test_summary_level_validation():
    with pytest.raises(ValueError):
        summarize(_draws(np.zeros((1, 2, 7))), level=1.0)


# -- kernel correctness -----------------------------------------------------


def test_toy_gaussian_moments():
    mu = np.array([1.0, -2.0])
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    prec = np.linalg.inv(cov)
    draws, acc = metropolis_within_gibbs(
        lambda x: -0.5 * (x - mu) @ prec @ (x - mu), [0.0, 0.0],
        SamplerConfig(chains=1, iterations=40_000, warmup=2_000, seed=3),
    )
    for k in range(2):
        n_eff = ess(draws[None, :, k])
        se = math.sqrt(cov[k, k] / n_eff)
        assert abs(draws[:, k].mean() - mu[k]) < 3 * se
        # sd of a sample variance of normal draws is sqrt(2) var / sqrt(n)
        assert abs(draws[:, k].var() - cov[k, k]) < 3 * math.sqrt(2) * cov[k, k] / math.sqrt(n_eff)
    assert np.all(np.abs(acc - 0.44) < 0.08)


def test_prior_only_hyperparameter_marginals():
    # with no responses the posterior is the prior, so the scale and shape
    # marginals are the hyperpriors themselves
    rm = ResponseMatrix(("E1", "E2", "E3"), ("I1", "I2", "I3"),
                        np.zeros((3, 3), dtype=np.int8), np.zeros((3, 3), dtype=bool),
                        (GroundTruth.SAME_SOURCE,) * 3)
    d = fit(rm, ModelConfig(), SamplerConfig(chains=4, iterations=6_000, warmup=1_000, seed=1))
    p_below_one = 2 * (stats.t.cdf(1.0, 3) - 0.5)
    assert (d.sigma_zeta() < 1).mean() == pytest.approx(p_below_one, abs=0.04)
    assert (d.omega() < 1).mean() == pytest.approx(p_below_one, abs=0.04)
    assert (np.abs(d.alpha()) < 1).mean() == pytest.approx(p_below_one, abs=0.04)
    assert (d.alpha() < 0).mean() == pytest.approx(0.5, abs=0.04)
