import math

import numpy as np
import pytest
from scipy.special import expit

import grm
from errors import DomainError, IncompleteDataError, MonotonicityError
from grm import (
    GrmParams, GrmPosterior, GrmPrior, category_prob, covariate_effects, cumulative_prob, gelman_rubin,
    item_difficulty_table, loglik, rank_discrimination,
)
from mcmc_settings import McmcConfig
from simulate import GrmSimSpec, SimCovariate, gen_grm


def random_params(rng, n=3, n_items=2, n_categories=4, n_covariates=0):
    gaps = rng.uniform(0.2, 1.5, size=n_categories - 2)
    return GrmParams(
        theta=rng.normal(0, 1.5, n),
        beta=rng.normal(0, 1, n_items),
        log_gamma=rng.normal(0, 0.5, n_items),
        delta=np.concatenate(([0.0], np.cumsum(gaps))),
        alpha=rng.normal(0, 1, n_covariates),
    )


def test_cumulative_prob_examples():
    assert cumulative_prob(0.7, 2.3, 0.7) == 0.5
    assert cumulative_prob(math.log(3), 1.0, 0.0) == pytest.approx(0.75, abs=1e-15)
    grid = np.linspace(-4, 4, 50)
    assert np.all(np.diff(cumulative_prob(grid, 1.3, 0.2)) > 0)
    assert cumulative_prob(1000.0, 1.0, 0.0) == 1.0
    with pytest.raises(DomainError):
        cumulative_prob(0.0, 0.0, 0.0)


def test_category_prob_worked_example():
    delta = [0.0, 1.0, 2.0]
    probs = [category_prob(0.0, 1.0, 0.0, delta, h) for h in range(1, 5)]
    assert probs[0] == pytest.approx(0.5)
    assert probs[1] == pytest.approx(expit(0) - expit(-1))
    assert probs[1] == pytest.approx(0.2311, abs=1e-4)
    assert probs[2] == pytest.approx(0.1498, abs=1e-4)
    assert probs[3] == pytest.approx(0.1192, abs=1e-4)


def test_category_prob_two_categories_is_2pl():
    p2 = category_prob(0.4, 1.7, -0.3, [0.0], 2)
    p1 = category_prob(0.4, 1.7, -0.3, [0.0], 1)
    assert p2 == pytest.approx(expit(1.7 * 0.7))
    assert p1 == pytest.approx(1 - p2)


def test_category_probs_normalize_and_telescope(rng):
    for _ in range(1000):
        n_categories = int(rng.integers(2, 7))
        params = random_params(rng, n=1, n_items=1, n_categories=n_categories)
        theta, gamma, beta = params.theta[0], params.gamma[0], params.beta[0]
        probs = [category_prob(theta, gamma, beta, params.delta, h) for h in range(1, n_categories + 1)]
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)
        assert min(probs) >= 0
        for h in range(2, n_categories):
            expected = (cumulative_prob(theta, gamma, beta + params.delta[h - 2])
                        - cumulative_prob(theta, gamma, beta + params.delta[h - 1]))
            assert probs[h - 1] == pytest.approx(expected, abs=1e-15)


def test_category_prob_requires_increasing_thresholds():
    with pytest.raises(MonotonicityError):
        category_prob(0.0, 1.0, 0.0, [0.0, 1.0, 1.0], 2)
    with pytest.raises(DomainError):
        category_prob(0.0, 1.0, 0.0, [0.0, 1.0], 4)


def test_cumulative_monotone_in_theta_for_every_category(rng):
    params = random_params(rng, n_items=1, n_categories=5)
    grid = np.linspace(-6, 6, 200)
    for h in range(params.n_categories - 1):
        values = cumulative_prob(grid, params.gamma[0], params.beta[0] + params.delta[h])
        assert np.all(np.diff(values) >= 0)


def test_loglik_single_cell_coin_flip():
    params = GrmParams(theta=np.array([0.3]), beta=np.array([0.3]), log_gamma=np.array([0.4]),
                       delta=np.array([0.0]), alpha=np.zeros(0))
    assert loglik(params, np.array([[2]])) == pytest.approx(math.log(0.5))


def test_loglik_is_sum_of_cell_logs(rng):
    params = random_params(rng, n=3, n_items=2)
    data = rng.integers(1, 5, size=(3, 2))
    expected = sum(
        math.log(category_prob(params.theta[i], params.gamma[j], params.beta[j], params.delta, data[i, j]))
        for i in range(3) for j in range(2)
    )
    assert loglik(params, data) == pytest.approx(expected, abs=1e-10)


def test_loglik_decreases_for_less_likely_response():
    params = GrmParams(theta=np.array([2.0]), beta=np.array([0.0]), log_gamma=np.array([0.5]),
                       delta=np.array([0.0, 1.0, 2.0]), alpha=np.zeros(0))
    probs = [category_prob(2.0, params.gamma[0], 0.0, params.delta, h) for h in range(1, 5)]
    likely, unlikely = int(np.argmax(probs)) + 1, int(np.argmin(probs)) + 1
    assert loglik(params, np.array([[unlikely]])) < loglik(params, np.array([[likely]]))


def test_loglik_invariant_under_item_relabeling(rng):
    params = random_params(rng, n=5, n_items=4)
    data = rng.integers(1, 5, size=(5, 4))
    order = np.array([2, 0, 3, 1])
    relabeled = GrmParams(theta=params.theta, beta=params.beta[order], log_gamma=params.log_gamma[order],
                          delta=params.delta, alpha=params.alpha)
    assert loglik(relabeled, data[:, order]) == pytest.approx(loglik(params, data), abs=1e-10)


def test_loglik_stable_in_extreme_tails():
    params = GrmParams(theta=np.array([40.0, -40.0]), beta=np.zeros(1), log_gamma=np.array([1.0]),
                       delta=np.array([0.0, 1.0, 2.0]), alpha=np.zeros(0))
    value = loglik(params, np.array([[4], [1]]))
    assert math.isfinite(value)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_loglik_rejects_missing_responses(rng):
    with pytest.raises(IncompleteDataError):
        loglik(random_params(rng, n=1, n_items=2), np.array([[1, -1]]))


def test_prior_conventions():
    precision = GrmPrior.from_convention("precision", 0.01)
    variance = GrmPrior.from_convention("variance", 0.01)
    assert precision.sd_item == pytest.approx(10.0)
    assert precision.sd_alpha == pytest.approx(10.0)
    assert variance.sd_delta == pytest.approx(0.1)
    assert GrmPrior().sigma2_theta == 1.0


def test_gelman_rubin_closed_form():
    assert gelman_rubin([[1, 2, 3], [1, 2, 3]]) == pytest.approx(math.sqrt(2 / 3), abs=1e-12)


def test_gelman_rubin_identical_chains_below_one(rng):
    chain = rng.normal(size=50)
    assert gelman_rubin([chain, chain]) == pytest.approx(math.sqrt(49 / 50))


def test_gelman_rubin_degenerate_and_domain():
    assert math.isnan(gelman_rubin([[0, 0, 0], [10, 10, 10]]))
    with pytest.raises(DomainError):
        gelman_rubin([[1, 2, 3]])
    with pytest.raises(DomainError):
        gelman_rubin([[1, 2, 3], [1, 2]])


def make_posterior(gamma_values, alpha_values=None, chains=2, draws=50, seed=0):
    rng = np.random.default_rng(seed)
    n_items = len(gamma_values)
    alpha_values = [] if alpha_values is None else alpha_values
    draws_by_name = {
        'theta': rng.normal(size=(chains, draws, 3)),
        'beta': rng.normal(size=(chains, draws, n_items)),
        'log_gamma': np.log(gamma_values) + 0.01 * rng.normal(size=(chains, draws, n_items)),
        'delta': np.broadcast_to([0.0, 1.0, 2.0], (chains, draws, 3)).copy(),
        'alpha': np.array(alpha_values) + rng.normal(size=(chains, draws, len(alpha_values))),
    }
    return GrmPosterior(item_names=[f"I{j + 1}" for j in range(n_items)],
                        covariate_names=[f"X{k + 1}" for k in range(len(alpha_values))],
                        n_categories=4, chains=draws_by_name)


def test_rank_discrimination_orders_by_gamma():
    ranking = rank_discrimination(make_posterior([2.0, 0.5, 1.0]))
    assert [r.item for r in ranking] == ["I1", "I3", "I2"]
    assert [r.rank for r in ranking] == [1, 2, 3]
    assert ranking[0].ci_low <= ranking[0].gamma_mean <= ranking[0].ci_high
    assert len(rank_discrimination(make_posterior([1.3]))) == 1


def test_rank_discrimination_ties_by_index():
    post = make_posterior([1.0, 1.0])
    post.chains['log_gamma'][:] = 0.0
    assert [r.item for r in rank_discrimination(post)] == ["I1", "I2"]


def test_covariate_effects_match_pooled_draws():
    post = make_posterior([1.0, 1.0], alpha_values=[3.0, -3.0])
    effects = covariate_effects(post)
    pooled = post.pooled('alpha')
    assert effects[0].mean == pytest.approx(pooled[:, 0].mean())
    assert effects[0].prob_positive == pytest.approx((pooled[:, 0] > 0).mean())
    assert effects[0].prob_positive > 0.9
    assert effects[1].prob_positive < 0.1
    assert effects[1].ci_low <= effects[1].mean <= effects[1].ci_high


def test_posterior_summaries_and_tables():
    post = make_posterior([2.0, 0.5], alpha_values=[0.0])
    summaries = post.summaries
    assert list(summaries["parameter"]) == ["beta[I1]", "beta[I2]", "gamma[I1]", "gamma[I2]",
                                            "delta[2]", "delta[3]", "alpha[X1]"]
    assert np.isnan(summaries.set_index("parameter").loc["delta[2]", "rhat"])
    assert summaries.set_index("parameter").loc["beta[I1]", "rhat"] > 0
    assert post.theta_summary().shape == (3, 6)
    table = item_difficulty_table(post)
    assert list(table.columns) == ["item", "beta", "gamma", "b_1", "b_2", "b_3"]
    np.testing.assert_allclose(table["b_3"] - table["beta"], 2.0)


def test_fit_retains_thinned_draws(fast_config):
    spec = GrmSimSpec(seed=3, n=40, beta=[0.0, 0.5, -0.5], gamma=[1.0, 1.5, 0.8], delta=[0.0, 1.0, 2.0],
                      alpha=[0.7], covariates=[SimCovariate(name="G")])
    ds, _ = gen_grm(spec)
    design = ds.covariates["G"].cat.codes.to_numpy(dtype=float)[:, None]
    config = fast_config(iterations=300, burn_in=100, thin=10, chains=2)
    post = grm.fit(ds.responses, design, GrmPrior(), config, item_names=ds.item_abbrs, covariate_names=["G"])

    assert post.n_chains == 2
    assert post.n_draws == 2 * 20
    assert post.draws('theta').shape == (2, 20, 40)
    assert np.all(post.draws('delta')[:, :, 0] == 0)
    assert np.all(np.diff(post.draws('delta'), axis=2) > 0)
    assert np.all(post.draws('gamma') > 0)


def test_fit_default_protocol_retains_2000_draws():
    config = McmcConfig.for_grm()
    assert config.chains * config.retained_per_chain == 2000


def test_fit_is_reproducible(fast_config):
    spec = GrmSimSpec(seed=4, n=30, n_categories=3, beta=[0.0, 0.3], gamma=[1.0, 1.2], delta=[0.0, 1.0])
    ds, _ = gen_grm(spec)
    config = fast_config(iterations=150, burn_in=50, chains=2)
    first = grm.fit(ds.responses, None, GrmPrior(), config)
    second = grm.fit(ds.responses, None, GrmPrior(), config)
    for name in grm.PARAMETERS:
        np.testing.assert_array_equal(first.draws(name), second.draws(name))


def test_fit_without_data_recovers_alpha_prior(fast_config):
    prior = GrmPrior.from_convention("variance", 0.01)
    config = fast_config(iterations=20000, burn_in=2000, chains=2)
    post = grm.fit(np.empty((0, 2), dtype=int), np.empty((0, 1)), prior, config, n_categories=3)
    alpha = post.pooled('alpha')[:, 0]
    assert abs(alpha.mean()) < 0.1 * prior.sd_alpha
    assert alpha.std() == pytest.approx(prior.sd_alpha, rel=0.1)


def test_fit_rejects_incomplete_responses(fast_config):
    with pytest.raises(IncompleteDataError):
        grm.fit(np.array([[1, 2], [-1, 3]]), None, GrmPrior(), fast_config(), n_categories=4)


def _null_covariate_fit(seed, n=200):
    spec = GrmSimSpec(seed=seed, n=n, beta=[-0.5, 0.0, 0.5], gamma=[1.2, 1.0, 1.5], delta=[0.0, 1.0, 2.0],
                      alpha=[0.0], covariates=[SimCovariate(name="G")])
    ds, _ = gen_grm(spec)
    design = ds.covariates["G"].cat.codes.to_numpy(dtype=float)[:, None]
    config = McmcConfig(iterations=3000, burn_in=1000, thin=2, chains=2, seed=seed, max_workers=1)
    post = grm.fit(ds.responses, design, GrmPrior(), config, item_names=ds.item_abbrs, covariate_names=["G"])
    return covariate_effects(post)[0]


def test_null_covariate_effect_centered_on_zero():
    effect = _null_covariate_fit(seed=41, n=300)
    assert abs(effect.mean) <= 2 * effect.sd


def test_equal_discriminations_have_overlapping_intervals(fast_config):
    spec = GrmSimSpec(seed=8, n=400, beta=[-0.3, 0.0, 0.3], gamma=[1.3, 1.3, 1.3], delta=[0.0, 1.0, 2.0])
    ds, _ = gen_grm(spec)
    post = grm.fit(ds.responses, None, GrmPrior(), fast_config(iterations=3000, burn_in=1000, thin=2, chains=2))
    ranking = rank_discrimination(post)
    assert max(r.ci_low for r in ranking) <= min(r.ci_high for r in ranking)


@pytest.mark.slow
def test_null_covariate_interval_coverage():
    covered = sum(effect.ci_low <= 0.0 <= effect.ci_high
                  for effect in (_null_covariate_fit(seed=100 + k) for k in range(20)))
    assert covered >= 18


@pytest.mark.slow
def test_parameter_recovery_default_protocol():
    spec = GrmSimSpec(
        seed=2024, n=500,
        beta=[-1.2, -0.8, -0.4, -0.1, 0.0, 0.2, 0.5, 0.8, 1.1, 1.4],
        gamma=[1.5, 1.2, 2.0, 0.8, 1.0, 1.7, 1.3, 0.9, 1.6, 1.1],
        delta=[0.0, 1.0, 2.0],
        alpha=[1.0, -0.5],
        covariates=[SimCovariate(name="G"), SimCovariate(name="JbM", prob=0.4)],
    )
    ds, truth = gen_grm(spec)
    design = np.column_stack([ds.covariates[c].cat.codes.to_numpy(dtype=float) for c in ("G", "JbM")])
    post = grm.fit(ds.responses, design, GrmPrior(), McmcConfig.for_grm(seed=11),
                   covariate_names=["G", "JbM"])

    theta_mean = post.pooled('theta').mean(axis=0)
    assert np.corrcoef(truth.theta, theta_mean)[0, 1] >= 0.85
    effects = covariate_effects(post)
    assert effects[0].prob_positive >= 0.9
    assert 1 - effects[1].prob_positive >= 0.9
    assert post.summaries["rhat"].max() <= 1.1


@pytest.mark.slow
def test_discrimination_order_recovered():
    spec = GrmSimSpec(seed=77, n=1000, beta=[0.0, 0.2, -0.2], gamma=[2.0, 0.5, 1.0], delta=[0.0, 1.0, 2.0])
    ds, _ = gen_grm(spec)
    post = grm.fit(ds.responses, None, GrmPrior(), McmcConfig.for_grm(seed=12))
    assert [r.item for r in rank_discrimination(post)] == ["I1", "I3", "I2"]
