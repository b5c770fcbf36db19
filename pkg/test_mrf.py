import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

import mrf
from errors import ConfigError, DomainError, IncompleteDataError
from mrf import (
    Edge, EdgeReport, MrfPosterior, MrfPrior, MrfState, conditional_logprob, inclusion_bf01, inclusion_bf10,
    median_probability_graph, network_clusters, node_strength, pseudo_loglik,
)
from simulate import enumerate_mrf_joint, gen_mrf
from survey_data import OrdinalMatrix


def random_state(rng, n_categories, scale=0.5):
    state = MrfState.zeros(n_categories)
    p = len(n_categories)
    for i, j in itertools.combinations(range(p), 2):
        if rng.random() < 0.7:
            state.theta[i, j] = state.theta[j, i] = rng.normal(0, scale)
            state.gamma_adj[i, j] = state.gamma_adj[j, i] = 1
    state.thresholds = [rng.normal(0, 1, h - 1) for h in n_categories]
    return state


def binary_pair(theta=1.0):
    return MrfState.from_edges([2, 2], [(0, 1, theta)])


def test_conditional_uniform_when_parameters_zero():
    state = MrfState.zeros([4, 4, 4])
    for c in range(4):
        assert conditional_logprob(state, [1, 2, 3], 0, c) == pytest.approx(math.log(0.25))


def test_conditional_binary_pair():
    prob = math.exp(conditional_logprob(binary_pair(), [0, 1], 0, 1))
    assert prob == pytest.approx(math.e / (1 + math.e), abs=1e-12)
    assert prob == pytest.approx(0.7311, abs=1e-4)


def test_conditionals_sum_to_one(rng):
    for _ in range(1000):
        n_categories = rng.integers(2, 5, size=int(rng.integers(2, 6))).tolist()
        state = random_state(rng, n_categories)
        x = [int(rng.integers(0, h)) for h in n_categories]
        i = int(rng.integers(0, len(n_categories)))
        total = sum(math.exp(conditional_logprob(state, x, i, c)) for c in range(n_categories[i]))
        assert total == pytest.approx(1.0, abs=1e-10)


def test_conditional_domain_errors():
    state = MrfState.zeros([4, 4])
    with pytest.raises(DomainError):
        conditional_logprob(state, [0, 0], 0, 4)
    with pytest.raises(DomainError):
        conditional_logprob(state, [0, 5], 0, 1)
    with pytest.raises(DomainError):
        conditional_logprob(state, [0, 0], 2, 0)


def test_conditionals_match_exact_joint(rng):
    for _ in range(5):
        state = random_state(rng, [4, 4, 4])
        table = enumerate_mrf_joint(state)
        for x in itertools.product(range(4), repeat=3):
            for i in range(3):
                exact = table.conditional(i, x)
                for c in range(4):
                    assert math.log(exact[c]) == pytest.approx(conditional_logprob(state, x, i, c), abs=1e-10)


def test_pseudo_loglik_uniform_case():
    data = np.random.default_rng(1).integers(0, 4, size=(25, 3))
    assert pseudo_loglik(MrfState.zeros([4, 4, 4]), data) == pytest.approx(-25 * 3 * math.log(4))


def test_pseudo_loglik_binary_hand_computation():
    expected = 2 * (1 - math.log(1 + math.e))
    assert pseudo_loglik(binary_pair(), np.array([[1, 1]])) == pytest.approx(expected, abs=1e-12)


def test_pseudo_loglik_row_permutation_invariance(rng):
    state = random_state(rng, [3, 4, 2])
    data = np.column_stack([rng.integers(0, h, size=40) for h in (3, 4, 2)])
    shuffled = data[rng.permutation(40)]
    assert pseudo_loglik(state, shuffled) == pytest.approx(pseudo_loglik(state, data), abs=1e-9)


def test_pseudo_loglik_rejects_incomplete_data():
    with pytest.raises(IncompleteDataError):
        pseudo_loglik(MrfState.zeros([2, 2]), np.array([[0, -1]]))


def test_state_validation():
    state = MrfState.zeros([2, 2])
    state.theta[0, 1] = state.theta[1, 0] = 0.4
    with pytest.raises(DomainError):
        state.validate()
    state.gamma_adj[0, 1] = state.gamma_adj[1, 0] = 1
    state.validate()


def test_inclusion_bf10_examples():
    assert inclusion_bf10(10 / 11, 0.5) == 10
    assert inclusion_bf10(Fraction(10, 11), Fraction(1, 2)) == 10
    assert inclusion_bf10(0.5, 0.5) == 1
    assert inclusion_bf10(1 / 3, 0.5) == pytest.approx(0.5)
    assert inclusion_bf01(1 / 3, 0.5) == pytest.approx(2.0)
    assert inclusion_bf10(1.0, 0.5) == math.inf


def test_inclusion_bf10_domain():
    for prior in (0.0, 1.0, 1.5):
        with pytest.raises(DomainError):
            inclusion_bf10(0.5, prior)
    with pytest.raises(DomainError):
        inclusion_bf10(-0.1, 0.5)


def test_inclusion_bf_reciprocal_identity(rng):
    for _ in range(100):
        q = float(rng.uniform(0.001, 0.999))
        r = float(rng.uniform(0.001, 0.999))
        assert inclusion_bf10(q, r) * inclusion_bf01(q, r) == pytest.approx(1.0, abs=1e-12)


def three_node_posterior(inclusion=(19, 12, 6), draws=20, weights=(0.5, -0.2, 0.1)):
    gamma = np.zeros((draws, 3), dtype=np.int8)
    for e, count in enumerate(inclusion):
        gamma[:count, e] = 1
    theta = gamma * np.array(weights) * np.linspace(0.9, 1.1, draws)[:, None]
    return MrfPosterior.from_draws(["A", "B", "C"], [2, 2, 2], theta, gamma)


def test_posterior_summaries():
    post = three_node_posterior()

    assert post.inclusion_prob[0, 1] == pytest.approx(0.95)
    assert post.inclusion_prob[1, 0] == post.inclusion_prob[0, 1]
    assert post.inclusion_prob[0, 2] == pytest.approx(0.6)
    assert post.bf10[0, 1] == pytest.approx(19.0)
    assert (post.theta_ci_low <= post.theta_mean).all()
    assert (post.theta_mean <= post.theta_ci_high).all()
    included = post.theta_draws[post.gamma_draws[:, 0] == 1, 0]
    assert post.theta_mean[0, 1] == pytest.approx(included.mean())
    assert post.theta_mean_unconditional[0, 1] == pytest.approx(post.theta_draws[:, 0].mean())


def test_posterior_never_included_and_saturated_edges():
    post = three_node_posterior(inclusion=(20, 0, 10))
    assert post.bf10[0, 1] == mrf.BF_CAP
    assert post.saturated[0, 1]
    assert post.inclusion_prob[0, 2] == 0
    assert post.theta_mean[0, 2] == 0
    assert (post.theta_ci_low[0, 2], post.theta_ci_high[0, 2]) == (0, 0)


def test_heavy_tail_keeps_quantile_interval_and_flags_mean():
    theta = np.array([[0.1, 0.0, 0.0]] * 99 + [[1000.0, 0.0, 0.0]])
    gamma = (theta != 0).astype(np.int8)
    post = MrfPosterior.from_draws(["A", "B", "C"], [2, 2, 2], theta, gamma)

    assert post.theta_ci_low[0, 1] == pytest.approx(0.1)
    assert post.theta_ci_high[0, 1] == pytest.approx(0.1)
    assert post.theta_mean[0, 1] == pytest.approx(10.099)
    assert post.mean_outside_ci[0, 1] and post.mean_outside_ci[1, 0]
    assert not post.mean_outside_ci[0, 2]

    table = mrf.edge_table(post)
    assert list(table["mean_outside_ci"]) == [True, False, False]


def test_clusters_follow_node_order():
    edges = [Edge(node_a=a, node_b=b, inclusion_prob=0.9, bf10=50.0, saturated=False, theta_mean=0.3,
                  theta_sd=0.1, ci_low=0.1, ci_high=0.5, conclusive=True) for a, b in [("C", "D"), ("A", "D")]]
    report = EdgeReport(nodes=["B", "C", "A", "D"], edges=edges, bf_threshold=10.0)
    assert network_clusters(report) == [["B"], ["C", "A", "D"]]
    assert network_clusters(EdgeReport(nodes=["A", "B"], edges=[], bf_threshold=10.0)) == [["A"], ["B"]]


def test_median_probability_graph_flags_inconclusive_edges():
    report = median_probability_graph(three_node_posterior(), bf_threshold=10)

    pairs = [(e.node_a, e.node_b) for e in report.edges]
    assert pairs == [("A", "B"), ("A", "C")]
    strong, weak = report.edges
    assert strong.conclusive and strong.sign == "+"
    assert weak.bf10 == pytest.approx(1.5)
    assert not weak.conclusive
    assert weak.sign == "-"
    assert strong.ci_low <= strong.theta_mean <= strong.ci_high


def test_median_probability_graph_empty_and_threshold_domain():
    post = three_node_posterior(inclusion=(0, 0, 0))
    assert median_probability_graph(post).edges == []
    with pytest.raises(DomainError):
        median_probability_graph(post, bf_threshold=0)


def test_edge_table_lists_all_pairs():
    table = mrf.edge_table(three_node_posterior())
    assert len(table) == 3
    assert list(table["retained"]) == [True, True, False]
    assert list(table["conclusive"]) == [True, False, False]


def test_clusters_and_strength():
    report = median_probability_graph(three_node_posterior(inclusion=(20, 15, 4)), bf_threshold=2)
    assert network_clusters(report) == [["A", "B", "C"]]
    strength = node_strength(report)
    assert strength["A"] == pytest.approx(abs(report.edges[0].theta_mean) + abs(report.edges[1].theta_mean))

    strict = median_probability_graph(three_node_posterior(inclusion=(20, 15, 4)), bf_threshold=10)
    assert network_clusters(strict) == [["A", "B"], ["C"]]


def test_fit_small_network(fast_config):
    state = MrfState.from_edges([2, 3, 2], [(0, 1, 0.8)])
    data = gen_mrf(state, 300, seed=11)
    post = mrf.fit(OrdinalMatrix(data=data, nodes=["X", "Y", "Z"], n_categories=[2, 3, 2]),
                   MrfPrior(), fast_config())

    assert post.nodes == ["X", "Y", "Z"]
    assert post.n_draws == 200
    assert post.theta_draws.shape == (200, 3)
    assert post.threshold_draws.shape == (200, 4)
    # Исключенное ребро всегда имеет нулевой вес
    assert np.all(post.theta_draws[post.gamma_draws == 0] == 0)
    counts = post.gamma_draws.sum(axis=0) / post.n_draws
    assert post.inclusion_prob[0, 1] == counts[0]
    assert post.draws[0].theta.shape == (3, 3)
    assert set(post.acceptance[0]) == {"threshold", "weight", "birth", "death"}


def test_fit_is_reproducible(fast_config):
    data = gen_mrf(MrfState.from_edges([2, 2, 2], [(0, 2, 1.0)]), 200, seed=3)
    first = mrf.fit(data, MrfPrior(), fast_config(seed=99))
    second = mrf.fit(data, MrfPrior(), fast_config(seed=99))
    np.testing.assert_array_equal(first.theta_draws, second.theta_draws)
    np.testing.assert_array_equal(first.gamma_draws, second.gamma_draws)
    np.testing.assert_array_equal(first.threshold_draws, second.threshold_draws)


def test_fit_chains_independent_of_worker_count(fast_config):
    data = gen_mrf(MrfState.from_edges([2, 2, 2], [(0, 1, 1.0)]), 150, seed=5)
    sequential = mrf.fit(data, MrfPrior(), fast_config(iterations=200, burn_in=100, chains=2, max_workers=1))
    pooled = mrf.fit(data, MrfPrior(), fast_config(iterations=200, burn_in=100, chains=2, max_workers=2))
    assert sequential.n_draws == 200
    np.testing.assert_array_equal(sequential.theta_draws, pooled.theta_draws)


def test_fit_adaptive_normal_birth_proposal(fast_config):
    data = gen_mrf(MrfState.from_edges([2, 2, 2], [(1, 2, 1.2)]), 200, seed=8)
    post = mrf.fit(data, MrfPrior(birth_proposal="adaptive_normal"), fast_config())
    assert np.all(post.theta_draws[post.gamma_draws == 0] == 0)
    assert post.inclusion_prob.shape == (3, 3)


def test_fit_errors(fast_config):
    with pytest.raises(ConfigError):
        mrf.fit(np.zeros((10, 1), dtype=int), MrfPrior(), fast_config())
    with pytest.raises(IncompleteDataError):
        mrf.fit(np.array([[0, 1], [-1, 0]]), MrfPrior(), fast_config())


def test_prior_defaults():
    prior = MrfPrior()
    assert (prior.slab_scale, prior.inclusion_prob, prior.threshold_sd) == (2.5, 0.5, 10.0)
    with pytest.raises(ValueError):
        MrfPrior(inclusion_prob=1.0)


@pytest.mark.slow
def test_independent_model_has_few_edges():
    from mcmc_settings import McmcConfig

    data = gen_mrf(MrfState.zeros([4] * 5), 1000, seed=21)
    post = mrf.fit(data, MrfPrior(), McmcConfig.for_mrf(seed=5))
    upper = post.inclusion_prob[np.triu_indices(5, 1)]
    assert (upper >= 0.5).sum() < 2


@pytest.mark.slow
def test_single_strong_edge_recovered():
    from mcmc_settings import McmcConfig

    state = MrfState.from_edges([2, 2, 2, 2], [(0, 1, 1.5)], thresholds=[[-0.75], [-0.75], [0.0], [0.0]])
    data = gen_mrf(state, 1000, seed=22)
    post = mrf.fit(data, MrfPrior(), McmcConfig.for_mrf(seed=6))
    assert post.inclusion_prob[0, 1] > 0.9
    others = [post.inclusion_prob[i, j] for i, j in itertools.combinations(range(4), 2) if (i, j) != (0, 1)]
    assert max(others) < 0.5


def _auc(scores, labels):
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    wins = (positives[:, None] > negatives[None, :]).sum() + 0.5 * (positives[:, None] == negatives[None, :]).sum()
    return wins / (len(positives) * len(negatives))


@pytest.mark.slow
def test_structure_recovery_ten_nodes():
    from mcmc_settings import McmcConfig

    true_edges = [(0, 1, 1.2), (2, 3, -1.0), (4, 5, 0.8), (6, 7, 1.5), (1, 8, -0.9)]
    thresholds = [[0.0] for _ in range(10)]
    for i, j, weight in true_edges:
        thresholds[i][0] -= weight / 2
        thresholds[j][0] -= weight / 2
    state = MrfState.from_edges([2] * 10, true_edges, thresholds)
    data = gen_mrf(state, 1000, seed=23)

    post = mrf.fit(data, MrfPrior(), McmcConfig.for_mrf(seed=7))
    upper = np.triu_indices(10, 1)
    truth = (state.gamma_adj[upper] == 1).astype(int)
    assert _auc(post.inclusion_prob[upper], truth) >= 0.9

    report = median_probability_graph(post, bf_threshold=10)
    found = {(e.node_a, e.node_b) for e in report.edges}
    expected = {(f"V{i + 1}", f"V{j + 1}") for i, j, _ in true_edges}
    assert len(found & expected) >= 4


@pytest.mark.slow
def test_label_invariance_of_inclusion_probabilities():
    from mcmc_settings import McmcConfig

    state = MrfState.from_edges([2, 3, 2, 2], [(0, 1, 0.9), (2, 3, 0.3)])
    data = gen_mrf(state, 500, seed=31)
    order = np.array([3, 1, 0, 2])
    original, permuted = [], []
    for seed in range(5):
        config = McmcConfig(iterations=4000, burn_in=1000, seed=seed, max_workers=1)
        original.append(mrf.fit(data, MrfPrior(), config).inclusion_prob)
        back = mrf.fit(data[:, order], MrfPrior(), config,
                       n_categories=[[2, 3, 2, 2][k] for k in order]).inclusion_prob
        restored = np.empty_like(back)
        restored[np.ix_(order, order)] = back
        permuted.append(restored)
    np.testing.assert_allclose(np.mean(original, axis=0), np.mean(permuted, axis=0), atol=0.1)
