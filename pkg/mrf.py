"""
Байесовская порядковая марковская сеть со spike-and-slab отбором ребер.

Модель: p(x) ∝ exp(Σ_i μ_{i,x_i} + Σ_{i<j} θ_ij x_i x_j) на категориях 0..m_i,
μ_{i,0} = 0. Оценивание по псевдоправдоподобию (произведение полных условных),
ребра включаются и исключаются ходами рождения/гибели.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import logsumexp
from tqdm import tqdm

from errors import ConfigError, DomainError, IncompleteDataError, NonFiniteError
from mcmc_settings import McmcConfig
from survey_data import OrdinalMatrix
from system_optimizer import SystemDetector
from workers import ChainRunner

logger = logging.getLogger(__name__)

BF_CAP = 1e6
CI_LEVEL = 0.95


@dataclass
class MrfState:
    """Параметры сети: θ (p × p), индикаторы ребер и пороги категорий"""

    theta: np.ndarray
    gamma_adj: np.ndarray
    thresholds: List[np.ndarray]

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def n_categories(self) -> List[int]:
        return [len(mu) + 1 for mu in self.thresholds]

    @classmethod
    def zeros(cls, n_categories: Sequence[int]) -> "MrfState":
        p = len(n_categories)
        return cls(
            theta=np.zeros((p, p)),
            gamma_adj=np.zeros((p, p), dtype=np.int8),
            thresholds=[np.zeros(h - 1) for h in n_categories],
        )

    @classmethod
    def from_edges(cls, n_categories: Sequence[int], edges: Sequence[Tuple[int, int, float]],
                   thresholds: Optional[Sequence[Sequence[float]]] = None) -> "MrfState":
        state = cls.zeros(n_categories)
        for i, j, weight in edges:
            state.theta[i, j] = state.theta[j, i] = weight
            state.gamma_adj[i, j] = state.gamma_adj[j, i] = 1 if weight != 0 else 0
        if thresholds is not None:
            state.thresholds = [np.asarray(mu, dtype=float) for mu in thresholds]
        state.validate()
        return state

    def validate(self) -> None:
        if self.theta.shape != (len(self.thresholds), len(self.thresholds)):
            raise DomainError(f"Размер θ {self.theta.shape} не соответствует {len(self.thresholds)} переменным")
        if not np.array_equal(self.theta, self.theta.T) or np.any(np.diag(self.theta) != 0):
            raise DomainError("θ должна быть симметричной с нулевой диагональю")
        if not np.array_equal(self.gamma_adj, self.gamma_adj.T) or np.any(np.diag(self.gamma_adj) != 0):
            raise DomainError("Матрица индикаторов должна быть симметричной с нулевой диагональю")
        if np.any((self.gamma_adj == 0) & (self.theta != 0)):
            raise DomainError("Исключенное ребро имеет ненулевой вес")
        if any(len(mu) < 1 for mu in self.thresholds):
            raise DomainError("У каждой переменной минимум две категории")


def _padded(mu: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], mu))


def conditional_logprob(state: MrfState, x: Sequence[int], i: int, c: int) -> float:
    """log p(x_i = c | x_{-i})"""
    x = np.asarray(x)
    if not 0 <= i < state.p:
        raise DomainError(f"Индекс переменной вне диапазона: {i}")
    m = len(state.thresholds[i])
    if not 0 <= c <= m:
        raise DomainError(f"Категория {c} вне 0..{m}")
    if x.shape != (state.p,) or np.any(x < 0) or np.any(x > np.array(state.n_categories) - 1):
        raise DomainError(f"Конфигурация вне допустимого диапазона: {x.tolist()}")
    rest = float(state.theta[i] @ x)
    z = _padded(state.thresholds[i]) + np.arange(m + 1) * rest
    return float(z[c] - logsumexp(z))


def _check_data(state_p: int, data: np.ndarray, n_categories: Sequence[int]) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] != state_p:
        raise DomainError(f"Ожидалась матрица n × {state_p}, получено {data.shape}")
    if np.any(data < 0):
        raise IncompleteDataError("В данных есть пропуски")
    if np.any(data > np.asarray(n_categories) - 1):
        raise DomainError("Категория вне диапазона переменной")
    return data.astype(np.int64)


def pseudo_loglik(state: MrfState, data: np.ndarray) -> float:
    """Σ по строкам и переменным log p(x_i | x_{-i})"""
    data = _check_data(state.p, data, state.n_categories)
    rest = data @ state.theta
    total = 0.0
    for i in range(state.p):
        z = _padded(state.thresholds[i])[None, :] + rest[:, i, None] * np.arange(len(state.thresholds[i]) + 1)
        total += float(z[np.arange(len(data)), data[:, i]].sum() - logsumexp(z, axis=1).sum())
    return total


class MrfPrior(BaseModel):
    """Spike-and-slab: Cauchy(0, slab_scale) для включенных ребер, Bernoulli(inclusion_prob)"""

    slab_scale: float = Field(2.5, gt=0.0)
    inclusion_prob: float = Field(0.5, gt=0.0, lt=1.0)
    threshold_sd: float = Field(10.0, gt=0.0)
    birth_proposal: Literal["slab", "adaptive_normal"] = "slab"


# Скалярные плотности вызываются на каждом шаге цепи; scipy.stats.cauchy/norm.logpdf для скаляров слишком медленны
def _cauchy_logpdf(value: float, scale: float) -> float:
    return -math.log(math.pi * scale) - math.log1p((value / scale) ** 2)


def _normal_logpdf(value: float, sd: float) -> float:
    return -0.5 * (value / sd) ** 2 - math.log(sd) - 0.5 * math.log(2.0 * math.pi)


@dataclass
class MrfChain:
    theta_draws: np.ndarray
    gamma_draws: np.ndarray
    threshold_draws: np.ndarray
    acceptance: Dict[str, float]


class MrfSampler:
    """Одна цепь Метрополиса внутри Гиббса с ходами рождения/гибели ребер"""

    MIN_SCALE = 1e-4
    MAX_SCALE = 50.0
    REFRESH_EVERY = 100

    def __init__(self, data: np.ndarray, n_categories: Sequence[int], prior: MrfPrior,
                 config: McmcConfig, rng: np.random.Generator, chain: int = 0):
        self.logger = logging.getLogger('MrfSampler')
        self.prior = prior
        self.config = config
        self.rng = rng
        self.chain = chain

        self.x = np.asarray(data, dtype=np.int64)
        self.xf = self.x.astype(float)
        self.n, self.p = self.x.shape
        self.m = [h - 1 for h in n_categories]
        self.cats = [np.arange(m + 1, dtype=float) for m in self.m]
        self.counts = [np.bincount(self.x[:, i], minlength=self.m[i] + 1).astype(float) for i in range(self.p)]
        self.edges = [(i, j) for i in range(self.p) for j in range(i + 1, self.p)]
        self.log_prior_odds = math.log(prior.inclusion_prob) - math.log1p(-prior.inclusion_prob)

        self.theta = np.zeros((self.p, self.p))
        self.gamma = np.zeros((self.p, self.p), dtype=np.int8)
        self.mu = [np.zeros(m) for m in self.m]
        self.rest = np.zeros((self.n, self.p))
        self.node_ll = self._all_node_loglik()
        if not np.all(np.isfinite(self.node_ll)):
            raise NonFiniteError("Псевдоправдоподобие в начальной точке не конечно")

        self.mu_scale = [np.full(m, 0.5) for m in self.m]
        self.theta_scale = np.full((self.p, self.p), 0.1)
        self.moves = {name: [0, 0] for name in ('threshold', 'weight', 'birth', 'death')}
        self.detector = SystemDetector()

    def _node_loglik(self, i: int, mu_i: np.ndarray, rest_i: np.ndarray) -> float:
        z = _padded(mu_i)[None, :] + rest_i[:, None] * self.cats[i][None, :]
        observed = self.counts[i][1:] @ mu_i + self.xf[:, i] @ rest_i
        return float(observed - logsumexp(z, axis=1).sum())

    def _all_node_loglik(self) -> np.ndarray:
        return np.array([self._node_loglik(i, self.mu[i], self.rest[:, i]) for i in range(self.p)])

    def _accept(self, log_alpha: float) -> bool:
        u = self.rng.random()
        return bool(log_alpha >= 0.0 or u < math.exp(log_alpha))

    def _adapt(self, scale: float, log_alpha: float, t: int) -> float:
        """Robbins-Monro по логарифму шага к цели config.adapt_target"""
        accept_prob = 1.0 if log_alpha >= 0.0 else math.exp(log_alpha)
        scale *= math.exp((accept_prob - self.config.adapt_target) / t ** 0.6)
        return min(max(scale, self.MIN_SCALE), self.MAX_SCALE)

    def _count(self, move: str, accepted: bool, adapting: bool) -> None:
        if not adapting:
            self.moves[move][0] += int(accepted)
            self.moves[move][1] += 1

    def update_thresholds(self, t: int, adapting: bool) -> None:
        sd = self.prior.threshold_sd
        for i in range(self.p):
            for c in range(self.m[i]):
                current = self.mu[i][c]
                proposal = self.mu[i].copy()
                proposal[c] = current + self.mu_scale[i][c] * self.rng.standard_normal()
                ll = self._node_loglik(i, proposal, self.rest[:, i])
                log_alpha = ll - self.node_ll[i] - 0.5 * ((proposal[c] / sd) ** 2 - (current / sd) ** 2)
                accepted = self._accept(log_alpha)
                if accepted:
                    self.mu[i] = proposal
                    self.node_ll[i] = ll
                if adapting:
                    self.mu_scale[i][c] = self._adapt(self.mu_scale[i][c], log_alpha, t)
                self._count('threshold', accepted, adapting)

    def _edge_proposal(self, i: int, j: int, weight: float):
        delta = weight - self.theta[i, j]
        rest_i = self.rest[:, i] + delta * self.xf[:, j]
        rest_j = self.rest[:, j] + delta * self.xf[:, i]
        ll_i = self._node_loglik(i, self.mu[i], rest_i)
        ll_j = self._node_loglik(j, self.mu[j], rest_j)
        return ll_i, ll_j, rest_i, rest_j

    def _set_edge(self, i: int, j: int, weight: float, included: int, proposal) -> None:
        ll_i, ll_j, rest_i, rest_j = proposal
        self.theta[i, j] = self.theta[j, i] = weight
        self.gamma[i, j] = self.gamma[j, i] = included
        self.rest[:, i] = rest_i
        self.rest[:, j] = rest_j
        self.node_ll[i] = ll_i
        self.node_ll[j] = ll_j

    def update_weight(self, i: int, j: int, t: int, adapting: bool) -> None:
        """Случайное блуждание по весу включенного ребра"""
        scale = self.prior.slab_scale
        current = self.theta[i, j]
        weight = current + self.theta_scale[i, j] * self.rng.standard_normal()
        proposal = self._edge_proposal(i, j, weight)
        log_alpha = (proposal[0] + proposal[1] - self.node_ll[i] - self.node_ll[j]
                     + _cauchy_logpdf(weight, scale) - _cauchy_logpdf(current, scale))
        accepted = self._accept(log_alpha)
        if accepted:
            self._set_edge(i, j, weight, 1, proposal)
        if adapting:
            self.theta_scale[i, j] = self._adapt(self.theta_scale[i, j], log_alpha, t)
        self._count('weight', accepted, adapting)

    def birth_death(self, i: int, j: int, adapting: bool) -> None:
        """Совместное обновление индикатора и веса ребра"""
        scale = self.prior.slab_scale
        proposal_sd = self.theta_scale[i, j]
        slab_proposal = self.prior.birth_proposal == "slab"

        if self.gamma[i, j] == 0:
            if slab_proposal:
                weight = scale * self.rng.standard_cauchy()
                log_q = 0.0
            else:
                weight = proposal_sd * self.rng.standard_normal()
                log_q = _cauchy_logpdf(weight, scale) - _normal_logpdf(weight, proposal_sd)
            proposal = self._edge_proposal(i, j, weight)
            log_alpha = (proposal[0] + proposal[1] - self.node_ll[i] - self.node_ll[j]
                         + self.log_prior_odds + log_q)
            accepted = self._accept(log_alpha)
            if accepted:
                self._set_edge(i, j, weight, 1, proposal)
            self._count('birth', accepted, adapting)
        else:
            current = self.theta[i, j]
            log_q = 0.0 if slab_proposal else (
                _normal_logpdf(current, proposal_sd) - _cauchy_logpdf(current, scale))
            proposal = self._edge_proposal(i, j, 0.0)
            log_alpha = (proposal[0] + proposal[1] - self.node_ll[i] - self.node_ll[j]
                         - self.log_prior_odds + log_q)
            accepted = self._accept(log_alpha)
            if accepted:
                self._set_edge(i, j, 0.0, 0, proposal)
            self._count('death', accepted, adapting)

    def sweep(self, t: int, adapting: bool) -> None:
        self.update_thresholds(t, adapting)
        for i, j in self.edges:
            if self.gamma[i, j]:
                self.update_weight(i, j, t, adapting)
            self.birth_death(i, j, adapting)
        if t % self.REFRESH_EVERY == 0:
            # Пересчет остаточных сумм убирает накопленную ошибку округления
            self.rest = self.xf @ self.theta
            self.node_ll = self._all_node_loglik()
        if not np.all(np.isfinite(self.node_ll)):
            raise NonFiniteError(f"Псевдоправдоподобие не конечно на итерации {t}")

    def acceptance_rates(self) -> Dict[str, float]:
        return {name: (acc / tries if tries else float('nan')) for name, (acc, tries) in self.moves.items()}

    def run(self) -> MrfChain:
        cfg = self.config
        retained = cfg.retained_per_chain
        upper = np.triu_indices(self.p, 1)
        theta_draws = np.empty((retained, len(self.edges)))
        gamma_draws = np.empty((retained, len(self.edges)), dtype=np.int8)
        threshold_draws = np.empty((retained, sum(self.m)))

        start_time = time.time()
        k = 0
        iterator = tqdm(range(1, cfg.iterations + 1), disable=not cfg.show_progress,
                        desc=f"MRF цепь {self.chain + 1}")
        for t in iterator:
            adapting = t <= cfg.burn_in
            self.sweep(t, adapting)
            if not adapting and (t - cfg.burn_in) % cfg.thin == 0:
                theta_draws[k] = self.theta[upper]
                gamma_draws[k] = self.gamma[upper]
                threshold_draws[k] = np.concatenate(self.mu) if self.mu else []
                k += 1
            if t % cfg.log_every == 0:
                self.logger.info(
                    f"Цепь {self.chain + 1}: итерация {t}/{cfg.iterations}, "
                    f"ребер {int(self.gamma[upper].sum())}, принятие {self.acceptance_rates()}, "
                    f"{time.time() - start_time:.1f}с, память {self.detector.resident_memory_mb():.1f}MB"
                )
        return MrfChain(theta_draws[:k], gamma_draws[:k], threshold_draws[:k], self.acceptance_rates())


def _run_mrf_chain(data, n_categories, prior, config, seed, chain) -> MrfChain:
    rng = np.random.Generator(np.random.Philox(seed))
    return MrfSampler(data, n_categories, prior, config, rng, chain).run()


def inclusion_bf10(posterior_inclusion: Union[float, Rational], prior_inclusion: Union[float, Rational]) -> float:
    """BF₁₀ = апостериорные шансы включения / априорные шансы"""
    q = _as_fraction(posterior_inclusion)
    r = _as_fraction(prior_inclusion)
    if not 0 < r < 1:
        raise DomainError(f"Априорная вероятность включения должна быть в (0, 1): {prior_inclusion}")
    if not 0 <= q <= 1:
        raise DomainError(f"Апостериорная вероятность включения вне [0, 1]: {posterior_inclusion}")
    if q == 1:
        return math.inf
    return float((q / (1 - q)) / (r / (1 - r)))


def inclusion_bf01(posterior_inclusion, prior_inclusion) -> float:
    bf10 = inclusion_bf10(posterior_inclusion, prior_inclusion)
    return math.inf if bf10 == 0 else 1.0 / bf10


def _as_fraction(value) -> Fraction:
    """Точная дробь; float, являющийся округлением короткой дроби, заменяется ею"""
    if isinstance(value, Rational):
        return Fraction(value)
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"Вероятность не конечна: {value}")
    short = Fraction(value).limit_denominator(2 ** 32)
    return short if float(short) == value else Fraction(value)


@dataclass
class MrfPosterior:
    """Апостериорные выборки и их сводки по ребрам"""

    nodes: List[str]
    n_categories: List[int]
    theta_draws: np.ndarray
    gamma_draws: np.ndarray
    threshold_draws: np.ndarray
    prior: MrfPrior = field(default_factory=MrfPrior)
    config: Optional[McmcConfig] = None
    acceptance: List[Dict[str, float]] = field(default_factory=list)

    inclusion_prob: np.ndarray = field(init=False)
    bf10: np.ndarray = field(init=False)
    saturated: np.ndarray = field(init=False)
    theta_mean: np.ndarray = field(init=False)
    theta_mean_unconditional: np.ndarray = field(init=False)
    theta_sd: np.ndarray = field(init=False)
    theta_ci_low: np.ndarray = field(init=False)
    theta_ci_high: np.ndarray = field(init=False)
    mean_outside_ci: np.ndarray = field(init=False)

    def __post_init__(self):
        p = len(self.nodes)
        if self.theta_draws.shape != self.gamma_draws.shape or self.theta_draws.shape[1] != p * (p - 1) // 2:
            raise DomainError("Размеры выборок не соответствуют числу узлов")
        self._summarize()

    @property
    def p(self) -> int:
        return len(self.nodes)

    @property
    def n_draws(self) -> int:
        return self.theta_draws.shape[0]

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return list(zip(*np.triu_indices(self.p, 1)))

    def _matrix(self, values: np.ndarray, dtype=float) -> np.ndarray:
        matrix = np.zeros((self.p, self.p), dtype=dtype)
        upper = np.triu_indices(self.p, 1)
        matrix[upper] = values
        matrix[(upper[1], upper[0])] = values
        return matrix

    def _summarize(self) -> None:
        n_edges = self.theta_draws.shape[1]
        included_counts = self.gamma_draws.sum(axis=0).astype(int)
        draws = max(self.n_draws, 1)
        inclusion = included_counts / draws

        bf = np.zeros(n_edges)
        saturated = np.zeros(n_edges, dtype=bool)
        mean = np.zeros(n_edges)
        sd = np.zeros(n_edges)
        low = np.zeros(n_edges)
        high = np.zeros(n_edges)
        outside = np.zeros(n_edges, dtype=bool)
        for e in range(n_edges):
            value = inclusion_bf10(Fraction(int(included_counts[e]), draws), self.prior.inclusion_prob)
            if value >= BF_CAP:
                value, saturated[e] = BF_CAP, True
            bf[e] = value
            included = self.theta_draws[self.gamma_draws[:, e] == 1, e]
            if included.size:
                mean[e] = included.mean()
                sd[e] = included.std(ddof=1) if included.size > 1 else 0.0
                low[e], high[e] = np.quantile(included, [(1 - CI_LEVEL) / 2, (1 + CI_LEVEL) / 2])
                outside[e] = not low[e] <= mean[e] <= high[e]

        self.inclusion_prob = self._matrix(inclusion)
        self.bf10 = self._matrix(bf)
        self.saturated = self._matrix(saturated, dtype=bool)
        self.theta_mean = self._matrix(mean)
        self.theta_mean_unconditional = self._matrix(
            self.theta_draws.mean(axis=0) if self.n_draws else np.zeros(n_edges))
        self.theta_sd = self._matrix(sd)
        self.theta_ci_low = self._matrix(low)
        self.theta_ci_high = self._matrix(high)
        # Среднее при тяжелых хвостах может лежать вне квантилей; интервал не расширяется
        self.mean_outside_ci = self._matrix(outside, dtype=bool)

    def state(self, k: int) -> MrfState:
        offsets = np.cumsum([0] + [h - 1 for h in self.n_categories])
        thresholds = [self.threshold_draws[k, offsets[i]:offsets[i + 1]].copy() for i in range(self.p)]
        return MrfState(
            theta=self._matrix(self.theta_draws[k]),
            gamma_adj=self._matrix(self.gamma_draws[k], dtype=np.int8),
            thresholds=thresholds,
        )

    @property
    def draws(self) -> List[MrfState]:
        return [self.state(k) for k in range(self.n_draws)]

    def threshold_means(self) -> List[np.ndarray]:
        offsets = np.cumsum([0] + [h - 1 for h in self.n_categories])
        means = self.threshold_draws.mean(axis=0) if self.n_draws else np.zeros(offsets[-1])
        return [means[offsets[i]:offsets[i + 1]] for i in range(self.p)]

    @classmethod
    def from_draws(cls, nodes: Sequence[str], n_categories: Sequence[int], theta_draws, gamma_draws,
                   threshold_draws=None, prior: Optional[MrfPrior] = None,
                   config: Optional[McmcConfig] = None) -> "MrfPosterior":
        """Сводка по выборкам в виде (D × ребра) в порядке верхнего треугольника"""
        theta_draws = np.asarray(theta_draws, dtype=float)
        gamma_draws = np.asarray(gamma_draws, dtype=np.int8)
        if threshold_draws is None:
            threshold_draws = np.zeros((theta_draws.shape[0], sum(h - 1 for h in n_categories)))
        return cls(
            nodes=list(nodes),
            n_categories=list(n_categories),
            theta_draws=theta_draws,
            gamma_draws=gamma_draws,
            threshold_draws=np.asarray(threshold_draws, dtype=float),
            prior=prior or MrfPrior(),
            config=config,
        )

    @classmethod
    def merge(cls, nodes, n_categories, chains: Sequence[MrfChain], prior: MrfPrior,
              config: Optional[McmcConfig]) -> "MrfPosterior":
        """Объединение независимых цепей (чистая свертка)"""
        return cls(
            nodes=list(nodes),
            n_categories=list(n_categories),
            theta_draws=np.concatenate([c.theta_draws for c in chains]),
            gamma_draws=np.concatenate([c.gamma_draws for c in chains]),
            threshold_draws=np.concatenate([c.threshold_draws for c in chains]),
            prior=prior,
            config=config,
            acceptance=[c.acceptance for c in chains],
        )


def fit(data: Union[np.ndarray, OrdinalMatrix], prior: Optional[MrfPrior] = None,
        config: Optional[McmcConfig] = None, node_names: Optional[Sequence[str]] = None,
        n_categories: Optional[Sequence[int]] = None) -> MrfPosterior:
    """Оценивание структуры и весов сети по полным порядковым данным (категории с 0)"""
    prior = prior or MrfPrior()
    config = config or McmcConfig.for_mrf()
    if isinstance(data, OrdinalMatrix):
        node_names = node_names or data.nodes
        n_categories = n_categories or data.n_categories
        data = data.data
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ConfigError(f"Сети нужно минимум две переменные, получено {data.shape}")
    if n_categories is None:
        n_categories = [max(2, int(v) + 1) for v in data.max(axis=0)] if len(data) else [2] * data.shape[1]
    node_names = list(node_names) if node_names else [f"V{i + 1}" for i in range(data.shape[1])]
    data = _check_data(data.shape[1], data, n_categories)

    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    p = data.shape[1]
    bytes_per_chain = config.retained_per_chain * (p * (p - 1) + sum(n_categories)) * 8 + data.nbytes * 4
    logger.info(f"Оценивание MRF: n={len(data)}, p={p}, цепей {config.chains}, итераций {config.iterations}")

    runner = ChainRunner(config.max_workers)
    chains = runner.run(
        _run_mrf_chain,
        [(data, list(n_categories), prior, config, seed, index) for index, seed in enumerate(seeds)],
        bytes_per_chain=bytes_per_chain,
    )
    return MrfPosterior.merge(node_names, n_categories, chains, prior, config)


@dataclass(frozen=True)
class Edge:
    node_a: str
    node_b: str
    inclusion_prob: float
    bf10: float
    saturated: bool
    theta_mean: float
    theta_sd: float
    ci_low: float
    ci_high: float
    conclusive: bool
    retained: bool = True
    mean_outside_ci: bool = False

    @property
    def sign(self) -> str:
        return "+" if self.theta_mean > 0 else "-" if self.theta_mean < 0 else "0"


@dataclass(frozen=True)
class EdgeReport:
    nodes: List[str]
    edges: List[Edge]
    bf_threshold: float


def _edge(post: MrfPosterior, i: int, j: int, bf_threshold: float) -> Edge:
    return Edge(
        node_a=post.nodes[i], node_b=post.nodes[j],
        inclusion_prob=float(post.inclusion_prob[i, j]),
        bf10=float(post.bf10[i, j]),
        saturated=bool(post.saturated[i, j]),
        theta_mean=float(post.theta_mean[i, j]),
        theta_sd=float(post.theta_sd[i, j]),
        ci_low=float(post.theta_ci_low[i, j]),
        ci_high=float(post.theta_ci_high[i, j]),
        conclusive=bool(post.bf10[i, j] >= bf_threshold),
        retained=bool(post.inclusion_prob[i, j] >= 0.5),
        mean_outside_ci=bool(post.mean_outside_ci[i, j]),
    )


def median_probability_graph(post: MrfPosterior, bf_threshold: float = 10.0) -> EdgeReport:
    """Ребра с вероятностью включения ≥ 0.5; при BF₁₀ ниже порога ребро неубедительно"""
    if not bf_threshold > 0:
        raise DomainError(f"Порог BF должен быть положительным: {bf_threshold}")
    edges = [_edge(post, i, j, bf_threshold) for i, j in post.edges
             if post.inclusion_prob[i, j] >= 0.5]
    logger.info(f"Граф медианной вероятности: {len(edges)} ребер, "
                f"неубедительных {sum(not e.conclusive for e in edges)}")
    return EdgeReport(nodes=list(post.nodes), edges=edges, bf_threshold=bf_threshold)


def edge_table(post: MrfPosterior, bf_threshold: float = 10.0) -> pd.DataFrame:
    """Все пары узлов с признаками retained и conclusive"""
    rows = []
    for i, j in post.edges:
        edge = _edge(post, i, j, bf_threshold)
        rows.append({
            'node_a': edge.node_a, 'node_b': edge.node_b, 'inclusion_prob': edge.inclusion_prob,
            'bf10': edge.bf10, 'saturated': edge.saturated, 'theta_mean': edge.theta_mean,
            'theta_sd': edge.theta_sd, 'ci_low': edge.ci_low, 'ci_high': edge.ci_high,
            'retained': edge.retained, 'conclusive': edge.retained and edge.conclusive,
            'mean_outside_ci': edge.mean_outside_ci,
        })
    return pd.DataFrame(rows, columns=['node_a', 'node_b', 'inclusion_prob', 'bf10', 'saturated',
                                       'theta_mean', 'theta_sd', 'ci_low', 'ci_high',
                                       'retained', 'conclusive', 'mean_outside_ci'])


def network_clusters(report: EdgeReport) -> List[List[str]]:
    """Компоненты связности по сохраненным убедительным ребрам"""
    index = {node: k for k, node in enumerate(report.nodes)}
    pairs = np.array([(index[e.node_a], index[e.node_b]) for e in report.edges if e.conclusive],
                     dtype=int).reshape(-1, 2)
    adjacency = csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(index), len(index)))
    _, labels = connected_components(adjacency, directed=False)

    groups: Dict[int, List[str]] = {}
    for node in report.nodes:
        groups.setdefault(int(labels[index[node]]), []).append(node)
    return list(groups.values())


def node_strength(report: EdgeReport) -> Dict[str, float]:
    """Сумма |θ̄| по сохраненным ребрам узла"""
    strength = {node: 0.0 for node in report.nodes}
    for edge in report.edges:
        strength[edge.node_a] += abs(edge.theta_mean)
        strength[edge.node_b] += abs(edge.theta_mean)
    return strength
