"""
Байесовская модель градуированного ответа (GRM) с регрессией латентной черты на ковариаты.

P(Y_ij ≥ h) = logistic(γ_j(θ_i − β_j − δ_{h−1})), h = 2..H, δ_1 = 0;
θ_i ~ N(x_iᵀα, 1). Оценивание: многоцепочечный Метрополис внутри Гиббса.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.special import expit, log_expit
from tqdm import tqdm

from errors import ConfigError, DomainError, IncompleteDataError, MonotonicityError, NonFiniteError
from mcmc_settings import McmcConfig
from system_optimizer import SystemDetector
from workers import ChainRunner

logger = logging.getLogger(__name__)

CI_LEVEL = 0.95
PARAMETERS = ('theta', 'beta', 'log_gamma', 'delta', 'alpha')


@dataclass
class GrmParams:
    theta: np.ndarray
    beta: np.ndarray
    log_gamma: np.ndarray
    delta: np.ndarray  # δ_1..δ_{H−1}, δ_1 = 0
    alpha: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.log_gamma)

    @property
    def n_categories(self) -> int:
        return len(self.delta) + 1

    @classmethod
    def initial(cls, n: int, n_items: int, n_categories: int, n_covariates: int) -> "GrmParams":
        return cls(
            theta=np.zeros(n),
            beta=np.zeros(n_items),
            log_gamma=np.zeros(n_items),
            delta=np.arange(n_categories - 1, dtype=float),
            alpha=np.zeros(n_covariates),
        )

    def validate(self) -> None:
        if len(self.beta) != len(self.log_gamma):
            raise DomainError("Длины beta и log_gamma различаются")
        if len(self.delta) < 1 or self.delta[0] != 0:
            raise DomainError("δ_1 должен быть равен 0")
        _check_ordered(self.delta)
        for name in PARAMETERS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteError(f"Параметр {name} не конечен")

    def copy(self) -> "GrmParams":
        return GrmParams(*(getattr(self, name).copy() for name in PARAMETERS))


def _check_ordered(delta: np.ndarray) -> None:
    if np.any(np.diff(delta) <= 0):
        raise MonotonicityError(f"Пороги категорий должны строго возрастать: {np.asarray(delta).tolist()}")


class GrmPrior(BaseModel):
    """Априорные стандартные отклонения; дисперсия θ фиксирована равной 1"""

    sigma2_theta: float = Field(1.0, frozen=True)
    sd_item: float = Field(10.0, gt=0.0)
    sd_delta: float = Field(10.0, gt=0.0)
    sd_alpha: float = Field(10.0, gt=0.0)

    @classmethod
    def from_convention(cls, convention: Literal["precision", "variance"] = "precision",
                        value: float = 0.01) -> "GrmPrior":
        """Значение 0.01 как точность (sd = 10) или как дисперсия (sd = 0.1)"""
        if value <= 0:
            raise ConfigError(f"Параметр априорного распределения должен быть положительным: {value}")
        if convention == "precision":
            sd = 1.0 / math.sqrt(value)
        elif convention == "variance":
            sd = math.sqrt(value)
        else:
            raise ConfigError(f"Неизвестное соглашение: {convention}")
        return cls(sd_item=sd, sd_delta=sd, sd_alpha=sd)


def cumulative_prob(theta_i, gamma_j, beta_jh):
    """P(Y ≥ h) = logistic(γ(θ − β_jh))"""
    if np.any(np.asarray(gamma_j) <= 0):
        raise DomainError(f"Дискриминация должна быть положительной: {gamma_j}")
    result = expit(np.asarray(gamma_j) * (np.asarray(theta_i) - np.asarray(beta_jh)))
    return float(result) if np.ndim(result) == 0 else result


def category_prob(theta_i: float, gamma_j: float, beta_j: float, delta: Sequence[float], h: int) -> float:
    """P(Y = h) = P(Y ≥ h) − P(Y ≥ h+1), P(Y ≥ 1) = 1, P(Y ≥ H+1) = 0"""
    delta = np.asarray(delta, dtype=float)
    n_categories = len(delta) + 1
    if not 1 <= h <= n_categories:
        raise DomainError(f"Категория {h} вне 1..{n_categories}")
    _check_ordered(delta)
    upper = 1.0 if h == 1 else cumulative_prob(theta_i, gamma_j, beta_j + delta[h - 2])
    lower = 0.0 if h == n_categories else cumulative_prob(theta_i, gamma_j, beta_j + delta[h - 1])
    return upper - lower


def _extended_cuts(delta: np.ndarray) -> np.ndarray:
    return np.concatenate(([-np.inf], delta, [np.inf]))


def cell_loglik(theta: np.ndarray, beta: np.ndarray, gamma: np.ndarray, delta: np.ndarray,
                data: np.ndarray) -> np.ndarray:
    """Матрица log P(Y_ij) для ответов 1..H, устойчиво в хвостах"""
    cuts = _extended_cuts(delta)
    centered = theta[:, None] - beta[None, :]
    a = gamma[None, :] * (centered - cuts[data - 1])
    b = gamma[None, :] * (centered - cuts[data])
    with np.errstate(divide='ignore'):
        return log_expit(a) + log_expit(-b) + np.log(-np.expm1(b - a))


def _check_responses(data: np.ndarray, n_categories: int) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2:
        raise DomainError(f"Ожидалась матрица ответов, получено {data.shape}")
    if np.any(data < 1):
        raise IncompleteDataError("В ответах есть пропуски")
    if np.any(data > n_categories):
        raise DomainError(f"Ответ вне 1..{n_categories}")
    return data.astype(np.int64)


def loglik(params: GrmParams, data: np.ndarray) -> float:
    """Σ_i Σ_j log P(Y_ij | θ_i, β_j, γ_j, δ)"""
    params.validate()
    data = _check_responses(data, params.n_categories)
    if data.shape != (len(params.theta), len(params.beta)):
        raise DomainError(f"Форма данных {data.shape} не соответствует параметрам")
    return float(cell_loglik(params.theta, params.beta, params.gamma, params.delta, data).sum())


@dataclass
class GrmChain:
    draws: Dict[str, np.ndarray]
    acceptance: Dict[str, float]


class GrmSampler:
    """Одна цепь: векторные блоки θ_i и (β_j, log γ_j), последовательные δ_h и α_k"""

    MIN_SCALE = 1e-4
    MAX_SCALE = 50.0

    def __init__(self, data: np.ndarray, covariates: np.ndarray, n_categories: int, prior: GrmPrior,
                 config: McmcConfig, rng: np.random.Generator, chain: int = 0):
        self.logger = logging.getLogger('GrmSampler')
        self.y = np.asarray(data, dtype=np.int64)
        self.x = np.asarray(covariates, dtype=float)
        self.n, self.n_items = self.y.shape
        self.n_covariates = self.x.shape[1]
        self.n_categories = n_categories
        self.prior = prior
        self.config = config
        self.rng = rng
        self.chain = chain

        self.params = GrmParams.initial(self.n, self.n_items, n_categories, self.n_covariates)
        self.cells = self._cells(self.params)
        if not np.all(np.isfinite(self.cells)):
            raise NonFiniteError("Правдоподобие в начальной точке не конечно")

        self.theta_scale = np.full(self.n, 1.0)
        self.item_scale = np.full(self.n_items, 0.3)
        self.delta_scale = np.full(max(n_categories - 1, 0), 0.3)
        self.alpha_scale = np.full(self.n_covariates, 0.3)
        self.moves = {name: [0, 0] for name in ('theta', 'item', 'delta', 'alpha')}
        self.detector = SystemDetector()

    def _cells(self, params: GrmParams) -> np.ndarray:
        return cell_loglik(params.theta, params.beta, params.gamma, params.delta, self.y)

    def _adapt(self, scale: np.ndarray, log_alpha: np.ndarray, t: int) -> np.ndarray:
        accept_prob = np.exp(np.minimum(log_alpha, 0.0))
        accept_prob = np.where(np.isnan(accept_prob), 0.0, accept_prob)
        scale = scale * np.exp((accept_prob - self.config.adapt_target) / t ** 0.6)
        return np.clip(scale, self.MIN_SCALE, self.MAX_SCALE)

    def _accept(self, log_alpha: np.ndarray) -> np.ndarray:
        u = self.rng.random(np.shape(log_alpha) or None)
        with np.errstate(over='ignore'):
            return u < np.exp(np.minimum(log_alpha, 0.0))

    def _count(self, move: str, accepted: np.ndarray, adapting: bool) -> None:
        if not adapting:
            self.moves[move][0] += int(np.sum(accepted))
            self.moves[move][1] += int(np.size(accepted))

    def update_theta(self, t: int, adapting: bool) -> None:
        p = self.params
        mean = self.x @ p.alpha
        proposal = p.theta + self.theta_scale * self.rng.standard_normal(self.n)
        cells = cell_loglik(proposal, p.beta, p.gamma, p.delta, self.y)
        log_alpha = (cells.sum(axis=1) - self.cells.sum(axis=1)
                     - 0.5 * ((proposal - mean) ** 2 - (p.theta - mean) ** 2))
        accepted = self._accept(log_alpha)
        p.theta = np.where(accepted, proposal, p.theta)
        self.cells[accepted] = cells[accepted]
        if adapting:
            self.theta_scale = self._adapt(self.theta_scale, log_alpha, t)
        self._count('theta', accepted, adapting)

    def update_items(self, t: int, adapting: bool) -> None:
        p = self.params
        sd = self.prior.sd_item
        beta = p.beta + self.item_scale * self.rng.standard_normal(self.n_items)
        log_gamma = p.log_gamma + self.item_scale * self.rng.standard_normal(self.n_items)
        cells = cell_loglik(p.theta, beta, np.exp(log_gamma), p.delta, self.y)
        log_alpha = (cells.sum(axis=0) - self.cells.sum(axis=0)
                     - 0.5 * (beta ** 2 + log_gamma ** 2 - p.beta ** 2 - p.log_gamma ** 2) / sd ** 2)
        accepted = self._accept(log_alpha)
        p.beta = np.where(accepted, beta, p.beta)
        p.log_gamma = np.where(accepted, log_gamma, p.log_gamma)
        self.cells[:, accepted] = cells[:, accepted]
        if adapting:
            self.item_scale = self._adapt(self.item_scale, log_alpha, t)
        self._count('item', accepted, adapting)

    def update_delta(self, t: int, adapting: bool) -> None:
        p = self.params
        sd = self.prior.sd_delta
        for h in range(1, len(p.delta)):
            current = p.delta[h]
            proposal = current + self.delta_scale[h] * self.rng.standard_normal()
            upper = p.delta[h + 1] if h + 1 < len(p.delta) else np.inf
            if not p.delta[h - 1] < proposal < upper:
                # Нарушение порядка порогов: отказ без вычисления правдоподобия
                log_alpha = -np.inf
                cells = None
            else:
                delta = p.delta.copy()
                delta[h] = proposal
                cells = cell_loglik(p.theta, p.beta, p.gamma, delta, self.y)
                log_alpha = cells.sum() - self.cells.sum() - 0.5 * (proposal ** 2 - current ** 2) / sd ** 2
            accepted = bool(self._accept(np.array(log_alpha)))
            if accepted:
                p.delta[h] = proposal
                self.cells = cells
            if adapting:
                self.delta_scale[h] = self._adapt(self.delta_scale[h:h + 1], np.array([log_alpha]), t)[0]
            self._count('delta', np.array([accepted]), adapting)

    def update_alpha(self, t: int, adapting: bool) -> None:
        p = self.params
        sd = self.prior.sd_alpha
        residual = p.theta - self.x @ p.alpha
        for k in range(self.n_covariates):
            step = self.alpha_scale[k] * self.rng.standard_normal()
            proposal_residual = residual - self.x[:, k] * step
            proposal = p.alpha[k] + step
            log_alpha = (-0.5 * (proposal_residual @ proposal_residual - residual @ residual)
                         - 0.5 * (proposal ** 2 - p.alpha[k] ** 2) / sd ** 2)
            accepted = bool(self._accept(np.array(log_alpha)))
            if accepted:
                p.alpha[k] = proposal
                residual = proposal_residual
            if adapting:
                self.alpha_scale[k] = self._adapt(self.alpha_scale[k:k + 1], np.array([log_alpha]), t)[0]
            self._count('alpha', np.array([accepted]), adapting)

    def sweep(self, t: int, adapting: bool) -> None:
        self.update_theta(t, adapting)
        self.update_items(t, adapting)
        self.update_delta(t, adapting)
        self.update_alpha(t, adapting)
        if not np.all(np.isfinite(self.cells)):
            raise NonFiniteError(f"Правдоподобие не конечно на итерации {t}")

    def acceptance_rates(self) -> Dict[str, float]:
        return {name: (acc / tries if tries else float('nan')) for name, (acc, tries) in self.moves.items()}

    def run(self) -> GrmChain:
        cfg = self.config
        retained = cfg.retained_per_chain
        draws = {name: np.empty((retained, len(getattr(self.params, name)))) for name in PARAMETERS}

        start_time = time.time()
        k = 0
        iterator = tqdm(range(1, cfg.iterations + 1), disable=not cfg.show_progress,
                        desc=f"GRM цепь {self.chain + 1}")
        for t in iterator:
            adapting = t <= cfg.burn_in
            self.sweep(t, adapting)
            if not adapting and (t - cfg.burn_in) % cfg.thin == 0:
                for name in PARAMETERS:
                    draws[name][k] = getattr(self.params, name)
                k += 1
            if t % cfg.log_every == 0:
                self.logger.info(
                    f"Цепь {self.chain + 1}: итерация {t}/{cfg.iterations}, "
                    f"logL {self.cells.sum():.2f}, принятие {self.acceptance_rates()}, "
                    f"{time.time() - start_time:.1f}с, память {self.detector.resident_memory_mb():.1f}MB"
                )
        return GrmChain({name: values[:k] for name, values in draws.items()}, self.acceptance_rates())


def _run_grm_chain(data, covariates, n_categories, prior, config, seed, chain) -> GrmChain:
    rng = np.random.Generator(np.random.Philox(seed))
    return GrmSampler(data, covariates, n_categories, prior, config, rng, chain).run()


def gelman_rubin(chains: Sequence[Sequence[float]]) -> float:
    """R̂ = sqrt(((n−1)/n · W + B/n) / W); NaN при W = 0"""
    try:
        values = np.asarray(chains, dtype=float)
    except ValueError as e:
        raise DomainError("Цепи должны иметь одинаковую длину") from e
    if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
        raise DomainError(f"Нужно минимум 2 цепи длиной ≥ 2, получено {values.shape}")
    rhat = _rhat(values[:, :, None])[0]
    if np.isnan(rhat):
        logger.warning("Вырожденная диагностика Гельмана-Рубина: внутрицепная дисперсия равна 0")
    return float(rhat)


def _rhat(draws: np.ndarray) -> np.ndarray:
    """R̂ по каждому столбцу массива (цепи × выборки × параметры)"""
    n_chains, n_draws, width = draws.shape
    if n_chains < 2 or n_draws < 2:
        return np.full(width, np.nan)
    within = draws.var(axis=1, ddof=1).mean(axis=0)
    between = n_draws * draws.mean(axis=1).var(axis=0, ddof=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        pooled = (n_draws - 1) / n_draws * within + between / n_draws
        rhat = np.sqrt(pooled / within)
    return np.where(within > 0, rhat, np.nan)


def _interval(values: np.ndarray):
    return np.quantile(values, [(1 - CI_LEVEL) / 2, (1 + CI_LEVEL) / 2], axis=0)


@dataclass
class GrmPosterior:
    """Выборки цепей в виде массивов (цепи × выборки × размерность)"""

    item_names: List[str]
    covariate_names: List[str]
    n_categories: int
    chains: Dict[str, np.ndarray]
    prior: GrmPrior = field(default_factory=GrmPrior)
    config: Optional[McmcConfig] = None
    acceptance: List[Dict[str, float]] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.chains['beta'].shape[0]

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.chains['beta'].shape[1]

    def draws(self, name: str) -> np.ndarray:
        if name == 'gamma':
            return np.exp(self.chains['log_gamma'])
        if name not in self.chains:
            raise DomainError(f"Неизвестный параметр: {name}")
        return self.chains[name]

    def pooled(self, name: str) -> np.ndarray:
        values = self.draws(name)
        return values.reshape(-1, values.shape[-1])

    def _summary_rows(self, name: str, labels: Sequence[str], columns=None) -> List[Dict]:
        values = self.draws(name)
        if columns is not None:
            values = values[:, :, columns]
        pooled = values.reshape(-1, values.shape[-1])
        if pooled.shape[0] == 0 or pooled.shape[1] == 0:
            return []
        low, high = _interval(pooled)
        rhat = _rhat(values)
        mean = pooled.mean(axis=0)
        sd = pooled.std(axis=0, ddof=1) if pooled.shape[0] > 1 else np.zeros(pooled.shape[1])
        return [
            {'parameter': f"{name}[{label}]", 'mean': mean[k], 'sd': sd[k],
             'ci_low': low[k], 'ci_high': high[k], 'rhat': rhat[k]}
            for k, label in enumerate(labels)
        ]

    @property
    def summaries(self) -> pd.DataFrame:
        """Среднее, sd, 95% интервал и R̂ по скалярным параметрам (кроме θ)"""
        if self.n_chains < 2:
            logger.warning("R̂ не определен для одной цепи")
        rows = []
        rows += self._summary_rows('beta', self.item_names)
        rows += self._summary_rows('gamma', self.item_names)
        free = list(range(1, self.n_categories - 1))
        rows += self._summary_rows('delta', [str(h + 1) for h in free], columns=free)
        rows += self._summary_rows('alpha', self.covariate_names)
        return pd.DataFrame(rows, columns=['parameter', 'mean', 'sd', 'ci_low', 'ci_high', 'rhat'])

    @property
    def rhat(self) -> Dict[str, float]:
        return dict(zip(self.summaries['parameter'], self.summaries['rhat']))

    def theta_summary(self) -> pd.DataFrame:
        values = self.draws('theta')
        pooled = values.reshape(-1, values.shape[-1])
        n = pooled.shape[1]
        if pooled.shape[0] == 0 or n == 0:
            return pd.DataFrame(columns=['respondent', 'mean', 'sd', 'ci_low', 'ci_high', 'rhat'])
        low, high = _interval(pooled)
        return pd.DataFrame({
            'respondent': np.arange(1, n + 1),
            'mean': pooled.mean(axis=0),
            'sd': pooled.std(axis=0, ddof=1) if pooled.shape[0] > 1 else np.zeros(n),
            'ci_low': low,
            'ci_high': high,
            'rhat': _rhat(values),
        })

    @classmethod
    def merge(cls, item_names, covariate_names, n_categories, chains: Sequence[GrmChain],
              prior: GrmPrior, config: Optional[McmcConfig]) -> "GrmPosterior":
        return cls(
            item_names=list(item_names),
            covariate_names=list(covariate_names),
            n_categories=n_categories,
            chains={name: np.stack([c.draws[name] for c in chains]) for name in PARAMETERS},
            prior=prior,
            config=config,
            acceptance=[c.acceptance for c in chains],
        )


def fit(data: np.ndarray, covariates: Optional[np.ndarray] = None, prior: Optional[GrmPrior] = None,
        config: Optional[McmcConfig] = None, item_names: Optional[Sequence[str]] = None,
        covariate_names: Optional[Sequence[str]] = None,
        n_categories: Optional[int] = None) -> GrmPosterior:
    """Оценивание GRM по полным ответам 1..H и матрице ковариат n × K"""
    prior = prior or GrmPrior()
    config = config or McmcConfig.for_grm()
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[1] < 1:
        raise ConfigError(f"Нужен хотя бы один пункт, получено {data.shape}")
    n_categories = n_categories or max(2, int(data.max()) if data.size else 2)
    data = _check_responses(data, n_categories)
    covariates = np.empty((len(data), 0)) if covariates is None else np.asarray(covariates, dtype=float)
    if covariates.ndim != 2 or covariates.shape[0] != len(data):
        raise DomainError(f"Матрица ковариат {covariates.shape} не соответствует {len(data)} строкам")
    if not np.all(np.isfinite(covariates)):
        raise IncompleteDataError("В ковариатах есть пропуски")

    item_names = list(item_names) if item_names else [f"I{j + 1}" for j in range(data.shape[1])]
    covariate_names = (list(covariate_names) if covariate_names
                       else [f"X{k + 1}" for k in range(covariates.shape[1])])
    if config.chains < 2:
        logger.warning("Одна цепь: диагностика Гельмана-Рубина будет недоступна")

    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    width = data.shape[0] + 2 * data.shape[1] + n_categories + covariates.shape[1]
    bytes_per_chain = config.retained_per_chain * width * 8 + data.nbytes * 8
    logger.info(f"Оценивание GRM: n={data.shape[0]}, M={data.shape[1]}, H={n_categories}, "
                f"K={covariates.shape[1]}, цепей {config.chains}")

    runner = ChainRunner(config.max_workers)
    chains = runner.run(
        _run_grm_chain,
        [(data, covariates, n_categories, prior, config, seed, index) for index, seed in enumerate(seeds)],
        bytes_per_chain=bytes_per_chain,
    )
    return GrmPosterior.merge(item_names, covariate_names, n_categories, chains, prior, config)


@dataclass(frozen=True)
class DiscriminationRank:
    rank: int
    item: str
    gamma_mean: float
    ci_low: float
    ci_high: float


def rank_discrimination(post: GrmPosterior) -> List[DiscriminationRank]:
    """Пункты по убыванию апостериорного среднего γ_j; при равенстве по индексу"""
    gamma = post.pooled('gamma')
    means = gamma.mean(axis=0)
    low, high = _interval(gamma)
    order = sorted(range(len(post.item_names)), key=lambda j: (-means[j], j))
    return [
        DiscriminationRank(rank=r + 1, item=post.item_names[j], gamma_mean=float(means[j]),
                           ci_low=float(low[j]), ci_high=float(high[j]))
        for r, j in enumerate(order)
    ]


@dataclass(frozen=True)
class CovariateEffect:
    name: str
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    prob_positive: float


def covariate_effects(post: GrmPosterior) -> List[CovariateEffect]:
    """Сводка α_k с вероятностью направления Pr(α_k > 0)"""
    alpha = post.pooled('alpha')
    if alpha.shape[1] == 0:
        return []
    low, high = _interval(alpha)
    sd = alpha.std(axis=0, ddof=1) if alpha.shape[0] > 1 else np.zeros(alpha.shape[1])
    means = alpha.mean(axis=0)
    positive = (alpha > 0).mean(axis=0)
    return [
        CovariateEffect(name=name, mean=float(means[k]), sd=float(sd[k]), ci_low=float(low[k]),
                        ci_high=float(high[k]), prob_positive=float(positive[k]))
        for k, name in enumerate(post.covariate_names)
    ]


def item_difficulty_table(post: GrmPosterior) -> pd.DataFrame:
    """Апостериорные β_j, γ_j и эффективные трудности β_j + δ_h"""
    beta = post.pooled('beta')
    delta = post.pooled('delta')
    gamma = post.pooled('gamma')
    table = pd.DataFrame({'item': post.item_names, 'beta': beta.mean(axis=0), 'gamma': gamma.mean(axis=0)})
    for h in range(post.n_categories - 1):
        table[f"b_{h + 1}"] = (beta + delta[:, h:h + 1]).mean(axis=0)
    return table
