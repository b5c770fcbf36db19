"""
Генераторы синтетических данных и точные оракулы для обеих моделей.

Генератор случайных чисел: numpy Generator(Philox), счетчиковый алгоритм
с 64-битным ключом из зерна; дочерние потоки через SeedSequence.spawn.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, TypeAdapter, ValidationError, model_validator
from scipy.special import expit, logsumexp

from errors import DomainError, InvalidSpecError, MissingFileError, TooLargeError
from grm import GrmParams
from mrf import MrfState
from survey_data import Codebook, CovariateDef, ItemDef, SurveyDataset

logger = logging.getLogger(__name__)

ENUMERATION_CAP = 1_000_000
EXACT_LIMIT = 4096
GIBBS_BURN_IN = 1000
GIBBS_SPACING = 10
GIBBS_LANES = 50


def make_rng(seed) -> np.random.Generator:
    """Philox с ключом из зерна (int или SeedSequence)"""
    return np.random.Generator(np.random.Philox(seed))


class SimCovariate(BaseModel):
    name: str = Field(min_length=1)
    kind: Literal["binary", "numeric"] = "binary"
    prob: float = Field(0.5, ge=0.0, le=1.0)
    levels: List[str] = Field(default_factory=lambda: ["0", "1"])
    mean: float = 0.0
    sd: float = Field(1.0, gt=0.0)

    def definition(self) -> CovariateDef:
        if self.kind == "binary":
            return CovariateDef(name=self.name, kind="binary", levels=self.levels)
        return CovariateDef(name=self.name, kind="numeric")


class GrmSimSpec(BaseModel):
    """Истинные параметры GRM и план ковариат"""

    model: Literal["grm"] = "grm"
    seed: int = Field(ge=0, lt=2 ** 64)
    n: int = Field(ge=0)
    items: List[str] = Field(default_factory=list)
    n_categories: int = Field(4, ge=2)
    beta: List[float]
    gamma: List[float]
    delta: List[float]
    alpha: List[float] = Field(default_factory=list)
    covariates: List[SimCovariate] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self):
        if not self.items:
            self.items = [f"I{j + 1}" for j in range(len(self.beta))]
        if not len(self.items) == len(self.beta) == len(self.gamma):
            raise ValueError("items, beta и gamma должны иметь одинаковую длину")
        if any(g <= 0 for g in self.gamma):
            raise ValueError("gamma должны быть положительными")
        if len(self.delta) != self.n_categories - 1 or self.delta[0] != 0:
            raise ValueError("delta: H−1 значений, первое равно 0")
        if any(b <= a for a, b in zip(self.delta, self.delta[1:])):
            raise ValueError("delta должны строго возрастать")
        if len(self.alpha) != len(self.covariates):
            raise ValueError("alpha и covariates должны иметь одинаковую длину")
        return self


class MrfSimSpec(BaseModel):
    """Истинное состояние сети и параметры сэмплера Гиббса"""

    model: Literal["mrf"] = "mrf"
    seed: int = Field(ge=0, lt=2 ** 64)
    n: int = Field(ge=0)
    nodes: List[str] = Field(default_factory=list)
    n_categories: List[int]
    thresholds: Optional[List[List[float]]] = None
    edges: List[Tuple[str, str, float]] = Field(default_factory=list)
    gibbs_burn_in: int = Field(GIBBS_BURN_IN, ge=0)
    gibbs_spacing: int = Field(GIBBS_SPACING, ge=1)
    gibbs_lanes: int = Field(GIBBS_LANES, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if not self.nodes:
            self.nodes = [f"V{i + 1}" for i in range(len(self.n_categories))]
        if len(self.nodes) != len(self.n_categories) or any(h < 2 for h in self.n_categories):
            raise ValueError("nodes и n_categories (≥ 2) должны совпадать по длине")
        if self.thresholds is not None and [len(mu) for mu in self.thresholds] != [h - 1 for h in self.n_categories]:
            raise ValueError("thresholds: m_i значений на каждый узел")
        for a, b, _ in self.edges:
            if a not in self.nodes or b not in self.nodes or a == b:
                raise ValueError(f"Некорректное ребро {a}-{b}")
        return self

    def state(self) -> MrfState:
        index = {node: i for i, node in enumerate(self.nodes)}
        return MrfState.from_edges(
            self.n_categories,
            [(index[a], index[b], weight) for a, b, weight in self.edges],
            self.thresholds,
        )


SimSpec = Annotated[Union[GrmSimSpec, MrfSimSpec], Field(discriminator="model")]
_SPEC_ADAPTER = TypeAdapter(SimSpec)


def load_spec(path) -> Union[GrmSimSpec, MrfSimSpec]:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path)
    try:
        return _SPEC_ADAPTER.validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InvalidSpecError(f"Некорректная спецификация симуляции {path}: {e}") from e


def gen_grm(spec: GrmSimSpec) -> Tuple[SurveyDataset, GrmParams]:
    """θ_i ~ N(x_iᵀα, 1), затем Y_ij = 1 + #{h: u_ij < P(Y ≥ h+1)}"""
    rng = make_rng(spec.seed)
    n, h = spec.n, spec.n_categories

    raw = {}
    design = np.empty((n, len(spec.covariates)))
    for k, covariate in enumerate(spec.covariates):
        if covariate.kind == "binary":
            codes = (rng.random(n) < covariate.prob).astype(np.int64)
            raw[covariate.name] = pd.Categorical(np.array(covariate.levels)[codes], categories=covariate.levels)
            design[:, k] = codes
        else:
            values = rng.normal(covariate.mean, covariate.sd, n)
            raw[covariate.name] = values
            design[:, k] = values - values.mean() if n else values

    alpha = np.asarray(spec.alpha, dtype=float)
    theta = design @ alpha + rng.standard_normal(n)
    beta = np.asarray(spec.beta, dtype=float)
    gamma = np.asarray(spec.gamma, dtype=float)
    delta = np.asarray(spec.delta, dtype=float)

    at_least = expit(gamma[None, :, None] * (theta[:, None, None] - beta[None, :, None] - delta[None, None, :]))
    u = rng.random((n, len(beta), 1))
    responses = 1 + (u < at_least).sum(axis=2)

    codebook = Codebook(
        items=[ItemDef(abbr=abbr, n_categories=h) for abbr in spec.items],
        covariates=[c.definition() for c in spec.covariates],
    )
    dataset = SurveyDataset(
        responses=responses,
        covariates=pd.DataFrame(raw, index=range(n), columns=codebook.covariate_names),
        codebook=codebook,
    )
    truth = GrmParams(theta=theta, beta=beta, log_gamma=np.log(gamma), delta=delta, alpha=alpha)
    logger.info(f"Симуляция GRM: n={n}, M={len(beta)}, H={h}, K={len(alpha)}")
    return dataset, truth


@dataclass(frozen=True)
class MrfJointTable:
    """Точное совместное распределение p(x) по всем конфигурациям"""

    configurations: np.ndarray
    probabilities: np.ndarray
    n_categories: Tuple[int, ...]

    def _index(self, x: np.ndarray) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(x)), self.n_categories))

    def probability(self, x: Sequence[int]) -> float:
        return float(self.probabilities[self._index(np.asarray(x))])

    def conditional(self, i: int, x: Sequence[int]) -> np.ndarray:
        """p(x_i = c | x_{-i}) для c = 0..m_i"""
        x = np.array(x, dtype=np.int64)
        weights = np.empty(self.n_categories[i])
        for c in range(self.n_categories[i]):
            x[i] = c
            weights[c] = self.probabilities[self._index(x)]
        return weights / weights.sum()

    def marginal(self, i: int) -> np.ndarray:
        return np.bincount(self.configurations[:, i], weights=self.probabilities,
                           minlength=self.n_categories[i])

    def pairwise(self, i: int, j: int) -> np.ndarray:
        table = np.zeros((self.n_categories[i], self.n_categories[j]))
        np.add.at(table, (self.configurations[:, i], self.configurations[:, j]), self.probabilities)
        return table


def _configuration_count(n_categories: Sequence[int]) -> int:
    return math.prod(n_categories)


def enumerate_mrf_joint(state: MrfState) -> MrfJointTable:
    """p(x) ∝ exp(Σ_i μ_{i,x_i} + Σ_{i<j} θ_ij x_i x_j) полным перебором"""
    n_categories = tuple(state.n_categories)
    count = _configuration_count(n_categories)
    if count > ENUMERATION_CAP:
        raise TooLargeError(f"{count} конфигураций превышает предел {ENUMERATION_CAP}")
    configurations = np.array(list(itertools.product(*(range(h) for h in n_categories))), dtype=np.int64)
    energy = sum(
        np.concatenate(([0.0], state.thresholds[i]))[configurations[:, i]] for i in range(state.p)
    ) + 0.5 * np.einsum('ci,ij,cj->c', configurations, state.theta, configurations)
    log_p = energy - logsumexp(energy)
    return MrfJointTable(configurations=configurations, probabilities=np.exp(log_p), n_categories=n_categories)


def _gibbs_sweep(x: np.ndarray, state: MrfState, rng: np.random.Generator) -> None:
    for i in range(state.p):
        rest = x @ state.theta[:, i]
        m = len(state.thresholds[i])
        z = np.concatenate(([0.0], state.thresholds[i]))[None, :] + rest[:, None] * np.arange(m + 1)
        probs = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        u = rng.random(len(x))
        x[:, i] = np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), m)


def gen_mrf(state: MrfState, n: int, seed, burn_in: int = GIBBS_BURN_IN, spacing: int = GIBBS_SPACING,
            lanes: int = GIBBS_LANES, exact_limit: int = EXACT_LIMIT) -> np.ndarray:
    """Выборка n × p (категории с 0): точная при малом числе конфигураций, иначе Гиббс"""
    state.validate()
    if n < 0:
        raise DomainError(f"Отрицательный размер выборки: {n}")
    rng = make_rng(seed)
    n_categories = state.n_categories

    if _configuration_count(n_categories) <= exact_limit:
        table = enumerate_mrf_joint(state)
        index = rng.choice(len(table.probabilities), size=n, p=table.probabilities)
        logger.debug(f"Точная выборка MRF: {n} строк из {len(table.probabilities)} конфигураций")
        return table.configurations[index].copy()

    x = np.column_stack([rng.integers(0, h, size=lanes) for h in n_categories]).astype(np.int64)
    for _ in range(burn_in):
        _gibbs_sweep(x, state, rng)
    rows = []
    for _ in range(math.ceil(n / lanes)):
        for _ in range(spacing):
            _gibbs_sweep(x, state, rng)
        rows.append(x.copy())
    logger.debug(f"Выборка Гиббса MRF: {lanes} цепей, burn-in {burn_in}, шаг {spacing}")
    return np.concatenate(rows)[:n] if rows else np.empty((0, state.p), dtype=np.int64)


def simulated_dataset(data: np.ndarray, nodes: Sequence[str], n_categories: Sequence[int]) -> SurveyDataset:
    """Набор данных, где все узлы являются пунктами со значениями 1..H"""
    codebook = Codebook(items=[ItemDef(abbr=node, n_categories=h) for node, h in zip(nodes, n_categories)])
    return SurveyDataset(responses=np.asarray(data) + 1, covariates=None, codebook=codebook)


def simulate_mrf(spec: MrfSimSpec) -> Tuple[SurveyDataset, MrfState]:
    state = spec.state()
    data = gen_mrf(state, spec.n, spec.seed, burn_in=spec.gibbs_burn_in,
                   spacing=spec.gibbs_spacing, lanes=spec.gibbs_lanes)
    logger.info(f"Симуляция MRF: n={spec.n}, p={len(spec.nodes)}, ребер {len(spec.edges)}")
    return simulated_dataset(data, spec.nodes, spec.n_categories), state


def simulate(spec: Union[GrmSimSpec, MrfSimSpec]) -> SurveyDataset:
    if isinstance(spec, GrmSimSpec):
        return gen_grm(spec)[0]
    return simulate_mrf(spec)[0]
