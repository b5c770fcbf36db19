"""
Модель данных опроса: кодбук, загрузка CSV, очистка и выборки
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import (
    ConfigError, HeaderMismatchError, IncompleteDataError, InvalidSpecError, MissingFileError,
    UnknownCovariateError, UnknownItemError, ValueOutOfRangeError,
)

logger = logging.getLogger(__name__)

MISSING = -1
DATA_DIR = Path(__file__).resolve().parent / "data"
DEMO_CODEBOOK = DATA_DIR / "demo_codebook.json"


class Section(str, Enum):
    """Разделы анкеты"""
    GENDER_ROLES = "gender_roles"
    SEXUAL_VIOLENCE = "sexual_violence"
    RELATIONSHIP_DYNAMICS = "relationship_dynamics"
    TOXIC_BEHAVIORS = "toxic_behaviors"


class ItemDef(BaseModel):
    model_config = ConfigDict(frozen=True)

    abbr: str = Field(min_length=1)
    section: Optional[Section] = None
    n_categories: int = Field(4, ge=2)
    category_labels: List[str] = Field(default_factory=list)
    text: str = ""

    @model_validator(mode="before")
    @classmethod
    def _default_labels(cls, values):
        if isinstance(values, dict) and not values.get("category_labels"):
            h = values.get("n_categories", 4)
            values = dict(values, category_labels=[str(c) for c in range(1, int(h) + 1)])
        return values

    @model_validator(mode="after")
    def _check_labels(self):
        if len(self.category_labels) != self.n_categories:
            raise ValueError(
                f"{self.abbr}: {len(self.category_labels)} меток на {self.n_categories} категорий"
            )
        return self


class CovariateDef(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    kind: Literal["binary", "categorical", "numeric"]
    levels: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_levels(self):
        if self.kind == "binary" and len(self.levels) != 2:
            raise ValueError(f"{self.name}: бинарная ковариата требует ровно 2 уровня")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise ValueError(f"{self.name}: категориальная ковариата требует минимум 2 уровня")
        if self.kind == "numeric" and self.levels:
            raise ValueError(f"{self.name}: у числовой ковариаты нет уровней")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"{self.name}: повторяющиеся уровни")
        return self

    @property
    def is_numeric(self) -> bool:
        return self.kind == "numeric"


class Codebook(BaseModel):
    model_config = ConfigDict(frozen=True)

    items: List[ItemDef]
    covariates: List[CovariateDef] = Field(default_factory=list)

    @field_validator("items")
    @classmethod
    def _unique_items(cls, items):
        abbrs = [item.abbr for item in items]
        duplicates = sorted({a for a in abbrs if abbrs.count(a) > 1})
        if duplicates:
            raise ValueError(f"Повторяющиеся аббревиатуры пунктов: {duplicates}")
        return items

    @model_validator(mode="after")
    def _unique_names(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValueError("Повторяющиеся имена ковариат")
        clash = set(names) & set(self.item_abbrs)
        if clash:
            raise ValueError(f"Имена ковариат совпадают с пунктами: {sorted(clash)}")
        return self

    @property
    def item_abbrs(self) -> List[str]:
        return [item.abbr for item in self.items]

    @property
    def covariate_names(self) -> List[str]:
        return [c.name for c in self.covariates]

    def item(self, abbr: str) -> ItemDef:
        for item in self.items:
            if item.abbr == abbr:
                return item
        raise UnknownItemError(abbr)

    def covariate(self, name: str) -> CovariateDef:
        for covariate in self.covariates:
            if covariate.name == name:
                return covariate
        raise UnknownCovariateError(name)

    def pruned(self, items: Optional[Sequence[str]] = None,
               covariates: Optional[Sequence[str]] = None) -> "Codebook":
        """Кодбук только с указанными пунктами и ковариатами (в заданном порядке)"""
        kept_items = self.items if items is None else [self.item(a) for a in items]
        kept_covariates = self.covariates if covariates is None else [self.covariate(c) for c in covariates]
        return Codebook(items=list(kept_items), covariates=list(kept_covariates))

    @classmethod
    def load(cls, path) -> "Codebook":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(path)
        try:
            codebook = cls.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise InvalidSpecError(f"Некорректный кодбук {path}: {e}") from e
        logger.info(f"Кодбук загружен: {len(codebook.items)} пунктов, {len(codebook.covariates)} ковариат")
        return codebook

    def save(self, path) -> None:
        Path(path).write_text(self.model_dump_json(indent=2), encoding="utf-8")


def demo_codebook() -> Codebook:
    """Демонстрационный кодбук: 16 пунктов-триггеров в четырех разделах"""
    return Codebook.load(DEMO_CODEBOOK)


def _covariate_column(definition: CovariateDef, values) -> pd.Series:
    if definition.is_numeric:
        return pd.Series(values, dtype="float64")
    return pd.Series(pd.Categorical(values, categories=definition.levels))


@dataclass(frozen=True)
class SurveyDataset:
    """Матрица ответов n × M (1..H, MISSING = -1) плюс ковариаты и кодбук"""

    responses: np.ndarray
    covariates: pd.DataFrame
    codebook: Codebook

    def __post_init__(self):
        responses = np.array(self.responses, dtype=np.int64, copy=True)
        if responses.ndim != 2 or responses.shape[1] != len(self.codebook.items):
            raise InvalidSpecError(
                f"Форма ответов {responses.shape} не соответствует {len(self.codebook.items)} пунктам"
            )
        for j, item in enumerate(self.codebook.items):
            column = responses[:, j]
            bad = np.flatnonzero((column != MISSING) & ((column < 1) | (column > item.n_categories)))
            if bad.size:
                raise ValueOutOfRangeError(int(bad[0]) + 1, item.abbr, int(column[bad[0]]))
        responses.flags.writeable = False
        object.__setattr__(self, "responses", responses)

        covariates = self.covariates
        if covariates is None:
            covariates = pd.DataFrame(index=range(responses.shape[0]))
        covariates = covariates.reset_index(drop=True)
        if len(covariates) != responses.shape[0]:
            raise InvalidSpecError(
                f"Число строк ковариат {len(covariates)} не равно числу строк ответов {responses.shape[0]}"
            )
        if list(covariates.columns) != self.codebook.covariate_names:
            raise InvalidSpecError(
                f"Столбцы ковариат {list(covariates.columns)} не совпадают с кодбуком"
            )
        object.__setattr__(self, "covariates", covariates)

    @property
    def n(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def item_abbrs(self) -> List[str]:
        return self.codebook.item_abbrs

    def item_column(self, abbr: str) -> np.ndarray:
        return self.responses[:, self.item_abbrs.index(self.codebook.item(abbr).abbr)]

    def take(self, mask: np.ndarray) -> "SurveyDataset":
        """Подвыборка строк по булевой маске"""
        mask = np.asarray(mask, dtype=bool)
        return SurveyDataset(
            responses=self.responses[mask],
            covariates=self.covariates.loc[mask].reset_index(drop=True),
            codebook=self.codebook,
        )

    def equals(self, other: "SurveyDataset") -> bool:
        return (
            self.codebook == other.codebook
            and np.array_equal(self.responses, other.responses)
            and self.covariates.equals(other.covariates)
        )


def _parse_item_column(abbr: str, n_categories: int, raw: pd.Series) -> np.ndarray:
    text = raw.str.strip()
    numeric = pd.to_numeric(text.where(text != ""), errors="coerce").to_numpy(dtype=float)
    integral = np.isfinite(numeric) & (np.floor(numeric) == numeric)
    values = np.full(len(raw), MISSING, dtype=np.int64)
    values[integral] = numeric[integral].astype(np.int64)
    bad = np.flatnonzero(integral & ((values < 1) | (values > n_categories)))
    if bad.size:
        row = int(bad[0])
        raise ValueOutOfRangeError(row + 1, abbr, raw.iloc[row])
    return values


def _parse_covariate_column(definition: CovariateDef, raw: pd.Series) -> pd.Series:
    text = raw.str.strip()
    if definition.is_numeric:
        return pd.to_numeric(text.where(text != ""), errors="coerce").astype("float64")
    present = text != ""
    unknown = np.flatnonzero(present & ~text.isin(definition.levels))
    if unknown.size:
        row = int(unknown[0])
        raise ValueOutOfRangeError(row + 1, definition.name, raw.iloc[row])
    return _covariate_column(definition, text.where(present))


def load_csv(path, codebook: Codebook) -> SurveyDataset:
    """Загрузка ответов из CSV (UTF-8, запятая, заголовок)"""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path)

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    expected = set(codebook.item_abbrs) | set(codebook.covariate_names)
    present = set(frame.columns)
    if present != expected or len(frame.columns) != len(present):
        raise HeaderMismatchError(absent=expected - present, extra=present - expected)

    responses = np.column_stack(
        [_parse_item_column(item.abbr, item.n_categories, frame[item.abbr]) for item in codebook.items]
    ) if codebook.items else np.empty((len(frame), 0), dtype=np.int64)
    covariates = pd.DataFrame(
        {c.name: _parse_covariate_column(c, frame[c.name]) for c in codebook.covariates},
        index=range(len(frame)),
    )

    dataset = SurveyDataset(responses=responses, covariates=covariates, codebook=codebook)
    n_missing = int((dataset.responses == MISSING).sum())
    logger.info(f"Загружено {dataset.n} анкет, {dataset.n_items} пунктов, пропусков: {n_missing} ({path})")
    return dataset


def write_csv(ds: SurveyDataset, path) -> None:
    """Запись набора без потерь: повторная загрузка дает идентичный набор"""
    columns = {}
    for j, abbr in enumerate(ds.item_abbrs):
        column = ds.responses[:, j]
        columns[abbr] = ["" if v == MISSING else str(int(v)) for v in column]
    for definition in ds.codebook.covariates:
        series = ds.covariates[definition.name]
        if definition.is_numeric:
            columns[definition.name] = ["" if pd.isna(v) else format(float(v), ".17g") for v in series]
        else:
            columns[definition.name] = ["" if pd.isna(v) else str(v) for v in series]
    pd.DataFrame(columns, index=range(ds.n)).to_csv(
        path, index=False, lineterminator="\n", encoding="utf-8"
    )


class CleaningPolicy(BaseModel):
    """Декларативные правила очистки; каждое включается отдельно"""

    drop_all_missing: bool = False
    drop_any_missing: bool = False
    max_straightline: Optional[float] = Field(None, gt=0.0, le=1.0)
    straightline_min_items: int = Field(2, ge=2)
    drop_missing_covariates: bool = False

    @classmethod
    def permissive(cls) -> "CleaningPolicy":
        return cls()

    @classmethod
    def complete_cases(cls) -> "CleaningPolicy":
        """Полные наблюдения по пунктам и ковариатам, как требуют модели"""
        return cls(drop_any_missing=True, drop_missing_covariates=True)


RULES = ("all_missing", "missing", "straightline", "missing_covariates")


@dataclass
class CleaningReport:
    n_in: int
    n_out: int
    removed: Dict[str, int] = field(default_factory=lambda: {rule: 0 for rule in RULES})

    @property
    def empty(self) -> bool:
        return self.n_out == 0

    def to_dict(self) -> Dict:
        return {'n_in': self.n_in, 'n_out': self.n_out, 'removed': dict(self.removed), 'empty': self.empty}


def straightline_ratio(responses: np.ndarray, max_categories: int) -> Tuple[np.ndarray, np.ndarray]:
    """Доля ответов строки, совпадающих с ее модальной категорией, и число ответов"""
    answered = responses != MISSING
    n_answered = answered.sum(axis=1)
    counts = np.stack([(responses == h).sum(axis=1) for h in range(1, max_categories + 1)], axis=1)
    modal = counts.max(axis=1)
    ratio = np.where(n_answered > 0, modal / np.maximum(n_answered, 1), 0.0)
    return ratio, n_answered


def clean(ds: SurveyDataset, policy: CleaningPolicy) -> Tuple[SurveyDataset, CleaningReport]:
    """Удаление строк, нарушающих правила; строка засчитывается первому нарушенному правилу"""
    missing = ds.responses == MISSING
    violations = {rule: np.zeros(ds.n, dtype=bool) for rule in RULES}

    if policy.drop_all_missing and ds.n_items:
        violations["all_missing"] = missing.all(axis=1)
    if policy.drop_any_missing:
        violations["missing"] = missing.any(axis=1)
    if policy.max_straightline is not None and ds.n_items:
        h_max = max(item.n_categories for item in ds.codebook.items)
        ratio, n_answered = straightline_ratio(ds.responses, h_max)
        violations["straightline"] = (n_answered >= policy.straightline_min_items) & (
            ratio >= policy.max_straightline
        )
    if policy.drop_missing_covariates and ds.n_covariates:
        violations["missing_covariates"] = ds.covariates.isna().any(axis=1).to_numpy()

    report = CleaningReport(n_in=ds.n, n_out=ds.n)
    removed = np.zeros(ds.n, dtype=bool)
    for rule in RULES:
        charged = violations[rule] & ~removed
        report.removed[rule] = int(charged.sum())
        removed |= charged

    cleaned = ds.take(~removed)
    report.n_out = cleaned.n
    if report.empty:
        logger.warning("После очистки не осталось ни одной строки")
    logger.info(f"Очистка: {report.n_in} -> {report.n_out}, удалено {report.removed}")
    return cleaned, report


class CovariateFilter(BaseModel):
    """Фильтр строк по ковариатам: допустимые уровни или числовые диапазоны"""

    equals: Dict[str, List[str]] = Field(default_factory=dict)
    ranges: Dict[str, Tuple[Optional[float], Optional[float]]] = Field(default_factory=dict)

    @classmethod
    def parse(cls, expressions: Sequence[str], codebook: Codebook) -> "CovariateFilter":
        """Разбор выражений CLI: NAME=LEVEL[,LEVEL] или NAME=LO:HI для числовых"""
        equals, ranges = {}, {}
        for expression in expressions or []:
            if "=" not in expression:
                raise ConfigError(f"Ожидалось NAME=VALUE, получено: {expression}")
            name, value = (part.strip() for part in expression.split("=", 1))
            definition = codebook.covariate(name)
            if definition.is_numeric:
                low, _, high = value.partition(":")
                try:
                    ranges[name] = (float(low) if low else None, float(high) if high else None)
                except ValueError as e:
                    raise ConfigError(f"Некорректный диапазон для {name}: {value}") from e
            else:
                equals[name] = [level.strip() for level in value.split(",") if level.strip()]
        return cls(equals=equals, ranges=ranges)

    @property
    def names(self) -> List[str]:
        return list(self.equals) + list(self.ranges)

    def mask(self, ds: SurveyDataset) -> np.ndarray:
        keep = np.ones(ds.n, dtype=bool)
        for name, levels in self.equals.items():
            definition = ds.codebook.covariate(name)
            if definition.is_numeric:
                raise ConfigError(f"Для числовой ковариаты {name} нужен диапазон")
            unknown = set(levels) - set(definition.levels)
            if unknown:
                raise ConfigError(f"Неизвестные уровни {sorted(unknown)} ковариаты {name}")
            keep &= ds.covariates[name].isin(levels).to_numpy()
        for name, (low, high) in self.ranges.items():
            definition = ds.codebook.covariate(name)
            if not definition.is_numeric:
                raise ConfigError(f"Диапазон задан для нечисловой ковариаты {name}")
            values = ds.covariates[name].to_numpy(dtype=float)
            inside = np.isfinite(values)
            if low is not None:
                inside &= values >= low
            if high is not None:
                inside &= values <= high
            keep &= inside
        return keep


def subset(ds: SurveyDataset, items: Optional[Sequence[str]] = None,
           covariate_filter: Optional[CovariateFilter] = None,
           covariates: Optional[Sequence[str]] = None) -> SurveyDataset:
    """Проекция на пункты (и ковариаты) и отбор строк по фильтру"""
    items = list(dict.fromkeys(items)) if items is not None else ds.item_abbrs
    for abbr in items:
        ds.codebook.item(abbr)
    if covariates is not None:
        covariates = list(dict.fromkeys(covariates))
        for name in covariates:
            ds.codebook.covariate(name)

    mask = covariate_filter.mask(ds) if covariate_filter is not None else np.ones(ds.n, dtype=bool)
    columns = [ds.item_abbrs.index(abbr) for abbr in items]
    kept_covariates = ds.codebook.covariate_names if covariates is None else covariates

    result = SurveyDataset(
        responses=ds.responses[mask][:, columns],
        covariates=ds.covariates.loc[mask, kept_covariates].reset_index(drop=True),
        codebook=ds.codebook.pruned(items, kept_covariates),
    )
    logger.debug(f"Выборка: {result.n} строк, пункты {items}")
    return result


def encode_covariates(ds: SurveyDataset, names: Optional[Sequence[str]] = None,
                      interactions: bool = False) -> Tuple[np.ndarray, List[str]]:
    """
    Матрица плана для регрессии латентной черты.

    При interactions=True добавляются попарные произведения столбцов разных
    ковариат с метками вида "G:AG[16-17]".
    """
    names = ds.codebook.covariate_names if names is None else list(names)
    columns, labels, owners = [], [], []
    for name in names:
        definition = ds.codebook.covariate(name)
        series = ds.covariates[name]
        if series.isna().any():
            raise IncompleteDataError(f"Пропуски в ковариате {name}")
        if definition.kind == "binary":
            columns.append(series.cat.codes.to_numpy(dtype=float))
            labels.append(name)
            owners.append(name)
        elif definition.kind == "categorical":
            codes = series.cat.codes.to_numpy()
            for index, level in enumerate(definition.levels[1:], start=1):
                columns.append((codes == index).astype(float))
                labels.append(f"{name}[{level}]")
                owners.append(name)
        else:
            values = series.to_numpy(dtype=float)
            columns.append(values - values.mean() if values.size else values)
            labels.append(name)
            owners.append(name)
    if interactions:
        base = len(columns)
        for a, b in itertools.combinations(range(base), 2):
            if owners[a] != owners[b]:
                columns.append(columns[a] * columns[b])
                labels.append(f"{labels[a]}:{labels[b]}")
    design = np.column_stack(columns) if columns else np.empty((ds.n, 0))
    return design, labels


@dataclass(frozen=True)
class OrdinalMatrix:
    """Матрица 0..m_i для сетевой модели"""
    data: np.ndarray
    nodes: List[str]
    n_categories: List[int]


def ordinal_matrix(ds: SurveyDataset, covariates: Optional[Sequence[str]] = None) -> OrdinalMatrix:
    """Пункты и категориальные ковариаты как порядковые узлы с нумерацией от 0"""
    if (ds.responses == MISSING).any():
        raise IncompleteDataError("Сетевая модель требует полных ответов; примените очистку")
    columns = [ds.responses[:, j] - 1 for j in range(ds.n_items)]
    nodes = list(ds.item_abbrs)
    n_categories = [item.n_categories for item in ds.codebook.items]

    names = ds.codebook.covariate_names if covariates is None else list(covariates)
    for name in names:
        definition = ds.codebook.covariate(name)
        if definition.is_numeric:
            raise ConfigError(f"Числовая ковариата {name} не может быть узлом сети")
        series = ds.covariates[name]
        if series.isna().any():
            raise IncompleteDataError(f"Пропуски в ковариате {name}")
        columns.append(series.cat.codes.to_numpy(dtype=np.int64))
        nodes.append(name)
        n_categories.append(len(definition.levels))

    data = np.column_stack(columns).astype(np.int64) if columns else np.empty((ds.n, 0), dtype=np.int64)
    return OrdinalMatrix(data=data, nodes=nodes, n_categories=n_categories)


def covariate_profile(ds: SurveyDataset) -> pd.DataFrame:
    """Распределение респондентов по уровням ковариат"""
    rows = []
    for definition in ds.codebook.covariates:
        if definition.is_numeric:
            logger.debug(f"Числовая ковариата {definition.name} пропущена в профиле")
            continue
        series = ds.covariates[definition.name]
        observed = int(series.notna().sum())
        counts = series.value_counts(sort=False)
        for level in definition.levels:
            count = int(counts.get(level, 0))
            rows.append({'covariate': definition.name, 'level': level, 'count': count,
                         'share': count / observed if observed else float('nan')})
        rows.append({'covariate': definition.name, 'level': '', 'count': ds.n - observed,
                     'share': float('nan')})
    return pd.DataFrame(rows, columns=['covariate', 'level', 'count', 'share'])
