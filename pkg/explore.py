"""
Разведочный анализ: медианный тест Муда и распределения ответов по шкале Лайкерта
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Hashable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaincc

from errors import DomainError, EmptyGroupError, LikertNetError, SingleGroupError
from survey_data import MISSING, SurveyDataset

logger = logging.getLogger(__name__)


class Stars(str, Enum):
    """Обозначение уровня значимости"""
    NONE = ""
    ONE = "*"
    TWO = "**"
    THREE = "***"


def significance_stars(p: float) -> Stars:
    """*** при p < 0.001, ** при p < 0.01, * при p < 0.05"""
    if p is None or not (0.0 <= p <= 1.0):
        raise DomainError(f"p-value вне [0, 1]: {p}")
    if p < 0.001:
        return Stars.THREE
    if p < 0.01:
        return Stars.TWO
    if p < 0.05:
        return Stars.ONE
    return Stars.NONE


@dataclass(frozen=True)
class MedianTestResult:
    pooled_median: Fraction
    contingency: np.ndarray  # строки: <= медианы, > медианы; столбцы: группы
    chi_square: float
    df: int
    p_value: float
    groups: Tuple[Hashable, ...]
    degenerate: bool = False

    @property
    def stars(self) -> Stars:
        return significance_stars(self.p_value)


def chi_square_sf(statistic: float, df: int) -> float:
    """Хвост хи-квадрат через регуляризованную верхнюю неполную гамма-функцию"""
    if statistic <= 0.0:
        return 1.0
    return float(gammaincc(df / 2.0, statistic / 2.0))


def pearson_chi_square(table: np.ndarray) -> float:
    """Статистика Пирсона без поправки на непрерывность"""
    table = np.asarray(table, dtype=float)
    total = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / total
    return float(((table - expected) ** 2 / expected).sum())


def _is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and math.isnan(value):
        return True
    return value == MISSING


def pooled_median(values: Sequence) -> Fraction:
    ordered = sorted(Fraction(v) for v in values)
    middle = len(ordered) // 2
    if len(ordered) % 2:
        return ordered[middle]
    return (ordered[middle - 1] + ordered[middle]) / 2


def mood_median_test(scores: Sequence, groups: Sequence[Hashable]) -> MedianTestResult:
    """k-выборочный медианный тест Муда; равные медиане относятся к строке <= медианы"""
    if len(scores) != len(groups):
        raise DomainError(f"Длины scores ({len(scores)}) и groups ({len(groups)}) различаются")

    labels = sorted(set(groups), key=str)
    if len(labels) < 2:
        raise SingleGroupError(f"Нужно минимум две группы, получено: {labels}")

    observed = [(s, g) for s, g in zip(scores, groups) if not _is_missing(s)]
    present = {g for _, g in observed}
    empty = [label for label in labels if label not in present]
    if empty:
        raise EmptyGroupError(f"Группы без наблюдений после удаления пропусков: {empty}")

    median = pooled_median([s for s, _ in observed])
    column = {label: k for k, label in enumerate(labels)}
    table = np.zeros((2, len(labels)), dtype=np.int64)
    for score, group in observed:
        row = 0 if Fraction(score) <= median else 1
        table[row, column[group]] += 1

    df = len(labels) - 1
    if (table.sum(axis=1) == 0).any():
        logger.debug(f"Вырожденная таблица медианного теста: {table.tolist()}")
        return MedianTestResult(median, table, 0.0, df, 1.0, tuple(labels), degenerate=True)

    statistic = pearson_chi_square(table)
    return MedianTestResult(median, table, statistic, df, chi_square_sf(statistic, df), tuple(labels))


@dataclass(frozen=True)
class LikertSummary:
    item: str
    group: Optional[Hashable]
    n: int
    counts: Tuple[int, ...]
    proportions: Tuple[float, ...]
    low: float
    high: float


def _summarize(item: str, group, responses: np.ndarray, n_categories: int) -> LikertSummary:
    answered = responses[responses != MISSING]
    n = int(answered.size)
    counts = np.bincount(answered - 1, minlength=n_categories)
    if n == 0:
        # Пустой уровень остается в таблице с n = 0 и неопределенными долями
        logger.warning(f"Нет ответов на {item} в группе {group}")
        return LikertSummary(item=item, group=group, n=0, counts=(0,) * n_categories,
                             proportions=(math.nan,) * n_categories, low=math.nan, high=math.nan)
    proportions = counts / n
    # При нечетном H средняя категория не попадает ни в low, ни в high
    low = float(proportions[: n_categories // 2].sum())
    high = float(proportions[(n_categories + 1) // 2:].sum())
    return LikertSummary(
        item=item, group=group, n=n,
        counts=tuple(int(c) for c in counts),
        proportions=tuple(float(p) for p in proportions),
        low=low, high=high,
    )


def _group_levels(ds: SurveyDataset, by: str) -> Tuple[pd.Series, List]:
    definition = ds.codebook.covariate(by)
    series = ds.covariates[by]
    if definition.is_numeric:
        return series, sorted(series.dropna().unique())
    return series, list(definition.levels)


def likert_summary(ds: SurveyDataset, item: str, by: Optional[str] = None) -> List[LikertSummary]:
    """Доли категорий пункта: общая сводка или по уровням ковариаты"""
    n_categories = ds.codebook.item(item).n_categories
    responses = ds.item_column(item)
    if by is None:
        return [_summarize(item, None, responses, n_categories)]

    series, levels = _group_levels(ds, by)
    return [_summarize(item, level, responses[(series == level).to_numpy()], n_categories) for level in levels]


def explore_table(ds: SurveyDataset, items: Optional[Sequence[str]] = None,
                  by: Sequence[str] = ()) -> pd.DataFrame:
    """Таблица сводок и медианных тестов для команды explore"""
    items = list(items) if items else ds.item_abbrs
    h_max = max((ds.codebook.item(a).n_categories for a in items), default=0)
    prop_columns = [f"prop_{h}" for h in range(1, h_max + 1)]
    rows = []

    def add_rows(summaries, grouping, test: Optional[MedianTestResult]):
        for summary in summaries:
            row = {'item': summary.item, 'grouping': grouping,
                   'group': '' if summary.group is None else str(summary.group), 'n': summary.n}
            for h, column in enumerate(prop_columns):
                row[column] = summary.proportions[h] if h < len(summary.proportions) else float('nan')
            row.update({'low': summary.low, 'high': summary.high})
            if test is None:
                row.update({'chi_square': float('nan'), 'df': '', 'p_value': float('nan'),
                            'stars': '', 'degenerate': ''})
            else:
                row.update({'chi_square': test.chi_square, 'df': test.df, 'p_value': test.p_value,
                            'stars': test.stars.value, 'degenerate': test.degenerate})
            rows.append(row)

    for item in items:
        add_rows(likert_summary(ds, item), '', None)
        responses = ds.item_column(item)
        for covariate in by:
            series = ds.covariates[covariate]
            keep = (series.notna() & pd.Series(responses != MISSING)).to_numpy()
            test = None
            try:
                test = mood_median_test(responses[keep].tolist(), series[keep].astype(str).tolist())
            except LikertNetError as e:
                logger.warning(f"Медианный тест {item} по {covariate} не выполнен: {e}")
            add_rows(likert_summary(ds, item, by=covariate), covariate, test)

    columns = ['item', 'grouping', 'group', 'n', *prop_columns, 'low', 'high',
               'chi_square', 'df', 'p_value', 'stars', 'degenerate']
    return pd.DataFrame(rows, columns=columns)
