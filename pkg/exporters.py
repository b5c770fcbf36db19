"""
Запись артефактов запуска: CSV с 17 значащими цифрами и граф в формате DOT
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from grm import GrmPosterior
from mrf import EdgeReport, MrfPosterior

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def write_table(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    logger.debug(f"Записан {path} ({len(frame)} строк)")
    return path


def _quote(name: str) -> str:
    return '"' + name.replace('\\', '\\\\').replace('"', '\\"') + '"'


def format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def write_dot(report: EdgeReport, path, clusters: Optional[Sequence[Sequence[str]]] = None) -> Path:
    """Неориентированный граф медианной вероятности; неубедительные ребра пунктиром"""
    lines = ['graph likertnet {', '  node [shape=ellipse];']
    cluster_of: Dict[str, int] = {}
    for index, members in enumerate(clusters or [], start=1):
        for node in members:
            cluster_of[node] = index
    for node in report.nodes:
        attributes = f' [cluster={cluster_of[node]}]' if node in cluster_of else ''
        lines.append(f'  {_quote(node)}{attributes};')
    for edge in report.edges:
        color = "blue" if edge.theta_mean > 0 else "red" if edge.theta_mean < 0 else "gray"
        style = "solid" if edge.conclusive else "dashed"
        lines.append(
            f'  {_quote(edge.node_a)} -- {_quote(edge.node_b)} ['
            f'weight={format_float(abs(edge.theta_mean))}, sign="{edge.sign}", '
            f'theta={format_float(edge.theta_mean)}, inclusion={format_float(edge.inclusion_prob)}, '
            f'bf10={format_float(edge.bf10)}, style={style}, color={color}];'
        )
    lines.append('}')
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def mrf_draws_frame(post: MrfPosterior) -> pd.DataFrame:
    """Сырые выборки: θ и γ по ребрам, затем пороги μ"""
    columns = {}
    for e, (i, j) in enumerate(post.edges):
        label = f"{post.nodes[i]}--{post.nodes[j]}"
        columns[f"theta[{label}]"] = post.theta_draws[:, e]
        columns[f"gamma[{label}]"] = post.gamma_draws[:, e].astype(np.int64)
    offset = 0
    for node, h in zip(post.nodes, post.n_categories):
        for c in range(1, h):
            columns[f"mu[{node}][{c}]"] = post.threshold_draws[:, offset]
            offset += 1
    frame = pd.DataFrame(columns)
    frame.insert(0, 'draw', np.arange(1, post.n_draws + 1))
    return frame


def grm_draws_frame(post: GrmPosterior) -> pd.DataFrame:
    """Сырые выборки по цепям; θ респондентов не включаются"""
    frames = []
    for chain in range(post.n_chains):
        columns = {}
        for name, labels in (('beta', post.item_names), ('gamma', post.item_names),
                             ('delta', [str(h + 1) for h in range(post.n_categories - 1)]),
                             ('alpha', post.covariate_names)):
            values = post.draws(name)[chain]
            for k, label in enumerate(labels):
                columns[f"{name}[{label}]"] = values[:, k]
        frame = pd.DataFrame(columns)
        frame.insert(0, 'draw', np.arange(1, len(frame) + 1))
        frame.insert(0, 'chain', chain + 1)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
