"""
Сводный отчет: кластеры сети MRF рядом с ранжированием дискриминации и эффектами ковариат GRM
"""

import io
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field
from rich.console import Console
from rich.table import Table

from errors import ConfigError, IncompatibleRunsError, MissingFileError
from mrf import Edge, EdgeReport, network_clusters, node_strength
from run_manifest import load_manifest

logger = logging.getLogger(__name__)

REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"


class MrfSection(BaseModel):
    run: str
    bf_threshold: float
    nodes: List[str]
    clusters: List[List[str]]
    strengths: Dict[str, float]
    edges: List[Dict[str, Any]] = Field(default_factory=list)


class GrmSection(BaseModel):
    run: str
    ranking: List[Dict[str, Any]]
    covariate_effects: List[Dict[str, Any]] = Field(default_factory=list)
    max_rhat: Optional[float] = None


class ConsolidatedReport(BaseModel):
    runs: List[str]
    items: List[str]
    mrf: Optional[MrfSection] = None
    grm: Optional[GrmSection] = None

    def render_text(self, width: int = 110) -> str:
        console = Console(record=True, width=width, file=io.StringIO())
        console.print(f"Пункты: {', '.join(self.items)}")

        if self.mrf is None:
            console.print("Сеть MRF: раздел отсутствует")
        else:
            clusters = Table(title=f"Кластеры сети (BF₁₀ ≥ {self.mrf.bf_threshold:g})")
            clusters.add_column("#", justify="right")
            clusters.add_column("Узлы")
            for index, members in enumerate(self.mrf.clusters, start=1):
                clusters.add_row(str(index), ", ".join(members))
            console.print(clusters)

            edges = Table(title="Ребра графа медианной вероятности")
            for column in ("Ребро", "P(вкл.)", "BF₁₀", "θ", "95% ИИ", "Вывод"):
                edges.add_column(column)
            for edge in self.mrf.edges:
                edges.add_row(
                    f"{edge['node_a']} -- {edge['node_b']}",
                    f"{edge['inclusion_prob']:.3f}",
                    f"{edge['bf10']:.3g}" + ("+" if edge['saturated'] else ""),
                    f"{edge['theta_mean']:+.3f}",
                    f"[{edge['ci_low']:.3f}, {edge['ci_high']:.3f}]",
                    "убедительно" if edge['conclusive'] else "неубедительно",
                )
            console.print(edges)

        if self.grm is None:
            console.print("GRM: раздел отсутствует")
        else:
            ranking = Table(title="Дискриминация пунктов (γ)")
            for column in ("Ранг", "Пункт", "γ", "95% ИИ"):
                ranking.add_column(column)
            for row in self.grm.ranking:
                ranking.add_row(str(row['rank']), row['item'], f"{row['gamma_mean']:.3f}",
                                f"[{row['ci_low']:.3f}, {row['ci_high']:.3f}]")
            console.print(ranking)

            effects = Table(title="Эффекты ковариат (α)")
            for column in ("Ковариата", "Среднее", "sd", "95% ИИ", "P(α > 0)"):
                effects.add_column(column)
            for row in self.grm.covariate_effects:
                effects.add_row(row['name'], f"{row['mean']:+.3f}", f"{row['sd']:.3f}",
                                f"[{row['ci_low']:.3f}, {row['ci_high']:.3f}]", f"{row['prob_positive']:.3f}")
            console.print(effects)
            if self.grm.max_rhat is not None:
                console.print(f"Максимальный R̂: {self.grm.max_rhat:.4f}")
        return console.export_text()

    def write(self, out_dir) -> List[Path]:
        out_dir = Path(out_dir)
        json_path = out_dir / REPORT_JSON
        text_path = out_dir / REPORT_TEXT
        json_path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        text_path.write_text(self.render_text(), encoding="utf-8")
        return [json_path, text_path]


def _read(run_dir: Path, name: str) -> pd.DataFrame:
    path = run_dir / name
    if not path.exists():
        raise MissingFileError(path)
    return pd.read_csv(path, keep_default_na=True)


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return [{key: (value.item() if hasattr(value, 'item') else value) for key, value in row.items()}
            for row in frame.to_dict(orient='records')]


def _mrf_section(run_dir: Path, bf_threshold: float) -> MrfSection:
    table = _read(run_dir, "edges.csv")
    nodes = _read(run_dir, "mrf_nodes.csv")['node'].astype(str).tolist()
    retained = table[table['retained'].astype(bool)]
    edges = [
        Edge(node_a=str(row['node_a']), node_b=str(row['node_b']),
             inclusion_prob=float(row['inclusion_prob']), bf10=float(row['bf10']),
             saturated=bool(row['saturated']), theta_mean=float(row['theta_mean']),
             theta_sd=float(row['theta_sd']), ci_low=float(row['ci_low']), ci_high=float(row['ci_high']),
             conclusive=bool(row['conclusive']), retained=True,
             mean_outside_ci=bool(row.get('mean_outside_ci', False)))
        for _, row in retained.iterrows()
    ]
    report = EdgeReport(nodes=nodes, edges=edges, bf_threshold=bf_threshold)
    return MrfSection(
        run=str(run_dir),
        bf_threshold=bf_threshold,
        nodes=nodes,
        clusters=network_clusters(report),
        strengths=node_strength(report),
        edges=_records(retained),
    )


def _grm_section(run_dir: Path) -> GrmSection:
    ranking = _read(run_dir, "grm_items.csv")
    effects = _read(run_dir, "grm_covariates.csv")
    params = _read(run_dir, "grm_params.csv")
    rhat = params['rhat'].max(skipna=True) if len(params) else float('nan')
    return GrmSection(
        run=str(run_dir),
        ranking=_records(ranking),
        covariate_effects=_records(effects),
        max_rhat=None if rhat is None or math.isnan(rhat) else float(rhat),
    )


def build_report(run_dirs: Sequence) -> ConsolidatedReport:
    """Объединение запусков fit-mrf и fit-grm над одним набором пунктов"""
    if not run_dirs:
        raise ConfigError("Не указаны каталоги запусков")
    manifests = [(Path(d), load_manifest(d)) for d in run_dirs]
    fits = [(d, m) for d, m in manifests if m.command in ('fit-mrf', 'fit-grm')]
    if not fits:
        raise ConfigError("Среди каталогов нет запусков fit-mrf или fit-grm")

    item_sets = [set(m.config.get('items', [])) for _, m in fits]
    reference = item_sets[0]
    for other in item_sets[1:]:
        if other != reference:
            raise IncompatibleRunsError(reference ^ other)

    report = ConsolidatedReport(runs=[str(d) for d, _ in fits], items=list(fits[0][1].config.get('items', [])))
    for run_dir, manifest in fits:
        if manifest.command == 'fit-mrf':
            if report.mrf is not None:
                logger.warning(f"Повторный запуск MRF {run_dir} пропущен")
                continue
            bf_threshold = float(manifest.config.get('prior', {}).get('bf_threshold', 10.0))
            report.mrf = _mrf_section(run_dir, bf_threshold)
        else:
            if report.grm is not None:
                logger.warning(f"Повторный запуск GRM {run_dir} пропущен")
                continue
            report.grm = _grm_section(run_dir)
    logger.info(f"Сводный отчет: MRF {'есть' if report.mrf else 'нет'}, GRM {'есть' if report.grm else 'нет'}")
    return report
