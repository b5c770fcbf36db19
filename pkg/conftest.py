"""
Общие фикстуры тестов
"""

import logging

import numpy as np
import pytest

from mcmc_settings import McmcConfig
from survey_data import Codebook, CovariateDef, ItemDef

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')


@pytest.fixture
def small_codebook() -> Codebook:
    return Codebook(
        items=[ItemDef(abbr=abbr, n_categories=4) for abbr in ("Q1", "Q2", "Q3")],
        covariates=[
            CovariateDef(name="G", kind="binary", levels=["female", "male"]),
            CovariateDef(name="AG", kind="categorical", levels=["13-15", "16-17", "18-20"]),
            CovariateDef(name="Age", kind="numeric"),
        ],
    )


@pytest.fixture
def write_survey(tmp_path):
    """Запись CSV из списка строк; возвращает путь"""
    def _write(lines, name="survey.csv"):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
    return _write


@pytest.fixture
def small_survey(write_survey):
    return write_survey([
        "Q1,Q2,Q3,G,AG,Age",
        "1,2,3,female,13-15,14",
        "4,4,4,male,16-17,16.5",
        "2,,3,female,18-20,19",
        "3,2.0,1,male,13-15,",
        ",,,female,,15",
    ])


@pytest.fixture
def fast_config():
    """Короткие цепи для быстрых тестов сэмплеров"""
    def _config(**overrides):
        values = dict(iterations=400, burn_in=200, thin=1, chains=1, seed=7, max_workers=1)
        values.update(overrides)
        return McmcConfig(**values)
    return _config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cli(tmp_path, monkeypatch):
    """Запуск CLI в изолированном окружении без файла настроек"""
    from main import run

    monkeypatch.setenv("LIKERTNET_CONFIG", str(tmp_path / "absent_config.json"))
    monkeypatch.setenv("LIKERTNET_OUTPUT_ROOT", str(tmp_path / "runs"))

    def _run(*argv):
        return run([str(a) for a in argv])
    return _run


@pytest.fixture
def simulated_survey(tmp_path, cli):
    """Синтетический GRM-опрос: пункты A, B, C (H = 3) и ковариата G"""
    import json

    spec = tmp_path / "grm_spec.json"
    spec.write_text(json.dumps({
        "model": "grm", "seed": 31, "n": 150, "items": ["A", "B", "C"], "n_categories": 3,
        "beta": [-0.3, 0.0, 0.4], "gamma": [1.5, 1.0, 2.0], "delta": [0.0, 1.2], "alpha": [0.8],
        "covariates": [{"name": "G", "levels": ["female", "male"]}],
    }), encoding="utf-8")
    data = tmp_path / "sim" / "survey.csv"
    assert cli("simulate", "--model", "grm", "--spec", spec, "--out", data,
               "--out-dir", tmp_path / "simulate-run") == 0
    return data, data.with_suffix(".codebook.json")


@pytest.fixture
def fast_chains():
    return ("--iterations", "300", "--burnin", "100", "--seed", "5", "--workers", "1")
