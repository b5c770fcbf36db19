"""
Настройки MCMC и файл конфигурации по умолчанию
"""

import json
import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from errors import ConfigError

CONFIG_ENV = "LIKERTNET_CONFIG"
OUTPUT_ROOT_ENV = "LIKERTNET_OUTPUT_ROOT"
DEFAULT_CONFIG_FILE = "likertnet_config.json"
DEFAULT_OUTPUT_ROOT = "runs"


class McmcConfig(BaseModel):
    """Параметры цепей Маркова"""

    iterations: int = Field(20000, ge=1)
    burn_in: int = Field(5000, ge=0)
    thin: int = Field(1, ge=1)
    chains: int = Field(1, ge=1)
    seed: int = Field(2024, ge=0, lt=2 ** 64)
    adapt_target: float = Field(0.44, gt=0.0, lt=1.0)
    max_workers: Optional[int] = Field(None, ge=1)
    show_progress: bool = False
    log_every: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _check_burn_in(self):
        if self.iterations <= self.burn_in:
            raise ValueError(f"iterations ({self.iterations}) должно быть больше burn_in ({self.burn_in})")
        return self

    @property
    def retained_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    @classmethod
    def for_mrf(cls, **overrides) -> "McmcConfig":
        """Протокол сетевого анализа: 20000 итераций, burn-in 5000"""
        return make_config(dict(iterations=20000, burn_in=5000, thin=1, chains=1), overrides)

    @classmethod
    def for_grm(cls, **overrides) -> "McmcConfig":
        """Протокол GRM: 2 цепи, 15000 итераций, burn-in 5000, прореживание 10"""
        return make_config(dict(iterations=15000, burn_in=5000, thin=10, chains=2), overrides)


def make_config(base: Dict, overrides: Dict) -> McmcConfig:
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return McmcConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"Некорректные параметры MCMC: {e}") from e


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))


class SettingsStore:
    """Чтение и сохранение файла настроек по умолчанию"""

    def __init__(self, filename: Optional[str] = None):
        self.logger = logging.getLogger('SettingsStore')
        self.filename = filename or os.environ.get(CONFIG_ENV, DEFAULT_CONFIG_FILE)

    def default_settings(self) -> Dict:
        return {
            'mrf': McmcConfig.for_mrf().model_dump(),
            'grm': McmcConfig.for_grm().model_dump(),
            'mrf_prior': {'slab_scale': 2.5, 'inclusion_prob': 0.5, 'threshold_sd': 10.0,
                          'birth_proposal': 'slab', 'bf_threshold': 10.0},
            'grm_prior': {'convention': 'precision', 'value': 0.01},
        }

    def load(self) -> Dict:
        """Загрузка настроек; отсутствующий файл означает встроенные значения"""
        settings = self.default_settings()
        if not os.path.exists(self.filename):
            self.logger.debug(f"Файл настроек {self.filename} не найден, используются значения по умолчанию")
            return settings
        try:
            with open(self.filename, 'r', encoding='utf-8') as f:
                stored = json.load(f).get('settings', {})
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Не удалось прочитать настройки {self.filename}: {e}") from e

        for section, values in stored.items():
            if section in settings and isinstance(values, dict):
                settings[section].update(values)
            else:
                self.logger.warning(f"Неизвестный раздел настроек пропущен: {section}")
        self.logger.info(f"Настройки загружены из {self.filename}")
        return settings

    def save(self, settings: Dict) -> None:
        config = {
            'settings': settings,
            'timestamp': datetime.now().isoformat(),
        }
        with open(self.filename, 'w', encoding='utf-8') as f:
            json.dump(config, f, indent=2, ensure_ascii=False)
        self.logger.info(f"Настройки сохранены в {self.filename}")

    def mcmc_config(self, model: str, **overrides) -> McmcConfig:
        """Итоговая конфигурация: файл настроек, поверх него флаги CLI"""
        settings = self.load()
        if model not in ('mrf', 'grm'):
            raise ConfigError(f"Неизвестная модель: {model}")
        return make_config(settings[model], overrides)
