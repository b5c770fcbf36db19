"""
Манифест запуска: команда, итоговая конфигурация, зерна, хэши входов и артефакты
"""

import hashlib
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, ValidationError

from errors import ConfigError, InvalidSpecError, MissingFileError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LOG_NAME = "run.log"
VERSION = "1.0.0"


class RunManifest(BaseModel):
    command: str
    arguments: Dict[str, Any]
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)
    started: str = Field(default_factory=lambda: datetime.now().isoformat())
    duration_s: float = 0.0
    system: Dict[str, Any] = Field(default_factory=dict)
    version: str = VERSION


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def input_digests(paths: Dict[str, Optional[str]]) -> Dict[str, str]:
    """sha256 сырых байтов каждого входного файла"""
    return {name: sha256_file(path) for name, path in paths.items() if path}


def prepare_out_dir(path, force: bool = False) -> Path:
    """Новый каталог запуска; каталог с манифестом перезаписывается только с --force"""
    path = Path(path)
    if (path / MANIFEST_NAME).exists() and not force:
        raise ConfigError(f"Каталог {path} уже содержит манифест; используйте --force")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out_dir, manifest: RunManifest) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Манифест записан: {path}")
    return path


def load_manifest(path) -> RunManifest:
    """Манифест из файла или из каталога запуска"""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise MissingFileError(path)
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise InvalidSpecError(f"Некорректный манифест {path}: {e}") from e
