import logging
import os
import platform
from typing import Dict, Optional

import psutil


class SystemDetector:
    """Определение характеристик системы для планирования параллельных цепей"""

    def __init__(self):
        self.logger = logging.getLogger('SystemDetector')
        self.system_info = self._detect_system()

    def _detect_system(self) -> Dict:
        """Определение характеристик системы"""
        try:
            memory = psutil.virtual_memory()
            info = {
                'platform': platform.system(),
                'processor': platform.processor(),
                'python': platform.python_version(),
                'cpu_count': os.cpu_count() or 1,
                'physical_cores': psutil.cpu_count(logical=False) or os.cpu_count() or 1,
                'memory_gb': round(memory.total / (1024 ** 3), 1),
                'available_gb': round(memory.available / (1024 ** 3), 1),
            }
            self.logger.debug(f"Обнаружена система: {info}")
            return info

        except Exception as e:
            self.logger.error(f"Ошибка определения системы: {e}")
            return {
                'platform': 'unknown',
                'processor': 'unknown',
                'python': platform.python_version(),
                'cpu_count': 1,
                'physical_cores': 1,
                'memory_gb': 4.0,
                'available_gb': 2.0,
            }

    def resident_memory_mb(self) -> float:
        """Текущее потребление памяти процессом"""
        return psutil.Process().memory_info().rss / 1024 / 1024


class ChainOptimizer:
    """Выбор числа одновременно работающих цепей"""

    # Доля доступной памяти, которую можно отдать под цепи
    MEMORY_SHARE = 0.5

    def __init__(self, detector: Optional[SystemDetector] = None):
        self.detector = detector or SystemDetector()
        self.logger = logging.getLogger('ChainOptimizer')

    def get_optimal_workers(self, chains: int, bytes_per_chain: int = 0,
                            max_workers: Optional[int] = None) -> int:
        """Число процессов для цепей: не больше ядер, цепей и доступной памяти"""
        system = self.detector.system_info
        workers = min(chains, system.get('physical_cores', 1))

        if bytes_per_chain > 0:
            budget = system.get('available_gb', 2.0) * (1024 ** 3) * self.MEMORY_SHARE
            by_memory = max(1, int(budget // bytes_per_chain))
            if by_memory < workers:
                self.logger.info(f"Память ограничивает параллельность: {by_memory} из {workers}")
            workers = min(workers, by_memory)

        if max_workers is not None:
            workers = min(workers, max_workers)

        workers = max(1, workers)
        self.logger.info(f"Цепей: {chains}, процессов: {workers}")
        return workers
