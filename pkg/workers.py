import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Optional, Sequence

from system_optimizer import ChainOptimizer


class ChainRunner:
    """Запуск независимых цепей последовательно или в пуле процессов"""

    def __init__(self, max_workers: Optional[int] = None, optimizer: Optional[ChainOptimizer] = None):
        self.logger = logging.getLogger('ChainRunner')
        self.max_workers = max_workers
        self.optimizer = optimizer

    def run(self, job: Callable[..., Any], jobs_args: Sequence[tuple], bytes_per_chain: int = 0) -> List[Any]:
        """Выполнение job(*args) для каждой цепи; результаты в порядке цепей"""
        n_chains = len(jobs_args)
        if n_chains == 0:
            return []

        if self.max_workers == 1 or n_chains == 1:
            workers = 1
        else:
            optimizer = self.optimizer or ChainOptimizer()
            workers = optimizer.get_optimal_workers(n_chains, bytes_per_chain, self.max_workers)

        start_time = time.time()
        if workers == 1:
            results = []
            for index, args in enumerate(jobs_args):
                self.logger.info(f"Цепь {index + 1}/{n_chains} запущена")
                results.append(job(*args))
        else:
            self.logger.info(f"Запуск {n_chains} цепей в {workers} процессах")
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(job, *args) for args in jobs_args]
                # Порядок результатов фиксирован порядком цепей, а не завершения
                results = [future.result() for future in futures]

        self.logger.info(f"Цепи завершены за {time.time() - start_time:.2f}с")
        return results
