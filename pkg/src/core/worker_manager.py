#!/usr/bin/env python3
"""
Gestor centralizado de workers para las simulaciones Monte Carlo.

Reparte trozos (chunks) de draws en un pool de hilos y devuelve los
resultados en el orden de los trozos, de modo que el resultado final no
depende del número de hilos. numpy libera el GIL en los productos de
matrices, así que los hilos escalan bien.
"""

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

import psutil

from ..utils import logger
from ..utils.constants import FLOAT_BUDGET

T = TypeVar("T")
R = TypeVar("R")

# Presupuesto de floats por chunk (independiente de la máquina)
DEFAULT_FLOAT_BUDGET = FLOAT_BUDGET
_BYTES_PER_FLOAT = 8
MAX_WORKER_HISTORY = 100


class WorkerStatus(Enum):
    """Estados de un trabajo"""
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    CANCELLED = "cancelled"
    ERROR = "error"


@dataclass
class WorkerInfo:
    """Información de un trabajo lanzado con map_ordered"""
    worker_id: str
    label: str
    status: WorkerStatus
    started_at: float
    task_count: int = 0
    completed_tasks: int = 0
    completed_at: Optional[float] = None
    error_message: Optional[str] = None

    @property
    def progress(self) -> float:
        if self.task_count == 0:
            return 1.0
        return self.completed_tasks / self.task_count


def chunk_plan(total: int, floats_per_item: int, budget: int = DEFAULT_FLOAT_BUDGET) -> List[int]:
    """
    Tamaños de chunk para `total` items: ceil(total / chunk) trozos de
    min(total, budget // floats_per_item), el último con el resto.
    """
    if total < 0:
        raise ValueError(f"total debe ser >= 0: {total}")
    if total == 0:
        return []
    per_chunk = max(1, min(int(total), int(budget) // max(int(floats_per_item), 1)))
    sizes = [per_chunk] * (total // per_chunk)
    if total % per_chunk:
        sizes.append(total % per_chunk)
    return sizes


class WorkerManager:
    """
    Pool de hilos con registro de trabajos e historial.
    Un solo pool por proceso; los trabajos se ejecutan de uno en uno.
    """

    def __init__(self, threads: Optional[int] = None, float_budget: int = DEFAULT_FLOAT_BUDGET,
                 max_history: int = MAX_WORKER_HISTORY):
        # === CONFIGURACIÓN ===
        self.max_history = max(1, int(max_history))
        self.threads = max(1, int(threads or psutil.cpu_count(logical=True) or 1))
        self.float_budget = int(float_budget)

        # === REGISTROS ===
        self.active_workers: Dict[str, WorkerInfo] = {}
        self.worker_history: List[WorkerInfo] = []
        self._counter = 0

        # === LOCKING ===
        self.lock = threading.RLock()
        self._warned_memory = False

    def plan(self, total: int, floats_per_item: int) -> List[int]:
        """chunk_plan con el presupuesto del gestor; avisa si no cabe en memoria"""
        sizes = chunk_plan(total, floats_per_item, self.float_budget)
        if sizes:
            self._check_memory(sizes[0] * floats_per_item * self.threads)
        return sizes

    def _check_memory(self, floats: int) -> None:
        needed = floats * _BYTES_PER_FLOAT
        available = psutil.virtual_memory().available
        if needed > available and not self._warned_memory:
            self._warned_memory = True
            logger.warn(
                f"Los chunks en vuelo necesitan ~{needed / 2**30:.1f} GiB y hay "
                f"{available / 2**30:.1f} GiB libres; considera reducir --threads"
            )

    def map_ordered(self, label: str, fn: Callable[[T], R], tasks: Sequence[T]) -> List[R]:
        """
        Aplica fn a cada tarea en el pool y devuelve los resultados en orden.
        La primera excepción de una tarea se relanza tras cancelar el resto.
        """
        with self.lock:
            self._counter += 1
            worker_id = f"{label}-{self._counter}"
            info = WorkerInfo(worker_id, label, WorkerStatus.PENDING, time.time(), task_count=len(tasks))
            self.active_workers[worker_id] = info

        reporter = logger.progress(label, len(tasks)) if len(tasks) > 1 else None
        results: List[R] = []
        try:
            info.status = WorkerStatus.RUNNING
            if self.threads == 1 or len(tasks) <= 1:
                for task in tasks:
                    results.append(fn(task))
                    self._task_done(info, reporter)
            else:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    futures = [pool.submit(fn, task) for task in tasks]
                    try:
                        for future in futures:
                            results.append(future.result())
                            self._task_done(info, reporter)
                    except BaseException:
                        for future in futures:
                            future.cancel()
                        raise
            info.status = WorkerStatus.COMPLETED
            return results
        except KeyboardInterrupt:
            info.status = WorkerStatus.CANCELLED
            raise
        except Exception as e:
            info.status = WorkerStatus.ERROR
            info.error_message = str(e)
            logger.debug(f"Error en worker {worker_id}: {e}")
            raise
        finally:
            info.completed_at = time.time()
            with self.lock:
                self.active_workers.pop(worker_id, None)
                self.worker_history.append(info)
            self.cleanup_old_history()

    def _task_done(self, info: WorkerInfo, reporter) -> None:
        with self.lock:
            info.completed_tasks += 1
        if reporter is not None:
            reporter.advance()

    def get_worker_history(self) -> List[WorkerInfo]:
        """Obtiene el historial de trabajos"""
        with self.lock:
            return self.worker_history.copy()

    def cleanup_old_history(self, max_history: Optional[int] = None):
        """Conserva solo los últimos max_history trabajos"""
        max_history = self.max_history if max_history is None else max_history
        with self.lock:
            if len(self.worker_history) > max_history:
                self.worker_history = self.worker_history[-max_history:]

    def get_worker_stats(self) -> Dict[str, Any]:
        """Obtiene estadísticas de trabajos"""
        with self.lock:
            stats: Dict[str, Any] = {
                "threads": self.threads,
                "active_workers": len(self.active_workers),
                "total_history": len(self.worker_history),
                "workers_by_status": {},
            }
            for info in self.worker_history:
                status = info.status.value
                stats["workers_by_status"][status] = stats["workers_by_status"].get(status, 0) + 1
            return stats


# ===== LAZY INITIALIZATION PARA WORKER_MANAGER =====
_worker_manager_instance: Optional[WorkerManager] = None
_worker_manager_lock = threading.Lock()


def get_worker_manager() -> WorkerManager:
    """
    Obtiene la instancia global de WorkerManager (Singleton lazy)
    Crea la instancia solo cuando se solicita por primera vez
    """
    global _worker_manager_instance
    if _worker_manager_instance is None:
        with _worker_manager_lock:
            if _worker_manager_instance is None:
                _worker_manager_instance = WorkerManager()
                logger.debug(f"[WorkerManager] Instancia global con {_worker_manager_instance.threads} hilos")
    return _worker_manager_instance


def configure_workers(threads: Optional[int] = None, float_budget: int = DEFAULT_FLOAT_BUDGET) -> WorkerManager:
    """Sustituye la instancia global (p. ej. desde --threads)"""
    global _worker_manager_instance
    with _worker_manager_lock:
        _worker_manager_instance = WorkerManager(threads, float_budget)
    return _worker_manager_instance
