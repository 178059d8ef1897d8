#!/usr/bin/env python3
"""
Bucle Monte Carlo compartido: reparte draws en chunks deterministas.

El chunk c usa el generador de rng.at(c) y los chunks se concatenan en
orden, así que el resultado depende solo de (rng, draws, tamaño por draw)
y nunca del número de hilos.
"""

from typing import Callable, Dict, List, Tuple

import numpy as np

from .net_core import ArchitectureSpec, parameter_count
from .numerics import RngStream
from .worker_manager import get_worker_manager

Sampler = Callable[[np.random.Generator, int], Dict[str, np.ndarray]]


def simulate(label: str, draws: int, rng: RngStream, floats_per_draw: int, sampler: Sampler) -> Dict[str, np.ndarray]:
    """Ejecuta `sampler(generador, cantidad)` por chunk y concatena cada serie"""
    if draws < 1:
        raise ValueError(f"draws debe ser >= 1: {draws}")
    manager = get_worker_manager()
    tasks: List[Tuple[int, int]] = list(enumerate(manager.plan(draws, floats_per_draw)))

    def run(task: Tuple[int, int]) -> Dict[str, np.ndarray]:
        chunk, count = task
        return sampler(rng.at(chunk).generator(), count)

    parts = manager.map_ordered(label, run, tasks)
    return {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}


def draw_footprint(spec: ArchitectureSpec, input_count: int = 1) -> int:
    """Floats que ocupa un draw: pesos más traza y adjuntos por entrada"""
    sites = spec.depth * max(spec.branch_depth, 1) + 2
    return parameter_count(spec) + 4 * input_count * sites * spec.width
