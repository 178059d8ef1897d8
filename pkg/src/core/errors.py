#!/usr/bin/env python3
"""
Jerarquía de errores del laboratorio NTK.

Todas las excepciones del dominio heredan de NtkLabError para que la CLI
pueda distinguir errores de entrada (exit 2) de fallos estadísticos (exit 1).
Las precondiciones simples de argumentos usan ValueError.
"""

from typing import Optional


class NtkLabError(Exception):
    """Error base del laboratorio"""


class InvalidSpec(NtkLabError):
    """Especificación de arquitectura inválida (mensaje a nivel de campo)"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InvalidIndex(NtkLabError):
    """Índice de peso fuera de los límites de la arquitectura"""


class ZeroInput(NtkLabError):
    """Entrada con norma cero"""


class TraceMismatch(NtkLabError):
    """La traza no corresponde a la especificación o a los pesos"""


class NotPositiveDefinite(NtkLabError):
    """La factorización de Cholesky falló: hay que subir el jitter"""

    def __init__(self, jitter: float, detail: str = ""):
        self.jitter = jitter
        hint = f"la matriz + {jitter:g}·I no es definida positiva; aumenta el jitter"
        super().__init__(f"{hint} ({detail})" if detail else hint)


class NonFiniteSample(NtkLabError):
    """Muestra NaN/Inf en un estimador de momentos"""


class DegenerateMean(NtkLabError):
    """Media demasiado pequeña para normalizar la varianza"""


class ParseError(NtkLabError):
    """Error de parseo de CSV con posición (línea 1-based)"""

    def __init__(self, line: int, column: Optional[str], message: str):
        self.line = line
        self.column = column
        where = f"línea {line}" + (f", columna '{column}'" if column else "")
        super().__init__(f"{where}: {message}")


class ZeroRow(NtkLabError):
    """Fila de características nula: no se puede normalizar"""

    def __init__(self, line: int):
        self.line = line
        super().__init__(f"línea {line}: fila de características toda en cero")


class ShapeMismatch(NtkLabError):
    """Dimensiones incompatibles entre matrices"""


class UsageError(NtkLabError):
    """Uso incorrecto de la CLI o configuración inválida"""
