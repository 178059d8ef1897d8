#!/usr/bin/env python3
"""
Logger unificado del laboratorio: todo el diagnóstico va a stderr para que
stdout quede limpio para resultados. Imprime emojis cuando la consola lo
permite y degrada a ASCII sin interrumpir la ejecución.

Niveles de verbosidad: quiet (solo errores), normal, debug.
"""
import sys
import threading
import time
from typing import Optional

QUIET = 0
NORMAL = 1
DEBUG = 2

_verbosity = NORMAL
_lock = threading.Lock()


def set_verbosity(level: int) -> None:
    global _verbosity
    _verbosity = max(QUIET, min(DEBUG, int(level)))


def _safe_print(message: str) -> None:
    """Imprime en stderr; si la consola no soporta el carácter, lo omite sin romper la ejecución."""
    stream = sys.stderr
    with _lock:
        try:
            print(message, file=stream, flush=True)
        except UnicodeEncodeError:
            try:
                enc = stream.encoding or 'cp1252'
                safe = message.encode(enc, errors='ignore').decode(enc, errors='ignore')
                print(safe, file=stream, flush=True)
            except Exception:
                print(message.encode('ascii', errors='ignore').decode('ascii', errors='ignore'),
                      file=stream, flush=True)


def _log(prefix: str, msg: str, minimum: int = NORMAL) -> None:
    if _verbosity >= minimum:
        _safe_print(f"{prefix} {msg}")


def info(msg: str) -> None:
    _log("ℹ️", msg)


def warn(msg: str) -> None:
    _log("⚠️", msg)


def error(msg: str) -> None:
    _log("❌", msg, QUIET)


def debug(msg: str) -> None:
    # Debug sin emoji para reducir ruido
    if _verbosity >= DEBUG:
        _safe_print(f"[DEBUG] {msg}")


def success(msg: str) -> None:
    _log("✅", msg)


def critical(msg: str) -> None:
    _log("🔴", msg, QUIET)


class ProgressReporter:
    """Progreso de una tarea larga, limitado a un mensaje cada `interval` segundos"""

    def __init__(self, label: str, total: int, interval: float = 2.0):
        self.label = label
        self.total = max(int(total), 1)
        self.interval = interval
        self.done = 0
        self._started = time.time()
        self._last: Optional[float] = None
        self._lock = threading.Lock()

    def advance(self, amount: int = 1) -> None:
        with self._lock:
            self.done += amount
            now = time.time()
            finished = self.done >= self.total
            if not finished and self._last is not None and now - self._last < self.interval:
                return
            self._last = now
            percent = 100.0 * min(self.done, self.total) / self.total
            elapsed = now - self._started
        _log("⏳", f"{self.label}: {percent:5.1f}% ({self.done}/{self.total}, {elapsed:.1f}s)")


def progress(label: str, total: int) -> ProgressReporter:
    return ProgressReporter(label, total)
