#!/usr/bin/env python3
"""
Configuración de ejecución
Una sección por subcomando más una sección común. Precedencia:
valores por defecto < archivo --config < flags explícitos.
"""

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from ..core.errors import UsageError
from .constants import EXPERIMENT_DEFAULTS, OUTPUT_FORMATS, TRAIN_FRACTION

_VARIANCE = EXPERIMENT_DEFAULTS["VARIANCE"]
_DUALITY = EXPERIMENT_DEFAULTS["DUALITY"]
_MOMENTS = EXPERIMENT_DEFAULTS["MOMENTS"]
_KERNEL = EXPERIMENT_DEFAULTS["KERNEL"]
_REGRESS = EXPERIMENT_DEFAULTS["REGRESS"]

SUBCOMMANDS = ("variance", "duality", "moments", "kernel", "regress")

# duality emite informes anidados (item1), mejor en JSON-lines
DEFAULT_FORMATS = {"duality": "jsonl"}

# Claves que deben ser enteros > 0 (o >= 0 las profundidades)
_POSITIVE_COUNTS = {"draws", "width", "m", "input_dim", "pairs", "indices", "T", "repeats", "threads", "order", "layer"}
_POSITIVE_LISTS = {"widths"}
_DEPTH_KEYS = {"depth", "depths"}
# Fracciones estrictamente entre 0 y 1
_FRACTION_KEYS = {"split"}


class RunConfig:
    """Gestor de configuración de una ejecución del CLI"""

    DEFAULT_CONFIG = {
        "common": {
            "seed": 0,
            "out": "-",
            "format": None,  # None → formato por defecto del subcomando
            "threads": None,
            "verbosity": "normal",
        },
        "variance": {
            "arch": list(_VARIANCE["kinds"]),
            "widths": list(_VARIANCE["widths"]),
            "depths": list(_VARIANCE["depths"]),
            "draws": _VARIANCE["draws"],
            "input_dim": _VARIANCE["input_dim"],
            "alpha": _VARIANCE["dense_alpha"],
            "alpha_scale": _VARIANCE["alpha_scale"],
            "m": _VARIANCE["branch_depth"],
            "bound_c": 1.0,
            "bound_c1": 1.0,
            "bound_c2": None,  # None → preset 5α²·ψ₁(α)
        },
        "duality": {
            "arch": "resnet",
            "check": "thm3",  # thm3 | thm4 | sign_flip
            "width": _DUALITY["width"],
            "depth": 3,
            "m": 2,
            "alphas": None,
            "alpha_scale": 0.1,
            "alpha": 0.5,
            "input_dim": 4,
            "k": None,
            "indices": _DUALITY["indices_per_arch"],
            "order": 2,
            "layer": 1,
            "draws": _DUALITY["draws"],
        },
        "moments": {
            "chain": list(_MOMENTS["kinds"]),
            "widths": list(_MOMENTS["widths"]),
            "depth": _MOMENTS["depth"],
            "draws": _MOMENTS["draws"],
        },
        "kernel": {
            "arch": "resnet",
            "width": _KERNEL["width"],
            "depth": _KERNEL["depth"],
            "m": 2,
            "alphas": None,
            "alpha_scale": 0.1,
            "alpha": 0.5,
            "input_dim": _KERNEL["input_dim"],
            "pairs": _KERNEL["pairs"],
            "scope": "full",
            "compare_empirical": False,
            "T": _KERNEL["draws"],
            "tolerance": _KERNEL["tolerance"],
            "gram_out": None,  # ruta base para exportar las Gram (.csv o .json)
        },
        "regress": {
            "dataset": {
                "path": None,
                "label_column": "label",
                "synthetic": {
                    "classes": _REGRESS["classes"],
                    "dim": _REGRESS["input_dim"],
                    "per_class": _REGRESS["samples"] // _REGRESS["classes"],
                    "separation": _REGRESS["separation"],
                },
            },
            "arch": {
                "kinds": list(_REGRESS["kinds"]),
                "widths": list(_REGRESS["widths"]),
                "depths": list(_REGRESS["depths"]),
                "alpha_scale": 0.1,
                "dense_alpha": 0.5,
                "branch_depth": 2,
            },
            "T": _REGRESS["draws"],
            "repeats": _REGRESS["repeats"],
            "jitter": None,
            "split": TRAIN_FRACTION,
            "include_limit": True,
        },
    }

    def __init__(self, subcommand: str, config_file: Optional[str] = None):
        if subcommand not in SUBCOMMANDS:
            raise UsageError(f"subcomando desconocido: {subcommand}")
        self.subcommand = subcommand
        self.config_file = Path(config_file) if config_file else None
        self.config = self.load_config(self.config_file)

    def load_config(self, config_file: Optional[Path] = None) -> Dict[str, Any]:
        """Carga el JSON y lo fusiona con los valores por defecto"""
        if config_file is None or not config_file.exists():
            if config_file is not None:
                from .logger import warn

                warn(f"No existe {config_file}; se usan los valores por defecto")
            return copy.deepcopy(self.DEFAULT_CONFIG)
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                loaded_config = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"no se pudo leer {config_file}: {e}") from e
        if not isinstance(loaded_config, dict):
            raise UsageError(f"{config_file}: se esperaba un objeto JSON")
        self._check_keys(self.DEFAULT_CONFIG, loaded_config, "")
        return self.merge_configs(self.DEFAULT_CONFIG, loaded_config)

    def _check_keys(self, default: Dict, loaded: Dict, prefix: str) -> None:
        for key, value in loaded.items():
            path = f"{prefix}{key}"
            if key not in default:
                raise UsageError(f"clave de configuración desconocida: {path}")
            if isinstance(value, dict) and isinstance(default[key], dict):
                self._check_keys(default[key], value, f"{path}.")

    def merge_configs(self, default: Dict, loaded: Dict) -> Dict:
        """Fusiona configuración por defecto con la cargada"""
        merged = copy.deepcopy(default)

        for key, value in loaded.items():
            if key in merged and isinstance(value, dict) and isinstance(merged[key], dict):
                merged[key] = self.merge_configs(merged[key], value)
            else:
                merged[key] = copy.deepcopy(value)

        return merged

    def get(self, key_path: str, default: Any = None) -> Any:
        """Obtiene un valor por ruta de claves ("variance.draws")"""
        value: Any = self.config
        for key in key_path.split("."):
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value

    def set(self, key_path: str, value: Any) -> None:
        """Establece un valor por ruta de claves; solo claves existentes"""
        keys = key_path.split(".")
        config = self.config
        for key in keys[:-1]:
            if not isinstance(config.get(key), dict):
                raise UsageError(f"clave de configuración desconocida: {key_path}")
            config = config[key]
        if keys[-1] not in config:
            raise UsageError(f"clave de configuración desconocida: {key_path}")
        config[keys[-1]] = value

    def apply_overrides(self, overrides: Dict[str, Any]) -> None:
        """Aplica flags explícitos (los None se ignoran)"""
        for key_path, value in overrides.items():
            if value is not None:
                self.set(key_path, value)

    @property
    def common(self) -> Dict[str, Any]:
        return self.config["common"]

    @property
    def section(self) -> Dict[str, Any]:
        return self.config[self.subcommand]

    def resolve_defaults(self) -> None:
        """Rellena los valores derivados antes de validar e imprimir"""
        if self.common.get("format") is None:
            self.common["format"] = DEFAULT_FORMATS.get(self.subcommand, "csv")
        alphas = self.section.get("alphas")
        if isinstance(alphas, list) and alphas:
            # α explícitos fijan la profundidad
            self.section["depth"] = len(alphas)

    def validate(self) -> None:
        """Conteos positivos, formato conocido y salida escribible"""
        self.resolve_defaults()
        self._validate_counts(self.section, self.subcommand)
        threads = self.common.get("threads")
        if threads is not None and (not isinstance(threads, int) or threads < 1):
            raise UsageError(f"common.threads debe ser un entero > 0: {threads}")
        seed = self.common.get("seed")
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise UsageError(f"common.seed debe ser un entero >= 0: {seed}")
        if self.common.get("format") not in OUTPUT_FORMATS:
            raise UsageError(f"common.format debe ser uno de {OUTPUT_FORMATS}: {self.common.get('format')}")
        if self.common.get("verbosity") not in ("quiet", "normal", "debug"):
            raise UsageError(f"common.verbosity no válida: {self.common.get('verbosity')}")
        out = self.common.get("out") or "-"
        if out != "-":
            parent = Path(out).expanduser().resolve().parent
            if not parent.is_dir() or not os.access(parent, os.W_OK):
                raise UsageError(f"no se puede escribir en {parent}")

    def _validate_counts(self, section: Dict[str, Any], prefix: str) -> None:
        for key, value in section.items():
            path = f"{prefix}.{key}"
            if isinstance(value, dict):
                self._validate_counts(value, path)
            elif value is None:
                continue
            elif key in _POSITIVE_COUNTS:
                if not _is_int(value) or value < 1:
                    raise UsageError(f"{path} debe ser un entero > 0: {value}")
            elif key in _POSITIVE_LISTS:
                if not value or not all(_is_int(v) and v >= 1 for v in value):
                    raise UsageError(f"{path} debe ser una lista de enteros > 0: {value}")
            elif key in _DEPTH_KEYS:
                values = value if isinstance(value, list) else [value]
                if not values or not all(_is_int(v) and v >= 0 for v in values):
                    raise UsageError(f"{path} debe contener enteros >= 0: {value}")
            elif key in _FRACTION_KEYS:
                if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 < value < 1.0:
                    raise UsageError(f"{path} debe estar en (0, 1): {value}")

    def effective(self) -> Dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "common": copy.deepcopy(self.common),
            self.subcommand: copy.deepcopy(self.section),
        }

    def effective_line(self) -> str:
        """JSON canónico en una línea con todos los valores efectivos"""
        return json.dumps(self.effective(), sort_keys=True, ensure_ascii=False)

    def export_config(self, filepath: str) -> bool:
        """Guarda la configuración efectiva, recargable con --config"""
        try:
            target = Path(filepath)
            target.parent.mkdir(parents=True, exist_ok=True)
            payload = {"common": self.common, self.subcommand: self.section}
            with open(target, "w", encoding="utf-8") as f:
                json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True)
            return True
        except Exception as e:
            from .logger import error

            error(f"Error exportando configuración: {e}")
            return False


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)
