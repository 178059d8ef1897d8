#!/usr/bin/env python3
"""
Front-end de línea de comandos del laboratorio NTK.

    python main.py variance --arch densenet --alpha 0.5 --width 32 --depths 2,4,8,16
    python main.py duality --arch resnet --alphas 0.3,0.3,0.3 --k 2,1 --order 4
    python main.py kernel --arch resnet --compare-empirical --width 512 --T 200

Códigos de salida: 0 correcto, 1 alguna comprobación estadística falló,
2 error de uso o de entrada.
"""

import argparse
import sys
from typing import Any, Dict, List, Optional, Sequence

from ..core.errors import NtkLabError, UsageError
from ..core.worker_manager import configure_workers
from ..utils import logger
from ..utils.constants import OUTPUT_FORMATS
from ..utils.exporters import write_results
from ..utils.run_config import RunConfig
from .commands import COMMANDS

_VERBOSITY = {"quiet": logger.QUIET, "normal": logger.NORMAL, "debug": logger.DEBUG}


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"lista de enteros no válida: '{text}'") from exc


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"lista de números no válida: '{text}'") from exc


def _str_list(text: str) -> List[str]:
    return [part.strip().lower() for part in text.split(",") if part.strip()]


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("opciones comunes")
    group.add_argument("--seed", type=int, help="semilla maestra")
    group.add_argument("--draws", type=int, help="número de draws Monte Carlo (T en kernel y regress)")
    group.add_argument("--out", help="archivo de resultados ('-' = stdout)")
    group.add_argument("--format", choices=OUTPUT_FORMATS, help="formato de resultados")
    group.add_argument("--config", help="archivo JSON con la misma estructura que la configuración efectiva")
    group.add_argument("--threads", type=int, help="máximo de hilos de trabajo")
    verbosity = group.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_const", const="quiet", dest="verbosity")
    verbosity.add_argument("--verbose", action="store_const", const="debug", dest="verbosity")
    return common


def _add_arch_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arch", choices=("vanilla", "resnet", "densenet"))
    parser.add_argument("--width", type=int)
    parser.add_argument("--depth", type=int)
    parser.add_argument("--m", type=int, help="profundidad de la rama ResNet")
    parser.add_argument("--alphas", type=_float_list, help="α_l de ResNet separados por comas (fijan L)")
    parser.add_argument("--alpha-scale", type=float, dest="alpha_scale", help="α_l = alpha_scale / L")
    parser.add_argument("--alpha", type=float, help="α de DenseNet")
    parser.add_argument("--input-dim", type=int, dest="input_dim")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntk-lab", description="Laboratorio de NTK a ancho finito")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    common = _common_parser()

    variance = subparsers.add_parser("variance", parents=[common], help="varianza normalizada del NTK")
    variance.add_argument("--arch", type=_str_list, help="tipos separados por comas")
    variance.add_argument("--width", "--widths", type=_int_list, dest="widths")
    variance.add_argument("--depths", type=_int_list)
    variance.add_argument("--input-dim", type=int, dest="input_dim")
    variance.add_argument("--alpha", type=float)
    variance.add_argument("--alpha-scale", type=float, dest="alpha_scale")
    variance.add_argument("--m", type=int)
    variance.add_argument("--bound-c", type=float, dest="bound_c")
    variance.add_argument("--bound-c1", type=float, dest="bound_c1")
    variance.add_argument("--bound-c2", type=float, dest="bound_c2")

    duality = subparsers.add_parser("duality", parents=[common], help="dualidad de momentos y Jacobianos")
    _add_arch_flags(duality)
    duality.add_argument("--check", choices=("thm3", "thm4", "sign_flip"))
    duality.add_argument("--k", action="append", help="índice de peso: initial, final, l o l,h (repetible)")
    duality.add_argument("--indices", type=int, help="índices aleatorios cuando no se da --k")
    duality.add_argument("--order", type=int, help="orden del momento (potencia en sign_flip)")
    duality.add_argument("--layer", type=int, help="capa del sitio sign-flip")

    moments = subparsers.add_parser("moments", parents=[common], help="recursiones de normas capa a capa")
    moments.add_argument("--chain", type=_str_list, help="relu, linear")
    moments.add_argument("--width", "--widths", type=_int_list, dest="widths")
    moments.add_argument("--depth", type=int)

    kernel = subparsers.add_parser("kernel", parents=[common], help="kernel límite frente al empírico")
    _add_arch_flags(kernel)
    kernel.add_argument("--pairs", type=int)
    kernel.add_argument("--scope", choices=("full", "body", "no_input"))
    kernel.add_argument("--compare-empirical", action="store_true", default=None, dest="compare_empirical")
    kernel.add_argument("--T", type=int, dest="T")
    kernel.add_argument("--tolerance", type=float)
    kernel.add_argument("--gram-out", dest="gram_out")

    regress = subparsers.add_parser("regress", parents=[common], help="regresión por kernel")
    regress.add_argument("--dataset", help="CSV con cabecera")
    regress.add_argument("--label-column", dest="label_column")
    regress.add_argument("--classes", type=int)
    regress.add_argument("--dim", type=int)
    regress.add_argument("--per-class", type=int, dest="per_class")
    regress.add_argument("--separation", type=float)
    regress.add_argument("--arch", type=_str_list)
    regress.add_argument("--width", "--widths", type=_int_list, dest="widths")
    regress.add_argument("--depths", type=_int_list)
    regress.add_argument("--alpha-scale", type=float, dest="alpha_scale")
    regress.add_argument("--alpha", type=float)
    regress.add_argument("--m", type=int)
    regress.add_argument("--T", type=int, dest="T")
    regress.add_argument("--repeats", type=int)
    regress.add_argument("--jitter", type=float)
    regress.add_argument("--split", type=float)
    regress.add_argument("--no-limit", action="store_false", default=None, dest="include_limit")
    return parser


# Flag → ruta en la configuración, por subcomando
_FLAG_PATHS: Dict[str, Dict[str, str]] = {
    "variance": {
        "widths": "widths", "depths": "depths", "arch": "arch", "input_dim": "input_dim",
        "alpha": "alpha", "alpha_scale": "alpha_scale", "m": "m", "draws": "draws",
        "bound_c": "bound_c", "bound_c1": "bound_c1", "bound_c2": "bound_c2",
    },
    "duality": {
        "arch": "arch", "width": "width", "depth": "depth", "m": "m", "alphas": "alphas",
        "alpha_scale": "alpha_scale", "alpha": "alpha", "input_dim": "input_dim", "check": "check",
        "k": "k", "indices": "indices", "order": "order", "layer": "layer", "draws": "draws",
    },
    "moments": {"chain": "chain", "widths": "widths", "depth": "depth", "draws": "draws"},
    "kernel": {
        "arch": "arch", "width": "width", "depth": "depth", "m": "m", "alphas": "alphas",
        "alpha_scale": "alpha_scale", "alpha": "alpha", "input_dim": "input_dim", "pairs": "pairs",
        "scope": "scope", "compare_empirical": "compare_empirical", "T": "T", "draws": "T",
        "tolerance": "tolerance", "gram_out": "gram_out",
    },
    "regress": {
        "dataset": "dataset.path", "label_column": "dataset.label_column",
        "classes": "dataset.synthetic.classes", "dim": "dataset.synthetic.dim",
        "per_class": "dataset.synthetic.per_class", "separation": "dataset.synthetic.separation",
        "arch": "arch.kinds", "widths": "arch.widths", "depths": "arch.depths",
        "alpha_scale": "arch.alpha_scale", "alpha": "arch.dense_alpha", "m": "arch.branch_depth",
        "T": "T", "draws": "T", "repeats": "repeats", "jitter": "jitter", "split": "split",
        "include_limit": "include_limit",
    },
}
_COMMON_PATHS = {"seed": "seed", "out": "out", "format": "format", "threads": "threads", "verbosity": "verbosity"}


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Flags explícitos como rutas de configuración"""
    values = vars(args)
    overrides = {f"common.{path}": values.get(flag) for flag, path in _COMMON_PATHS.items()}
    for flag, path in _FLAG_PATHS[args.subcommand].items():
        if values.get(flag) is not None:
            overrides[f"{args.subcommand}.{path}"] = values[flag]
    return overrides


def build_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(args.subcommand, args.config)
    config.apply_overrides(overrides_from_args(args))
    config.validate()
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.verbosity:
        logger.set_verbosity(_VERBOSITY[args.verbosity])
    try:
        config = build_config(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        logger.error(str(e))
        return 2

    logger.set_verbosity(_VERBOSITY[config.common["verbosity"]])
    configure_workers(config.common.get("threads"))
    print(f"# config: {config.effective_line()}", flush=True)

    try:
        result = COMMANDS[args.subcommand](config)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        logger.error(str(e))
        return 2
    except (NtkLabError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2

    out = config.common.get("out") or "-"
    try:
        write_results(out, config.common["format"], result.columns, result.rows, result.records)
    except OSError as e:
        logger.critical(f"No se pudieron escribir los resultados en {out}: {e}")
        return 2
    if out != "-":
        logger.success(f"{len(result.rows)} filas escritas en {out}")
    for line in result.summary:
        print(f"# {line}")

    if result.failed:
        logger.warn("Al menos una comprobación estadística falló")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
