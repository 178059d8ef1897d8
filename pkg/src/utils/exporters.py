#!/usr/bin/env python3
"""
Exportación de resultados: CSV y JSON-lines deterministas.
Floats con repr (ida y vuelta exacta) para que dos ejecuciones iguales
den archivos idénticos byte a byte.
"""

import csv
import io
import json
import math
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, Mapping, Sequence, TextIO, Union

import numpy as np

from ..core.ntk_exact import GramMatrix

STDOUT = "-"


def format_cell(value: Any) -> str:
    """Representación textual de una celda CSV"""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"tipo no serializable: {type(value).__name__}")


@contextmanager
def open_output(path: Union[str, Path]) -> Iterator[TextIO]:
    """Archivo en escritura o stdout cuando path es '-'"""
    if str(path) == STDOUT:
        yield sys.stdout
        sys.stdout.flush()
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as handle:
        yield handle


def csv_text(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(column)) for column in columns])
    return buffer.getvalue()


def write_csv(path: Union[str, Path], columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    with open_output(path) as handle:
        handle.write(csv_text(columns, rows))


def jsonl_text(records: Iterable[Mapping[str, Any]]) -> str:
    return "".join(
        json.dumps(record, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n"
        for record in records
    )


def write_jsonl(path: Union[str, Path], records: Iterable[Mapping[str, Any]]) -> None:
    with open_output(path) as handle:
        handle.write(jsonl_text(records))


def write_results(path: Union[str, Path], fmt: str, columns: Sequence[str],
                  rows: Sequence[Mapping[str, Any]], records: Sequence[Mapping[str, Any]]) -> None:
    """CSV con las columnas fijas o JSON-lines con los registros completos"""
    if fmt == "csv":
        write_csv(path, columns, rows)
    elif fmt == "jsonl":
        write_jsonl(path, records)
    else:
        raise ValueError(f"formato desconocido: {fmt}")


def gram_to_csv(path: Union[str, Path], gram: GramMatrix) -> None:
    """Cabecera con índices de muestra; una fila por muestra"""
    columns = [str(i) for i in range(gram.size)]
    rows = [dict(zip(columns, (float(v) for v in row))) for row in gram.entries]
    with open_output(path) as handle:
        handle.write(csv_text(columns, rows))


def gram_to_json(path: Union[str, Path], gram: GramMatrix) -> None:
    payload: Dict[str, Any] = gram.to_dict()
    with open_output(path) as handle:
        json.dump(payload, handle, sort_keys=True)
        handle.write("\n")
