"""Delimited tables and ``name = value`` parameter files."""
from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .errors import ParamFileError

CONFIG_DIR_ENV = "AUCTIONBOOK_CONFIG_DIR"


def fmt(value) -> str:
    """Full-precision scientific notation for floats; other values via ``str``."""
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{float(value):.17e}"
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def write_table(path, header: Sequence[str], columns: Sequence[Sequence]) -> None:
    """Tab-separated table, one column per entry of ``columns``."""
    n = len(columns[0]) if columns else 0
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(header) + "\n")
        for i in range(n):
            fh.write("\t".join(fmt(col[i]) for col in columns) + "\n")


def read_table(path) -> Dict[str, List[str]]:
    """Read a tab- or comma-separated table into raw string columns."""
    with open(path, newline="") as fh:
        first = fh.readline()
        delim = "\t" if "\t" in first else ","
        header = [h.strip() for h in first.rstrip("\r\n").split(delim)]
        cols: Dict[str, List[str]] = {h: [] for h in header}
        for row in csv.reader(fh, delimiter=delim):
            if not row:
                continue
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols


def float_column(values: Sequence[str]) -> np.ndarray:
    return np.array([float(v) if v != "" else np.nan for v in values])


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if "," in text:
        parts = [p.strip() for p in text.split(",")]
        try:
            return [float(p) for p in parts]
        except ValueError:
            return parts
    return text


def resolve_config_path(path) -> Path:
    """Relative paths that do not exist are looked up in ``$AUCTIONBOOK_CONFIG_DIR``."""
    p = Path(path)
    if not p.exists() and not p.is_absolute() and os.environ.get(CONFIG_DIR_ENV):
        alt = Path(os.environ[CONFIG_DIR_ENV]) / p
        if alt.exists():
            return alt
    return p


def read_params(path) -> Dict[str, object]:
    """Parse ``name = value`` lines; ``#`` starts a comment.

    Malformed lines raise :class:`ParamFileError` carrying line and column.
    """
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParamFileError(str(p), 0, 0, f"cannot read: {exc.strerror}") from exc
    out: Dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            col = len(line) - len(line.lstrip()) + 1
            raise ParamFileError(str(p), lineno, col, "expected 'name = value'")
        name, value = line.split("=", 1)
        key = name.strip()
        if not key or not key.replace("_", "").replace(".", "").isalnum():
            col = len(name) - len(name.lstrip()) + 1
            raise ParamFileError(str(p), lineno, col, f"invalid name {key!r}")
        if not value.strip():
            raise ParamFileError(str(p), lineno, len(name) + 2, f"missing value for {key!r}")
        if key in out:
            raise ParamFileError(str(p), lineno, len(name) - len(name.lstrip()) + 1,
                                 f"duplicate name {key!r}")
        out[key] = _parse_value(value.strip())
    return out


def write_params(path, values: Mapping[str, object]) -> None:
    with open(path, "w") as fh:
        for k, v in values.items():
            if isinstance(v, (list, tuple, np.ndarray)):
                v = ",".join(fmt(float(e)) if not isinstance(e, str) else e for e in v)
            else:
                v = fmt(v)
            fh.write(f"{k} = {v}\n")


def format_params(values: Mapping[str, object]) -> str:
    return "".join(f"{k} = {fmt(v)}\n" for k, v in values.items())
