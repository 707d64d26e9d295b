import csv
import io
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO

import numpy as np

from app.exceptions import ConfigError
from app.schemas.paths import Path


def format_value(value) -> str:
    """
    Render a cell: floats with 15 significant digits, None as empty

    Args:
        value: Cell value

    Returns:
        String form of the cell
    """
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".15g")
    return str(value)


def write_rows(stream: TextIO, fieldnames: Sequence[str], rows: Iterable[Mapping]) -> None:
    writer = csv.DictWriter(stream, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: format_value(row.get(key)) for key in fieldnames})


def write_csv(path: Optional[str], fieldnames: Sequence[str], rows: Iterable[Mapping], default: Optional[TextIO] = None) -> None:
    """
    Write rows to `path`, or to `default` when no path is given

    Args:
        path: Output file path or None
        fieldnames: Header, in column order
        rows: Mappings keyed by column name
        default: Stream used when path is None (stdout for the CLI)
    """
    if path is None:
        if default is None:
            raise ConfigError("output", "no output path given")
        write_rows(default, fieldnames, rows)
        return
    with open(path, "w", newline="") as f:
        write_rows(f, fieldnames, rows)


def columns_to_rows(columns: Dict[str, Sequence]) -> List[dict]:
    """Transpose equal-length columns into row dicts"""
    names = list(columns)
    length = len(columns[names[0]]) if names else 0
    return [{name: columns[name][i] for name in names} for i in range(length)]


def csv_text(fieldnames: Sequence[str], rows: Iterable[Mapping]) -> str:
    buffer = io.StringIO()
    write_rows(buffer, fieldnames, rows)
    return buffer.getvalue()


def path_to_rows(path: Path) -> List[dict]:
    columns = {"t": path.times}
    for name in ("Y", "U", "X"):
        if name in path.channels:
            columns[name] = path.channels[name]
    return columns_to_rows(columns)


def read_path_csv(filename: str, seed: Optional[int] = None, delta: float = 0.0) -> Path:
    """
    Read an observation CSV with a `t` column and a `Y` column (U and X optional)

    The grid must be uniform; its step is taken from the first two rows.

    Raises:
        ConfigError: If the file is missing columns or the grid is not uniform
    """
    try:
        with open(filename, newline="") as f:
            reader = csv.DictReader(f)
            fields = reader.fieldnames or []
            records = list(reader)
    except OSError as e:
        raise ConfigError("input", f"cannot read {filename}: {e.strerror}")

    for required in ("t", "Y"):
        if required not in fields:
            raise ConfigError("input", f"{filename} has no '{required}' column")
    if len(records) < 2:
        raise ConfigError("input", f"{filename} needs at least two rows")

    try:
        t = np.array([float(r["t"]) for r in records])
        channels = {
            name: np.array([float(r[name]) for r in records])
            for name in ("Y", "U", "X")
            if name in fields
        }
    except ValueError as e:
        raise ConfigError("input", f"{filename} holds a malformed number: {e}")

    steps = np.diff(t)
    dt = float(steps[0])
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ConfigError("input", f"{filename} is not on a uniform increasing time grid")
    return Path(t0=float(t[0]), dt=dt, n_steps=len(t) - 1, channels=channels, seed=0 if seed is None else seed, delta=delta)
