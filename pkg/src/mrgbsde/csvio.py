"""Small CSV helpers with round-trip float formatting."""

import csv
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def fmt(value) -> str:
    """Format a scalar for CSV output (17 significant digits for floats)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % float(value)
    return str(value)


def write_table(path, header, rows):
    """Write ``rows`` (iterable of sequences) under a header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def write_columns(path, header, columns):
    """Write equal-length numeric columns."""
    cols = [np.asarray(c) for c in columns]
    return write_table(path, header, zip(*cols))


def read_table(path):
    """Read a CSV file into (header, rows of strings)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        return [], []
    return rows[0], rows[1:]
