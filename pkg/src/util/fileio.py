"""
Problem-agnostic file IO.
"""

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence


def read_data_lines(filename: str | Path) -> list[tuple[int, str]]:
    """
    Read all data lines from a file, stripping comments/whitespace.

    Args:
        filename: The filename.

    Returns: (line number, text) pairs for every non-empty line.
    """
    lines = []
    with open(filename) as f:
        for lineno, line in enumerate(f.readlines(), start=1):
            # Strip comments
            if "#" in line:
                line = line[: line.find("#")]

            # Strip spaces
            line = line.strip()

            if len(line) != 0:
                lines.append((lineno, line))
    return lines


def format_float(value: float | None) -> str:
    """
    Shortest round-tripping text for a float; None becomes an empty cell.
    """
    if value is None:
        return ""
    return repr(float(value))


def write_csv(
    filename: str | Path, header: Sequence[str], rows: Iterable[Sequence]
) -> None:
    """
    Write rows of numbers to a CSV file.

    Args:
        filename: The filename.
        header: Column names, written in order.
        rows: Rows of floats/ints/None/str.
    """
    with open(filename, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if v is None or isinstance(v, float) else v for v in row]
            )


def read_csv(filename: str | Path) -> list[dict[str, str]]:
    """
    Read a CSV file written by write_csv().
    """
    with open(filename, newline="") as f:
        return list(csv.DictReader(f))


def write_json(filename: str | Path, payload: dict) -> None:
    """
    Write a manifest/report as indented, key-sorted JSON.
    """
    with open(filename, "w") as f:
        json.dump(payload, f, indent=4, sort_keys=True)
        f.write("\n")
