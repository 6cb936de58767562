"""CSV input handling shared by the plot scripts."""

import csv


class MissingColumnError(ValueError):
    """An input CSV lacks a column the figure needs; ``column`` names it."""

    def __init__(self, column: str, path: str):
        super().__init__(f"missing column {column!r} in {path}")
        self.column = column
        self.path = path


def read_rows(path: str, required: tuple[str, ...]) -> list[dict]:
    """Read a CSV as dict rows, verifying every required column exists.

    The first missing column (in ``required`` order) is reported; an empty
    file counts as missing its first required column.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise MissingColumnError(col, path)
        return list(reader)


def floats(rows: list[dict], column: str) -> list[float]:
    """Column as floats; empty fields are skipped by ``pairs`` instead."""
    return [float(r[column]) for r in rows]


def pairs(rows: list[dict], x: str, y: str) -> tuple[list[float], list[float]]:
    """(x, y) values for rows where the y field is non-empty."""
    xs, ys = [], []
    for r in rows:
        if r[y] != "":
            xs.append(float(r[x]))
            ys.append(float(r[y]))
    return xs, ys
