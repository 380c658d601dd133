"""Column-oriented record of a training or dynamics run."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np


@dataclass
class TrajectoryLog:
    """Named real-valued series sharing one time index (the first column).

    ``extras`` holds non-tabular run products (final parameters, flags) and
    is never serialized.
    """

    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    extras: dict[str, Any] = field(default_factory=dict)

    def append(self, *values: float) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        if self.rows and values[0] < self.rows[-1][0]:
            raise ValueError("time index must be monotone")
        self.rows.append([float(v) for v in values])

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise KeyError(name) from None
        return np.array([r[j] for r in self.rows], dtype=float)

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def last(self) -> dict[str, float]:
        return dict(zip(self.columns, self.rows[-1])) if self.rows else {}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(v) for v in r])

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            cols = next(reader)
            log = cls(cols)
            for r in reader:
                log.rows.append([float(v) for v in r])
        return log

    @classmethod
    def from_arrays(cls, columns: Iterable[str], *arrays) -> "TrajectoryLog":
        log = cls(list(columns))
        for vals in zip(*arrays):
            log.append(*vals)
        return log
