"""Uniformly sampled multi-signal time series."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Trace:
    """Named signals sampled every ``dt`` seconds, starting at t = 0.

    All signals share the same length. Time is implicit (``k * dt``) and is
    only materialized on export.
    """

    dt: float
    signals: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        lengths = {len(v) for v in self.signals.values()}
        if len(lengths) > 1:
            raise ValueError(f"signals have mismatched lengths: {sorted(lengths)}")
        self.signals = {k: np.asarray(v, dtype=np.float64) for k, v in self.signals.items()}

    def __len__(self):
        for v in self.signals.values():
            return len(v)
        return 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.signals[name]

    def __contains__(self, name: str) -> bool:
        return name in self.signals

    @property
    def names(self) -> list[str]:
        return list(self.signals)

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def select(self, names) -> "Trace":
        return Trace(self.dt, {n: self.signals[n] for n in names})

    def merge(self, other: "Trace") -> "Trace":
        if other.dt != self.dt or len(other) != len(self):
            raise ValueError("cannot merge traces with different sampling")
        out = dict(self.signals)
        out.update(other.signals)
        return Trace(self.dt, out)

    def to_csv(self, path=None) -> str | None:
        """Write ``t,<signal>,...`` rows. Returns the text when ``path`` is None."""
        buf = io.StringIO()
        names = self.names
        buf.write(",".join(["t", *names]) + "\n")
        data = np.column_stack([self.t, *(self.signals[n] for n in names)]) if names else self.t[:, None]
        np.savetxt(buf, data, delimiter=",", fmt="%.17g")
        text = buf.getvalue()
        if path is None:
            return text
        Path(path).write_text(text)
        return None

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        if not header or header[0] != "t":
            raise ValueError(f"{path}: first column must be 't'")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        dt = round(float(t[1] - t[0]), 12) if len(t) > 1 else 1.0
        return cls(dt, {name: data[:, i + 1] for i, name in enumerate(header[1:])})
