"""Uniformly sampled simulation output and its CSV form."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np


class SimTrace:
    """Named real-valued channels on a common time base ``t0 + k*dt``."""

    def __init__(self, t0: float, dt: float, channels: Optional[Dict[str, np.ndarray]] = None):
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.t0 = float(t0)
        self.dt = float(dt)
        self._channels: Dict[str, np.ndarray] = {}
        for name, data in (channels or {}).items():
            self.add(name, data)

    def add(self, name: str, data) -> None:
        if name in self._channels:
            raise ValueError(f"duplicate channel name {name!r}")
        if "," in name or "\n" in name:
            raise ValueError(f"channel name {name!r} contains a separator")
        arr = np.asarray(data, dtype=float).ravel()
        if self._channels and arr.size != self.n:
            raise ValueError(f"channel {name!r} has {arr.size} samples, expected {self.n}")
        self._channels[name] = arr

    @property
    def n(self) -> int:
        return next(iter(self._channels.values())).size if self._channels else 0

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def names(self) -> list:
        return list(self._channels)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._channels[name]
        except KeyError:
            raise KeyError(f"no channel {name!r}; available: {self.names}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._channels

    def items(self):
        return self._channels.items()

    def select(self, names: Iterable[str]) -> "SimTrace":
        return SimTrace(self.t0, self.dt, {n: self[n] for n in names})

    def window(self, t_start: float, t_end: float) -> slice:
        """Index slice covering t_start <= t <= t_end."""
        i0 = max(0, int(np.ceil((t_start - self.t0) / self.dt - 1e-9)))
        i1 = min(self.n, int(np.floor((t_end - self.t0) / self.dt + 1e-9)) + 1)
        return slice(i0, i1)

    def aligned_with(self, other: "SimTrace", rtol: float = 1e-12) -> bool:
        return (self.n == other.n and abs(self.dt - other.dt) <= rtol * self.dt
                and abs(self.t0 - other.t0) <= rtol * self.dt)

    def equals(self, other: "SimTrace") -> bool:
        """Bit-identical comparison of time base and every channel."""
        if (self.t0, self.dt, self.names) != (other.t0, other.dt, other.names):
            return False
        return all(np.array_equal(self[n], other[n]) for n in self.names)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + self.names)
            cols = [self.t] + [self._channels[n] for n in self.names]
            for row in zip(*cols):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        with Path(path).open() as fh:
            header = next(csv.reader(fh))
        if header[0] != "time":
            raise ValueError(f"{path}: first column must be 'time'")
        table = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
        t = table[:, 0]
        if t.size < 2:
            raise ValueError(f"{path}: need at least two samples")
        dt = float((t[-1] - t[0]) / (t.size - 1))
        return cls(float(t[0]), dt, {name: table[:, i + 1] for i, name in enumerate(header[1:])})
