"""Space-time grid functions: solver outputs and Picard iterates.

The gradient is always ``np.gradient(values, x, axis=1, edge_order=2)``:
central differences inside, second-order one-sided at the ends. It is
recomputed from the values, never stored independently.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray


def x_gradient(values: NDArray, x: NDArray) -> NDArray:
    if x.size < 2:
        return np.zeros_like(values)
    if x.size == 2:
        return np.gradient(values, x, axis=-1)
    return np.gradient(values, x, axis=-1, edge_order=2)


@dataclass(frozen=True)
class GridFunction:
    t_nodes: NDArray[np.float64]
    x_nodes: NDArray[np.float64]
    values: NDArray[np.float64]  # (nt, nx)
    std_errors: NDArray[np.float64] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.t_nodes.size, self.x_nodes.size)
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {shape}")
        if self.std_errors is None:
            object.__setattr__(self, "std_errors", np.zeros(shape))

    @property
    def gradient(self) -> NDArray[np.float64]:
        return x_gradient(self.values, self.x_nodes)

    def interp(self, t: ArrayLike, x: ArrayLike, which: str = "u") -> NDArray[np.float64]:
        """Bilinear interpolation of u (or z) with clamping to the grid box."""
        arr = self.values if which == "u" else self.gradient
        return bilinear(self.t_nodes, self.x_nodes, arr, t, x)

    def with_values(self, values: NDArray, std_errors: NDArray | None = None, **meta) -> GridFunction:
        return GridFunction(self.t_nodes, self.x_nodes, values, std_errors, {**self.meta, **meta})

    # -- persistence ------------------------------------------------------
    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "u", "z", "se"])
        z = self.gradient
        for i, t in enumerate(self.t_nodes):
            for j, x in enumerate(self.x_nodes):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(self.values[i, j])),
                            repr(float(z[i, j])), repr(float(self.std_errors[i, j]))])
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> Path:
        return atomic_write_text(path, self.to_csv_text())

    @classmethod
    def read_csv(cls, path: str | os.PathLike, meta: dict | None = None) -> GridFunction:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if rows.shape[1] != 5:
            raise ValueError(f"{path}: expected columns t,x,u,z,se")
        t = np.unique(rows[:, 0])
        x = np.unique(rows[:, 1])
        if rows.shape[0] != t.size * x.size:
            raise ValueError(f"{path}: rows do not form a tensor grid")
        order = np.lexsort((rows[:, 1], rows[:, 0]))
        rows = rows[order]
        shape = (t.size, x.size)
        return cls(t, x, rows[:, 2].reshape(shape), rows[:, 4].reshape(shape), dict(meta or {}))


def bilinear(tg: NDArray, xg: NDArray, arr: NDArray, t: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
    t, x = np.broadcast_arrays(np.asarray(t, dtype=np.float64), np.asarray(x, dtype=np.float64))

    def bracket(g, v):
        if g.size == 1:
            return np.zeros(v.shape, dtype=np.int64), np.zeros(v.shape), 0
        i = np.clip(np.searchsorted(g, v, side="right") - 1, 0, g.size - 2)
        return i, np.clip((v - g[i]) / (g[i + 1] - g[i]), 0.0, 1.0), 1

    i, wt, st = bracket(tg, t)
    j, wx, sx = bracket(xg, x)
    lo = arr[i, j] + wx * (arr[i, j + sx] - arr[i, j])
    hi = arr[i + st, j] + wx * (arr[i + st, j + sx] - arr[i + st, j])
    return lo + wt * (hi - lo)


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
