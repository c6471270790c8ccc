"""Deterministic random streams for path ensembles.

Path ``i`` of a stream draws its Brownian increments from the block
``i // BLOCK`` generator, seeded by ``(master_seed, tag, block)``. A path's
increments therefore depend only on its index, never on batching or on the
number of workers.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

BLOCK = 256


def _tag_key(tag: str | int) -> int:
    if isinstance(tag, int):
        return tag
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class PathStreams:
    seed: int
    tag: str | int = 0

    def child(self, *tags: str | int) -> PathStreams:
        key = _tag_key(self.tag)
        for t in tags:
            key = zlib.crc32(f"{key}/{_tag_key(t)}".encode())
        return PathStreams(self.seed, key)

    def _block_rng(self, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(_tag_key(self.tag), block))
        return np.random.Generator(np.random.PCG64(ss))

    def _fill(self, kind: str, start: int, count: int, shape: tuple[int, ...]) -> NDArray[np.float64]:
        """Per-path draws of ``shape`` for paths ``start .. start+count-1``; path i's values never
        depend on ``start`` or ``count``."""
        size = int(np.prod(shape))
        out = np.empty((count, *shape))
        i = start
        while i < start + count:
            block, off = divmod(i, BLOCK)
            take = min(BLOCK - off, start + count - i)
            rng = self._block_rng(block)
            draw = rng.standard_normal if kind == "normal" else rng.random
            if off:
                draw(off * size)
            out[i - start : i - start + take] = draw((take, *shape))
            i += take
        return out

    def normals(self, start: int, count: int, steps: int, dim: int) -> NDArray[np.float64]:
        """Standard normals for paths ``start .. start+count-1``, shape (count, steps, dim)."""
        return self._fill("normal", start, count, (steps, dim))

    def increments(self, start: int, count: int, steps: int, dim: int, dt: float) -> NDArray[np.float64]:
        return self.normals(start, count, steps, dim) * math.sqrt(dt)

    def uniforms(self, start: int, count: int, dim: int) -> NDArray[np.float64]:
        """One uniform vector per path from a sibling stream (starting points)."""
        return self.child("uniform")._fill("uniform", start, count, (dim,))

    def step_uniforms(self, start: int, count: int, steps: int) -> NDArray[np.float64]:
        """One uniform per path and step from a sibling stream, shape (count, steps)."""
        return self.child("step-uniform")._fill("uniform", start, count, (steps,))


def batches(paths: int, batch: int = 4 * BLOCK) -> list[tuple[int, int]]:
    batch = max(BLOCK, (batch // BLOCK) * BLOCK)
    return [(s, min(batch, paths - s)) for s in range(0, paths, batch)]


def map_batches(fn: Callable[[int, int], NDArray], paths: int, workers: int = 1, batch: int = 4 * BLOCK) -> NDArray:
    """Apply ``fn(start, count)`` per batch and concatenate along axis 0 in path order."""
    jobs = batches(paths, batch)
    if workers <= 1 or len(jobs) == 1:
        parts = [fn(s, c) for s, c in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda sc: fn(*sc), jobs))
    return np.concatenate(parts, axis=0)


def mean_se(values: NDArray, axis: int = 0, deterministic: bool = True) -> tuple[NDArray, NDArray]:
    """Ensemble mean and standard error; pairwise summation in path order."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[axis]
    if deterministic:
        mean = _fsum(values, axis) / n
    else:
        mean = values.mean(axis=axis)
    dev = values - np.expand_dims(mean, axis)
    var = np.sum(dev * dev, axis=axis) / max(n - 1, 1)
    return mean, np.sqrt(var / n)


def _fsum(values: NDArray, axis: int) -> NDArray:
    moved = np.moveaxis(values, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    out = np.array([math.fsum(row) for row in flat])
    return out.reshape(moved.shape[:-1]) if moved.ndim > 1 else out.reshape(())


def joint_se(*ses: float | NDArray) -> NDArray:
    return np.sqrt(sum(np.asarray(s, dtype=np.float64) ** 2 for s in ses))


def fold(x: Sequence[float]) -> float:
    return math.fsum(x)
