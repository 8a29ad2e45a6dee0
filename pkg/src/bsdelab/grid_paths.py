"""Time grids, counter-based Brownian increment generation, and paired drivers.

Every other module consumes the objects built here: a :class:`TimeGrid`
carrying a partition of ``[0, T]``, and a :class:`PathBundle` holding the
Gaussian increments of a d-dimensional Brownian motion ``W`` together with an
independent copy ``W'`` used by the decoupling operators.

Randomness is derived from a counter-based generator (Philox) so that every
value is a pure function of ``(seed, stream, path, step, coordinate)``.
Regenerating with the same seed is bit-identical regardless of how many
worker threads are used.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

__all__ = [
    "TimeGrid",
    "PathBundle",
    "MixingFunction",
    "make_grid",
    "sample_paths",
    "brownian_at",
    "save_bundle",
    "load_bundle",
    "counter_normals",
    "map_path_chunks",
]

# Fixed path-chunk size: chunk boundaries must not depend on the thread count,
# otherwise reproducibility across worker pools is lost.
CHUNK_PATHS = 4096

# Stream roles.  Each role gets a disjoint Philox key space.
STREAM_MAIN = 0
STREAM_INDEPENDENT = 1
STREAM_RESAMPLE = 2
STREAM_NESTED_OUTER = 3
STREAM_NESTED_INNER = 4
STREAM_NESTED_WINDOW = 5

_MASK64 = (1 << 64) - 1


def _philox_key(seed: int, stream: int, chunk: int, block: int) -> np.ndarray:
    if not (0 <= stream < 1 << 24 and 0 <= chunk < 1 << 20 and 0 <= block < 1 << 20):
        raise ValueError("stream/chunk/block out of key range")
    word = (stream << 40) | (chunk << 20) | block
    return np.array([seed & _MASK64, word], dtype=np.uint64)


def counter_normals(seed: int, stream: int, chunk: int, block: int, shape) -> np.ndarray:
    """Standard normals addressed by (seed, stream, chunk, block, index).

    Uniforms come from a keyed Philox counter stream (one 64-bit word per
    value) and are pushed through the inverse normal CDF, so each output is a
    pure function of its address.  The half-ulp shift keeps the uniform
    strictly inside (0, 1).
    """
    gen = Generator(Philox(key=_philox_key(seed, stream, chunk, block)))
    u = gen.random(int(np.prod(shape)))
    return ndtri(u + 2.0 ** -54).reshape(shape)


def map_path_chunks(fn: Callable[[int, int], np.ndarray], n_paths: int, threads: int = 1) -> np.ndarray:
    """Apply ``fn(start, stop)`` over fixed-size path chunks and concatenate.

    Chunk boundaries are fixed by :data:`CHUNK_PATHS`, so the result is
    identical for any ``threads`` value.
    """
    jobs = [(a, min(a + CHUNK_PATHS, n_paths)) for a in range(0, n_paths, CHUNK_PATHS)]
    if threads <= 1 or len(jobs) == 1:
        parts = [fn(a, b) for a, b in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), jobs))
    return np.concatenate(parts, axis=0)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Partition ``0 = t_0 < t_1 < ... < t_N = T`` of the time axis."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("grid nodes must be strictly increasing")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        object.__setattr__(self, "nodes", _freeze(nodes))

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    def locate(self, time: float) -> int:
        """Snap ``time`` to the nearest node index.

        Rejects the query when the snap distance exceeds half the local step:
        decoupling windows must align with increment boundaries.
        """
        idx = int(np.argmin(np.abs(self.nodes - time)))
        dts = self.dt
        local = dts[max(idx - 1, 0)] if idx == self.n_steps else dts[idx]
        if idx > 0:
            local = min(local, dts[idx - 1])
        if abs(float(self.nodes[idx]) - float(time)) > local / 2 + 1e-12 * max(1.0, self.horizon):
            raise ValueError(f"time {time!r} is not within dt/2 of a grid node")
        return idx

    def is_refinement_of(self, coarse: "TimeGrid") -> bool:
        """True when every node of ``coarse`` is (up to float dust) a node here."""
        pos = np.clip(np.searchsorted(self.nodes, coarse.nodes), 1, self.n_steps)
        left = np.abs(self.nodes[pos - 1] - coarse.nodes)
        right = np.abs(self.nodes[pos] - coarse.nodes)
        tol = 1e-9 * max(1.0, self.horizon)
        return bool(np.all(np.minimum(left, right) <= tol))


def make_grid(T: float, N: int, scheme: str = "uniform") -> TimeGrid:
    """Uniform grid with ``N`` steps on ``[0, T]``."""
    if not np.isfinite(T) or T <= 0:
        raise ValueError("horizon T must be positive")
    if int(N) != N or N < 1:
        raise ValueError("step count N must be a positive integer")
    if scheme != "uniform":
        raise ValueError(f"unknown grid scheme {scheme!r}")
    return TimeGrid(np.linspace(0.0, float(T), int(N) + 1))


@dataclass(frozen=True)
class MixingFunction:
    """Per-interval mixing weights ``phi`` with values in [0, 1].

    ``values[k]`` applies on the interval ``(t_k, t_{k+1}]``.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("mixing values must be one-dimensional")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("mixing values must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def constant(cls, grid: TimeGrid, value: float) -> "MixingFunction":
        return cls(np.full(grid.n_steps, float(value)))

    @classmethod
    def indicator(cls, grid: TimeGrid, s: float, t: float) -> "MixingFunction":
        i0, i1 = grid.locate(s), grid.locate(t)
        if not i0 < i1:
            raise ValueError("indicator window needs s < t on the grid")
        v = np.zeros(grid.n_steps)
        v[i0:i1] = 1.0
        return cls(v)


@dataclass(frozen=True)
class PathBundle:
    """Monte Carlo ensemble of Brownian increments plus an independent copy.

    ``increments[m, k, j]`` is the j-th coordinate of ``W_{t_{k+1}} - W_{t_k}``
    on path ``m``; ``independent_copy`` holds the same object for ``W'``.
    Arrays are immutable after construction and safe to share across workers.
    """

    grid: TimeGrid
    dimension: int
    num_paths: int
    increments: np.ndarray
    independent_copy: np.ndarray
    seed: int

    def __post_init__(self):
        shape = (self.num_paths, self.grid.n_steps, self.dimension)
        for name in ("increments", "independent_copy"):
            a = getattr(self, name)
            if a.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
            object.__setattr__(self, name, _freeze(a))

    def brownian(self, increments: np.ndarray | None = None) -> np.ndarray:
        """Paths ``W`` at every node, reconstructed by prefix sums (W_0 = 0)."""
        inc = self.increments if increments is None else increments
        out = np.zeros((inc.shape[0], self.grid.n_steps + 1, self.dimension))
        np.cumsum(inc, axis=1, out=out[:, 1:, :])
        return out


def _gaussian_block(seed: int, stream: int, n_paths: int, tail_shape: tuple, threads: int) -> np.ndarray:
    tail = int(np.prod(tail_shape))

    def job(a: int, b: int) -> np.ndarray:
        chunk = a // CHUNK_PATHS
        return counter_normals(seed, stream, chunk, 0, (b - a, *tail_shape))

    if tail == 0:
        return np.zeros((n_paths, *tail_shape))
    return map_path_chunks(job, n_paths, threads)


def sample_paths(grid: TimeGrid, d: int, M: int, seed: int, threads: int = 1) -> PathBundle:
    """Draw ``M`` paths of d-dimensional increments plus an independent copy.

    The two drivers come from disjoint deterministic streams of the same
    counter-based generator, so they are exactly reproducible and mutually
    independent.
    """
    if int(d) != d or d < 1:
        raise ValueError("dimension d must be a positive integer")
    if int(M) != M or M < 1:
        raise ValueError("path count M must be a positive integer")
    seed = int(seed)
    scale = np.sqrt(grid.dt)[None, :, None]
    dw = _gaussian_block(seed, STREAM_MAIN, M, (grid.n_steps, d), threads) * scale
    dw2 = _gaussian_block(seed, STREAM_INDEPENDENT, M, (grid.n_steps, d), threads) * scale
    return PathBundle(grid=grid, dimension=int(d), num_paths=int(M),
                      increments=dw, independent_copy=dw2, seed=seed)


def brownian_at(bundle: PathBundle, path_index: int, node_index: int) -> np.ndarray:
    """Value of ``W`` on one path at one node; ``node_index = 0`` gives 0."""
    if not 0 <= path_index < bundle.num_paths:
        raise IndexError("path index out of range")
    if not 0 <= node_index <= bundle.grid.n_steps:
        raise IndexError("node index out of range")
    return bundle.increments[path_index, :node_index, :].sum(axis=0)


_MAGIC = b"BPB1"
_HEADER = struct.Struct("<4sIdQQQq")


def save_bundle(bundle: PathBundle, path: str) -> None:
    """Binary dump: header (version, T, N, d, M, seed) then little-endian
    float64 payload, increments followed by the independent copy."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, bundle.grid.horizon, bundle.grid.n_steps,
                              bundle.dimension, bundle.num_paths, bundle.seed))
        fh.write(np.ascontiguousarray(bundle.increments, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.independent_copy, dtype="<f8").tobytes())


def load_bundle(path: str) -> PathBundle:
    with open(path, "rb") as fh:
        magic, version, T, N, d, M, seed = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != 1:
            raise ValueError("not a path-bundle file (bad magic or version)")
        count = M * N * d
        dw = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(M, N, d)
        dw2 = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(M, N, d)
        if dw.size != count or dw2.size != count:
            raise ValueError("truncated path-bundle file")
    grid = make_grid(T, N)
    return PathBundle(grid=grid, dimension=d, num_paths=M,
                      increments=dw.copy(), independent_copy=dw2.copy(), seed=seed)
