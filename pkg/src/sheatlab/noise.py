"""Seeded space-time white noise on a uniform grid.

Each cell of the grid receives, at every time step, an increment of the
Brownian sheet over the rectangle [t, t+dt) x [x, x+dx), i.e. a centered
normal with variance dt*dx. Increments are drawn from independent streams
keyed by ``(master_seed, replicate_id, block_id)``; a stream hands out
``width`` draws per time step, so the increments of any step can be
regenerated without replaying earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError

__all__ = [
    "GridSpec",
    "NoiseStream",
    "BlockPlan",
    "NoiseSource",
    "derive_stream",
    "sample_increments",
    "make_block_plan",
]

_INT_TOL = 1e-9
# smallest value returned by Generator.random() that is not 0
_U_FLOOR = 2.0 ** -54


def _as_count(value, what, key):
    n = round(value)
    if abs(value - n) > _INT_TOL * max(1.0, abs(value)):
        raise ConfigError(f"{what} must be an integer, got {value!r}", key=key)
    return int(n)


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid on the periodic cell [x_min, x_max)."""

    kappa: float
    dt: float
    dx: float
    x_min: float
    x_max: float
    t_end: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError("kappa must be > 0", key="grid.kappa")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0", key="grid.dt")
        if not self.dx > 0:
            raise ConfigError("dx must be > 0", key="grid.dx")
        if not self.x_max > self.x_min:
            raise ConfigError("x_max must exceed x_min", key="grid.x_max")
        if self.t_end < 0:
            raise ConfigError("t_end must be >= 0", key="grid.t_end")
        if self.cfl > 1.0 + 1e-12:
            raise ConfigError(
                f"stability requires kappa*dt/dx^2 <= 1, got {self.cfl:.6g}", key="grid.dt"
            )
        _as_count((self.x_max - self.x_min) / self.dx, "(x_max - x_min)/dx", "grid.dx")
        _as_count(self.t_end / self.dt, "t_end/dt", "grid.dt")

    @classmethod
    def symmetric(cls, kappa, dt, dx, half_width, t_end):
        """Grid on [-L, L) with L rounded up to a multiple of dx."""
        n = math.ceil(half_width / dx - _INT_TOL)
        return cls(kappa=kappa, dt=dt, dx=dx, x_min=-n * dx, x_max=n * dx, t_end=t_end)

    @property
    def cfl(self) -> float:
        return self.kappa * self.dt / self.dx ** 2

    @property
    def n_cells(self) -> int:
        return int(round((self.x_max - self.x_min) / self.dx))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_cells)

    def index_of(self, position: float) -> int:
        """Index of the grid point nearest to ``position``."""
        i = int(round((position - self.x_min) / self.dx))
        if not 0 <= i < self.n_cells:
            raise ValueError(f"position {position} outside the grid")
        return i

    def with_t_end(self, t_end):
        return GridSpec(self.kappa, self.dt, self.dx, self.x_min, self.x_max, t_end)

    def as_dict(self):
        return {
            "kappa": self.kappa,
            "dt": self.dt,
            "dx": self.dx,
            "x_min": self.x_min,
            "x_max": self.x_max,
            "t_end": self.t_end,
        }


def _zigzag(j: int) -> int:
    # maps Z -> N injectively, as SeedSequence spawn keys must be nonnegative
    return 2 * j if j >= 0 else -2 * j - 1


@dataclass(frozen=True)
class NoiseStream:
    master_seed: int
    replicate_id: int
    block_id: int = 0

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            self.master_seed, spawn_key=(self.replicate_id, _zigzag(self.block_id))
        )

    def generator(self, skip: int = 0) -> np.random.Generator:
        """Fresh generator positioned ``skip`` uniform draws into the stream."""
        bitgen = np.random.PCG64(self.seed_sequence())
        if skip:
            bitgen.advance(skip)
        return np.random.Generator(bitgen)


def derive_stream(master_seed: int, replicate_id: int, block_id: int = 0) -> NoiseStream:
    """Stream handle for one (seed, replicate, block) triple."""
    master_seed = int(master_seed)
    if not 0 <= master_seed < 2 ** 64:
        raise ValueError("master_seed must fit in an unsigned 64-bit integer")
    if replicate_id < 0:
        raise ValueError("replicate_id must be >= 0")
    return NoiseStream(master_seed, int(replicate_id), int(block_id))


def _standard_normals(gen: np.random.Generator, shape) -> np.ndarray:
    u = gen.random(shape)
    np.maximum(u, _U_FLOOR, out=u)
    return ndtri(u)


def sample_increments(grid: GridSpec, stream: NoiseStream, step: int, width: int | None = None):
    """Brownian-sheet increments for one time step, one value per cell.

    ``width`` defaults to the whole grid; block streams pass their own
    cell count. Values are N(0, dt*dx), independent across cells and steps.
    """
    if width is None:
        width = grid.n_cells
    if not 0 <= step < grid.n_steps:
        raise IndexError(f"step {step} outside [0, {grid.n_steps})")
    gen = stream.generator(skip=step * width)
    return _standard_normals(gen, width) * math.sqrt(grid.dt * grid.dx)


@dataclass(frozen=True)
class BlockPlan:
    """Partition of the line into blocks [(j-1) w, j w), w = beta sqrt(t)."""

    beta: float
    t: float
    edges: np.ndarray = field(repr=False)
    midpoints: np.ndarray = field(repr=False)
    block_ids: np.ndarray = field(repr=False)
    cell_block: np.ndarray = field(repr=False)
    x_min: float = -math.inf
    x_max: float = math.inf

    @property
    def width(self) -> float:
        return self.beta * math.sqrt(self.t)

    def block_of(self, position) -> int:
        """Index j of the block containing ``position``."""
        q = position / self.width
        r = round(q)
        if abs(q - r) < 1e-9:
            q = r
        return int(math.floor(q)) + 1

    def segments(self):
        """(block_id, start, stop) for each maximal run of same-block cells."""
        cb = self.cell_block
        cuts = np.flatnonzero(np.diff(cb)) + 1
        starts = np.concatenate(([0], cuts))
        stops = np.concatenate((cuts, [cb.size]))
        return [(int(cb[a]), int(a), int(b)) for a, b in zip(starts, stops)]

    def full_blocks(self):
        """Block ids whose whole interval lies inside the grid."""
        w, tol = self.width, 1e-9 * self.width
        return [int(j) for j in self.block_ids
                if (j - 1) * w >= self.x_min - tol and j * w <= self.x_max + tol]

    def midpoint(self, j: int) -> float:
        return (j - 0.5) * self.width


def make_block_plan(beta: float, t: float, grid: GridSpec) -> BlockPlan:
    if not beta > 0 or not t > 0:
        raise ValueError("beta and t must be > 0")
    w = beta * math.sqrt(t)
    if w < 2 * grid.dx - 1e-12:
        raise ConfigError(
            f"block width beta*sqrt(t)={w:.6g} is below 2*dx={2 * grid.dx:.6g}",
            key="beta",
        )
    q = grid.x / w
    r = np.round(q)
    q = np.where(np.abs(q - r) < 1e-9, r, q)
    cell_block = np.floor(q).astype(np.int64) + 1
    block_ids = np.unique(cell_block)
    edges = np.concatenate(((block_ids - 1) * w, [block_ids[-1] * w]))
    midpoints = (block_ids - 0.5) * w
    return BlockPlan(beta=float(beta), t=float(t), edges=edges, midpoints=midpoints,
                     block_ids=block_ids, cell_block=cell_block,
                     x_min=grid.x_min, x_max=grid.x_max)


class NoiseSource:
    """Sequential reader of increments for one replicate.

    Without a plan the whole grid is driven by block 0 of the replicate.
    With a plan each maximal run of same-block cells reads its own stream,
    so solutions driven by different blocks share no randomness.
    """

    def __init__(self, grid: GridSpec, master_seed: int, replicate_id: int, plan: BlockPlan | None = None):
        self.grid = grid
        if plan is None:
            segments = [(0, 0, grid.n_cells)]
        else:
            segments = plan.segments()
            seen = [s[0] for s in segments]
            if len(seen) != len(set(seen)):
                raise ConfigError("a block appears in two disjoint runs of cells", key="beta")
        self.segments = segments
        self._gens = [derive_stream(master_seed, replicate_id, j).generator() for j, _, _ in segments]
        self._scale = math.sqrt(grid.dt * grid.dx)
        self.position = 0

    def next(self, n_steps: int) -> np.ndarray:
        """Increments for the next ``n_steps`` steps, shape (n_steps, n_cells)."""
        out = np.empty((n_steps, self.grid.n_cells))
        for gen, (_, a, b) in zip(self._gens, self.segments):
            out[:, a:b] = _standard_normals(gen, (n_steps, b - a))
        out *= self._scale
        self.position += n_steps
        return out
