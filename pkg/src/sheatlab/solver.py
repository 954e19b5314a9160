"""Explicit finite-difference integrator for du = (kappa/2) u_xx dt + sigma(u) dW.

One step of the scheme reads

    u_i <- u_i + r (u_{i+1} - 2 u_i + u_{i-1}) + sigma(u_i) dW_i / dx,

with r = kappa dt / (2 dx^2) and dW_i ~ N(0, dt dx). The grid is periodic
unless a neighbor is switched off, in which case that neighbor is replaced
by the constant initial value (the deterministic part of the mild solution).
Switching off neighbors across block edges gives the localized equation in
which each block only sees its own noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigError, NonFinite
from .noise import BlockPlan, GridSpec, NoiseSource
from .sigma import SigmaSpec

__all__ = [
    "Field",
    "RunConfig",
    "OrderingStats",
    "Integrator",
    "step",
    "solve",
    "solve_localized",
    "solve_coupled_pair",
    "sup_over_radius",
    "write_snapshot",
]

BOUNDARIES = ("periodic", "dirichlet")

# target number of noise values generated per chunk
_CHUNK_VALUES = 1 << 18


@numba.njit(cache=True)
def _sigma(code, p0, p1, u):
    if code == 0:
        return p0
    elif code == 1:
        a = abs(u)
        return p0 + p1 * a / (1.0 + a)
    elif code == 2:
        return p0 * math.log(math.e + abs(u)) ** (-p1)
    return p0 * u


@numba.njit(cache=True)
def _step_into(u, out, dw, r, inv_dx, code, p0, p1, lw, rw, bg):
    """One step from ``u`` into ``out``; returns index of a non-finite cell or -1.

    ``lw``/``rw`` are 1.0 where the neighbor is live and 0.0 where it is
    replaced by the background value ``bg``.
    """
    n = u.size
    for i in range(1, n - 1):
        ul = u[i - 1] * lw[i] + bg * (1.0 - lw[i])
        ur = u[i + 1] * rw[i] + bg * (1.0 - rw[i])
        out[i] = r * (ul - 2.0 * u[i] + ur)
    for i in (0, n - 1):
        il = i - 1 if i > 0 else n - 1
        ir = i + 1 if i < n - 1 else 0
        ul = u[il] * lw[i] + bg * (1.0 - lw[i])
        ur = u[ir] * rw[i] + bg * (1.0 - rw[i])
        out[i] = r * (ul - 2.0 * u[i] + ur)
    if code == 0:
        for i in range(n):
            out[i] = u[i] + out[i] + p0 * dw[i] * inv_dx
    elif code == 3:
        for i in range(n):
            out[i] = u[i] + out[i] + p0 * u[i] * dw[i] * inv_dx
    else:
        for i in range(n):
            out[i] = u[i] + out[i] + _sigma(code, p0, p1, u[i]) * dw[i] * inv_dx
    acc = 0.0
    for i in range(n):
        acc += out[i] - out[i]
    if acc == 0.0:
        return -1
    for i in range(n):
        if not np.isfinite(out[i]):
            return i
    return -1


@numba.njit(cache=True)
def _advance(u, dW, r, inv_dx, code, p0, p1, left_ok, right_ok, bg):
    """Advance ``u`` in place through every row of ``dW``.

    Returns -1, or step * n + cell of the first non-finite value (``u`` is
    then left at the last finite state).
    """
    n = u.size
    buf = np.empty(n)
    for s in range(dW.shape[0]):
        bad = _step_into(u, buf, dW[s], r, inv_dx, code, p0, p1, left_ok, right_ok, bg)
        if bad >= 0:
            return s * n + bad
        u[:] = buf
    return -1


@numba.njit(cache=True)
def _advance_pair(hi, lo, dW, r, inv_dx, code, p0, p1, left_ok, right_ok, bg_hi, bg_lo, slack, counts):
    """Advance two lanes with shared noise and audit their ordering.

    counts[0] accumulates grid-time points with hi < lo - slack; counts[1]
    holds the running minimum of ``lo``.
    """
    n = hi.size
    bh = np.empty(n)
    bl = np.empty(n)
    for s in range(dW.shape[0]):
        bad = _step_into(hi, bh, dW[s], r, inv_dx, code, p0, p1, left_ok, right_ok, bg_hi)
        if bad >= 0:
            return s * n + bad
        bad = _step_into(lo, bl, dW[s], r, inv_dx, code, p0, p1, left_ok, right_ok, bg_lo)
        if bad >= 0:
            return s * n + bad
        for i in range(n):
            if bh[i] < bl[i] - slack:
                counts[0] += 1.0
            if bl[i] < counts[1]:
                counts[1] = bl[i]
        hi[:] = bh
        lo[:] = bl
    return -1


@dataclass
class Field:
    """Snapshot u_t(x_i) on a grid."""

    values: np.ndarray
    t: float
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"field has {self.values.shape} values, grid has {self.grid.n_cells} cells"
            )
        bad = np.flatnonzero(~np.isfinite(self.values))
        if bad.size:
            raise NonFinite(step=None, cell=int(bad[0]), value=float(self.values[bad[0]]))

    @property
    def x(self):
        return self.grid.x


@dataclass
class RunConfig:
    grid: GridSpec
    sigma: SigmaSpec
    master_seed: int = 0
    replicate_id: int = 0
    boundary: str = "periodic"
    localization: BlockPlan | None = None
    u0: float = 1.0

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}", key="boundary")
        plan = self.localization
        if plan is not None:
            if plan.cell_block.shape != (self.grid.n_cells,):
                raise ConfigError("block plan was built for a different grid", key="beta")
            if plan.beta * math.sqrt(max(plan.t, self.grid.t_end)) < 2 * self.grid.dx - 1e-12:
                raise ConfigError("beta*sqrt(t) must be >= 2*dx", key="beta")

    def replace(self, **changes):
        d = dict(self.__dict__)
        d.update(changes)
        return RunConfig(**d)


@dataclass
class OrderingStats:
    """Audit of a coupled pair: ordering violations and positivity."""

    violations: int = 0
    points: int = 0
    min_lo: float = math.inf
    slack: float = 1e-9


def _neighbor_masks(grid: GridSpec, boundary: str, plan: BlockPlan | None):
    n = grid.n_cells
    left = np.ones(n, dtype=bool)
    right = np.ones(n, dtype=bool)
    if boundary == "dirichlet":
        left[0] = False
        right[-1] = False
    if plan is not None:
        cb = plan.cell_block
        left &= cb == np.roll(cb, 1)
        right &= cb == np.roll(cb, -1)
    return left.astype(float), right.astype(float)


class Integrator:
    """Evolves one or more solution lanes driven by a single noise realization.

    Each lane is ``(u0, localized)``; localized lanes switch off neighbors
    across block edges of ``config.localization``.
    """

    def __init__(self, config: RunConfig, lanes=((None, False),)):
        self.config = config
        grid = config.grid
        self.grid = grid
        self.noise = NoiseSource(grid, config.master_seed, config.replicate_id, config.localization)
        self.step_index = 0
        self._r = grid.kappa * grid.dt / (2.0 * grid.dx * grid.dx)
        self._inv_dx = 1.0 / grid.dx
        self._sig = config.sigma.kernel_args()
        self.lanes = []
        for u0, localized in lanes:
            if localized and config.localization is None:
                raise ConfigError("localized lane needs a block plan", key="beta")
            u0 = config.u0 if u0 is None else float(u0)
            left, right = _neighbor_masks(grid, config.boundary, config.localization if localized else None)
            self.lanes.append([np.full(grid.n_cells, u0), u0, left, right])

    @property
    def t(self) -> float:
        return self.step_index * self.grid.dt

    def values(self, lane: int = 0) -> np.ndarray:
        return self.lanes[lane][0]

    def field(self, lane: int = 0) -> Field:
        return Field(self.lanes[lane][0].copy(), self.t, self.grid)

    def _chunks(self, n_steps):
        rows = max(1, _CHUNK_VALUES // self.grid.n_cells)
        done = 0
        while done < n_steps:
            k = min(rows, n_steps - done)
            yield self.noise.next(k)
            done += k

    def _raise(self, bad, base):
        n = self.grid.n_cells
        s, cell = divmod(int(bad), n)
        raise NonFinite(step=base + s, cell=cell, value=float("nan"))

    def advance(self, n_steps: int, stats: OrderingStats | None = None):
        """Advance all lanes by ``n_steps`` steps (not past t_end)."""
        if self.step_index + n_steps > self.grid.n_steps:
            raise ValueError("cannot advance past t_end")
        code, p0, p1 = self._sig
        for dW in self._chunks(n_steps):
            base = self.step_index
            if stats is not None:
                (hi, bh, left, right), (lo, bl, _, _) = self.lanes
                counts = np.array([0.0, stats.min_lo])
                bad = _advance_pair(hi, lo, dW, self._r, self._inv_dx, code, p0, p1,
                                    left, right, bh, bl, stats.slack, counts)
                if bad >= 0:
                    self._raise(bad, base)
                stats.violations += int(counts[0])
                stats.min_lo = float(counts[1])
                stats.points += dW.size
            else:
                for u, bg, left, right in self.lanes:
                    bad = _advance(u, dW, self._r, self._inv_dx, code, p0, p1, left, right, bg)
                    if bad >= 0:
                        self._raise(bad, base)
            self.step_index += dW.shape[0]
        return self

    def advance_to(self, step_index: int, stats: OrderingStats | None = None):
        return self.advance(step_index - self.step_index, stats)

    def run(self, stats: OrderingStats | None = None):
        return self.advance_to(self.grid.n_steps, stats)


def step(field: Field, noise, sigma: SigmaSpec, boundary: str = "periodic") -> Field:
    """One explicit Euler step; ``noise`` holds the per-cell increments dW."""
    grid = field.grid
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (grid.n_cells,):
        raise ValueError(f"noise shape {noise.shape} does not match grid ({grid.n_cells},)")
    if grid.cfl > 1.0 + 1e-12:
        raise ConfigError("kappa*dt/dx^2 exceeds 1", key="grid.dt")
    u = field.values.copy()
    left, right = _neighbor_masks(grid, boundary, None)
    code, p0, p1 = sigma.kernel_args()
    r = grid.kappa * grid.dt / (2.0 * grid.dx * grid.dx)
    bad = _advance(u, noise[None, :], r, 1.0 / grid.dx, code, p0, p1, left, right, 1.0)
    if bad >= 0:
        raise NonFinite(step=0, cell=int(bad), value=float("nan"))
    return Field(u, field.t + grid.dt, grid)


def solve(config: RunConfig) -> Field:
    """Solution at t_end from flat initial data ``config.u0``.

    When ``config.localization`` is set the noise is read block by block, so
    the result shares its noise with :func:`solve_localized`.
    """
    return Integrator(config).run().field()


def solve_localized(config: RunConfig) -> Field:
    """Localized solution: blocks evolve independently, each on its own noise."""
    if config.localization is None:
        raise ConfigError("solve_localized needs a block plan", key="beta")
    return Integrator(config, lanes=((None, True),)).run().field()


def solve_coupled_pair(config: RunConfig, u0_hi: float, u0_lo: float,
                       stats: OrderingStats | None = None):
    """Evolve flat data u0_hi >= u0_lo with the same noise realization.

    If ``stats`` is given it is updated with the number of grid-time points
    where the ordering fails by more than ``stats.slack`` and with the
    running minimum of the lower solution.
    """
    if u0_hi < u0_lo:
        raise ValueError("u0_hi must be >= u0_lo")
    integ = Integrator(config, lanes=((u0_hi, False), (u0_lo, False)))
    integ.run(stats)
    return integ.field(0), integ.field(1)


def sup_over_radius(field: Field, R: float) -> float:
    """max of u_t(x) over grid points with |x| <= R."""
    grid = field.grid
    if R < 0 or -R < grid.x_min - 1e-9 * grid.dx or R > grid.x_max + 1e-9 * grid.dx:
        raise ValueError(f"[-R, R] with R={R} is not inside [{grid.x_min}, {grid.x_max}]")
    mask = np.abs(grid.x) <= R + 1e-9 * grid.dx
    return float(field.values[mask].max())


def write_snapshot(field: Field, path, header: dict | None = None):
    """CSV dump with columns x,u; header entries become '# key=value' lines."""
    path = Path(path)
    lines = [f"# {k}={v}" for k, v in (header or {}).items()]
    lines.append(f"# t={field.t!r}")
    lines.append("x,u")
    lines.extend(f"{x!r},{u!r}" for x, u in zip(field.x.tolist(), field.values.tolist()))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)
    return path
