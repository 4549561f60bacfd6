"""
Exact Hamilton-Jacobi solver on the finite inventory lattice.

    0 = d/dt theta(t, q) + mu'q - gamma/2 q'Sigma q
        + sum over channels of 1{q + jump within limits} w z H_xi(z, (theta(q) - theta(q + jump) + c) / z)

with theta(T, .) = 0. The lattice is exact, so the only discretization
error is the RK4 time step. Integration runs backward, in tau = T - t.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
import pandas as pd

from mmapprox.errors import LatticeError, NumericalError, UnsupportedConfigurationError
from mmapprox.hamiltonian import hamiltonian_values
from mmapprox.model import CheckedSpec, validate
from mmapprox.settings import get_default, resolve

logger = logging.getLogger(__name__)


# =============================================================================
# INVENTORY LATTICE
# =============================================================================

@dataclass(frozen=True)
class InventoryGrid:
    """Lattice prod_i (z_i Z intersected with [-Q_i, Q_i]), flattened in C order."""

    z: Tuple[float, ...]
    Q: Tuple[float, ...]

    @classmethod
    def from_spec(cls, spec: CheckedSpec) -> 'InventoryGrid':
        return cls(z=tuple(float(x) for x in spec.z), Q=tuple(float(x) for x in spec.Q))

    @cached_property
    def half_widths(self) -> np.ndarray:
        """Q_i / z_i."""
        return np.array([int(round(q / z)) for q, z in zip(self.Q, self.z)])

    @cached_property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(2 * n + 1) for n in self.half_widths)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def d(self) -> int:
        return len(self.z)

    @cached_property
    def levels(self) -> np.ndarray:
        """(size, d) integer lattice coordinates q_i / z_i of every state."""
        axes = [np.arange(-n, n + 1) for n in self.half_widths]
        mesh = np.meshgrid(*axes, indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def states(self) -> np.ndarray:
        """(size, d) inventories of every state."""
        return self.levels * np.array(self.z)

    def index(self, q) -> int:
        """
        Flat index of inventory q.

        Raises:
            LatticeError: If q is off the lattice or outside the risk limits
        """
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if q.shape != (self.d,):
            raise LatticeError(f"Expected an inventory with {self.d} entries, got {q.tolist()}")
        ratio = q / np.array(self.z)
        levels = np.round(ratio).astype(int)
        if np.any(np.abs(ratio - levels) > 1e-9 * np.maximum(1.0, np.abs(ratio))):
            raise LatticeError(f"Inventory {q.tolist()} is not on the lattice with unit sizes {list(self.z)}")
        if np.any(np.abs(levels) > self.half_widths):
            raise LatticeError(f"Inventory {q.tolist()} is outside the risk limits {list(self.Q)}")
        return int(np.ravel_multi_index(tuple(levels + self.half_widths), self.shape))

    def neighbors(self, jump: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Flat indices of q + jump for every state, and the mask of states where
        q + jump stays within the risk limits (index is -1 where it does not).
        """
        steps = np.round(np.asarray(jump) / np.array(self.z)).astype(int)
        target = self.levels + steps
        inside = np.all(np.abs(target) <= self.half_widths, axis=1)
        idx = np.full(self.size, -1, dtype=int)
        idx[inside] = np.ravel_multi_index(tuple((target[inside] + self.half_widths).T), self.shape)
        return idx, inside

    def indices(self, q: np.ndarray) -> np.ndarray:
        """Flat indices of a batch of on-lattice inventories (n, d); -1 outside the limits."""
        levels = np.round(np.atleast_2d(q) / np.array(self.z)).astype(int)
        inside = np.all(np.abs(levels) <= self.half_widths, axis=1)
        idx = np.full(len(levels), -1, dtype=int)
        idx[inside] = np.ravel_multi_index(tuple((levels[inside] + self.half_widths).T), self.shape)
        return idx


# =============================================================================
# HJ SYSTEM
# =============================================================================

class HJSystem:
    """Right-hand side of the exact HJ system in tau = T - t on the lattice."""

    def __init__(self, spec: CheckedSpec, grid: Optional[InventoryGrid] = None):
        self.spec = validate(spec)
        self.grid = grid or InventoryGrid.from_spec(self.spec)
        q = self.grid.states
        self.running = q @ self.spec.mu - 0.5 * self.spec.gamma * np.einsum('si,ij,sj->s', q, self.spec.cov, q)
        self.links = [self.grid.neighbors(self.spec.jumps[ch.index]) for ch in self.spec.channels]

    def hamiltonian_terms(self, theta: np.ndarray) -> np.ndarray:
        """(n_channels, size) gated contributions w z H(p) of every channel."""
        spec = self.spec
        out = np.zeros((len(spec.channels), self.grid.size))
        for ch, (idx, inside) in zip(spec.channels, self.links):
            p = (theta[inside] - theta[idx[inside]] + ch.cost) / ch.size
            value, _ = hamiltonian_values(ch.curve, spec.xi, ch.size, p, spec.floor)
            out[ch.index, inside] = ch.weight * ch.size * value
        return out

    def rhs(self, tau: float, theta: np.ndarray) -> np.ndarray:
        """d theta / d tau."""
        return self.running + self.hamiltonian_terms(theta).sum(axis=0)


def rk4_backward(rhs: Callable[[float, np.ndarray], np.ndarray], y0: np.ndarray,
                 horizon: float, steps: int, stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Classical RK4 in tau from 0 to horizon.

    Returns (times, values) in calendar time t = horizon - tau, ascending,
    keeping every `stride`-th step plus both end points.
    """
    h = horizon / steps
    y = np.array(y0, dtype=float)
    kept_tau, kept = [0.0], [y.copy()]
    for n in range(steps):
        tau = n * h
        k1 = rhs(tau, y)
        k2 = rhs(tau + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(tau + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(tau + h, y + h * k3)
        y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (n + 1) % stride == 0 or n + 1 == steps:
            kept_tau.append((n + 1) * h)
            kept.append(y.copy())
    times = horizon - np.array(kept_tau[::-1])
    times[0] = 0.0
    return times, np.array(kept[::-1])


def _step_count(horizon: float, dt: Optional[float]) -> int:
    if dt is None:
        return int(get_default('exact', 'steps'))
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return max(1, int(math.ceil(horizon / dt - 1e-9)))


# =============================================================================
# THETA GRID
# =============================================================================

@dataclass(frozen=True)
class ThetaGrid:
    """theta(t_m, q) on ascending time nodes t_0 = 0, ..., t_M = T."""

    times: np.ndarray
    values: np.ndarray
    grid: InventoryGrid
    spec: CheckedSpec

    def at(self, t: float) -> np.ndarray:
        """Values over all states at time t (linear in t between nodes)."""
        if not 0.0 <= t <= self.times[-1]:
            raise ValueError(f"t must lie in [0, {self.times[-1]}], got {t}")
        if len(self.times) == 1:
            return self.values[0]
        k = int(np.clip(np.searchsorted(self.times, t, side='right') - 1, 0, len(self.times) - 2))
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def values_at(self, t: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """theta(t_n, state idx_n) for paired arrays of times and flat indices."""
        t = np.asarray(t, dtype=float)
        if len(self.times) == 1:
            return self.values[0, idx]
        k = np.clip(np.searchsorted(self.times, t, side='right') - 1, 0, len(self.times) - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - w) * self.values[k, idx] + w * self.values[k + 1, idx]


def solve_hj(spec, dt: Optional[float] = None, state_cap: Optional[int] = None) -> ThetaGrid:
    """
    Integrate the exact HJ system backward from theta(T, .) = 0.

    Args:
        spec: MarketSpec or CheckedSpec
        dt: Time step (default T / exact.steps)
        state_cap: Maximum lattice size (default exact.state_cap)

    Raises:
        UnsupportedConfigurationError: If the lattice has more states than state_cap
    """
    spec = validate(spec)
    state_cap = resolve(state_cap, 'exact', 'state_cap')
    grid = InventoryGrid.from_spec(spec)
    if grid.size > state_cap:
        raise UnsupportedConfigurationError(
            f"Inventory lattice has {grid.size} states, above the cap of {state_cap}.\n"
            f"  Shape {grid.shape}; reduce risk limits or raise exact.state_cap"
        )
    T = float(spec.horizon)
    if T == 0:
        return ThetaGrid(times=np.array([0.0]), values=np.zeros((1, grid.size)), grid=grid, spec=spec)

    steps = _step_count(T, dt)
    cap = get_default('exact', 'stored_values_cap')
    stride = max(1, int(math.ceil((steps + 1) * grid.size / cap)))
    system = HJSystem(spec, grid)
    logger.debug("exact HJ: %d states, %d RK4 steps, storing every %d", grid.size, steps, stride)
    times, values = rk4_backward(system.rhs, np.zeros(grid.size), T, steps, stride)
    if not np.all(np.isfinite(values)):
        raise NumericalError("exact HJ solution is not finite; reduce dt")
    return ThetaGrid(times=times, values=values, grid=grid, spec=spec)


def query_theta(theta: ThetaGrid, t: float, q) -> float:
    """
    theta(t, q), linear in t between stored nodes and exact at nodes.

    Raises:
        LatticeError: If q is not a lattice state
    """
    return float(theta.at(t)[theta.grid.index(q)])


def export_frame(theta: ThetaGrid) -> pd.DataFrame:
    """Long table with columns t, q1..qd, theta."""
    n_t, size = theta.values.shape
    states = theta.grid.states
    frame = {'t': np.repeat(theta.times, size)}
    for i in range(theta.grid.d):
        frame[f'q{i + 1}'] = np.tile(states[:, i], n_t)
    frame['theta'] = theta.values.ravel()
    return pd.DataFrame(frame)
