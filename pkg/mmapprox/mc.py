"""
First-order correction eta(t, q) to the quadratic proxy.

Writing theta = theta_check + eta and linearizing the exact HJ equation
around theta_check gives a linear equation for eta whose Feynman-Kac
representation is

    eta(t, q) = E[ int_t^T sum_c w_c z_c (1{allowed} H - H_check)(p_c(s, q_s)) ds ]

where q_s jumps on channel c with intensity w_c * -H_check'(p_c), the
quadratic proxy's marginal intensity. estimate_eta samples it by thinning;
solve_eta_grid integrates the same equation on the inventory lattice.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from mmapprox.closedform import A_at, B_at, RiccatiSolution, theta_check
from mmapprox.errors import NumericalError
from mmapprox.exact import InventoryGrid, ThetaGrid, _step_count, rk4_backward
from mmapprox.hamiltonian import QuadraticCoeffs, hamiltonian_values
from mmapprox.model import validate
from mmapprox.quotes import channel_p_values
from mmapprox.settings import resolve
from mmapprox.thinning import allowed, batch_rng, run_batches, simulate_gated_jumps

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorrectionEstimate:
    mean: float
    stderr: float
    n_paths: int
    seed: int
    clamp_events: int = 0
    majorant_violations: int = 0
    mean_jumps: float = 0.0
    mean_compensator: float = 0.0
    jumps_stderr: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'mean': self.mean,
            'stderr': self.stderr,
            'n': self.n_paths,
            'seed': self.seed,
            'clamp_events': self.clamp_events,
            'majorant_violations': self.majorant_violations,
        }


class _ProxyFlow:
    """Proxy intensities and correction integrand, vectorized over paths."""

    def __init__(self, sol: RiccatiSolution, coeffs: Sequence[QuadraticCoeffs], gate: bool):
        self.sol = sol
        self.spec = sol.spec
        self.gate = gate
        self.alpha = np.array([[c.alpha0, c.alpha1, c.alpha2] for c in coeffs])
        self.weight = np.array([ch.weight for ch in self.spec.channels])
        self.size = np.array([ch.size for ch in self.spec.channels])
        self.clamp_events = 0

    def p_values(self, t: np.ndarray, q: np.ndarray) -> np.ndarray:
        taus = np.maximum(self.sol.horizon - t, 0.0)
        return channel_p_values(self.spec, A_at(self.sol, taus), B_at(self.sol, taus), q)

    def rates(self, p: np.ndarray, live: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
        """Clamped proxy intensities and the number of live channels clamped."""
        raw = -(self.alpha[:, 1] + self.alpha[:, 2] * p)
        clamped = raw < 0
        if live is not None:
            clamped &= live
        negative = int(np.count_nonzero(clamped))
        return np.maximum(raw, 0.0) * self.weight, negative

    def source(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """sum_c w z (gate * H - H_check)(p), shape (n,)."""
        spec = self.spec
        exact = np.empty_like(p)
        for ch in spec.channels:
            exact[:, ch.index], _ = hamiltonian_values(ch.curve, spec.xi, ch.size, p[:, ch.index], spec.floor)
        if self.gate:
            exact = exact * allowed(q, spec.jumps, spec.Q)
        proxy = self.alpha[:, 0] + self.alpha[:, 1] * p + 0.5 * self.alpha[:, 2] * p * p
        return np.sum(self.weight * self.size * (exact - proxy), axis=1)

    def __call__(self, t: np.ndarray, q: np.ndarray):
        p = self.p_values(t, q)
        live = allowed(q, self.spec.jumps, self.spec.Q) if self.gate else None
        rates, negative = self.rates(p, live)
        self.clamp_events += negative
        f = self.source(p, q)
        if not np.all(np.isfinite(f)):
            bad = int(np.flatnonzero(~np.isfinite(f))[0])
            raise NumericalError(
                f"Correction integrand is not finite at t={t[bad]}, q={q[bad].tolist()}, "
                f"p={p[bad].tolist()}"
            )
        return rates, f


def estimate_eta(spec, coeffs: Optional[Sequence[QuadraticCoeffs]], sol: RiccatiSolution,
                 t: float, q, n_paths: int, seed: int,
                 gate: Optional[bool] = None, steps: Optional[int] = None,
                 safety: Optional[float] = None, batch_size: Optional[int] = None) -> CorrectionEstimate:
    """
    Monte-Carlo estimate of eta(t, q).

    Args:
        coeffs: Quadratic coefficients per channel (default: those of sol)
        gate: Gate jumps and Hamiltonian terms at the risk limits (default mc.gate_at_limits)
        steps: Majorant steps on [0, T] (default mc.steps)
    """
    spec = validate(spec)
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    T = sol.horizon
    if not 0.0 <= t <= T:
        raise ValueError(f"t must lie in [0, T] = [0, {T}], got {t}")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if t == T:
        return CorrectionEstimate(mean=0.0, stderr=0.0, n_paths=n_paths, seed=seed)

    coeffs = tuple(coeffs) if coeffs is not None else sol.coeffs
    gate = resolve(gate, 'mc', 'gate_at_limits')
    safety = resolve(safety, 'mc', 'safety')
    steps = resolve(steps, 'mc', 'steps')
    local_steps = max(1, int(math.ceil(steps * (T - t) / T)))

    def worker(batch: int, size: int):
        flow = _ProxyFlow(sol, coeffs, gate)
        stats = simulate_gated_jumps(flow, t, T, q, size, spec.jumps, spec.Q,
                                     batch_rng(seed, batch, 'mc'), local_steps, safety, gate=gate)
        return stats, flow.clamp_events

    results = run_batches(n_paths, batch_size, worker, section='mc')
    integral = np.concatenate([r[0].integral for r in results])
    jumps = np.concatenate([r[0].jumps for r in results]).astype(float)
    comp = np.concatenate([r[0].compensator for r in results])
    clamps = sum(r[1] for r in results)
    violations = sum(r[0].majorant_violations for r in results)
    if clamps:
        logger.warning("proxy intensities clamped at 0 in %d evaluation(s)", clamps)

    def stderr(x):
        return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0

    return CorrectionEstimate(
        mean=float(np.mean(integral)),
        stderr=stderr(integral),
        n_paths=n_paths,
        seed=seed,
        clamp_events=clamps,
        majorant_violations=violations,
        mean_jumps=float(np.mean(jumps)),
        mean_compensator=float(np.mean(comp)),
        jumps_stderr=stderr(jumps),
    )


def corrected_theta(sol: RiccatiSolution, est: CorrectionEstimate, t: float, q) -> float:
    """theta_check(t, q) + eta estimate."""
    return theta_check(sol, t, q) + est.mean


@dataclass
class MonteCarloEta:
    """eta(t, q) on demand by Monte-Carlo, cached per point."""

    sol: RiccatiSolution
    n_paths: int
    seed: int
    cache: Dict[tuple, float] = field(default_factory=dict)

    def __call__(self, t: float, q) -> float:
        key = (float(t), tuple(np.atleast_1d(np.asarray(q, dtype=float)).tolist()))
        if key not in self.cache:
            est = estimate_eta(self.sol.spec, None, self.sol, t, key[1], self.n_paths, self.seed)
            self.cache[key] = est.mean
        return self.cache[key]


def solve_eta_grid(spec, sol: RiccatiSolution, dt: Optional[float] = None) -> ThetaGrid:
    """
    Deterministic eta on the inventory lattice (jumps gated at the limits).

        d eta / d tau = source(q) + sum_c rate_c(q) (eta(q + jump_c) - eta(q))
    """
    spec = validate(spec)
    grid = InventoryGrid.from_spec(spec)
    T = sol.horizon
    if T == 0:
        return ThetaGrid(times=np.array([0.0]), values=np.zeros((1, grid.size)), grid=grid, spec=spec)
    flow = _ProxyFlow(sol, sol.coeffs, gate=True)
    states = grid.states
    links = [grid.neighbors(spec.jumps[ch.index]) for ch in spec.channels]

    def rhs(tau: float, eta: np.ndarray) -> np.ndarray:
        t = np.full(grid.size, T - tau)
        p = flow.p_values(t, states)
        rates, _ = flow.rates(p)
        out = flow.source(p, states)
        for ch, (idx, inside) in zip(spec.channels, links):
            out[inside] += rates[inside, ch.index] * (eta[idx[inside]] - eta[inside])
        return out

    steps = _step_count(T, dt)
    times, values = rk4_backward(rhs, np.zeros(grid.size), T, steps)
    return ThetaGrid(times=times, values=values, grid=grid, spec=spec)
