"""
Event-driven simulator of the market maker.

Executions on every channel (asset, tier, side, size atom) arrive with
intensity w * Lambda(delta_t), where delta_t is the strategy's offset at
the current state; channels whose execution would breach a risk limit are
switched off. Prices are sampled exactly (Gaussian increments with drift)
at execution times and at T only, since no intensity depends on S.

Cash moves at each execution by

    bid fill:  -S z + delta z - c
    ask fill:  +S z + delta z - c

None of the strategy comparisons here appear in the model's derivation;
they are experiments run on this simulator and are labelled as such.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mmapprox.closedform import A_at, AsymptoticLimits, B_at, RiccatiSolution
from mmapprox.errors import FactorizationError, UnsupportedConfigurationError
from mmapprox.exact import InventoryGrid, ThetaGrid
from mmapprox.linalg import cholesky, sym_sqrt
from mmapprox.model import CheckedSpec, spec_to_dict, validate
from mmapprox.quotes import channel_p_values, delta_star, delta_star_array
from mmapprox.settings import resolve
from mmapprox.thinning import allowed, batch_rng, run_batches, simulate_gated_jumps

logger = logging.getLogger(__name__)

EXPERIMENT_LABEL = 'simulation experiment (not a result of the closed-form derivation)'


# =============================================================================
# STRATEGIES
# =============================================================================

class QuotingStrategy(ABC):
    """Quote offsets per channel as a function of (t, q), bound to one spec."""

    name: str = ''

    def __init__(self, spec: CheckedSpec):
        self.spec = validate(spec)

    @abstractmethod
    def _raw_offsets(self, t: np.ndarray, q: np.ndarray) -> np.ndarray:
        pass

    def offsets(self, t: np.ndarray, q: np.ndarray) -> np.ndarray:
        """(n, n_channels) offsets at times t (n,) and inventories q (n, d); nan where gated."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        q = np.atleast_2d(np.asarray(q, dtype=float))
        out = np.array(self._raw_offsets(t, q), dtype=float)
        out[~allowed(q, self.spec.jumps, self.spec.Q)] = np.nan
        return out

    def rates(self, t: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Execution intensities w * Lambda(delta); zero on withdrawn channels."""
        delta = self.offsets(t, q)
        out = np.zeros_like(delta)
        for ch in self.spec.channels:
            col = delta[:, ch.index]
            live = np.isfinite(col)
            out[live, ch.index] = ch.weight * ch.curve.intensity(col[live])
        return out


def _offsets_from_p(spec: CheckedSpec, p: np.ndarray, live: np.ndarray) -> np.ndarray:
    out = np.full(p.shape, np.nan)
    for ch in spec.channels:
        rows = live[:, ch.index]
        if np.any(rows):
            out[rows, ch.index] = delta_star_array(ch.curve, spec.xi, ch.size, p[rows, ch.index], spec.floor)
    return out


class GreedyProxy(QuotingStrategy):
    """Greedy quotes from the closed-form quadratic proxy."""

    name = 'greedy-proxy'

    def __init__(self, sol: RiccatiSolution):
        super().__init__(sol.spec)
        self.sol = sol

    def _raw_offsets(self, t, q):
        taus = np.clip(self.sol.horizon - t, 0.0, self.sol.horizon)
        p = channel_p_values(self.spec, A_at(self.sol, taus), B_at(self.sol, taus), q)
        return _offsets_from_p(self.spec, p, allowed(q, self.spec.jumps, self.spec.Q))


class GreedyExact(QuotingStrategy):
    """Greedy quotes from the exact lattice solution, linear in t between stored nodes."""

    name = 'greedy-exact'

    def __init__(self, theta: ThetaGrid):
        super().__init__(theta.spec)
        self.theta = theta
        self.grid: InventoryGrid = theta.grid

    def _raw_offsets(self, t, q):
        spec = self.spec
        here = self.grid.indices(q)
        theta_q = self.theta.values_at(t, here)
        p = np.full((len(q), len(spec.channels)), np.nan)
        for ch in spec.channels:
            there = self.grid.indices(q + spec.jumps[ch.index])
            ok = there >= 0
            p[ok, ch.index] = (theta_q[ok] - self.theta.values_at(t[ok], there[ok]) + ch.cost) / ch.size
        return _offsets_from_p(spec, p, np.isfinite(p))


class Asymptotic(QuotingStrategy):
    """Stationary quotes from A_inf and B_inf."""

    name = 'asymptotic'

    def __init__(self, limits: AsymptoticLimits, spec):
        super().__init__(spec)
        if not limits.image_condition_ok:
            raise UnsupportedConfigurationError(
                "no constant asymptotic approximation of the quotes: B_inf does not exist"
            )
        self.limits = limits

    def _raw_offsets(self, t, q):
        p = channel_p_values(self.spec, self.limits.A_inf, self.limits.B_inf, q)
        return _offsets_from_p(self.spec, p, allowed(q, self.spec.jumps, self.spec.Q))


class ConstantOffsets(QuotingStrategy):
    """The same offset on every channel at every state."""

    name = 'constant'

    def __init__(self, spec, offsets: Sequence[float]):
        super().__init__(spec)
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != (len(self.spec.channels),):
            raise UnsupportedConfigurationError(
                f"ConstantOffsets needs one offset per channel ({len(self.spec.channels)}), "
                f"got shape {offsets.shape}"
            )
        self.values = offsets

    @classmethod
    def baseline(cls, spec) -> 'ConstantOffsets':
        """
        Myopic offsets delta*(0): 1/k under objective B and log(1 + gamma z / k) / (gamma z)
        under objective A for exponential curves.
        """
        spec = validate(spec)
        return cls(spec, [delta_star(ch.curve, spec.xi, ch.size, 0.0, spec.floor) for ch in spec.channels])

    def _raw_offsets(self, t, q):
        return np.broadcast_to(self.values, (len(q), len(self.values)))


# =============================================================================
# PATHS
# =============================================================================

@dataclass(frozen=True)
class Trade:
    time: float
    asset: int
    tier: int
    side: str
    size: float
    offset: float
    mid: float
    price: float
    cash_delta: float


@dataclass
class PathResult:
    """One trajectory. times/inventory/cash are sampled at 0, each execution and T."""

    trades: List[Trade]
    times: np.ndarray
    inventory: np.ndarray
    cash: np.ndarray
    X_T: float
    q_T: np.ndarray
    S_T: np.ndarray
    running_risk: float
    majorant_violations: int = 0

    @property
    def wealth(self) -> float:
        return float(self.X_T + self.q_T @ self.S_T)


def _price_root(spec: CheckedSpec) -> np.ndarray:
    try:
        return cholesky(spec.cov)
    except FactorizationError:
        logger.debug("covariance is singular; using its symmetric square root for price shocks")
        return sym_sqrt(spec.cov)


def _check_start(spec: CheckedSpec, q0) -> np.ndarray:
    q0 = np.zeros(spec.d) if q0 is None else np.atleast_1d(np.asarray(q0, dtype=float))
    InventoryGrid.from_spec(spec).index(q0)
    return q0


def simulate(spec, strategy: QuotingStrategy, n_paths: int, seed: int, q0=None,
             dt: Optional[float] = None, batch_size: Optional[int] = None,
             safety: Optional[float] = None) -> List[PathResult]:
    """
    Simulate n_paths trajectories of the quoting strategy from (0, q0).

    Args:
        dt: Majorant refresh step (default T / sim.steps)
        batch_size: Paths per random-number batch (default sim.batch_size)

    Raises:
        UnsupportedConfigurationError: If the strategy was built for another spec
        LatticeError: If q0 is not an admissible inventory
    """
    spec = validate(spec)
    if spec_to_dict(strategy.spec) != spec_to_dict(spec):
        raise UnsupportedConfigurationError(
            f"strategy '{strategy.name}' was built for a different spec"
        )
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    q0 = _check_start(spec, q0)
    T = float(spec.horizon)
    safety = resolve(safety, 'sim', 'safety')
    steps = resolve(None, 'sim', 'steps') if dt is None else max(1, int(math.ceil(T / dt - 1e-9)))
    root = _price_root(spec)
    risk = spec.cov

    def state_fn(t, q):
        return strategy.rates(t, q), np.einsum('ni,ij,nj->n', q, risk, q)

    def worker(batch: int, size: int) -> List[PathResult]:
        if T == 0:
            return [_still_path(spec, q0) for _ in range(size)]
        stats = simulate_gated_jumps(state_fn, 0.0, T, q0, size, spec.jumps, spec.Q,
                                     batch_rng(seed, batch, 'flow'), steps, safety, gate=True)
        return _assemble(spec, strategy, stats, q0, root, batch_rng(seed, batch, 'price'))

    batches = run_batches(n_paths, batch_size, worker, section='sim')
    results = [path for batch in batches for path in batch]
    logger.info("simulated %d paths with strategy '%s'", n_paths, strategy.name)
    return results


def _still_path(spec: CheckedSpec, q0: np.ndarray) -> PathResult:
    return PathResult(trades=[], times=np.array([0.0]), inventory=q0[None, :].copy(),
                      cash=np.zeros(1), X_T=0.0, q_T=q0.copy(), S_T=spec.prices.copy(),
                      running_risk=0.0)


def _assemble(spec: CheckedSpec, strategy: QuotingStrategy, stats, q0: np.ndarray,
              root: np.ndarray, price_rng: np.random.Generator) -> List[PathResult]:
    """Turn a batch of thinning events into per-path trade logs, prices and cash."""
    T = float(spec.horizon)
    n = stats.n_paths
    path, time, chan = stats.event_path, stats.event_time, stats.event_channel

    # inventory just before each event: q0 plus the jumps of earlier events on the same path
    jumps = spec.jumps[chan]
    before = np.tile(q0, (len(chan), 1))
    if len(chan):
        running = np.cumsum(jumps, axis=0)
        starts = np.searchsorted(path, np.arange(n))
        offset = np.zeros_like(running)
        first = starts[path]
        has_prev = first > 0
        offset[has_prev] = running[first[has_prev] - 1]
        before += running - jumps - offset
    delta = strategy.offsets(time, before)[np.arange(len(chan)), chan] if len(chan) else np.zeros(0)

    counts = np.bincount(path, minlength=n)
    points = counts + 1
    shocks = price_rng.standard_normal((int(points.sum()), spec.d))
    mu = spec.mu
    results = []
    cursor, shock_cursor = 0, 0
    for k in range(n):
        m = counts[k]
        sl = slice(cursor, cursor + m)
        t_k = np.append(time[sl], T)
        dt = np.diff(np.concatenate(([0.0], t_k)))
        z = shocks[shock_cursor:shock_cursor + m + 1]
        S = spec.prices + np.cumsum(dt[:, None] * mu + np.sqrt(dt)[:, None] * (z @ root.T), axis=0)

        trades = []
        cash = [0.0]
        inventory = [q0.copy()]
        x = 0.0
        for e, (c_idx, d_e) in enumerate(zip(chan[sl], delta[sl])):
            ch = spec.channels[c_idx]
            mid = float(S[e, ch.asset])
            dx = -ch.sign * mid * ch.size + d_e * ch.size - ch.cost
            x += dx
            trades.append(Trade(time=float(t_k[e]), asset=ch.asset, tier=ch.tier, side=ch.side,
                                size=ch.size, offset=float(d_e), mid=mid,
                                price=mid - ch.sign * float(d_e), cash_delta=float(dx)))
            cash.append(x)
            inventory.append(inventory[-1] + spec.jumps[c_idx])

        results.append(PathResult(
            trades=trades,
            times=np.concatenate(([0.0], t_k)),
            inventory=np.array(inventory + [inventory[-1]]),
            cash=np.array(cash + [x]),
            X_T=x,
            q_T=stats.final_q[k].copy(),
            S_T=S[-1].copy(),
            running_risk=float(stats.integral[k]),
            majorant_violations=stats.majorant_violations if k == 0 else 0,
        ))
        cursor += m
        shock_cursor += m + 1
    return results


# =============================================================================
# OBJECTIVE AND REPORTS
# =============================================================================

def evaluate_objective(results: Sequence[PathResult], spec) -> Tuple[float, float]:
    """
    Monte-Carlo estimate (mean, stderr) of the objective.

    A: -exp(-gamma (X_T + q_T.S_T)); B: X_T + q_T.S_T - gamma/2 int q'Sigma q dt.
    """
    spec = validate(spec)
    wealth = np.array([r.wealth for r in results])
    if spec.objective == 'A':
        values = -np.exp(-spec.gamma * wealth)
    else:
        values = wealth - 0.5 * spec.gamma * np.array([r.running_risk for r in results])
    n = len(values)
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values)), stderr


def trades_frame(results: Sequence[PathResult], names: Optional[List[str]] = None) -> pd.DataFrame:
    """One row per execution, tagged with its path index."""
    columns = ['path', 'time', 'asset', 'tier', 'side', 'size', 'offset', 'mid', 'price', 'cash_delta']
    rows = []
    for k, result in enumerate(results):
        for trade in result.trades:
            rows.append({
                'path': k,
                'time': trade.time,
                'asset': names[trade.asset] if names else trade.asset,
                'tier': trade.tier,
                'side': trade.side,
                'size': trade.size,
                'offset': trade.offset,
                'mid': trade.mid,
                'price': trade.price,
                'cash_delta': trade.cash_delta,
            })
    return pd.DataFrame(rows, columns=columns)


def summary(results: Sequence[PathResult], spec, strategy: str = '') -> Dict[str, Any]:
    spec = validate(spec)
    mean, stderr = evaluate_objective(results, spec)
    q_T = np.array([r.q_T for r in results])
    trades = np.array([len(r.trades) for r in results])
    max_abs = np.max([np.max(np.abs(r.inventory), axis=0) for r in results], axis=0)
    return {
        'label': EXPERIMENT_LABEL,
        'strategy': strategy,
        'objective': spec.objective,
        'n_paths': len(results),
        'objective_mean': mean,
        'objective_stderr': stderr,
        'mean_trades': float(trades.mean()),
        'mean_terminal_inventory': q_T.mean(axis=0).tolist(),
        'max_abs_inventory': max_abs.tolist(),
        'mean_terminal_wealth': float(np.mean([r.wealth for r in results])),
        'majorant_violations': int(sum(r.majorant_violations for r in results)),
    }
