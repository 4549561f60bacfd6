"""
Batch simulation of gated marked jump processes by thinning.

Every path carries an inventory q that jumps by jumps[c] when channel c
fires. Channel intensities come from a user state function and are set
to zero whenever the jump would leave the risk box |q| <= Q. Time is cut
into steps; inside a step the majorant is `safety` times the total
intensity at the step start (recomputed after every accepted jump), and
candidates are accepted with probability intensity / majorant. A
candidate whose true intensity exceeds the majorant is counted as a
majorant violation.

Batches of paths run on a thread pool; each batch owns a Philox
generator keyed by (seed, batch index, stream role), so results do not
depend on the number of threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from mmapprox.settings import resolve, thread_count

logger = logging.getLogger(__name__)

STREAM_ROLES = {'mc': 1, 'flow': 2, 'price': 3}

# (t, q) -> (intensities (n, n_channels), integrand (n,) or None)
StateFunction = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, Optional[np.ndarray]]]


@dataclass
class ThinningStats:
    """Per-path results of one batch."""

    jumps: np.ndarray            # (n,) accepted jumps per path
    compensator: np.ndarray      # (n,) integral of the total intensity
    integral: np.ndarray         # (n,) integral of the integrand
    final_q: np.ndarray          # (n, d)
    majorant_violations: int
    event_path: np.ndarray       # per event, sorted by path then time
    event_time: np.ndarray
    event_channel: np.ndarray

    @property
    def n_paths(self) -> int:
        return len(self.jumps)


def batch_rng(seed: int, batch: int, role: str) -> np.random.Generator:
    """Counter-based generator for one (seed, batch, role) key."""
    ss = np.random.SeedSequence([int(seed), int(batch), STREAM_ROLES[role]])
    return np.random.Generator(np.random.Philox(ss))


def allowed(q: np.ndarray, jumps: np.ndarray, limits: np.ndarray) -> np.ndarray:
    """(n, n_channels) mask of channels whose jump keeps q inside the risk box."""
    after = q[:, None, :] + jumps[None, :, :]
    return np.all(np.abs(after) <= limits * (1.0 + 1e-12), axis=2)


def simulate_gated_jumps(state_fn: StateFunction, t0: float, horizon: float, q0: np.ndarray,
                         n_paths: int, jumps: np.ndarray, limits: np.ndarray,
                         rng: np.random.Generator, steps: int, safety: float,
                         gate: bool = True) -> ThinningStats:
    """
    Simulate n_paths from (t0, q0) to horizon.

    Args:
        state_fn: Intensities and integrand at (t, q), vectorized over paths
        q0: Start inventory, (d,) or (n_paths, d)
        jumps: (n_channels, d) inventory change per channel
        limits: (d,) risk limits Q
        steps: Number of majorant steps on [t0, horizon]
        safety: Majorant factor over the intensity at the step start
        gate: Zero the intensity of channels that would breach a limit
    """
    d = jumps.shape[1]
    q = np.broadcast_to(np.asarray(q0, dtype=float), (n_paths, d)).copy()
    t = np.full(n_paths, float(t0))
    grid = t0 + (horizon - t0) * np.arange(steps + 1) / steps
    grid[-1] = horizon
    k = np.zeros(n_paths, dtype=int)

    def evaluate(times, states):
        rates, f = state_fn(times, states)
        rates = np.asarray(rates, dtype=float)
        if gate:
            rates = rates * allowed(states, jumps, limits)
        if f is None:
            f = np.zeros(len(times))
        return rates, np.asarray(f, dtype=float)

    rates, f = evaluate(t, q)
    total = rates.sum(axis=1)
    majorant = safety * total
    counts = np.zeros(n_paths, dtype=int)
    compensator = np.zeros(n_paths)
    integral = np.zeros(n_paths)
    violations = 0
    ev_path: List[np.ndarray] = []
    ev_time: List[np.ndarray] = []
    ev_channel: List[np.ndarray] = []

    active = t < horizon
    while np.any(active):
        idx = np.flatnonzero(active)
        boundary = grid[np.minimum(k[idx] + 1, steps)]
        m = majorant[idx]
        draw = rng.exponential(size=len(idx))
        with np.errstate(divide='ignore'):
            candidate = t[idx] + np.where(m > 0, draw / np.where(m > 0, m, 1.0), np.inf)
        hit = candidate >= boundary
        t_new = np.where(hit, boundary, candidate)

        r_new, f_new = evaluate(t_new, q[idx])
        tot_new = r_new.sum(axis=1)
        dt = t_new - t[idx]
        integral[idx] += 0.5 * (f[idx] + f_new) * dt
        compensator[idx] += 0.5 * (total[idx] + tot_new) * dt

        u = rng.random(len(idx))
        trial = ~hit
        violations += int(np.count_nonzero(trial & (tot_new > m * (1.0 + 1e-12))))
        accept = trial & (u * m < tot_new)

        t[idx] = t_new
        rates[idx], f[idx], total[idx] = r_new, f_new, tot_new
        stepped = idx[hit]
        k[stepped] += 1
        majorant[stepped] = safety * tot_new[hit]

        if np.any(accept):
            fired = idx[accept]
            cum = np.cumsum(r_new[accept], axis=1)
            level = rng.random(len(fired)) * cum[:, -1]
            channel = np.minimum((cum < level[:, None]).sum(axis=1), jumps.shape[0] - 1)
            q[fired] += jumps[channel]
            counts[fired] += 1
            ev_path.append(fired)
            ev_time.append(t[fired].copy())
            ev_channel.append(channel)
            r_j, f_j = evaluate(t[fired], q[fired])
            rates[fired], f[fired] = r_j, f_j
            total[fired] = r_j.sum(axis=1)
            majorant[fired] = safety * total[fired]

        active = t < horizon

    if violations:
        logger.warning("thinning: %d majorant violation(s); raise the safety factor or the step count",
                       violations)
    if ev_path:
        path = np.concatenate(ev_path)
        time = np.concatenate(ev_time)
        chan = np.concatenate(ev_channel)
        order = np.lexsort((time, path))
        path, time, chan = path[order], time[order], chan[order]
    else:
        path = np.zeros(0, dtype=int)
        time = np.zeros(0)
        chan = np.zeros(0, dtype=int)
    return ThinningStats(jumps=counts, compensator=compensator, integral=integral, final_q=q,
                         majorant_violations=violations, event_path=path, event_time=time,
                         event_channel=chan)


def run_batches(n_paths: int, batch_size: Optional[int], worker: Callable[[int, int], object],
                section: str = 'mc') -> list:
    """
    Split n_paths into fixed-size batches and run worker(batch_index, size)
    on a thread pool capped by MM_THREADS. Results come back in batch order.
    """
    batch_size = resolve(batch_size, section, 'batch_size')
    sizes = [batch_size] * (n_paths // batch_size)
    if n_paths % batch_size:
        sizes.append(n_paths % batch_size)
    threads = min(thread_count(), max(1, len(sizes)))
    logger.debug("%d paths in %d batch(es) on %d thread(s)", n_paths, len(sizes), threads)
    if threads == 1:
        return [worker(b, size) for b, size in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, b, size) for b, size in enumerate(sizes)]
        return [f.result() for f in futures]
