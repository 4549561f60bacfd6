"""
Optimal quotes: the offset map delta*(p), greedy quotes from any value
source, stationary (asymptotic) quotes and the spread/skew decomposition.

For an execution channel of size z and fixed cost c the argument is

    p = (theta(t, q) - theta(t, q + jump) + c) / z

and delta*(p) = Lambda^{-1}(xi z H(p) - H'(p)), floored at -delta_floor.
A side whose execution would breach a risk limit is withdrawn.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import bisect

from mmapprox.closedform import AsymptoticLimits, RiccatiSolution, eval_A, eval_B, theta_check
from mmapprox.errors import BracketingError, UnsupportedConfigurationError
from mmapprox.exact import ThetaGrid, query_theta
from mmapprox.hamiltonian import exponential_offset, hamiltonian
from mmapprox.model import CheckedSpec, ExponentialIntensity, IntensityCurve, validate
from mmapprox.settings import resolve

logger = logging.getLogger(__name__)


# =============================================================================
# OFFSET MAP
# =============================================================================

def _bracket(curve: IntensityCurve, target: float, start: float, direction: float,
             max_expansions: int) -> float:
    """Walk from start in `direction` with doubling steps until Lambda crosses target."""
    step = 1.0
    x = start
    for _ in range(max_expansions):
        x = start + direction * step
        lam = float(curve.intensity(x))
        if (direction > 0 and lam < target) or (direction < 0 and lam > target):
            return x
        step *= 2.0
    raise BracketingError(
        f"Could not bracket Lambda^-1({target:.6e}) for {curve!r}: "
        f"the target lies outside the range of the curve"
    )


def delta_star(curve: IntensityCurve, xi: float, z: float, p: float,
               floor: Optional[float] = None) -> float:
    """
    Optimal quote offset for marginal value difference p.

    Exponential curves take the closed-form maximizer of H; other curves
    invert Lambda by bisection on Lambda(delta) = xi z H(p) - H'(p).

    Raises:
        BracketingError: If the target intensity is outside the curve's range
    """
    h = hamiltonian(curve, xi, z, p)
    if isinstance(curve, ExponentialIntensity):
        return max(h.argmax_delta, -floor) if floor is not None else h.argmax_delta

    target = xi * z * h.value - h.derivative
    if floor is not None and float(curve.intensity(-floor)) <= target:
        return -floor
    max_expansions = resolve(None, 'hamiltonian', 'max_expansions')
    xtol = resolve(None, 'quotes', 'bisection_xtol')
    maxiter = resolve(None, 'quotes', 'bisection_maxiter')
    start = h.argmax_delta
    lo = -floor if floor is not None else _bracket(curve, target, start, -1.0, max_expansions)
    hi = _bracket(curve, target, start, 1.0, max_expansions)
    if float(curve.intensity(start)) == target:
        return start
    return bisect(lambda x: float(curve.intensity(x)) - target, lo, hi,
                  xtol=xtol, maxiter=maxiter)


def delta_star_array(curve: IntensityCurve, xi: float, z: float, p,
                     floor: Optional[float] = None) -> np.ndarray:
    """Vectorized delta_star over an array of p."""
    p = np.asarray(p, dtype=float)
    if isinstance(curve, ExponentialIntensity):
        delta = p + exponential_offset(curve.decay, xi, z)
        return np.maximum(delta, -floor) if floor is not None else delta
    flat = [delta_star(curve, xi, z, float(x), floor) for x in p.ravel()]
    return np.array(flat).reshape(p.shape)


# =============================================================================
# VALUE SOURCES
# =============================================================================

class ThetaSource(ABC):
    """Anything that can evaluate theta(t, q) on the lattice."""

    name: str = ''

    @abstractmethod
    def theta(self, t: float, q: np.ndarray) -> float:
        pass

    def p_by_differences(self, spec: CheckedSpec, t: float, q: np.ndarray) -> np.ndarray:
        """p for every channel from theta values at q and q + jump (nan where gated)."""
        out = np.full(len(spec.channels), np.nan)
        theta_q = self.theta(t, q)
        for ch in spec.channels:
            neighbor = q + spec.jumps[ch.index]
            if _gated(spec, neighbor, ch.asset):
                continue
            out[ch.index] = (theta_q - self.theta(t, neighbor) + ch.cost) / ch.size
        return out

    def p_values(self, spec: CheckedSpec, t: float, q: np.ndarray) -> np.ndarray:
        return self.p_by_differences(spec, t, q)


class ProxySource(ThetaSource):
    """Closed-form quadratic proxy."""

    name = 'proxy'

    def __init__(self, sol: RiccatiSolution):
        self.sol = sol

    def theta(self, t: float, q: np.ndarray) -> float:
        return theta_check(self.sol, t, q)

    def p_values(self, spec: CheckedSpec, t: float, q: np.ndarray) -> np.ndarray:
        """+/- 2 q'A e_i + z A_ii +/- B_i + c / z, per channel."""
        A, B = eval_A(self.sol, t), eval_B(self.sol, t)
        return _quadratic_p(spec, A, B, q)


class ExactSource(ThetaSource):
    """Exact lattice solution."""

    name = 'exact'

    def __init__(self, grid: ThetaGrid):
        self.grid = grid

    def theta(self, t: float, q: np.ndarray) -> float:
        return query_theta(self.grid, t, q)


class CorrectedSource(ThetaSource):
    """Proxy plus a first-order correction eta(t, q)."""

    name = 'corrected'

    def __init__(self, sol: RiccatiSolution, eta: Callable[[float, np.ndarray], float]):
        self.sol = sol
        self.eta = eta

    def theta(self, t: float, q: np.ndarray) -> float:
        return theta_check(self.sol, t, q) + float(self.eta(t, q))


def _gated(spec: CheckedSpec, q_after: np.ndarray, asset: int) -> bool:
    return abs(q_after[asset]) > spec.Q[asset] * (1.0 + 1e-12)


def channel_p_values(spec: CheckedSpec, A: np.ndarray, B: np.ndarray, q: np.ndarray) -> np.ndarray:
    """
    Quadratic-proxy p for every channel, batched.

    A is (d, d) or (n, d, d), B is (d,) or (n, d), q is (n, d); returns (n, n_channels).
    """
    q = np.atleast_2d(q)
    A = np.broadcast_to(A, (len(q),) + A.shape[-2:])
    B = np.broadcast_to(B, (len(q), B.shape[-1]))
    Aq = np.einsum('nij,nj->ni', A, q)
    diag = np.einsum('nii->ni', A)
    asset, sign, size, cost = _channel_arrays(spec)
    return sign * 2.0 * Aq[:, asset] + size * diag[:, asset] + sign * B[:, asset] + cost / size


def _channel_arrays(spec: CheckedSpec) -> Tuple[np.ndarray, ...]:
    chans = spec.channels
    return (np.array([c.asset for c in chans]), np.array([float(c.sign) for c in chans]),
            np.array([c.size for c in chans]), np.array([c.cost for c in chans]))


def _quadratic_p(spec: CheckedSpec, A: np.ndarray, B: np.ndarray, q: np.ndarray) -> np.ndarray:
    return channel_p_values(spec, np.asarray(A), np.asarray(B), q[None, :])[0]


# =============================================================================
# QUOTE SETS
# =============================================================================

@dataclass(frozen=True)
class Quote:
    asset: int
    tier: int
    size: float
    side: str
    offset: Optional[float]
    price: Optional[float]

    @property
    def withdrawn(self) -> bool:
        return self.offset is None


@dataclass
class QuoteSet:
    t: float
    q: np.ndarray
    quotes: List[Quote] = field(default_factory=list)
    source: str = ''

    def find(self, asset: int, side: str, tier: int = 0, size: Optional[float] = None) -> Quote:
        for quote in self.quotes:
            if quote.asset == asset and quote.side == side and quote.tier == tier \
                    and (size is None or quote.size == size):
                return quote
        raise KeyError(f"No {side} quote for asset {asset}, tier {tier}, size {size}")

    def offset(self, asset: int, side: str, tier: int = 0, size: Optional[float] = None) -> Optional[float]:
        return self.find(asset, side, tier, size).offset

    def to_frame(self, names: Optional[List[str]] = None) -> pd.DataFrame:
        """Columns t, asset, tier, size, side, offset, price, gated."""
        rows = []
        for quote in self.quotes:
            rows.append({
                't': self.t,
                'asset': names[quote.asset] if names else quote.asset,
                'tier': quote.tier,
                'size': quote.size,
                'side': quote.side,
                'offset': quote.offset,
                'price': quote.price,
                'gated': quote.withdrawn,
            })
        return pd.DataFrame(rows, columns=['t', 'asset', 'tier', 'size', 'side', 'offset', 'price', 'gated'])


def _build_quotes(spec: CheckedSpec, t: float, q: np.ndarray, p: np.ndarray, source: str) -> QuoteSet:
    quotes = []
    gated_sides = 0
    for ch in spec.channels:
        if _gated(spec, q + spec.jumps[ch.index], ch.asset):
            quotes.append(Quote(ch.asset, ch.tier, ch.size, ch.side, None, None))
            gated_sides += 1
            continue
        delta = delta_star(ch.curve, spec.xi, ch.size, float(p[ch.index]), spec.floor)
        price = spec.prices[ch.asset] - ch.sign * delta
        quotes.append(Quote(ch.asset, ch.tier, ch.size, ch.side, float(delta), float(price)))
    if gated_sides:
        logger.debug("%d quote(s) withdrawn at risk limits, q=%s", gated_sides, q.tolist())
    return QuoteSet(t=t, q=q, quotes=quotes, source=source)


def _check_inventory(spec: CheckedSpec, q) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.shape != (spec.d,):
        raise ValueError(f"Inventory must have {spec.d} entries, got {q.tolist()}")
    if np.any(np.abs(q) > spec.Q * (1.0 + 1e-12)):
        raise ValueError(f"Inventory {q.tolist()} is outside the risk limits {spec.Q.tolist()}")
    return q


def greedy_quotes(source: ThetaSource, spec, t: float, q) -> QuoteSet:
    """Quotes obtained by plugging a value source into delta*."""
    spec = validate(spec)
    q = _check_inventory(spec, q)
    return _build_quotes(spec, t, q, source.p_values(spec, t, q), source.name)


def asymptotic_quotes(limits: AsymptoticLimits, spec, q) -> QuoteSet:
    """
    Stationary quotes from A_inf = sqrt(gamma)/2 Gamma and B_inf.

    Raises:
        UnsupportedConfigurationError: If B_inf does not exist (image condition fails)
    """
    if not limits.image_condition_ok:
        raise UnsupportedConfigurationError(
            "no constant asymptotic approximation of the quotes: the drift term "
            "D+^{1/2} mu is not in the image of A_hat"
        )
    spec = validate(spec)
    q = _check_inventory(spec, q)
    p = _quadratic_p(spec, limits.A_inf, limits.B_inf, q)
    return _build_quotes(spec, math.inf, q, p, 'asymptotic')


def spread_skew(limits: AsymptoticLimits, spec, q) -> List[Tuple[float, float]]:
    """
    Per-asset (half_spread, skew) of the stationary quotes.

    half_spread = sqrt(gamma)/2 z Gamma_ii + offset constant + c / z
    skew        = -sqrt(gamma) q'Gamma e_i - B_inf_i

    Needs one tier per asset with identical exponential sides and a single
    trade size.
    """
    spec = validate(spec)
    if not spec.is_symmetric():
        raise UnsupportedConfigurationError("spread_skew needs identical bid and ask sides")
    for i in range(spec.d):
        tiers = spec.tiers(i)
        if len(tiers) != 1 or len(tiers[0].bid.sizes.atoms) != 1 \
                or not isinstance(tiers[0].bid.intensity, ExponentialIntensity):
            raise UnsupportedConfigurationError(
                f"spread_skew needs a single tier with one trade size and an exponential "
                f"intensity per asset (asset '{spec.names[i]}' does not qualify)"
            )
    if not limits.image_condition_ok:
        raise UnsupportedConfigurationError("no constant asymptotic approximation of the quotes")
    q = _check_inventory(spec, q)
    root_gamma = math.sqrt(limits.gamma)
    out = []
    for i in range(spec.d):
        side = spec.tiers(i)[0].bid
        z = side.sizes.atoms[0][0]
        const = exponential_offset(side.intensity.decay, spec.xi, z)
        half = 0.5 * root_gamma * z * limits.Gamma[i, i] + const + side.cost / z
        skew = -root_gamma * float(q @ limits.Gamma[:, i]) - float(limits.B_inf[i])
        out.append((half, skew))
    return out


def spread_skew_frame(limits: AsymptoticLimits, spec, q) -> pd.DataFrame:
    spec = validate(spec)
    rows = [{'asset': spec.names[i], 'half_spread': h, 'skew': s}
            for i, (h, s) in enumerate(spread_skew(limits, spec, q))]
    return pd.DataFrame(rows)


def quote_table(quote_sets: Dict[str, QuoteSet], names: List[str]) -> pd.DataFrame:
    """Stack several quote sets, tagging each row with its source."""
    frames = []
    for label, qs in quote_sets.items():
        frame = qs.to_frame(names)
        frame.insert(0, 'source', label)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
