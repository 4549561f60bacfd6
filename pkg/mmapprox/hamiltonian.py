"""
Hamiltonian functions H_xi(z, p), their maximizers and quadratic proxies.

    H_xi(z, p) = sup_{delta >= -delta_floor} Lambda(delta) (1 - exp(-xi z (delta - p))) / (xi z)   (xi > 0)
    H_0(z, p)  = sup_{delta >= -delta_floor} Lambda(delta) (delta - p)                              (xi = 0)

Exponential curves have closed forms; every other curve goes through a
bounded numerical search. xi = 0 is always its own branch.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from mmapprox.errors import BracketingError, SpecValidationError
from mmapprox.model import CheckedSpec, ExponentialIntensity, IntensityCurve, SIDES
from mmapprox.settings import resolve

logger = logging.getLogger(__name__)

MOMENT_ORDERS = (-1, 0, 1, 2, 3)


@dataclass(frozen=True)
class HamEval:
    value: float
    argmax_delta: float
    derivative: float


@dataclass(frozen=True)
class QuadraticCoeffs:
    """alpha0 + alpha1 p + alpha2 p^2 / 2."""

    alpha0: float
    alpha1: float
    alpha2: float

    def value(self, p):
        return self.alpha0 + self.alpha1 * p + 0.5 * self.alpha2 * np.square(p)

    def derivative(self, p):
        return self.alpha1 + self.alpha2 * p


# =============================================================================
# HAMILTONIAN EVALUATION
# =============================================================================

def exponential_constant(decay: float, xi: float, z: float) -> float:
    """C_xi = (1 + xi z / k)^-(1 + k / (xi z)), or e^-1 when xi = 0."""
    if xi == 0:
        return math.exp(-1.0)
    r = xi * z / decay
    return math.exp(-(1.0 + 1.0 / r) * math.log1p(r))


def exponential_offset(decay: float, xi: float, z: float) -> float:
    """delta* - p for an exponential curve: log(1 + xi z / k) / (xi z), or 1/k."""
    if xi == 0:
        return 1.0 / decay
    return math.log1p(xi * z / decay) / (xi * z)


def _objective(curve: IntensityCurve, xi: float, z: float, p, delta):
    lam = curve.intensity(delta)
    if xi > 0:
        return lam * -np.expm1(-xi * z * (np.asarray(delta) - p)) / (xi * z)
    return lam * (np.asarray(delta) - p)


def _envelope_derivative(curve: IntensityCurve, xi: float, z: float, p, delta):
    """dH/dp at the maximizer (envelope theorem)."""
    lam = curve.intensity(delta)
    if xi > 0:
        return -lam * np.exp(-xi * z * (np.asarray(delta) - p))
    return -lam


def ham_exponential(A: float, k: float, xi: float, z: float, p: float,
                    floor: Optional[float] = None) -> HamEval:
    """Closed-form Hamiltonian for Lambda(delta) = A exp(-k delta)."""
    delta = p + exponential_offset(k, xi, z)
    if floor is not None and delta < -floor:
        curve = ExponentialIntensity(A, k)
        delta = -floor
        value = float(_objective(curve, xi, z, p, delta))
        return HamEval(value=value, argmax_delta=delta,
                       derivative=float(_envelope_derivative(curve, xi, z, p, delta)))
    value = A / k * exponential_constant(k, xi, z) * math.exp(-k * p)
    return HamEval(value=value, argmax_delta=delta, derivative=-k * value)


def ham_generic(curve: IntensityCurve, xi: float, z: float, p: float,
                floor: Optional[float] = None,
                max_expansions: Optional[int] = None,
                xatol: Optional[float] = None) -> HamEval:
    """
    Hamiltonian by numerical maximization over the quote offset.

    The search interval starts at max(p, -floor) and its span doubles from 1
    until the objective has decreased over two successive doublings and the
    intensity has fallen below decay_ratio times its value at the lower end.
    A bounded Brent search then locates the maximum; the lower end point is
    compared explicitly so a binding floor returns exactly -floor.

    Raises:
        BracketingError: If the interval cannot be closed within max_expansions
    """
    max_expansions = resolve(max_expansions, 'hamiltonian', 'max_expansions')
    xatol = resolve(xatol, 'hamiltonian', 'xatol')
    ratio = resolve(None, 'hamiltonian', 'decay_ratio')

    lo = p if floor is None else max(p, -floor)
    lam_ref = float(curve.intensity(lo))
    span = 1.0
    hi = lo + span
    f_hi = float(_objective(curve, xi, z, p, hi))
    decreasing = 0
    for _ in range(max_expansions):
        if decreasing >= 2 and float(curve.intensity(hi)) < ratio * lam_ref:
            break
        span *= 2.0
        f_new = float(_objective(curve, xi, z, p, lo + span))
        decreasing = decreasing + 1 if f_new < f_hi else 0
        hi, f_hi = lo + span, f_new
    else:
        raise BracketingError(
            f"Could not bracket the Hamiltonian maximum after {max_expansions} expansions\n"
            f"  curve={curve!r}, xi={xi}, z={z}, p={p}, floor={floor}\n"
            f"  last interval [{lo}, {hi}], objective there {f_hi:.3e}"
        )

    res = minimize_scalar(lambda x: -float(_objective(curve, xi, z, p, x)),
                          bounds=(lo, hi), method='bounded',
                          options={'xatol': xatol, 'maxiter': 500})
    delta = float(res.x)
    value = -float(res.fun)
    f_lo = float(_objective(curve, xi, z, p, lo))
    if f_lo >= value:
        delta, value = lo, f_lo
    return HamEval(value=value, argmax_delta=delta,
                   derivative=float(_envelope_derivative(curve, xi, z, p, delta)))


def hamiltonian(curve: IntensityCurve, xi: float, z: float, p: float,
                floor: Optional[float] = None) -> HamEval:
    """Dispatch to the closed form when the curve is exponential."""
    if isinstance(curve, ExponentialIntensity):
        return ham_exponential(curve.scale, curve.decay, xi, z, p, floor)
    return ham_generic(curve, xi, z, p, floor)


def hamiltonian_values(curve: IntensityCurve, xi: float, z: float, p,
                       floor: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized (H, dH/dp) over an array of p."""
    p = np.asarray(p, dtype=float)
    if isinstance(curve, ExponentialIntensity):
        k = curve.decay
        value = curve.scale / k * exponential_constant(k, xi, z) * np.exp(-k * p)
        deriv = -k * value
        if floor is not None:
            binding = p + exponential_offset(k, xi, z) < -floor
            if np.any(binding):
                value = np.where(binding, _objective(curve, xi, z, p, -floor), value)
                deriv = np.where(binding, _envelope_derivative(curve, xi, z, p, -floor), deriv)
        return value, deriv
    flat = [ham_generic(curve, xi, z, float(x), floor) for x in p.ravel()]
    value = np.array([h.value for h in flat]).reshape(p.shape)
    deriv = np.array([h.derivative for h in flat]).reshape(p.shape)
    return value, deriv


# =============================================================================
# QUADRATIC PROXY
# =============================================================================

def taylor_coeffs(curve: IntensityCurve, xi: float, z: float,
                  floor: Optional[float] = None,
                  fd_step: Optional[float] = None) -> QuadraticCoeffs:
    """
    Second-order Taylor coefficients of H at p = 0.

    Exponential curves use exact derivatives; other curves use 5-point
    central differences of the numerical Hamiltonian with step
    h = fd_step * max(1, 1/k).
    """
    if isinstance(curve, ExponentialIntensity):
        k = curve.decay
        offset = exponential_offset(k, xi, z)
        if floor is None or offset >= -floor:
            h0 = curve.scale / k * exponential_constant(k, xi, z)
            return QuadraticCoeffs(alpha0=h0, alpha1=-k * h0, alpha2=k * k * h0)

    fd_step = resolve(fd_step, 'hamiltonian', 'fd_step')
    h = fd_step * max(1.0, 1.0 / abs(curve.decay_hint))
    f = {j: ham_generic(curve, xi, z, j * h, floor).value for j in (-2, -1, 0, 1, 2)}
    alpha1 = (-f[2] + 8 * f[1] - 8 * f[-1] + f[-2]) / (12 * h)
    alpha2 = (-f[2] + 16 * f[1] - 30 * f[0] + 16 * f[-1] - f[-2]) / (12 * h * h)
    return QuadraticCoeffs(alpha0=f[0], alpha1=alpha1, alpha2=alpha2)


def build_coeffs(spec: CheckedSpec) -> Tuple[QuadraticCoeffs, ...]:
    """Taylor coefficients for every execution channel, indexed by channel."""
    cache: Dict[tuple, QuadraticCoeffs] = {}
    out = []
    for ch in spec.channels:
        key = (ch.curve, ch.size)
        if key not in cache:
            cache[key] = taylor_coeffs(ch.curve, spec.xi, ch.size, spec.floor)
        out.append(cache[key])
    logger.debug("built quadratic coefficients for %d channels (%d distinct)", len(out), len(cache))
    return tuple(out)


@dataclass(frozen=True)
class MomentTable:
    """
    Aggregated moments of the quadratic coefficients.

    For each side, `plain[j, m, i]` is Delta_{j,k} summed over tiers for asset i
    with k = MOMENT_ORDERS[m], i.e. sum over atoms of weight * z^k * alpha_j(z).
    `cost` and `cost2` weight each tier's contribution by c and c^2.
    """

    plain: Dict[str, np.ndarray]
    cost: Dict[str, np.ndarray]
    cost2: Dict[str, np.ndarray]

    @staticmethod
    def _m(k: int) -> int:
        return MOMENT_ORDERS.index(k)

    def V(self, side: str, j: int, k: int) -> np.ndarray:
        return self.plain[side][j, self._m(k)]

    def Vt(self, side: str, j: int, k: int) -> np.ndarray:
        return self.cost[side][j, self._m(k)]

    def D(self, side: str, j: int, k: int) -> np.ndarray:
        return np.diag(self.V(side, j, k))

    def chi(self, side: str, j: int, k: int) -> float:
        return float(np.sum(self.V(side, j, k)))

    def chi_t(self, side: str, j: int, k: int) -> float:
        return float(np.sum(self.Vt(side, j, k)))

    def chi_h(self, side: str, j: int, k: int) -> float:
        return float(np.sum(self.cost2[side][j, self._m(k)]))


def moments(spec: CheckedSpec,
            coeffs: Optional[Sequence[QuadraticCoeffs]] = None) -> MomentTable:
    """
    Assemble the moment table from per-channel quadratic coefficients.

    coeffs defaults to build_coeffs(spec); any other quadratic fit can be
    passed instead, one entry per channel.
    """
    if coeffs is None:
        coeffs = build_coeffs(spec)
    if len(coeffs) != len(spec.channels):
        raise SpecValidationError(
            f"Expected {len(spec.channels)} quadratic coefficient sets (one per channel), "
            f"got {len(coeffs)}"
        )
    shape = (3, len(MOMENT_ORDERS), spec.d)
    plain = {s: np.zeros(shape) for s in SIDES}
    cost = {s: np.zeros(shape) for s in SIDES}
    cost2 = {s: np.zeros(shape) for s in SIDES}
    powers = np.array(MOMENT_ORDERS, dtype=float)
    for ch, c in zip(spec.channels, coeffs):
        alphas = np.array([c.alpha0, c.alpha1, c.alpha2])
        contrib = ch.weight * np.outer(alphas, ch.size ** powers)
        plain[ch.side][:, :, ch.asset] += contrib
        cost[ch.side][:, :, ch.asset] += ch.cost * contrib
        cost2[ch.side][:, :, ch.asset] += ch.cost ** 2 * contrib
    return MomentTable(plain=plain, cost=cost, cost2=cost2)
