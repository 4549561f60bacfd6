"""
Closed-form quadratic proxy theta(t, q) ~ -q'A(t)q - q'B(t) - C(t).

Replacing every Hamiltonian by its second-order Taylor polynomial turns the
Hamilton-Jacobi system into the Riccati system (d/dt, terminal values 0)

    A' = 2 A D+ A - gamma/2 Sigma
    B' = mu + 2 A (V- + Vt-) + 2 A D- diag(A) + 2 A D+ B
    C' = f(A, B)

which is solved in tau = T - t:

    A(tau) = 1/2 D+^{-1/2} P diag(lambda tanh(lambda tau)) P' D+^{-1/2}

with (lambda, P) the spectrum of A_hat = sqrt(gamma) (D+^{1/2} Sigma D+^{1/2})^{1/2}.
B is analytic up to one convolution integral against D- diag(A(u)); that
integral and C are computed by Simpson's rule on a tau-grid dense enough
to resolve the fastest eigenvalue.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mmapprox.errors import UnsupportedConfigurationError
from mmapprox.hamiltonian import MomentTable, QuadraticCoeffs, build_coeffs, moments
from mmapprox.linalg import SymSpectrum, pseudo_inverse, range_projector, sym_eig, sym_sqrt
from mmapprox.model import CheckedSpec, validate
from mmapprox.settings import get_default, resolve

logger = logging.getLogger(__name__)


# =============================================================================
# CORE MATRICES
# =============================================================================

@dataclass(frozen=True)
class CoreMatrices:
    D_plus: np.ndarray
    D_minus: np.ndarray
    V_minus: np.ndarray
    Vtilde_minus: np.ndarray
    A_hat: SymSpectrum
    Gamma: np.ndarray
    D_plus_sqrt: np.ndarray
    D_plus_inv_sqrt: np.ndarray
    gamma: float
    cov: np.ndarray

    @property
    def lam(self) -> np.ndarray:
        """Eigenvalues of A_hat, rounding noise below zero removed."""
        return np.clip(self.A_hat.eigenvalues, 0.0, None)

    @property
    def L(self) -> np.ndarray:
        """D+^{-1/2} P: maps spectral coordinates back to asset space."""
        return self.D_plus_inv_sqrt @ self.A_hat.eigenvectors


@dataclass(frozen=True)
class _ConstantTerms:
    """Moment aggregates entering f(A, B) = C'."""

    trace0: float        # Tr(D^b_{0,1} + D^a_{0,1})
    d12: np.ndarray      # diag of D^b_{1,2} + D^a_{1,2}
    chi_cost: float      # chi~^b_{1,0} + chi~^a_{1,0}
    d23: np.ndarray      # diag of D^b_{2,3} + D^a_{2,3}
    vt21: np.ndarray     # Vt^b_{2,1} + Vt^a_{2,1}
    chi_cost2: float     # sum of c^2 Delta_{2,-1}, both sides


def build_core(spec: CheckedSpec, table: MomentTable) -> CoreMatrices:
    """
    Assemble D+, D-, V-, Vt-, A_hat and Gamma from the moment table.

    Raises:
        UnsupportedConfigurationError: If an entry of D+ is not positive
    """
    spec = validate(spec)
    dp = table.V('bid', 2, 1) + table.V('ask', 2, 1)
    if np.any(dp <= 0):
        bad = [spec.names[i] for i in np.flatnonzero(dp <= 0)]
        raise UnsupportedConfigurationError(
            f"quadratic coefficient positivity violated: D+ has non-positive entries "
            f"for asset(s) {bad}\n"
            f"  D+ = {dp.tolist()}; the closed form needs alpha2 summed over both sides > 0"
        )
    ds = np.sqrt(dp)
    dis = 1.0 / ds
    inner = ds[:, None] * spec.cov * ds[None, :]
    root = sym_sqrt(inner)
    a_hat = sym_eig(math.sqrt(spec.gamma) * root)
    gamma_mat = dis[:, None] * root * dis[None, :]
    return CoreMatrices(
        D_plus=np.diag(dp),
        D_minus=table.D('bid', 2, 2) - table.D('ask', 2, 2),
        V_minus=table.V('bid', 1, 1) - table.V('ask', 1, 1),
        Vtilde_minus=table.Vt('bid', 2, 0) - table.Vt('ask', 2, 0),
        A_hat=a_hat,
        Gamma=0.5 * (gamma_mat + gamma_mat.T),
        D_plus_sqrt=np.diag(ds),
        D_plus_inv_sqrt=np.diag(dis),
        gamma=float(spec.gamma),
        cov=spec.cov,
    )


def _constant_terms(table: MomentTable) -> _ConstantTerms:
    return _ConstantTerms(
        trace0=table.chi('bid', 0, 1) + table.chi('ask', 0, 1),
        d12=table.V('bid', 1, 2) + table.V('ask', 1, 2),
        chi_cost=table.chi_t('bid', 1, 0) + table.chi_t('ask', 1, 0),
        d23=table.V('bid', 2, 3) + table.V('ask', 2, 3),
        vt21=table.Vt('bid', 2, 1) + table.Vt('ask', 2, 1),
        chi_cost2=table.chi_h('bid', 2, -1) + table.chi_h('ask', 2, -1),
    )


# =============================================================================
# SOLUTION
# =============================================================================

@dataclass(frozen=True)
class RiccatiSolution:
    """
    Closed-form A, B, C for one spec.

    taus is the tau-grid (tau = T - t) with the convolution part of B
    (F_grid, spectral coordinates) and C (C_grid) stored at its nodes;
    values between nodes come from a local Simpson step off the node below.
    """

    spec: CheckedSpec
    coeffs: Tuple[QuadraticCoeffs, ...]
    moments: MomentTable
    core: CoreMatrices
    terms: _ConstantTerms
    horizon: float
    mu: np.ndarray
    m: np.ndarray            # P' D+^{1/2} mu
    g0: np.ndarray           # P' D+^{-1/2} (V- + Vt-)
    cutoff: float
    taus: np.ndarray
    F_grid: Optional[np.ndarray] = None
    f_grid: Optional[np.ndarray] = None
    C_grid: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.core.cov.shape[0]


def _sech(x: np.ndarray, cutoff: float) -> np.ndarray:
    e = np.exp(-np.minimum(x, cutoff))
    return np.where(x > cutoff, 0.0, 2.0 * e / (1.0 + e * e))


def _logcosh(x: np.ndarray, cutoff: float) -> np.ndarray:
    return np.where(x > cutoff, x - math.log(2.0), np.logaddexp(x, -x) - math.log(2.0))


def _tanh_over_lam(lam: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """tanh(lambda tau) / lambda, equal to tau where lambda = 0. Shape (n, d)."""
    x = np.outer(taus, lam)
    safe = np.where(lam > 0, lam, 1.0)
    return np.where(lam > 0, np.tanh(x) / safe, taus[:, None])


def _ratio(lam: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """cosh(lambda a) / cosh(lambda b) for a <= b, without overflow."""
    la, lb = np.outer(a, lam), np.outer(b, lam)
    return np.exp(la - lb) * (1.0 + np.exp(-2.0 * la)) / (1.0 + np.exp(-2.0 * lb))


def _kernel(lam: np.ndarray, u: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """lambda sinh(lambda u) / cosh(lambda tau) for u <= tau."""
    lu, lt = np.outer(u, lam), np.outer(taus, lam)
    return lam * np.exp(lu - lt) * -np.expm1(-2.0 * lu) / (1.0 + np.exp(-2.0 * lt))


def _as_taus(taus) -> np.ndarray:
    return np.atleast_1d(np.asarray(taus, dtype=float))


def _diag_A(sol: RiccatiSolution, taus: np.ndarray) -> np.ndarray:
    lam, L = sol.core.lam, sol.core.L
    vals = lam * np.tanh(np.outer(taus, lam))
    return 0.5 * vals @ (L * L).T


def _g_A(sol: RiccatiSolution, taus: np.ndarray) -> np.ndarray:
    """P' D+^{-1/2} D- diag(A(tau)), shape (n, d)."""
    dm = np.diag(sol.core.D_minus)
    return (dm * _diag_A(sol, taus)) @ sol.core.L


def _anchors(sol: RiccatiSolution, taus: np.ndarray) -> np.ndarray:
    j = np.searchsorted(sol.taus, taus, side='right') - 1
    return np.clip(j, 0, len(sol.taus) - 1)


def _F_local(sol: RiccatiSolution, taus: np.ndarray) -> np.ndarray:
    """Convolution integral F(tau), stepping from the grid node below tau."""
    lam = sol.core.lam
    if not np.any(np.diag(sol.core.D_minus) != 0):
        return np.zeros((len(taus), len(lam)))
    j = _anchors(sol, taus)
    tj = sol.taus[j]
    s = taus - tj
    mid = tj + 0.5 * s
    local =(s / 6.0)[:, None] * (
        _kernel(lam, tj, taus) * _g_A(sol, tj)
        + 4.0 * _kernel(lam, mid, taus) * _g_A(sol, mid)
        + _kernel(lam, taus, taus) * _g_A(sol, taus)
    )
    return _ratio(lam, tj, taus) * sol.F_grid[j] + local


def _B_from_F(sol: RiccatiSolution, taus: np.ndarray, F: np.ndarray) -> np.ndarray:
    lam = sol.core.lam
    c = (-_tanh_over_lam(lam, taus) * sol.m
         - (1.0 - _sech(np.outer(taus, lam), sol.cutoff)) * sol.g0
         - F)
    return c @ sol.core.L.T


def _f_values(sol: RiccatiSolution, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """C' = f(A, B), batched over a leading axis."""
    core, k = sol.core, sol.terms
    dA = np.einsum('nii->ni', A)
    dp, dm = np.diag(core.D_plus), np.diag(core.D_minus)
    return (k.trace0
            + dA @ k.d12
            + B @ core.V_minus
            + k.chi_cost
            + 0.5 * np.sum(k.d23 * dA * dA, axis=1)
            + np.sum(B * dm * dA, axis=1)
            + dA @ k.vt21
            + 0.5 * np.sum(dp * B * B, axis=1)
            + B @ core.Vtilde_minus
            + 0.5 * k.chi_cost2)


def A_at(sol: RiccatiSolution, taus) -> np.ndarray:
    """A at an array of tau = T - t values, shape (n, d, d)."""
    taus = _as_taus(taus)
    lam, L = sol.core.lam, sol.core.L
    vals = lam * np.tanh(np.outer(taus, lam))
    return 0.5 * np.einsum('ik,nk,jk->nij', L, vals, L)


def B_at(sol: RiccatiSolution, taus) -> np.ndarray:
    """B at an array of tau values, shape (n, d)."""
    taus = _as_taus(taus)
    return _B_from_F(sol, taus, _F_local(sol, taus))


def C_at(sol: RiccatiSolution, taus) -> np.ndarray:
    """C at an array of tau values, shape (n,)."""
    taus = _as_taus(taus)
    j = _anchors(sol, taus)
    tj = sol.taus[j]
    s = taus - tj
    mid = tj + 0.5 * s
    f_mid = _f_values(sol, A_at(sol, mid), B_at(sol, mid))
    f_end = _f_values(sol, A_at(sol, taus), B_at(sol, taus))
    return sol.C_grid[j] - s / 6.0 * (sol.f_grid[j] + 4.0 * f_mid + f_end)


def solve(spec, coeffs: Optional[Sequence[QuadraticCoeffs]] = None,
          nodes: Optional[int] = None) -> RiccatiSolution:
    """
    Build the closed-form solution for a spec.

    Args:
        spec: MarketSpec or CheckedSpec
        coeffs: Quadratic coefficients per channel (default: Taylor at p = 0)
        nodes: Minimum number of tau-grid nodes on [0, T]

    Returns:
        RiccatiSolution with precomputed quadrature grids
    """
    spec = validate(spec)
    coeffs = tuple(coeffs) if coeffs is not None else build_coeffs(spec)
    table = moments(spec, coeffs)
    core = build_core(spec, table)
    nodes = resolve(nodes, 'closedform', 'nodes')
    if nodes < 2:
        raise ValueError(f"nodes must be at least 2, got {nodes}")

    T = float(spec.horizon)
    lam = core.lam
    lam_max = float(lam.max()) if lam.size else 0.0
    per_rate = get_default('closedform', 'nodes_per_unit_rate')
    segments = 0 if T == 0 else max(nodes - 1, int(math.ceil(per_rate * lam_max * T)))
    taus = np.linspace(0.0, T, segments + 1)

    P = core.A_hat.eigenvectors
    sol = RiccatiSolution(
        spec=spec, coeffs=coeffs, moments=table, core=core,
        terms=_constant_terms(table), horizon=T, mu=spec.mu.copy(),
        m=(np.diag(core.D_plus_sqrt) * spec.mu) @ P,
        g0=(np.diag(core.D_plus_inv_sqrt) * (core.V_minus + core.Vtilde_minus)) @ P,
        cutoff=float(get_default('closedform', 'hyperbolic_cutoff')),
        taus=taus,
    )

    F = np.zeros((segments + 1, spec.d))
    lo, hi = taus[:-1], taus[1:]
    mid = 0.5 * (lo + hi)
    h = hi - lo
    if segments and np.any(np.diag(core.D_minus) != 0):
        incr = (h / 6.0)[:, None] * (
            _kernel(lam, lo, hi) * _g_A(sol, lo)
            + 4.0 * _kernel(lam, mid, hi) * _g_A(sol, mid)
            + _kernel(lam, hi, hi) * _g_A(sol, hi)
        )
        ratio = _ratio(lam, lo, hi)
        for j in range(segments):
            F[j + 1] = ratio[j] * F[j] + incr[j]
    sol = replace(sol, F_grid=F)

    f_nodes = _f_values(sol, A_at(sol, taus), _B_from_F(sol, taus, F))
    C = np.zeros(segments + 1)
    if segments:
        f_mid = _f_values(sol, A_at(sol, mid), B_at(sol, mid))
        C[1:] = -np.cumsum(h / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:]))
    logger.debug("closed form: d=%d, T=%g, %d segments, max lambda %.4g",
                 spec.d, T, segments, lam_max)
    return replace(sol, f_grid=f_nodes, C_grid=C)


# =============================================================================
# EVALUATION IN t
# =============================================================================

def _tau(sol: RiccatiSolution, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any((t < 0) | (t > sol.horizon)) or not np.all(np.isfinite(t)):
        raise ValueError(f"t must lie in [0, T] = [0, {sol.horizon}], got {t.tolist()}")
    return np.maximum(sol.horizon - t, 0.0)


def eval_A(sol: RiccatiSolution, t: float) -> np.ndarray:
    return A_at(sol, _tau(sol, t))[0]


def eval_B(sol: RiccatiSolution, t: float) -> np.ndarray:
    return B_at(sol, _tau(sol, t))[0]


def eval_C(sol: RiccatiSolution, t: float) -> float:
    return float(C_at(sol, _tau(sol, t))[0])


def integral_A(sol: RiccatiSolution, t: float) -> np.ndarray:
    """Integral of A(s) over s in [t, T], via log-cosh."""
    tau = _tau(sol, t)[0]
    lam, L = sol.core.lam, sol.core.L
    vals = _logcosh(lam * tau, sol.cutoff)
    return 0.5 * (L * vals) @ L.T


def _quadratic(A: np.ndarray, B: np.ndarray, C: float, q: np.ndarray) -> float:
    return float(-q @ A @ q - q @ B - C)


def theta_check(sol: RiccatiSolution, t: float, q) -> float:
    """Proxy value -q'A(t)q - q'B(t) - C(t)."""
    q = np.asarray(q, dtype=float)
    return _quadratic(eval_A(sol, t), eval_B(sol, t), eval_C(sol, t), q)


def riccati_rhs(sol: RiccatiSolution, t: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """(A', B', C') at t from the Riccati system, evaluated at the closed-form A(t), B(t)."""
    core = sol.core
    A, B = eval_A(sol, t), eval_B(sol, t)
    dA_diag = np.diag(A)
    dA = 2.0 * A @ core.D_plus @ A - 0.5 * core.gamma * core.cov
    dB = (sol.mu
          + 2.0 * A @ (core.V_minus + core.Vtilde_minus)
          + 2.0 * A @ (core.D_minus @ dA_diag)
          + 2.0 * A @ core.D_plus @ B)
    dC = float(_f_values(sol, A[None], B[None])[0])
    return dA, dB, dC


def proxy_residual(sol: RiccatiSolution, spec, t: float, q, step: float = 1e-5) -> float:
    """
    Residual of the quadratic-Hamiltonian HJ equation at (t, q).

    The time derivative is a central difference of theta_check; neighbor
    values theta(t, q +/- z e_i) are evaluated from the same closed form.
    No risk-limit gating: the proxy equation lives on the whole lattice.
    """
    spec = validate(spec)
    q = np.asarray(q, dtype=float)
    T = sol.horizon
    lo, hi = max(0.0, t - step), min(T, t + step)
    if hi <= lo:
        raise ValueError("proxy_residual needs T > 0")
    dtheta = (theta_check(sol, hi, q) - theta_check(sol, lo, q)) / (hi - lo)

    A, B, C = eval_A(sol, t), eval_B(sol, t), eval_C(sol, t)
    theta_q = _quadratic(A, B, C, q)
    ham = 0.0
    for ch, c in zip(spec.channels, sol.coeffs):
        neighbor = q + spec.jumps[ch.index]
        p = (theta_q - _quadratic(A, B, C, neighbor) + ch.cost) / ch.size
        ham += ch.weight * ch.size * float(c.value(p))
    return dtheta + float(sol.mu @ q) - 0.5 * sol.core.gamma * float(q @ sol.core.cov @ q) + ham


# =============================================================================
# ERGODIC LIMITS
# =============================================================================

@dataclass(frozen=True)
class AsymptoticLimits:
    A_inf: np.ndarray
    B_inf: Optional[np.ndarray]
    C_rate: Optional[float]
    image_condition_ok: bool
    Gamma: np.ndarray
    gamma: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'A_inf': self.A_inf.tolist(),
            'B_inf': self.B_inf.tolist() if self.B_inf is not None else None,
            'C_rate': self.C_rate,
            'image_condition_ok': self.image_condition_ok,
            'Gamma': self.Gamma.tolist(),
        }


def asymptotics(sol: RiccatiSolution, image_tol: Optional[float] = None) -> AsymptoticLimits:
    """
    T -> infinity limits of A(0), B(0) and C(0)/T.

    B_inf and C_rate exist only when D+^{1/2} mu lies in the image of A_hat;
    otherwise they are withheld and image_condition_ok is False.
    """
    image_tol = resolve(image_tol, 'closedform', 'image_tol')
    core = sol.core
    ds, dis = np.diag(core.D_plus_sqrt), np.diag(core.D_plus_inv_sqrt)
    A_inf = 0.5 * math.sqrt(core.gamma) * core.Gamma
    proj = range_projector(core.A_hat)
    v = ds * sol.mu
    outside = float(np.linalg.norm(v - proj @ v))
    ok = outside <= image_tol * float(np.linalg.norm(v))
    if not ok:
        logger.warning("drift outside the image of A_hat (residual %.3e): "
                       "no constant asymptotic quotes", outside)
        return AsymptoticLimits(A_inf=A_inf, B_inf=None, C_rate=None,
                                image_condition_ok=False, Gamma=core.Gamma, gamma=core.gamma)

    pinv = pseudo_inverse(core.A_hat)
    dm = np.diag(core.D_minus)
    forcing = core.V_minus + core.Vtilde_minus + dm * np.diag(A_inf)
    B_inf = -dis * (pinv @ v) - dis * (proj @ (dis * forcing))
    C_rate = -float(_f_values(sol, A_inf[None], B_inf[None])[0])
    return AsymptoticLimits(A_inf=A_inf, B_inf=B_inf, C_rate=C_rate,
                            image_condition_ok=True, Gamma=core.Gamma, gamma=core.gamma)


def heuristic_value(limits: AsymptoticLimits, q) -> float:
    """Stationary state ranking -q'A_inf q - q'B_inf."""
    if limits.B_inf is None:
        raise UnsupportedConfigurationError(
            "heuristic_value needs B_inf, which does not exist when the image condition fails"
        )
    q = np.asarray(q, dtype=float)
    return float(-q @ limits.A_inf @ q - q @ limits.B_inf)


def export_frame(sol: RiccatiSolution, times: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Samples of A, B, C: columns t, A_i_j (row-major), B_i, C."""
    if times is None:
        times = np.linspace(0.0, sol.horizon, get_default('closedform', 'sample_points'))
    times = np.asarray(times, dtype=float)
    taus = _tau(sol, times)
    A, B, C = A_at(sol, taus), B_at(sol, taus), C_at(sol, taus)
    d = sol.d
    frame = {'t': times}
    for i in range(d):
        for j in range(d):
            frame[f'A_{i + 1}_{j + 1}'] = A[:, i, j]
    for i in range(d):
        frame[f'B_{i + 1}'] = B[:, i]
    frame['C'] = C
    return pd.DataFrame(frame)
