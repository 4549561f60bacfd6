"""
Market specification: intensity curves, client tiers, size distributions
and the validated spec every solver works from.

Specs are read from JSON documents (schema in config/spec_schema.yaml).
A base-model asset declares its bid/ask intensity curves directly; a
general-model asset declares tiers, each with its own curves, discrete
size distributions and fixed costs. canonicalize() rewrites base-model
assets as a single tier with a Dirac size distribution at the lattice
unit and zero costs, so the rest of the package has a single code path.
"""

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from mmapprox.errors import NotSymmetricError, SpecValidationError
from mmapprox.linalg import sym_eig
from mmapprox.settings import get_default, load_spec_schema

OBJECTIVES = ('A', 'B')
SIDES = ('bid', 'ask')


# =============================================================================
# INTENSITY CURVES
# =============================================================================

class IntensityCurve(ABC):
    """Base class for execution-intensity curves Lambda(delta)."""

    kind: str = ''

    @abstractmethod
    def intensity(self, delta):
        """
        Evaluate the curve.

        Args:
            delta: Quote offset (scalar or array)

        Returns:
            Arrival rate(s), same shape as delta
        """
        pass

    @property
    @abstractmethod
    def decay_hint(self) -> float:
        """Typical decay rate (1/price), used to scale finite-difference steps."""
        pass

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        pass

    @classmethod
    def can_handle(cls, doc: Dict[str, Any]) -> bool:
        """Whether a JSON curve document describes this kind of curve."""
        return doc.get('kind', '').lower() == cls.kind

    @classmethod
    @abstractmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'IntensityCurve':
        pass

    def __call__(self, delta):
        return self.intensity(delta)


@dataclass(frozen=True)
class ExponentialIntensity(IntensityCurve):
    """Lambda(delta) = scale * exp(-decay * delta)."""

    scale: float
    decay: float
    kind = 'exponential'

    def __post_init__(self):
        if not (self.scale > 0 and self.decay > 0):
            raise SpecValidationError(
                f"Exponential intensity needs scale > 0 and decay > 0, "
                f"got scale={self.scale}, decay={self.decay}"
            )

    def intensity(self, delta):
        return self.scale * np.exp(-self.decay * np.asarray(delta, dtype=float))

    @property
    def decay_hint(self) -> float:
        return self.decay

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'scale': self.scale, 'decay': self.decay}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'ExponentialIntensity':
        return cls(scale=float(doc['scale']), decay=float(doc['decay']))


@dataclass(frozen=True)
class LogisticIntensity(IntensityCurve):
    """Lambda(delta) = scale / (1 + exp(decay * (delta - center)))."""

    scale: float
    decay: float
    center: float = 0.0
    kind = 'logistic'

    def __post_init__(self):
        if not (self.scale > 0 and self.decay > 0):
            raise SpecValidationError(
                f"Logistic intensity needs scale > 0 and decay > 0, "
                f"got scale={self.scale}, decay={self.decay}"
            )

    def intensity(self, delta):
        x = self.decay * (np.asarray(delta, dtype=float) - self.center)
        # scale * sigmoid(-x), written to avoid overflow for large |x|
        return self.scale * np.exp(-np.logaddexp(0.0, x))

    @property
    def decay_hint(self) -> float:
        return self.decay

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'scale': self.scale, 'decay': self.decay, 'center': self.center}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'LogisticIntensity':
        return cls(scale=float(doc['scale']), decay=float(doc['decay']),
                   center=float(doc.get('center', 0.0)))


@dataclass(frozen=True)
class TabulatedIntensity(IntensityCurve):
    """
    Sampled intensity curve.

    Inside the table the curve is a monotone cubic (PCHIP) interpolant;
    outside it continues as exponentials fitted to the two end samples on
    each side, so the curve stays positive and strictly decreasing.
    """

    deltas: Tuple[float, ...]
    values: Tuple[float, ...]
    kind = 'tabulated'

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if d.ndim != 1 or d.shape != v.shape or d.size < 2:
            raise SpecValidationError(
                "Tabulated intensity needs two equally long lists `deltas` and `values` "
                "with at least two samples"
            )
        if np.any(np.diff(d) <= 0):
            raise SpecValidationError("Tabulated intensity: `deltas` must be strictly increasing")
        if np.any(v <= 0):
            raise SpecValidationError("Tabulated intensity: `values` must be positive")
        if np.any(np.diff(v) >= 0):
            raise SpecValidationError(
                "Tabulated intensity is not strictly decreasing; "
                "execution intensities must decay with the quote offset"
            )

    @cached_property
    def _interpolant(self) -> PchipInterpolator:
        return PchipInterpolator(np.asarray(self.deltas), np.asarray(self.values), extrapolate=False)

    @cached_property
    def _tails(self) -> Tuple[float, float]:
        d, v = self.deltas, self.values
        left = math.log(v[0] / v[1]) / (d[1] - d[0])
        right = math.log(v[-2] / v[-1]) / (d[-1] - d[-2])
        return left, right

    def intensity(self, delta):
        x = np.asarray(delta, dtype=float)
        lo, hi = self.deltas[0], self.deltas[-1]
        k_left, k_right = self._tails
        inside = np.clip(x, lo, hi)
        out = np.asarray(self._interpolant(inside), dtype=float)
        out = np.where(x < lo, self.values[0] * np.exp(-k_left * (x - lo)), out)
        out = np.where(x > hi, self.values[-1] * np.exp(-k_right * (x - hi)), out)
        return out if out.ndim else float(out)

    @property
    def decay_hint(self) -> float:
        return self._tails[1]

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'deltas': list(self.deltas), 'values': list(self.values)}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'TabulatedIntensity':
        return cls(deltas=tuple(float(x) for x in doc['deltas']),
                   values=tuple(float(x) for x in doc['values']))


CURVE_KINDS = [ExponentialIntensity, LogisticIntensity, TabulatedIntensity]


def build_curve(doc: Dict[str, Any]) -> IntensityCurve:
    """
    Detect the curve kind of a JSON curve document and build it.

    Raises:
        SpecValidationError: If no curve kind matches or a parameter is missing
    """
    if not isinstance(doc, dict):
        raise SpecValidationError(f"Intensity curve must be an object, got {doc!r}")
    for curve_cls in CURVE_KINDS:
        if curve_cls.can_handle(doc):
            try:
                return curve_cls.from_dict(doc)
            except KeyError as e:
                raise SpecValidationError(
                    f"{curve_cls.kind} intensity curve is missing parameter {e}"
                ) from None
    kinds = ', '.join(c.kind for c in CURVE_KINDS)
    raise SpecValidationError(f"Unknown intensity kind {doc.get('kind')!r}; expected one of: {kinds}")


# =============================================================================
# SPEC TYPES
# =============================================================================

@dataclass(frozen=True)
class SizeDist:
    """Finite distribution of request sizes: ((size, weight), ...)."""

    atoms: Tuple[Tuple[float, float], ...]

    @classmethod
    def dirac(cls, size: float) -> 'SizeDist':
        return cls(atoms=((float(size), 1.0),))


@dataclass(frozen=True)
class SideSpec:
    intensity: IntensityCurve
    sizes: Optional[SizeDist] = None
    cost: float = 0.0


@dataclass(frozen=True)
class TierSpec:
    bid: SideSpec
    ask: SideSpec
    name: str = 'tier1'

    def side(self, side: str) -> SideSpec:
        return self.bid if side == 'bid' else self.ask


@dataclass(frozen=True)
class AssetSpec:
    name: str
    sigma: float
    size: float
    risk_limit: float
    price: float = 100.0
    bid_intensity: Optional[IntensityCurve] = None
    ask_intensity: Optional[IntensityCurve] = None
    tiers: Tuple[TierSpec, ...] = ()

    @property
    def is_base(self) -> bool:
        return self.bid_intensity is not None


@dataclass(frozen=True)
class MarketSpec:
    assets: Tuple[AssetSpec, ...]
    correlation: Tuple[Tuple[float, ...], ...]
    gamma: float
    objective: str
    horizon: float
    drift: Optional[Tuple[float, ...]] = None
    delta_floor: Optional[float] = None


@dataclass(frozen=True)
class Channel:
    """One execution channel: (asset, tier, side, size atom)."""

    index: int
    asset: int
    tier: int
    side: str
    size: float
    weight: float
    cost: float
    curve: IntensityCurve

    @property
    def sign(self) -> int:
        """+1 for bid (inventory goes up), -1 for ask."""
        return 1 if self.side == 'bid' else -1


@dataclass(frozen=True)
class CheckedSpec:
    """Validated, canonical market spec. Build with validate()."""

    spec: MarketSpec
    general: bool = False

    @property
    def d(self) -> int:
        return len(self.spec.assets)

    @cached_property
    def names(self) -> List[str]:
        return [a.name for a in self.spec.assets]

    @cached_property
    def sigma(self) -> np.ndarray:
        return np.array([a.sigma for a in self.spec.assets])

    @cached_property
    def correlation(self) -> np.ndarray:
        return np.array(self.spec.correlation, dtype=float)

    @cached_property
    def cov(self) -> np.ndarray:
        """Sigma = (rho_ij sigma_i sigma_j)."""
        s = self.sigma
        return self.correlation * np.outer(s, s)

    @cached_property
    def mu(self) -> np.ndarray:
        return np.array(self.spec.drift, dtype=float)

    @cached_property
    def z(self) -> np.ndarray:
        return np.array([a.size for a in self.spec.assets])

    @cached_property
    def Q(self) -> np.ndarray:
        return np.array([a.risk_limit for a in self.spec.assets])

    @cached_property
    def prices(self) -> np.ndarray:
        return np.array([a.price for a in self.spec.assets])

    @property
    def gamma(self) -> float:
        return self.spec.gamma

    @property
    def objective(self) -> str:
        return self.spec.objective

    @property
    def horizon(self) -> float:
        return self.spec.horizon

    @property
    def floor(self) -> Optional[float]:
        return self.spec.delta_floor

    @property
    def xi(self) -> float:
        return effective_xi(self)

    def tiers(self, asset: int) -> Tuple[TierSpec, ...]:
        return self.spec.assets[asset].tiers

    @cached_property
    def channels(self) -> Tuple[Channel, ...]:
        out = []
        for i, asset in enumerate(self.spec.assets):
            for n, tier in enumerate(asset.tiers):
                for side in SIDES:
                    side_spec = tier.side(side)
                    for size, weight in side_spec.sizes.atoms:
                        out.append(Channel(index=len(out), asset=i, tier=n, side=side,
                                           size=size, weight=weight, cost=side_spec.cost,
                                           curve=side_spec.intensity))
        return tuple(out)

    @cached_property
    def jumps(self) -> np.ndarray:
        """(n_channels, d) inventory change of one execution on each channel."""
        out = np.zeros((len(self.channels), self.d))
        for ch in self.channels:
            out[ch.index, ch.asset] = ch.sign * ch.size
        return out

    def is_symmetric(self) -> bool:
        """Bid and ask sides identical (curve, sizes, cost) in every tier."""
        return all(t.bid == t.ask for a in self.spec.assets for t in a.tiers)


# =============================================================================
# VALIDATION
# =============================================================================

def effective_xi(spec: CheckedSpec) -> float:
    """gamma for objective A (CARA utility), 0 for objective B."""
    return float(spec.gamma) if spec.objective == 'A' else 0.0


def canonicalize(spec: MarketSpec) -> MarketSpec:
    """
    Rewrite a spec in general-model form.

    Base-model assets get one tier with Dirac sizes at the lattice unit and
    zero costs; missing size distributions default to that Dirac; a missing
    drift becomes zeros. Idempotent.
    """
    assets = []
    for asset in spec.assets:
        tiers = asset.tiers
        if asset.is_base and not tiers:
            ask = asset.ask_intensity if asset.ask_intensity is not None else asset.bid_intensity
            tiers = (TierSpec(bid=SideSpec(asset.bid_intensity), ask=SideSpec(ask), name='base'),)
        dirac = SizeDist.dirac(asset.size)
        tiers = tuple(
            replace(t,
                    bid=t.bid if t.bid.sizes is not None else replace(t.bid, sizes=dirac),
                    ask=t.ask if t.ask.sizes is not None else replace(t.ask, sizes=dirac))
            for t in tiers
        )
        assets.append(replace(asset, tiers=tiers))
    drift = spec.drift if spec.drift is not None else tuple(0.0 for _ in spec.assets)
    return replace(spec, assets=tuple(assets), drift=tuple(float(x) for x in drift))


def _is_multiple(value: float, unit: float, tol: float) -> bool:
    ratio = value / unit
    return abs(ratio - round(ratio)) <= tol * max(1.0, abs(ratio))


def _validate_correlation(rho: np.ndarray, d: int) -> None:
    if rho.shape != (d, d):
        raise SpecValidationError(f"correlation must be a {d}x{d} matrix, got shape {rho.shape}")
    if np.any(np.abs(rho) > 1.0 + 1e-12):
        i, j = np.unravel_index(np.argmax(np.abs(rho)), rho.shape)
        raise SpecValidationError(
            f"correlation out of range: rho[{i}][{j}] = {rho[i, j]} (entries must lie in [-1, 1])"
        )
    if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
        raise SpecValidationError(f"correlation must have a unit diagonal, got {np.diag(rho).tolist()}")
    try:
        lam = sym_eig(rho).eigenvalues
    except NotSymmetricError as e:
        raise SpecValidationError(f"correlation matrix is not symmetric: {e}") from None
    tol = get_default('linalg', 'psd_clamp_tol')
    if lam[0] < -tol * max(1.0, float(np.max(np.abs(lam)))):
        raise SpecValidationError(
            f"correlation matrix is not positive semidefinite (smallest eigenvalue {lam[0]:.3e})"
        )


def _validate_side(side: SideSpec, asset: AssetSpec, where: str) -> None:
    lattice_tol = get_default('model', 'lattice_tol')
    weight_tol = get_default('model', 'weight_sum_tol')
    if not isinstance(side.intensity, IntensityCurve):
        raise SpecValidationError(f"{where}: intensity must be an IntensityCurve")
    if not (math.isfinite(side.cost) and side.cost >= 0):
        raise SpecValidationError(f"{where}: fixed cost must be finite and >= 0, got {side.cost}")
    atoms = side.sizes.atoms
    if not atoms:
        raise SpecValidationError(f"{where}: size distribution has no atoms")
    for size, weight in atoms:
        if not size > 0:
            raise SpecValidationError(f"{where}: sizes must be positive, got {size}")
        if not weight > 0:
            raise SpecValidationError(f"{where}: size weights must be positive, got {weight}")
        if not _is_multiple(size, asset.size, lattice_tol):
            raise SpecValidationError(
                f"{where}: size {size} is not a multiple of the lattice unit {asset.size} "
                f"of asset '{asset.name}'"
            )
    total = sum(w for _, w in atoms)
    if abs(total - 1.0) > weight_tol:
        raise SpecValidationError(
            f"{where}: size distribution weights must sum to 1, got {total!r}"
        )


def validate(spec) -> CheckedSpec:
    """
    Validate a market spec and return its immutable canonical form.

    Validating a CheckedSpec returns it unchanged.

    Raises:
        SpecValidationError: On any violated model constraint
    """
    if isinstance(spec, CheckedSpec):
        return spec
    if not spec.assets:
        raise SpecValidationError("spec has no assets")
    d = len(spec.assets)
    lattice_tol = get_default('model', 'lattice_tol')
    general = any(not a.is_base for a in spec.assets)

    if spec.objective not in OBJECTIVES:
        raise SpecValidationError(f"objective must be 'A' or 'B', got {spec.objective!r}")
    if not math.isfinite(spec.gamma) or spec.gamma < 0:
        raise SpecValidationError(f"gamma must be >= 0, got {spec.gamma}")
    if spec.gamma == 0 and spec.objective == 'A':
        raise SpecValidationError("gamma must be > 0 (gamma = 0 is only accepted for objective B)")
    if not math.isfinite(spec.horizon) or spec.horizon < 0:
        raise SpecValidationError(f"horizon must be >= 0, got {spec.horizon}")
    if spec.drift is not None and len(spec.drift) != d:
        raise SpecValidationError(f"drift must have {d} entries, got {len(spec.drift)}")
    if spec.delta_floor is not None and not spec.delta_floor > 0:
        raise SpecValidationError(f"delta_floor must be > 0, got {spec.delta_floor}")
    if general and spec.delta_floor is None:
        raise SpecValidationError(
            "delta_floor is required when assets declare tiers.\n"
            "Add e.g. \"delta_floor\": 5.0 to the spec (quotes are bounded below by -delta_floor)"
        )

    for asset in spec.assets:
        if not asset.sigma > 0:
            raise SpecValidationError(f"asset '{asset.name}': sigma must be > 0, got {asset.sigma}")
        if not asset.size > 0:
            raise SpecValidationError(f"asset '{asset.name}': size must be > 0, got {asset.size}")
        if not asset.risk_limit > 0:
            raise SpecValidationError(f"asset '{asset.name}': risk_limit must be > 0, got {asset.risk_limit}")
        if not _is_multiple(asset.risk_limit, asset.size, lattice_tol):
            raise SpecValidationError(
                f"asset '{asset.name}': risk limit not a multiple of trade size "
                f"(Q={asset.risk_limit}, z={asset.size})"
            )
        if not asset.is_base and not asset.tiers:
            raise SpecValidationError(f"asset '{asset.name}': empty tier list")

    _validate_correlation(np.asarray(spec.correlation, dtype=float), d)

    canonical = canonicalize(spec)
    for asset in canonical.assets:
        for tier in asset.tiers:
            for side in SIDES:
                _validate_side(tier.side(side), asset, f"asset '{asset.name}', tier '{tier.name}', {side}")
    return CheckedSpec(spec=canonical, general=general)


# =============================================================================
# JSON I/O
# =============================================================================

def _parse_side(doc: Dict[str, Any], where: str) -> SideSpec:
    if 'intensity' not in doc:
        raise SpecValidationError(f"{where}: missing `intensity`")
    sizes = None
    if doc.get('sizes') is not None:
        try:
            sizes = SizeDist(atoms=tuple((float(s), float(w)) for s, w in doc['sizes']))
        except (TypeError, ValueError):
            raise SpecValidationError(f"{where}: `sizes` must be a list of [size, weight] pairs") from None
    return SideSpec(intensity=build_curve(doc['intensity']), sizes=sizes,
                    cost=float(doc.get('cost', 0.0)))


def _parse_asset(doc: Dict[str, Any], i: int) -> AssetSpec:
    name = str(doc.get('name', f'asset{i + 1}'))
    try:
        sigma, size, limit = float(doc['sigma']), float(doc['size']), float(doc['risk_limit'])
    except KeyError as e:
        raise SpecValidationError(f"asset '{name}': missing required field {e}") from None

    tiers = ()
    bid = ask = None
    if 'tiers' in doc:
        tiers = tuple(
            TierSpec(bid=_parse_side(t.get('bid', {}), f"asset '{name}' tier {n + 1} bid"),
                     ask=_parse_side(t.get('ask', {}), f"asset '{name}' tier {n + 1} ask"),
                     name=str(t.get('name', f'tier{n + 1}')))
            for n, t in enumerate(doc['tiers'])
        )
        if not tiers:
            raise SpecValidationError(f"asset '{name}': empty tier list")
    elif 'intensity' in doc:
        bid = ask = build_curve(doc['intensity'])
    elif 'bid_intensity' in doc and 'ask_intensity' in doc:
        bid, ask = build_curve(doc['bid_intensity']), build_curve(doc['ask_intensity'])
    else:
        raise SpecValidationError(
            f"asset '{name}': give `intensity`, both `bid_intensity` and `ask_intensity`, or `tiers`"
        )
    return AssetSpec(name=name, sigma=sigma, size=size, risk_limit=limit,
                     price=float(doc.get('price', 100.0)),
                     bid_intensity=bid, ask_intensity=ask, tiers=tiers)


def spec_from_dict(doc: Dict[str, Any]) -> MarketSpec:
    """Build an (unvalidated) MarketSpec from a parsed JSON document."""
    schema = load_spec_schema()['fields']
    unknown = set(doc) - set(schema)
    if unknown:
        raise SpecValidationError(
            f"Unknown top-level key(s) {sorted(unknown)}; allowed: {sorted(schema)}"
        )
    missing = [k for k, info in schema.items() if info.get('required') and k not in doc]
    if missing:
        raise SpecValidationError(f"Spec is missing required key(s): {missing}")

    assets = tuple(_parse_asset(a, i) for i, a in enumerate(doc['assets']))
    try:
        correlation = tuple(tuple(float(x) for x in row) for row in doc['correlation'])
    except TypeError:
        raise SpecValidationError("correlation must be a list of rows") from None
    drift = doc.get('drift')
    floor = doc.get('delta_floor')
    return MarketSpec(
        assets=assets,
        correlation=correlation,
        gamma=float(doc['gamma']),
        objective=str(doc['objective']).upper(),
        horizon=float(doc['horizon']),
        drift=tuple(float(x) for x in drift) if drift is not None else None,
        delta_floor=float(floor) if floor is not None else None,
    )


def _side_to_dict(side: SideSpec) -> Dict[str, Any]:
    out = {'intensity': side.intensity.to_dict(), 'cost': side.cost}
    if side.sizes is not None:
        out['sizes'] = [list(a) for a in side.sizes.atoms]
    return out


def spec_to_dict(spec) -> Dict[str, Any]:
    """JSON-ready document for a MarketSpec or CheckedSpec."""
    if isinstance(spec, CheckedSpec):
        spec = spec.spec
    assets = []
    for a in spec.assets:
        doc = {'name': a.name, 'sigma': a.sigma, 'size': a.size,
               'risk_limit': a.risk_limit, 'price': a.price}
        if a.is_base:
            doc['bid_intensity'] = a.bid_intensity.to_dict()
            doc['ask_intensity'] = (a.ask_intensity or a.bid_intensity).to_dict()
        else:
            doc['tiers'] = [{'name': t.name, 'bid': _side_to_dict(t.bid), 'ask': _side_to_dict(t.ask)}
                            for t in a.tiers]
        assets.append(doc)
    out = {
        'assets': assets,
        'correlation': [list(r) for r in spec.correlation],
        'gamma': spec.gamma,
        'objective': spec.objective,
        'horizon': spec.horizon,
    }
    if spec.drift is not None:
        out['drift'] = list(spec.drift)
    if spec.delta_floor is not None:
        out['delta_floor'] = spec.delta_floor
    return out


def load_spec(path: str) -> MarketSpec:
    """
    Read a market spec JSON file.

    Raises:
        FileNotFoundError: If the file does not exist
        SpecValidationError: If the document does not follow the schema
    """
    with open(path, 'r') as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SpecValidationError(f"{path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SpecValidationError(f"{path}: top level must be a JSON object")
    return spec_from_dict(doc)
