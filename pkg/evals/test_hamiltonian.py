import math

import numpy as np
import pytest

from mmapprox.errors import SpecValidationError
from mmapprox.hamiltonian import (
    QuadraticCoeffs,
    build_coeffs,
    exponential_constant,
    ham_exponential,
    ham_generic,
    hamiltonian,
    hamiltonian_values,
    moments,
    taylor_coeffs,
)
from mmapprox.model import ExponentialIntensity, LogisticIntensity, validate, load_spec
from evals.helpers import DATA_DIR


@pytest.mark.parametrize("xi", [0.0, 0.5, 2.0])
@pytest.mark.parametrize("p", [-0.7, 0.0, 0.4, 1.5])
def test_generic_search_matches_exponential_closed_form(xi, p):
    curve = ExponentialIntensity(1.3, 0.8)
    closed = ham_exponential(curve.scale, curve.decay, xi, 1.0, p)
    numeric = ham_generic(curve, xi, 1.0, p)
    assert numeric.value == pytest.approx(closed.value, rel=1e-9, abs=1e-12)
    assert numeric.argmax_delta == pytest.approx(closed.argmax_delta, abs=1e-5)
    assert numeric.derivative == pytest.approx(closed.derivative, rel=1e-6)


def test_exponential_constants():
    assert exponential_constant(1.0, 0.0, 1.0) == pytest.approx(math.exp(-1.0))
    # (1 + 1/2)^-(1 + 2) for xi z / k = 1/2
    assert exponential_constant(2.0, 1.0, 1.0) == pytest.approx(1.5 ** -3)
    h = ham_exponential(1.0, 1.0, 0.0, 1.0, 0.0)
    assert h.value == pytest.approx(math.exp(-1.0))
    assert h.argmax_delta == pytest.approx(1.0)


def test_binding_floor_returns_floor():
    curve = ExponentialIntensity(1.0, 1.0)
    # unconstrained offset p + 1/k = -2 lies below the floor -1
    closed = ham_exponential(1.0, 1.0, 0.0, 1.0, -3.0, floor=1.0)
    assert closed.argmax_delta == -1.0
    assert closed.value == pytest.approx(math.exp(1.0) * 2.0)
    numeric = ham_generic(curve, 0.0, 1.0, -3.0, floor=1.0)
    assert numeric.argmax_delta == -1.0
    assert numeric.value == pytest.approx(closed.value, rel=1e-12)


def test_hamiltonian_is_decreasing_and_convex():
    curve = LogisticIntensity(2.0, 1.5, 0.3)
    ps = np.linspace(-1.0, 1.0, 9)
    values = np.array([hamiltonian(curve, 0.0, 1.0, p).value for p in ps])
    assert np.all(np.diff(values) < 0)
    assert np.all(np.diff(values, 2) > 0)


def test_vectorized_values_match_scalar():
    for curve in (ExponentialIntensity(1.0, 2.0), LogisticIntensity(1.0, 2.0, 0.1)):
        ps = np.array([-0.5, 0.0, 0.25, 1.0])
        value, deriv = hamiltonian_values(curve, 0.3, 2.0, ps, floor=4.0)
        for p, v, dv in zip(ps, value, deriv):
            h = hamiltonian(curve, 0.3, 2.0, p, floor=4.0)
            assert v == pytest.approx(h.value, rel=1e-12)
            assert dv == pytest.approx(h.derivative, rel=1e-12)


def test_vectorized_values_respect_floor():
    curve = ExponentialIntensity(1.0, 1.0)
    value, deriv = hamiltonian_values(curve, 0.0, 1.0, np.array([-3.0, 0.0]), floor=1.0)
    assert value[0] == pytest.approx(2.0 * math.exp(1.0))
    assert deriv[0] == pytest.approx(-math.exp(1.0))
    assert value[1] == pytest.approx(math.exp(-1.0))


def test_exponential_taylor_coefficients_are_exact():
    c = taylor_coeffs(ExponentialIntensity(1.0, 1.0), 0.0, 1.0)
    e1 = math.exp(-1.0)
    assert (c.alpha0, c.alpha1, c.alpha2) == pytest.approx((e1, -e1, e1))


def test_finite_difference_coefficients_match_derivatives():
    curve = LogisticIntensity(1.5, 2.0, 0.2)
    c = taylor_coeffs(curve, 0.5, 1.0)
    h = 1e-3
    f = [hamiltonian(curve, 0.5, 1.0, x).value for x in (-h, 0.0, h)]
    assert c.alpha0 == pytest.approx(f[1], rel=1e-10)
    assert c.alpha1 == pytest.approx((f[2] - f[0]) / (2 * h), rel=1e-5)
    assert c.alpha2 == pytest.approx((f[2] - 2 * f[1] + f[0]) / (h * h), rel=1e-3)
    assert c.alpha1 < 0 < c.alpha2


def test_quadratic_coeffs_evaluate():
    c = QuadraticCoeffs(1.0, -2.0, 4.0)
    assert c.value(0.5) == pytest.approx(1.0 - 1.0 + 0.5)
    assert c.derivative(0.5) == pytest.approx(0.0)


def test_moment_table_for_general_spec():
    spec = validate(load_spec(str(DATA_DIR / "general2.json")))
    coeffs = build_coeffs(spec)
    assert len(coeffs) == len(spec.channels)
    table = moments(spec, coeffs)
    # Delta_{2,1} on the asset-0 bid side: sum over tiers and atoms of w z alpha2(z)
    expected = sum(ch.weight * ch.size * c.alpha2
                   for ch, c in zip(spec.channels, coeffs) if ch.asset == 0 and ch.side == 'bid')
    assert table.V('bid', 2, 1)[0] == pytest.approx(expected)
    cost_weighted = sum(ch.cost * ch.weight * c.alpha2
                        for ch, c in zip(spec.channels, coeffs) if ch.asset == 1 and ch.side == 'ask')
    assert table.Vt('ask', 2, 0)[1] == pytest.approx(cost_weighted)
    assert table.chi('bid', 0, 1) == pytest.approx(float(np.sum(table.V('bid', 0, 1))))


def test_moment_table_rejects_wrong_length():
    spec = validate(load_spec(str(DATA_DIR / "ref1.json")))
    with pytest.raises(SpecValidationError):
        moments(spec, [QuadraticCoeffs(1.0, -1.0, 1.0)])
