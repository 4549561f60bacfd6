import numpy as np
import pytest

from mmapprox import closedform, exact, mc
from evals.helpers import load_doc, load_reference_spec, spec_of


@pytest.fixture(scope='module')
def ref1():
    spec = load_reference_spec('ref1')
    return spec, closedform.solve(spec)


def tight_spec():
    """ref1 with a small risk box and more volatility, so gating matters."""
    doc = load_doc('ref1')
    doc['assets'][0]['risk_limit'] = 3.0
    doc['assets'][0]['sigma'] = 0.4
    return spec_of(doc)


def test_zero_at_the_horizon(ref1):
    spec, sol = ref1
    est = mc.estimate_eta(spec, None, sol, 1.0, [0.0], n_paths=10, seed=1)
    assert est.mean == 0.0 and est.stderr == 0.0
    assert est.to_dict() == {'mean': 0.0, 'stderr': 0.0, 'n': 10, 'seed': 1,
                             'clamp_events': 0, 'majorant_violations': 0}


def test_argument_checks(ref1):
    spec, sol = ref1
    with pytest.raises(ValueError, match="n_paths"):
        mc.estimate_eta(spec, None, sol, 0.0, [0.0], n_paths=0, seed=1)
    with pytest.raises(ValueError, match="t must lie"):
        mc.estimate_eta(spec, None, sol, 1.5, [0.0], n_paths=10, seed=1)


def test_same_seed_same_estimate_on_any_thread_count(ref1, monkeypatch):
    spec, sol = ref1
    monkeypatch.setenv('MM_THREADS', '1')
    one = mc.estimate_eta(spec, None, sol, 0.0, [1.0], n_paths=600, seed=42, batch_size=100, steps=200)
    monkeypatch.setenv('MM_THREADS', '3')
    many = mc.estimate_eta(spec, None, sol, 0.0, [1.0], n_paths=600, seed=42, batch_size=100, steps=200)
    assert one == many
    other = mc.estimate_eta(spec, None, sol, 0.0, [1.0], n_paths=600, seed=43, batch_size=100, steps=200)
    assert other.mean != one.mean


def test_monte_carlo_matches_lattice_correction():
    spec = tight_spec()
    sol = closedform.solve(spec)
    grid = mc.solve_eta_grid(spec, sol, dt=0.001)
    for q in ([0.0], [2.0]):
        est = mc.estimate_eta(spec, None, sol, 0.0, q, n_paths=20000, seed=9)
        target = exact.query_theta(grid, 0.0, q)
        assert abs(est.mean - target) < 4 * est.stderr + 1e-4
        assert est.majorant_violations == 0


def test_correction_moves_proxy_towards_exact_solution():
    spec = tight_spec()
    sol = closedform.solve(spec)
    eta = mc.solve_eta_grid(spec, sol, dt=0.001)
    theta = exact.solve_hj(spec, dt=0.001)
    states = theta.grid.states
    proxy = np.array([closedform.theta_check(sol, 0.0, q) for q in states])
    exact_values = theta.at(0.0)
    corrected = proxy + eta.at(0.0)
    assert np.max(np.abs(corrected - exact_values)) < np.max(np.abs(proxy - exact_values))


def test_monte_carlo_correction_closes_the_gap_on_a_single_bond(ref1):
    spec, sol = ref1
    est = mc.estimate_eta(spec, None, sol, 0.0, [0.0], n_paths=100000, seed=2024)
    exact_value = exact.query_theta(exact.solve_hj(spec), 0.0, [0.0])
    proxy = closedform.theta_check(sol, 0.0, [0.0])
    before = abs(proxy - exact_value)
    after = abs(proxy + est.mean - exact_value)
    assert after < before
    assert before - after > 3 * est.stderr


def test_lattice_correction_vanishes_at_the_horizon(ref1):
    spec, sol = ref1
    grid = mc.solve_eta_grid(spec, sol, dt=0.01)
    assert np.all(grid.at(1.0) == 0.0)
    assert grid.values.shape[1] == grid.grid.size


def test_stderr_shrinks_with_square_root_of_paths(ref1):
    spec, sol = ref1
    small = mc.estimate_eta(spec, None, sol, 0.0, [2.0], n_paths=2000, seed=5, steps=200)
    large = mc.estimate_eta(spec, None, sol, 0.0, [2.0], n_paths=8000, seed=6, steps=200)
    assert 1.6 < small.stderr / large.stderr < 2.4


def test_jump_counts_match_their_compensator(ref1):
    spec, sol = ref1
    est = mc.estimate_eta(spec, None, sol, 0.0, [0.0], n_paths=5000, seed=3, steps=200)
    assert est.mean_jumps > 0
    assert abs(est.mean_jumps - est.mean_compensator) < 4 * est.jumps_stderr
    assert est.clamp_events == 0


def test_corrected_theta_adds_the_estimate(ref1):
    spec, sol = ref1
    est = mc.CorrectionEstimate(mean=0.003, stderr=0.001, n_paths=100, seed=1)
    assert mc.corrected_theta(sol, est, 0.5, [1.0]) == pytest.approx(
        closedform.theta_check(sol, 0.5, [1.0]) + 0.003)


def test_on_demand_eta_is_cached(ref1):
    spec, sol = ref1
    eta = mc.MonteCarloEta(sol, n_paths=200, seed=8)
    first = eta(0.5, np.array([1.0]))
    assert eta(0.5, [1.0]) == first
    assert len(eta.cache) == 1
    eta(0.5, [2.0])
    assert len(eta.cache) == 2
