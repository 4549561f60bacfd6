import math

import numpy as np
import pandas as pd
import pytest

from mmapprox import closedform, exact, sim
from mmapprox.errors import LatticeError, UnsupportedConfigurationError
from evals.helpers import load_doc, load_reference_spec, spec_of


def wide_ref1():
    doc = load_doc('ref1')
    doc['assets'][0]['risk_limit'] = 1000.0
    return spec_of(doc)


def test_constant_offsets_trade_at_the_curve_rate():
    spec = wide_ref1()
    results = sim.simulate(spec, sim.ConstantOffsets(spec, [1.0, 1.0]), n_paths=4000, seed=11)
    counts = np.array([len(r.trades) for r in results])
    expected = 2.0 * math.exp(-1.0) * spec.horizon
    assert abs(counts.mean() - expected) < 3 * math.sqrt(expected / len(counts))


def test_inventory_never_leaves_the_box():
    doc = load_doc('ref1')
    doc['assets'][0]['risk_limit'] = 2.0
    spec = spec_of(doc)
    results = sim.simulate(spec, sim.GreedyProxy(closedform.solve(spec)), n_paths=300, seed=2)
    for r in results:
        assert np.all(np.abs(r.inventory) <= 2.0)
    summary = sim.summary(results, spec, 'greedy-proxy')
    assert summary['max_abs_inventory'][0] <= 2.0


def test_same_seed_same_trades_on_any_thread_count(monkeypatch):
    spec = load_reference_spec('ref2')
    strategy = sim.GreedyProxy(closedform.solve(spec))
    monkeypatch.setenv('MM_THREADS', '1')
    one = sim.trades_frame(sim.simulate(spec, strategy, n_paths=120, seed=4, batch_size=25), spec.names)
    monkeypatch.setenv('MM_THREADS', '4')
    many = sim.trades_frame(sim.simulate(spec, strategy, n_paths=120, seed=4, batch_size=25), spec.names)
    pd.testing.assert_frame_equal(one, many)
    assert len(one) > 0


def test_cash_and_inventory_accounting():
    spec = load_reference_spec('general2')
    results = sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=50, seed=8, q0=[1.0, -2.0])
    for r in results:
        assert r.X_T == pytest.approx(sum(t.cash_delta for t in r.trades), abs=1e-9)
        q = np.array([1.0, -2.0])
        for trade in r.trades:
            sign = 1.0 if trade.side == 'bid' else -1.0
            ch = next(c for c in spec.channels if c.asset == trade.asset and c.tier == trade.tier
                      and c.side == trade.side and c.size == trade.size)
            assert trade.cash_delta == pytest.approx(
                -sign * trade.mid * trade.size + trade.offset * trade.size - ch.cost)
            assert trade.price == pytest.approx(trade.mid - sign * trade.offset)
            q[trade.asset] += sign * trade.size
        assert np.allclose(q, r.q_T)
        assert np.allclose(r.inventory[-1], r.q_T)
        assert r.wealth == pytest.approx(r.X_T + float(r.q_T @ r.S_T))
        assert np.all(np.diff(r.times) >= 0)


def test_objective_a_is_negative():
    spec = load_reference_spec('ref1', 'objective="A"')
    results = sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=200, seed=1)
    mean, stderr = sim.evaluate_objective(results, spec)
    assert mean < 0 and stderr >= 0


def test_far_quotes_never_trade():
    spec = load_reference_spec('ref1')
    results = sim.simulate(spec, sim.ConstantOffsets(spec, [50.0, 50.0]), n_paths=100, seed=3)
    assert all(not r.trades for r in results)
    mean, stderr = sim.evaluate_objective(results, spec)
    assert mean == 0.0 and stderr == 0.0


def test_symmetric_market_has_no_inventory_bias():
    spec = load_reference_spec('ref1')
    results = sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=4000, seed=21)
    q_T = np.array([r.q_T[0] for r in results])
    assert abs(q_T.mean()) < 4 * q_T.std(ddof=1) / math.sqrt(len(q_T))


def test_greedy_proxy_beats_the_myopic_baseline():
    # volatile enough that the running inventory penalty dominates spread income
    spec = load_reference_spec('ref2_risk')
    greedy = sim.simulate(spec, sim.GreedyProxy(closedform.solve(spec)), n_paths=10000, seed=17)
    baseline = sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=10000, seed=17)
    g_mean, g_err = sim.evaluate_objective(greedy, spec)
    b_mean, b_err = sim.evaluate_objective(baseline, spec)
    assert g_mean - b_mean > 3 * math.hypot(g_err, b_err)


def test_greedy_exact_and_asymptotic_strategies_run():
    spec = load_reference_spec('ref1')
    sol = closedform.solve(spec)
    for strategy in (sim.GreedyExact(exact.solve_hj(spec, dt=0.01)),
                     sim.Asymptotic(closedform.asymptotics(sol), spec)):
        results = sim.simulate(spec, strategy, n_paths=100, seed=5)
        assert len(results) == 100
        assert sim.summary(results, spec, strategy.name)['strategy'] == strategy.name


def test_greedy_exact_offsets_withdraw_at_the_limit():
    spec = load_reference_spec('ref1')
    strategy = sim.GreedyExact(exact.solve_hj(spec, dt=0.01))
    offsets = strategy.offsets([0.0, 0.0], [[10.0], [0.0]])
    assert np.isnan(offsets[0, 0]) and np.isfinite(offsets[0, 1])
    assert np.all(np.isfinite(offsets[1]))
    rates = strategy.rates([0.0], [[10.0]])
    assert rates[0, 0] == 0.0 and rates[0, 1] > 0.0


def test_strategy_bound_to_another_spec_is_rejected():
    strategy = sim.GreedyProxy(closedform.solve(load_reference_spec('ref1')))
    with pytest.raises(UnsupportedConfigurationError, match="different spec"):
        sim.simulate(load_reference_spec('ref2'), strategy, n_paths=10, seed=1)


def test_bad_arguments():
    spec = load_reference_spec('ref1')
    with pytest.raises(LatticeError):
        sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=10, seed=1, q0=[11.0])
    with pytest.raises(ValueError, match="n_paths"):
        sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=0, seed=1)
    with pytest.raises(UnsupportedConfigurationError):
        sim.ConstantOffsets(spec, [1.0])


def test_zero_horizon_paths_stand_still():
    spec = load_reference_spec('ref1', 'horizon=0.0')
    results = sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=5, seed=1, q0=[2.0])
    assert all(not r.trades and r.wealth == pytest.approx(200.0) for r in results)


def test_reports():
    spec = load_reference_spec('ref2')
    results = sim.simulate(spec, sim.ConstantOffsets.baseline(spec), n_paths=40, seed=6)
    frame = sim.trades_frame(results, spec.names)
    assert list(frame.columns) == ['path', 'time', 'asset', 'tier', 'side', 'size',
                                   'offset', 'mid', 'price', 'cash_delta']
    assert set(frame['asset']) <= {'BOND5Y', 'BOND7Y'}
    summary = sim.summary(results, spec, 'constant')
    assert summary['label'] == sim.EXPERIMENT_LABEL
    assert summary['n_paths'] == 40
    assert summary['mean_trades'] == pytest.approx(len(frame) / 40)
    assert len(summary['mean_terminal_inventory']) == 2
