"""
Command-line front end.

Every command reads a market spec (JSON), runs one computation and writes
its artifact: CSV for tables, JSON for structured results. Randomized
commands need an explicit --seed.

Exit codes: 0 success, 2 invalid spec or configuration, 3 numerical
failure, 4 I/O failure.
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from mmapprox import closedform, exact, mc, quotes, sim
from mmapprox.errors import UnsupportedConfigurationError
from mmapprox.model import CheckedSpec, load_spec, validate

logger = logging.getLogger(__name__)

COMMANDS = ('solve-closed', 'solve-exact', 'quotes', 'asymptotic', 'mc-correct', 'simulate', 'compare')
SOURCES = ('proxy', 'exact', 'corrected')
STRATEGIES = ('greedy-proxy', 'greedy-exact', 'asymptotic', 'constant')

DEFAULT_OUTPUTS = {
    'solve-closed': 'closed_form.csv',
    'solve-exact': 'exact_theta.csv',
    'quotes': 'quotes.csv',
    'asymptotic': 'asymptotic.json',
    'mc-correct': 'mc_correction.json',
    'simulate': 'trades.csv',
    'compare': 'compare.json',
}


@dataclass
class RunConfig:
    command: str
    spec: str
    output: Optional[str] = None
    t: float = 0.0
    q: Optional[List[float]] = None
    paths: Optional[int] = None
    seed: Optional[int] = None
    dt: Optional[float] = None
    nodes: Optional[int] = None
    points: Optional[int] = None
    source: str = 'proxy'
    strategy: str = 'greedy-proxy'

    @property
    def output_path(self) -> str:
        return self.output or DEFAULT_OUTPUTS[self.command]


# =============================================================================
# HELPERS
# =============================================================================

def _banner(title: str) -> None:
    print("=" * 80)
    print(title)
    print("=" * 80)


def _inventory(config: RunConfig, spec: CheckedSpec) -> np.ndarray:
    if config.q is None:
        return np.zeros(spec.d)
    q = np.asarray(config.q, dtype=float)
    if q.size == 1 and spec.d > 1:
        q = np.full(spec.d, float(q[0]))
    if q.shape != (spec.d,):
        raise ValueError(f"--q needs {spec.d} comma-separated value(s), got {config.q}")
    return q


def _require_seed(config: RunConfig) -> Tuple[int, int]:
    if config.seed is None:
        raise ValueError(f"'{config.command}' is randomized: pass --seed")
    if config.paths is None or config.paths < 1:
        raise ValueError(f"'{config.command}' needs --paths >= 1")
    return config.paths, config.seed


def _prepare_output(path: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    return path


def _write_csv(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(_prepare_output(path), index=False)
    print(f"  → Saved to: {path}")


def _write_json(doc: Dict[str, Any], path: str) -> None:
    with open(_prepare_output(path), 'w') as f:
        json.dump(doc, f, indent=2, default=_json_default)
    print(f"  → Saved to: {path}")


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and math.isinf(value):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def _solve_closed(spec: CheckedSpec, config: RunConfig) -> closedform.RiccatiSolution:
    return closedform.solve(spec, nodes=config.nodes)


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_solve_closed(spec: CheckedSpec, config: RunConfig) -> str:
    sol = _solve_closed(spec, config)
    times = None
    if config.points is not None:
        times = np.linspace(0.0, sol.horizon, config.points)
    frame = closedform.export_frame(sol, times)
    _write_csv(frame, config.output_path)
    q = _inventory(config, spec)
    return f"theta_check(0, {q.tolist()}) = {closedform.theta_check(sol, 0.0, q):.10g}"


def cmd_solve_exact(spec: CheckedSpec, config: RunConfig) -> str:
    theta = exact.solve_hj(spec, dt=config.dt)
    _write_csv(exact.export_frame(theta), config.output_path)
    q = _inventory(config, spec)
    return (f"theta({config.t}, {q.tolist()}) = {exact.query_theta(theta, config.t, q):.10g} "
            f"on {theta.grid.size} states")


def _value_source(spec: CheckedSpec, config: RunConfig) -> quotes.ThetaSource:
    if config.source == 'proxy':
        return quotes.ProxySource(_solve_closed(spec, config))
    if config.source == 'exact':
        return quotes.ExactSource(exact.solve_hj(spec, dt=config.dt))
    if config.source == 'corrected':
        n_paths, seed = _require_seed(config)
        sol = _solve_closed(spec, config)
        return quotes.CorrectedSource(sol, mc.MonteCarloEta(sol, n_paths, seed))
    raise ValueError(f"Unknown --source '{config.source}'; choose from {', '.join(SOURCES)}")


def cmd_quotes(spec: CheckedSpec, config: RunConfig) -> str:
    q = _inventory(config, spec)
    quote_set = quotes.greedy_quotes(_value_source(spec, config), spec, config.t, q)
    frame = quote_set.to_frame(spec.names)
    _write_csv(frame, config.output_path)
    print()
    print(frame.to_markdown(index=False))
    print()
    live = sum(1 for x in quote_set.quotes if not x.withdrawn)
    return f"{live}/{len(quote_set.quotes)} quotes live at t={config.t}, q={q.tolist()} ({config.source})"


def cmd_asymptotic(spec: CheckedSpec, config: RunConfig) -> str:
    sol = _solve_closed(spec, config)
    limits = closedform.asymptotics(sol)
    q = _inventory(config, spec)
    doc: Dict[str, Any] = {'limits': limits.to_dict(), 'q': q.tolist()}
    if limits.image_condition_ok:
        doc['heuristic_value'] = closedform.heuristic_value(limits, q)
        doc['quotes'] = quotes.asymptotic_quotes(limits, spec, q).to_frame(spec.names) \
            .drop(columns='t').to_dict(orient='records')
        try:
            doc['spread_skew'] = quotes.spread_skew_frame(limits, spec, q).to_dict(orient='records')
        except UnsupportedConfigurationError as e:
            doc['spread_skew'] = None
            print(f"  ⊘ spread/skew skipped: {e}")
    else:
        print("  ⚠ image condition fails: no constant asymptotic quotes")
    _write_json(doc, config.output_path)
    return f"image condition {'holds' if limits.image_condition_ok else 'fails'}; C rate = {limits.C_rate}"


def cmd_mc_correct(spec: CheckedSpec, config: RunConfig) -> str:
    n_paths, seed = _require_seed(config)
    q = _inventory(config, spec)
    sol = _solve_closed(spec, config)
    estimate = mc.estimate_eta(spec, None, sol, config.t, q, n_paths, seed)
    proxy = closedform.theta_check(sol, config.t, q)
    doc = {
        't': config.t,
        'q': q.tolist(),
        'theta_check': proxy,
        'eta': estimate.to_dict(),
        'theta_corrected': mc.corrected_theta(sol, estimate, config.t, q),
    }
    _write_json(doc, config.output_path)
    return f"eta = {estimate.mean:.6g} ± {estimate.stderr:.2g} ({n_paths} paths, seed {seed})"


def build_strategy(spec: CheckedSpec, name: str, config: RunConfig) -> sim.QuotingStrategy:
    if name == 'greedy-proxy':
        return sim.GreedyProxy(_solve_closed(spec, config))
    if name == 'greedy-exact':
        return sim.GreedyExact(exact.solve_hj(spec, dt=config.dt))
    if name == 'asymptotic':
        return sim.Asymptotic(closedform.asymptotics(_solve_closed(spec, config)), spec)
    if name == 'constant':
        return sim.ConstantOffsets.baseline(spec)
    raise ValueError(f"Unknown --strategy '{name}'; choose from {', '.join(STRATEGIES)}")


def cmd_simulate(spec: CheckedSpec, config: RunConfig) -> str:
    n_paths, seed = _require_seed(config)
    strategy = build_strategy(spec, config.strategy, config)
    results = sim.simulate(spec, strategy, n_paths, seed, q0=_inventory(config, spec))
    _write_csv(sim.trades_frame(results, spec.names), config.output_path)
    stats = sim.summary(results, spec, strategy.name)
    root, _ = os.path.splitext(config.output_path)
    _write_json(stats, f"{root}_summary.json")
    return (f"{strategy.name}: objective {stats['objective_mean']:.6g} ± {stats['objective_stderr']:.2g} "
            f"[{sim.EXPERIMENT_LABEL}]")


def cmd_compare(spec: CheckedSpec, config: RunConfig) -> str:
    n_paths, seed = _require_seed(config)
    q0 = _inventory(config, spec)
    estimates = {}
    failed = []
    for name in STRATEGIES:
        print(f"Simulating: {name}")
        try:
            strategy = build_strategy(spec, name, config)
            results = sim.simulate(spec, strategy, n_paths, seed, q0=q0)
            estimates[name] = sim.summary(results, spec, name)
            print(f"  ✓ {estimates[name]['objective_mean']:.6g} ± {estimates[name]['objective_stderr']:.2g}\n")
        except (ValueError, ArithmeticError) as e:
            failed.append((name, str(e)))
            print(f"  ✗ Error: {e}\n")

    doc = {'label': sim.EXPERIMENT_LABEL, 'n_paths': n_paths, 'seed': seed,
           'strategies': estimates, 'failed': dict(failed)}
    _write_json(doc, config.output_path)
    if estimates:
        table = pd.DataFrame([{'strategy': k, 'mean': v['objective_mean'], 'stderr': v['objective_stderr'],
                               'trades': v['mean_trades']} for k, v in estimates.items()])
        print()
        print(table.to_markdown(index=False))
    if failed:
        print("\n" + "=" * 80)
        print("FAILED STRATEGIES")
        print("=" * 80)
        for name, error in failed:
            print(f"\n✗ {name}")
            print(f"  Error: {error}")
    if not estimates:
        raise UnsupportedConfigurationError("no strategy could be simulated on this spec")
    return f"{len(estimates)}/{len(STRATEGIES)} strategies evaluated"


HANDLERS = {
    'solve-closed': cmd_solve_closed,
    'solve-exact': cmd_solve_exact,
    'quotes': cmd_quotes,
    'asymptotic': cmd_asymptotic,
    'mc-correct': cmd_mc_correct,
    'simulate': cmd_simulate,
    'compare': cmd_compare,
}


def run(config: RunConfig) -> int:
    """Execute one command; returns the process exit code."""
    _banner(f"MMAPPROX {config.command.upper()}")
    try:
        if not os.path.exists(config.spec):
            raise FileNotFoundError(f"Spec file not found: {config.spec}")
        spec = validate(load_spec(config.spec))
        print(f"\nSpec: {config.spec} ({spec.d} asset(s), objective {spec.objective}, T={spec.horizon})\n")
        message = HANDLERS[config.command](spec, config)
    except OSError as e:
        print(f"  ✗ I/O error: {e}")
        return 4
    except ArithmeticError as e:
        print(f"  ✗ Numerical failure: {e}")
        return 3
    except ValueError as e:
        print(f"  ✗ Invalid spec or configuration: {e}")
        return 2
    print(f"\n✓ {message}")
    print("=" * 80 + "\n")
    return 0


# =============================================================================
# ARGUMENT PARSING
# =============================================================================

def _float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='run_mm.py',
        description="Closed-form quotes, exact and Monte-Carlo checks, and simulation for multi-asset market making",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Proxy quotes at t=0, q=0
  python run_mm.py quotes --spec data/ref1.json --t 0 --q 0

  # First-order correction at the origin
  python run_mm.py mc-correct --spec data/ref1.json --paths 100000 --seed 7

  # Strategy comparison (simulation experiment)
  python run_mm.py compare --spec data/ref2.json --paths 10000 --seed 7
        """
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Log solver progress to stderr')
    sub = parser.add_subparsers(dest='command', required=True)

    def command(name: str, help_text: str, randomized: bool = False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument('--spec', required=True, help='Market spec JSON file')
        p.add_argument('--output', default=None,
                       help=f'Output file (default: {DEFAULT_OUTPUTS[name]})')
        if randomized:
            p.add_argument('--paths', type=int, required=True, help='Number of Monte-Carlo paths')
            p.add_argument('--seed', type=int, required=True, help='Random seed (results are reproducible given it)')
        return p

    p = command('solve-closed', 'Closed-form A, B, C of the quadratic proxy, sampled on [0, T] (CSV)')
    p.add_argument('--nodes', type=int, default=None, help='Simpson nodes on [0, T] (default from defaults.yaml)')
    p.add_argument('--points', type=int, default=None, help='Sample times in the CSV (default from defaults.yaml)')
    p.add_argument('--q', type=_float_list, default=None, help='Inventory for the printed summary, e.g. 0 or 1,-1')

    p = command('solve-exact', 'Exact HJ solution on the inventory lattice (CSV)')
    p.add_argument('--dt', type=float, default=None, help='RK4 time step (default T / 2000)')
    p.add_argument('--t', type=float, default=0.0, help='Time for the printed summary (default 0)')
    p.add_argument('--q', type=_float_list, default=None, help='Inventory for the printed summary, e.g. 0 or 1,-1')

    p = command('quotes', 'Greedy bid/ask quotes at (t, q) (CSV)')
    p.add_argument('--t', type=float, default=0.0, help='Time (default 0)')
    p.add_argument('--q', type=_float_list, default=None, help='Inventory, comma-separated (default 0)')
    p.add_argument('--source', choices=SOURCES, default='proxy', help='Value function behind the quotes (default proxy)')
    p.add_argument('--nodes', type=int, default=None, help='Simpson nodes for the closed form')
    p.add_argument('--dt', type=float, default=None, help='RK4 time step for --source exact')
    p.add_argument('--paths', type=int, default=None, help='Monte-Carlo paths for --source corrected')
    p.add_argument('--seed', type=int, default=None, help='Random seed for --source corrected')

    p = command('asymptotic', 'Stationary limits, quotes and spread/skew (JSON)')
    p.add_argument('--q', type=_float_list, default=None, help='Inventory, comma-separated (default 0)')
    p.add_argument('--nodes', type=int, default=None, help='Simpson nodes for the closed form')

    p = command('mc-correct', 'Monte-Carlo first-order correction eta(t, q) (JSON)', randomized=True)
    p.add_argument('--t', type=float, default=0.0, help='Time (default 0)')
    p.add_argument('--q', type=_float_list, default=None, help='Inventory, comma-separated (default 0)')
    p.add_argument('--nodes', type=int, default=None, help='Simpson nodes for the closed form')

    p = command('simulate', 'Simulate one quoting strategy; trade log (CSV) and summary (JSON)', randomized=True)
    p.add_argument('--strategy', choices=STRATEGIES, default='greedy-proxy', help='Quoting strategy (default greedy-proxy)')
    p.add_argument('--q', type=_float_list, default=None, help='Start inventory (default 0)')
    p.add_argument('--dt', type=float, default=None, help='RK4 time step for greedy-exact')
    p.add_argument('--nodes', type=int, default=None, help='Simpson nodes for the closed form')

    p = command('compare', 'Simulate every strategy and compare objective estimates (JSON)', randomized=True)
    p.add_argument('--q', type=_float_list, default=None, help='Start inventory (default 0)')
    p.add_argument('--dt', type=float, default=None, help='RK4 time step for greedy-exact')
    p.add_argument('--nodes', type=int, default=None, help='Simpson nodes for the closed form')
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        spec=args.spec,
        output=args.output,
        t=getattr(args, 't', 0.0),
        q=getattr(args, 'q', None),
        paths=getattr(args, 'paths', None),
        seed=getattr(args, 'seed', None),
        dt=getattr(args, 'dt', None),
        nodes=getattr(args, 'nodes', None),
        points=getattr(args, 'points', None),
        source=getattr(args, 'source', 'proxy'),
        strategy=getattr(args, 'strategy', 'greedy-proxy'),
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for CLI."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    return run(config_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
