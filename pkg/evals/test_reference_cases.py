"""
Golden reference quantities from evals/test_cases.csv.

Each row names a spec in data/, optional key=value overrides of top-level
spec fields, the quantity to compute and how to validate it.
"""

import csv
from typing import Any, Callable, Dict, List

import numpy as np

from mmapprox import closedform, exact, quotes
from evals.helpers import EVALS_DIR, load_reference_spec
from evals.validators import ValueValidator, assert_valid

TEST_CASES_PATH = EVALS_DIR / "test_cases.csv"


def load_test_cases() -> List[Dict[str, str]]:
    with open(TEST_CASES_PATH, 'r') as f:
        return list(csv.DictReader(f))


def _origin(spec):
    return np.zeros(spec.d)


QUANTITIES: Dict[str, Callable[[Any], Any]] = {
    'exact_theta_origin': lambda spec: exact.query_theta(exact.solve_hj(spec), 0.0, _origin(spec)),
    'd_plus': lambda spec: closedform.solve(spec).core.D_plus[0, 0],
    'gamma_matrix': lambda spec: closedform.solve(spec).core.Gamma[0, 0],
    'a_inf': lambda spec: closedform.asymptotics(closedform.solve(spec)).A_inf[0, 0],
    'a_start': lambda spec: closedform.eval_A(closedform.solve(spec), 0.0)[0, 0],
    'half_spread': lambda spec: quotes.spread_skew(
        closedform.asymptotics(closedform.solve(spec)), spec, _origin(spec))[0][0],
    'skew_origin': lambda spec: max(abs(s) for _, s in quotes.spread_skew(
        closedform.asymptotics(closedform.solve(spec)), spec, _origin(spec))),
    'bid_offset_at_horizon': lambda spec: quotes.greedy_quotes(
        quotes.ProxySource(closedform.solve(spec)), spec, spec.horizon, _origin(spec)).offset(0, 'bid'),
    'channel_count': lambda spec: len(spec.channels),
    'quote_columns': lambda spec: list(quotes.greedy_quotes(
        quotes.ProxySource(closedform.solve(spec)), spec, 0.0, _origin(spec)).to_frame(spec.names).columns),
}


def evaluate_case(case: Dict[str, str]) -> Dict[str, Any]:
    """Compute one golden quantity and validate it."""
    spec = load_reference_spec(case['spec'], case.get('overrides') or '')
    actual = QUANTITIES[case['quantity']](spec)
    answer_type = case['answer_type']
    if answer_type == 'numeric':
        tolerance = float(case['tolerance']) if case['tolerance'] else 1e-10
        return ValueValidator.validate_numeric(actual, case['expected_value'], tolerance)
    if answer_type == 'count':
        return ValueValidator.validate_count(actual, case['expected_value'])
    if answer_type == 'contains':
        return ValueValidator.validate_contains(actual, case['expected_value'])
    return {"passed": False, "error": f"Unknown answer_type: {answer_type}"}


def test_every_quantity_is_known():
    for case in load_test_cases():
        assert case['quantity'] in QUANTITIES, case['case_id']


def test_reference_cases():
    failures = []
    for case in load_test_cases():
        result = evaluate_case(case)
        if not result['passed']:
            failures.append((case['case_id'], result))
    assert not failures, failures


def test_unknown_answer_type_fails():
    case = {'spec': 'ref1', 'overrides': '', 'quantity': 'channel_count',
            'expected_value': '2', 'answer_type': 'fuzzy', 'tolerance': ''}
    assert evaluate_case(case)['passed'] is False


def test_override_parsing():
    spec = load_reference_spec('ref1', 'gamma=0; horizon=2.5')
    assert spec.gamma == 0
    assert spec.horizon == 2.5
    assert_valid(ValueValidator.validate_count(len(spec.channels), '2'))


def test_numeric_validator():
    assert_valid(ValueValidator.validate_numeric(0.1 + 0.2, '0.3', 1e-12))
    result = ValueValidator.validate_numeric(1.5, '1.0', 0.1)
    assert result['passed'] is False and result['difference'] == 0.5
    assert ValueValidator.validate_numeric(float('nan'), '1.0', 0.1)['passed'] is False
    assert ValueValidator.validate_numeric(None, '1.0', 0.1)['passed'] is False
