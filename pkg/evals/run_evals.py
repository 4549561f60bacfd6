#!/usr/bin/env python3
"""
Eval Runner for mmapprox

Runs the golden reference cases from test_cases.csv, prints a pass/fail
report and saves it under evals/results/. With --pytest it also runs the
full test suite in evals/.
"""

import argparse
import json
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List

from dotenv import load_dotenv

# Load environment variables from .env (MM_THREADS, MM_DEFAULTS_PATH)
load_dotenv()

SCRIPT_DIR = Path(__file__).parent
PROJECT_ROOT = SCRIPT_DIR.parent
RESULTS_DIR = SCRIPT_DIR / "results"

sys.path.insert(0, str(PROJECT_ROOT))

from evals.test_reference_cases import TEST_CASES_PATH, evaluate_case, load_test_cases  # noqa: E402


class EvalRunner:
    """Evaluates every golden case and collects a report."""

    def __init__(self):
        self.results: List[Dict[str, Any]] = []

    def run_single_test(self, case: Dict[str, str], test_num: int, total_tests: int) -> Dict[str, Any]:
        """Run a single reference case."""
        print(f"\n{'='*80}")
        print(f"Test {test_num}/{total_tests}: {case['case_id']} ({case['quantity']} on {case['spec']})")
        print(f"{'='*80}")

        result = {
            "case_id": case['case_id'],
            "quantity": case['quantity'],
            "spec": case['spec'],
            "overrides": case['overrides'],
            "expected_value": case['expected_value'],
            "answer_type": case['answer_type'],
            "notes": case['notes'],
            "timestamp": datetime.now().isoformat(),
        }

        start = time.perf_counter()
        try:
            validation = evaluate_case(case)
            result["validation"] = validation
            result["passed"] = validation["passed"]
            if result["passed"]:
                print("✅ PASSED")
            else:
                print("❌ FAILED")
                print(f"Validation details: {validation}")
        except (ValueError, ArithmeticError, KeyError) as e:
            result["passed"] = False
            result["error"] = f"{type(e).__name__}: {e}"
            print(f"❌ FAILED - Exception: {result['error']}")
        result["seconds"] = round(time.perf_counter() - start, 3)
        return result

    def run_all_tests(self) -> Dict[str, Any]:
        """Run all reference cases and generate a report."""
        print(f"\n{'#'*80}")
        print("STARTING EVAL RUN")
        print(f"{'#'*80}")
        print(f"Test cases: {TEST_CASES_PATH}")

        test_cases = load_test_cases()
        total_tests = len(test_cases)
        print(f"Total test cases: {total_tests}")

        self.results = [self.run_single_test(case, i, total_tests) for i, case in enumerate(test_cases, 1)]

        passed_tests = sum(1 for r in self.results if r["passed"])
        failed_tests = total_tests - passed_tests
        pass_rate = (passed_tests / total_tests * 100) if total_tests > 0 else 0

        summary = {
            "timestamp": datetime.now().isoformat(),
            "test_cases": str(TEST_CASES_PATH),
            "total_tests": total_tests,
            "passed": passed_tests,
            "failed": failed_tests,
            "pass_rate": round(pass_rate, 1),
            "results": self.results,
        }
        self.save_results(summary)
        self.print_summary(summary)
        return summary

    def save_results(self, summary: Dict[str, Any]) -> None:
        """Save results to a timestamped JSON file."""
        RESULTS_DIR.mkdir(exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        output_path = RESULTS_DIR / f"eval_run_{timestamp}.json"

        with open(output_path, 'w') as f:
            json.dump(summary, f, indent=2, default=str)

        print(f"\n{'='*80}")
        print(f"Results saved to: {output_path}")
        print(f"{'='*80}")

    def print_summary(self, summary: Dict[str, Any]) -> None:
        print(f"\n{'#'*80}")
        print("EVAL SUMMARY")
        print(f"{'#'*80}")
        print(f"Total Tests:  {summary['total_tests']}")
        print(f"Passed:       {summary['passed']} ✅")
        print(f"Failed:       {summary['failed']} ❌")
        print(f"Pass Rate:    {summary['pass_rate']}%")

        if summary['failed'] > 0:
            print(f"\n{'='*80}")
            print("FAILED TESTS:")
            print(f"{'='*80}")
            for result in summary['results']:
                if not result['passed']:
                    print(f"\n❌ {result['case_id']}")
                    print(f"   Expected: {result['expected_value']}")
                    if 'validation' in result:
                        print(f"   Validation: {result['validation']}")
                    if 'error' in result:
                        print(f"   Error: {result['error']}")


def run_test_suite(extra: List[str]) -> int:
    """Run the pytest modules in evals/."""
    import pytest

    print(f"\n{'#'*80}")
    print("RUNNING TEST SUITE")
    print(f"{'#'*80}")
    return int(pytest.main([str(SCRIPT_DIR), "-q", *extra]))


def main(argv: List[str] = None) -> int:
    parser = argparse.ArgumentParser(description="Run the mmapprox reference evals")
    parser.add_argument('--pytest', action='store_true', help='Also run the pytest suite in evals/')
    parser.add_argument('pytest_args', nargs='*', help='Extra arguments passed to pytest')
    args = parser.parse_args(argv)

    summary = EvalRunner().run_all_tests()
    code = 0 if summary['failed'] == 0 else 1
    if args.pytest:
        code = code or run_test_suite(args.pytest_args)
    return code


if __name__ == "__main__":
    sys.exit(main())
