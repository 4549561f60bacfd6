"""
Validators for eval checks.

Each validator returns a dict with a `passed` flag plus the values it
compared, so failures can be reported and saved as JSON.
"""

from typing import Any, Dict

import numpy as np


class ValueValidator:
    """Validates computed quantities against expected values."""

    @staticmethod
    def validate_numeric(actual: Any, expected_value: str, tolerance: float) -> Dict[str, Any]:
        """|actual - expected| <= tolerance."""
        expected = float(expected_value)

        if actual is None or not np.isfinite(actual):
            return {
                "passed": False,
                "error": "No finite number to compare",
                "extracted": actual,
                "expected": expected
            }

        diff = abs(float(actual) - expected)
        return {
            "passed": diff <= tolerance,
            "extracted": float(actual),
            "expected": expected,
            "difference": diff,
            "tolerance": tolerance
        }

    @staticmethod
    def validate_count(actual: Any, expected_value: str) -> Dict[str, Any]:
        """Exact integer match."""
        expected = int(expected_value)
        if actual is None:
            return {"passed": False, "error": "No count to compare", "expected": expected}
        return {"passed": int(actual) == expected, "extracted": int(actual), "expected": expected}

    @staticmethod
    def validate_contains(actual: Any, expected_value: str) -> Dict[str, Any]:
        """All semicolon-separated items appear in the text (or collection) `actual`."""
        expected_items = [item.strip() for item in expected_value.split(';')]
        if isinstance(actual, str):
            haystack = actual.lower()
            found = [item for item in expected_items if item.lower() in haystack]
        else:
            pool = {str(x).lower() for x in actual}
            found = [item for item in expected_items if item.lower() in pool]
        missing = [item for item in expected_items if item not in found]
        return {
            "passed": not missing,
            "expected_items": expected_items,
            "found_items": found,
            "missing_items": missing
        }


def assert_valid(result: Dict[str, Any]) -> None:
    """Turn a validator result into an assertion with its details as the message."""
    assert result["passed"], result
