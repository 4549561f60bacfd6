"""Shared spec loaders for the eval modules."""

import json
from pathlib import Path
from typing import Any, Dict

from mmapprox.model import CheckedSpec, spec_from_dict, validate

EVALS_DIR = Path(__file__).parent
DATA_DIR = EVALS_DIR.parent / "data"


def load_doc(name: str) -> Dict[str, Any]:
    with open(DATA_DIR / f"{name}.json", 'r') as f:
        return json.load(f)


def load_reference_spec(name: str, overrides: str = '') -> CheckedSpec:
    """Spec from data/<name>.json with `key=json_value; ...` top-level overrides."""
    doc = load_doc(name)
    for item in filter(None, (x.strip() for x in overrides.split(';'))):
        key, value = item.split('=', 1)
        doc[key.strip()] = json.loads(value)
    return validate(spec_from_dict(doc))


def spec_of(doc: Dict[str, Any]) -> CheckedSpec:
    return validate(spec_from_dict(doc))
