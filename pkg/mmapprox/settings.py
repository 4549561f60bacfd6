import os
from functools import lru_cache
from typing import Any

import yaml
from dotenv import load_dotenv

load_dotenv()

# =============================================================================
# YAML CONFIG LOADERS
# =============================================================================

def _get_config_path(filename: str) -> str:
    """Get the path to a config file in mmapprox/config/"""
    current_dir = os.path.dirname(os.path.abspath(__file__))
    return os.path.join(current_dir, 'config', filename)


@lru_cache(maxsize=None)
def load_defaults() -> dict:
    """Load the numerical defaults (MM_DEFAULTS_PATH overrides the bundled file)."""
    config_path = os.environ.get('MM_DEFAULTS_PATH') or _get_config_path('defaults.yaml')
    with open(config_path, 'r') as f:
        return yaml.safe_load(f)


@lru_cache(maxsize=None)
def load_spec_schema() -> dict:
    """Load the documented schema of market specification files."""
    config_path = _get_config_path('spec_schema.yaml')
    with open(config_path, 'r') as f:
        return yaml.safe_load(f)


def get_default(section: str, key: str) -> Any:
    """Look up one numerical default, e.g. get_default('mc', 'safety')."""
    defaults = load_defaults()
    try:
        return defaults[section][key]
    except KeyError:
        raise KeyError(f"No default '{section}.{key}' in defaults.yaml") from None


def resolve(value: Any, section: str, key: str) -> Any:
    """Return value unless it is None, in which case the YAML default."""
    return get_default(section, key) if value is None else value


def thread_count() -> int:
    """Worker threads for path batches, from MM_THREADS (default 1)."""
    raw = os.environ.get('MM_THREADS', '1')
    try:
        count = int(raw)
    except ValueError:
        raise ValueError(
            f"MM_THREADS must be a positive integer, got '{raw}'.\n"
            f"Unset it or export e.g. MM_THREADS=4"
        ) from None
    if count < 1:
        raise ValueError(f"MM_THREADS must be a positive integer, got {count}")
    return count
