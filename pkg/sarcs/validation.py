"""Input validation and atomic file I/O shared by every pipeline stage."""

import json
import math
import tempfile
from pathlib import Path

import numpy as np

from sarcs.exceptions import ConfigError, ValidationError
from sarcs.log import get_logger

logger = get_logger(__name__)


def validate_positive(name: str, value, allow_zero: bool = False) -> float:
    """Validate a finite positive (or non-negative) scalar. Returns it as float."""
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}.")
    if not math.isfinite(number):
        raise ValidationError(f"{name} must be finite, got {value!r}.")
    if number < 0 or (number == 0 and not allow_zero):
        bound = "non-negative" if allow_zero else "positive"
        raise ValidationError(f"{name} must be {bound}, got {value!r}.")
    return number


def validate_positive_int(name: str, value, minimum: int = 1) -> int:
    """Validate an integer that is at least `minimum`. Returns it as int."""
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(f"{name} must be an integer, got {value!r}.")
    if value < minimum:
        raise ValidationError(f"{name} must be >= {minimum}, got {value}.")
    return int(value)


def validate_fraction(name: str, value) -> float:
    """Validate a ratio in (0, 1]."""
    number = validate_positive(name, value)
    if number > 1:
        raise ValidationError(
            f"{name} must lie in (0, 1], got {value!r}.",
            suggestion="Use a retained fraction such as 0.5.",
        )
    return number


def validate_finite(name: str, array: np.ndarray) -> np.ndarray:
    """Reject arrays holding NaN or infinity."""
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} contains non-finite values.")
    return array


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write bytes atomically: write to tempfile, then rename.

    Uses POSIX Path.replace for atomic rename within same filesystem.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
    tmp_path = Path(tmp_name)
    try:
        with open(fd, "wb") as f:
            f.write(data)
        tmp_path.replace(path)
    except Exception:
        tmp_path.unlink(missing_ok=True)
        raise


def safe_write_json(path: Path, data) -> None:
    """Write JSON atomically. Infinite floats are written as Infinity."""
    content = json.dumps(data, indent=2)
    atomic_write_bytes(Path(path), content.encode("utf-8"))


def load_json(path: Path, what: str = "JSON document"):
    """Load a JSON file, raising ConfigError with the path on any failure."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}", suggestion="Check the path.")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        logger.warning("Unreadable %s at %s: %s", what, path, e)
        raise ConfigError(f"Invalid {what} at {path}: {e}")
