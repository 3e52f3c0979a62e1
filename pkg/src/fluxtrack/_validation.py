"""Input checks shared by the estimators and the harness."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_vertices(X, name: str = "X") -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_min_samples=1, input_name=name)
    if X.shape[1] != 2:
        raise ValueError(f"{name} must have exactly two columns (x, y); got {X.shape[1]}")
    if np.any((X < 0) | (X > 1)):
        raise ValueError(f"{name} has vertices outside the unit square")
    return X


def check_observations(Y, width: int | None = None) -> np.ndarray:
    Y = check_array(Y, dtype=np.float64, ensure_min_samples=0, input_name="Y")
    if width is not None and Y.shape[0] and Y.shape[1] != width:
        raise ValueError(f"observations have {Y.shape[1]} columns, the forward model produces {width}")
    return Y


def check_seed(seed) -> int:
    """Counter-based streams need a plain non-negative integer seed."""
    if seed is None:
        return 0
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise ValueError(f"random_state must be a non-negative integer (got {seed!r})")
    return int(seed)


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive number (got {value!r})")
    return float(value)
