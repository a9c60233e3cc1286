"""Input validation helpers shared by the config types and estimators."""

import math

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidParameterError


def check_probability(value, name, *, open_upper=False):
    value = float(value)
    if not math.isfinite(value) or value < 0.0 or value > 1.0 or (open_upper and value == 1.0):
        bound = "[0, 1)" if open_upper else "[0, 1]"
        raise InvalidParameterError(f"{name} must lie in {bound}, got {value!r}")
    return value


def check_non_negative(value, name):
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise InvalidParameterError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def check_positive(value, name):
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidParameterError(f"{name} must be finite and > 0, got {value!r}")
    return value


def check_positive_int(value, name):
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise InvalidParameterError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_choice(value, name, choices):
    if value not in choices:
        raise InvalidParameterError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def check_count_records(X):
    """Validate per-pulse count records.

    Accepts an array-like of shape (n_pulses, 2) holding non-negative integer
    signal and idler counts and returns it as an int64 array.
    """
    X = check_array(X, dtype=np.float64, ensure_min_samples=2)
    if X.shape[1] != 2:
        raise InvalidParameterError(f"count records need 2 columns (c_s, c_i), got {X.shape[1]}")
    if np.any(X < 0) or np.any(X != np.floor(X)):
        raise InvalidParameterError("count records must be non-negative integers")
    return X.astype(np.int64)
