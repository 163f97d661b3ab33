"""Input validation helpers shared by the estimators and pure functions."""

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of a perceptual formula."""


def as_float_array(x, name="value"):
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)):
        raise DomainError(f"{name} contains NaN")
    return arr


def check_positive(x, name):
    arr = as_float_array(x, name)
    if np.any(arr <= 0):
        raise DomainError(f"{name} must be strictly positive")
    return arr


def check_nonnegative(x, name):
    arr = as_float_array(x, name)
    if np.any(arr < 0):
        raise DomainError(f"{name} must be non-negative")
    return arr


def is_power_of_two(n):
    n = int(n)
    return n >= 1 and (n & (n - 1)) == 0


def scalar_or_array(arr):
    """Return a Python float for 0-d results, the array otherwise."""
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr
