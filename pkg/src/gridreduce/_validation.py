"""Small input validation helpers."""
from __future__ import annotations

import math
from numbers import Real

import numpy as np


def check_scalar(value, name: str, *, low=None, high=None,
                 include_low: bool = True, include_high: bool = True) -> float:
    """Return ``value`` as float after checking finiteness and bounds."""
    if isinstance(value, bool) or not isinstance(value, (Real, np.floating, np.integer)):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None:
        if value < low or (value == low and not include_low):
            op = ">=" if include_low else ">"
            raise ValueError(f"{name} must be {op} {low}, got {value}")
    if high is not None:
        if value > high or (value == high and not include_high):
            op = "<=" if include_high else "<"
            raise ValueError(f"{name} must be {op} {high}, got {value}")
    return value


def check_int(value, name: str, *, low=None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if low is not None and value < low:
        raise ValueError(f"{name} must be >= {low}, got {value}")
    return value


def as_signal(x, name: str, *, dtype=float, min_len: int = 0) -> np.ndarray:
    """Convert to a finite 1-D array."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} samples, got {arr.size}")
    bad = ~np.isfinite(arr)
    if bad.any():
        raise ValueError(f"{name} has a non-finite value at index {int(np.argmax(bad))}")
    return arr


def check_finite_sample(value, name: str, step: int) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"non-finite {name} at step {step}: {value}")
    return value
