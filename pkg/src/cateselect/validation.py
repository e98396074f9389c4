"""Input validation helpers shared across the package."""
from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be a 2-d matrix, got ndim={X.ndim}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValidationError(f"{name} must be nonempty, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        i, j = (int(v) for v in np.argwhere(~np.isfinite(X))[0])
        raise ValidationError(f"{name} contains a non-finite value at row {i}, column {j}")
    return X


def as_float_vector(y, name: str = "y") -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValidationError(f"{name} must be nonempty")
    if not np.all(np.isfinite(y)):
        i = int(np.flatnonzero(~np.isfinite(y))[0])
        raise ValidationError(f"{name} contains a non-finite value at index {i}")
    return y


def as_binary_vector(t, name: str = "t") -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 1:
        t = t.reshape(-1)
    vals = np.unique(t)
    if not np.all(np.isin(vals, (0, 1))):
        bad = vals[~np.isin(vals, (0, 1))][0]
        idx = int(np.flatnonzero(t == bad)[0])
        raise ValidationError(f"{name} must be binary 0/1, found {bad!r} at index {idx}")
    return t.astype(np.int64)


def check_consistent_length(*arrays, names=None) -> int:
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        labels = names or [f"arg{i}" for i in range(len(arrays))]
        pairs = ", ".join(f"{k}={v}" for k, v in zip(labels, lengths))
        raise ValidationError(f"inconsistent lengths: {pairs}")
    return lengths[0]


def check_both_arms(t: np.ndarray, context: str = "data") -> None:
    if not (np.any(t == 1) and np.any(t == 0)):
        raise ValidationError(f"{context} must contain both treatment arms")


def require(cond: bool, message: str) -> None:
    if not cond:
        raise ValidationError(message)
