"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np


def check_rng(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    ``None`` is rejected on purpose: every sampler in this package takes an
    explicit stream so that runs are reproducible.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit seed or numpy Generator is required")
    if isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a Generator from {type(seed).__name__}")


def spawn_rngs(rng, n):
    """Derive ``n`` independent child generators from ``rng``."""
    rng = check_rng(rng)
    return [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(n)]


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_probability_open(v, name="v"):
    v = np.asarray(v, dtype=float)
    if np.any((v <= 0) | (v >= 1)) or np.any(~np.isfinite(v)):
        raise ValueError(f"{name} must lie strictly inside (0, 1)")
    return v


def check_beta(beta):
    if not isinstance(beta, numbers.Real) or isinstance(beta, bool):
        raise TypeError("beta must be a real number")
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return beta


def check_query(s, integer=False, name="s"):
    """Validate a single query vector and return it as a 1-d array."""
    arr = np.asarray(s)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector, got shape {arr.shape}")
    if integer:
        return as_integer_array(arr, name)
    arr = arr.astype(float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_query_matrix(X, integer=False, name="X"):
    """Validate a 2-d array whose rows are query vectors."""
    arr = np.asarray(X)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] == 0 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {arr.shape}")
    if integer:
        return as_integer_array(arr, name)
    arr = arr.astype(float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_integer_array(arr, name="s"):
    arr = np.asarray(arr)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.int64)
    if np.issubdtype(arr.dtype, np.bool_):
        return arr.astype(np.int64)
    arr = arr.astype(float)
    rounded = np.rint(arr)
    if not np.all(np.isfinite(arr)) or np.any(np.abs(arr - rounded) > 0):
        raise ValueError(f"{name} must be integer-valued for a discrete mechanism")
    return rounded.astype(np.int64)
