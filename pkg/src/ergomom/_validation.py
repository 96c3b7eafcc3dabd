"""Input validation shared by the estimator classes and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .model import Path


def check_path(X, dt=None, allow_batch: bool = True):
    """Return ``(values, dt)`` for a :class:`Path`, a 1-D array of states, or a
    2-D ``(R, N + 1)`` batch of paths sharing one step ``dt``."""
    if isinstance(X, Path):
        if dt is not None and dt != X.dt:
            raise ValueError(f"dt={dt} conflicts with the path's dt={X.dt}")
        return X.values, X.dt
    if dt is None:
        raise ValueError("dt is required when passing raw arrays")
    dt = float(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = check_array(arr[None, :], ensure_min_features=2)[0]
    elif arr.ndim == 2 and allow_batch:
        arr = check_array(arr, ensure_min_features=2)
    else:
        raise ValueError(f"expected a 1-D path{' or 2-D batch' if allow_batch else ''}, "
                         f"got shape {arr.shape}")
    return arr, dt


def check_positive_int(value, name, minimum=1) -> int:
    iv = int(value)
    if iv != value or iv < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return iv
