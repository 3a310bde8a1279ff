"""Input checks shared by the estimators; they raise InputError rather than sklearn's ValueError subclasses."""
import numpy as np
from sklearn.utils import check_array

from .errors import InputError


def check_features(X, n_features=None, min_samples=1):
    try:
        X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if n_features is not None and X.shape[1] != n_features:
        raise InputError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_vector(x, size, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (size,):
        raise InputError(f"{name} must have shape ({size},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite values")
    return x


def check_positive(value, name):
    if not value > 0:
        raise InputError(f"{name} must be positive, got {value}")
    return value


def check_aligned(a, b, what="arrays"):
    if len(a) != len(b):
        raise InputError(f"misaligned {what}: {len(a)} vs {len(b)}")
