"""Input checks shared by the estimator and the inference helpers."""
import numpy as np

from .errors import ShapeError

PATCH_SHAPE = (3, 128, 128)


def check_patch_batch(X, allow_single=False):
    """Return ``X`` as float32 ``(n, 3, 128, 128)`` with finite values in [0, 1]."""
    X = np.asarray(X)
    if allow_single and X.shape == PATCH_SHAPE:
        X = X[None]
    if X.ndim != 4 or X.shape[1:] != PATCH_SHAPE:
        raise ShapeError(f"expected patches shaped (n, 3, 128, 128), got {X.shape}")
    X = X.astype(np.float32, copy=False)
    if not np.isfinite(X).all():
        raise ValueError("patches contain non-finite values")
    if X.size and (X.min() < 0 or X.max() > 1):
        raise ValueError("patch reflectances must lie in [0, 1]")
    return X


def check_label_batch(y, n_samples):
    y = np.asarray(y)
    if y.shape != (n_samples,) + PATCH_SHAPE[1:]:
        raise ShapeError(f"expected labels shaped ({n_samples}, 128, 128), got {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary {0, 1}")
    return y.astype(np.int64)


def check_probability_map(prob):
    prob = np.asarray(prob, dtype=float)
    if not np.isfinite(prob).all() or (prob.size and (prob.min() < 0 or prob.max() > 1)):
        raise ValueError("probabilities must be finite and within [0, 1]")
    return prob
