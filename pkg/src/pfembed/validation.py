"""Input validation helpers shared by the functional API and the estimators."""

from __future__ import annotations

import numpy as np


def check_image(img, allow_gray: bool = True) -> np.ndarray:
    """Return ``img`` as a float64 array of shape (h, w) or (h, w, c) in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError(f"image must be 2-D or 3-D, got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ValueError(f"image must have 1 or 3 channels, got {img.shape[2]}")
    if not allow_gray and (img.ndim == 2 or img.shape[2] != 3):
        raise ValueError("a 3-channel color image is required")
    if img.size == 0:
        raise ValueError("image is empty")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def check_label_map(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ValueError("label map must hold integers")
        labels = labels.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be non-negative")
    return labels


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "label maps") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def check_features(x, min_rows: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain NaN or Inf")
    return x
