"""Input validation helpers shared by estimators and metric functions."""

from __future__ import annotations

import numpy as np


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")


def check_matrix(arr, name: str, n_cols: int | None = None) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ValueError(f"{name} must have {n_cols} columns, got {arr.shape[1]}")
    check_finite(arr, name)
    return arr


def check_vector(arr, name: str, length: int | None = None) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {arr.shape[0]}")
    check_finite(arr, name)
    return arr


def check_trials(trials) -> None:
    """Validate the structural invariants of a TrialTensor-like object."""
    data = trials.data
    if data.ndim != 3:
        raise ValueError(f"trial data must be (n_trials, channels, samples), got {data.shape}")
    n, c, t = data.shape
    if n == 0:
        raise ValueError("trial tensor holds no trials")
    if t < 1:
        raise ValueError("trials must contain at least one time sample")
    if trials.sample_rate_hz <= 0:
        raise ValueError(f"sample_rate_hz must be positive, got {trials.sample_rate_hz}")
    if len(trials.channel_names) != c:
        raise ValueError(
            f"channel_names length {len(trials.channel_names)} disagrees with data channels {c}"
        )
    if len(set(trials.channel_names)) != c:
        raise ValueError("channel_names must be unique")
    for field in ("subject_ids", "concept_ids", "image_ids"):
        labels = getattr(trials, field)
        if len(labels) != n:
            raise ValueError(f"{field} length {len(labels)} disagrees with n_trials {n}")
    check_finite(data, "trial data")


def check_bank(bank) -> None:
    """Validate the structural invariants of a FeatureBank-like object."""
    n = len(bank.image_ids)
    if n == 0:
        raise ValueError("feature bank holds no images")
    if len(set(bank.image_ids)) != n:
        raise ValueError("feature bank image_ids must be unique")
    for name in ("image_features", "text_features"):
        feats = getattr(bank, name)
        if feats.shape != (n, bank.embedding_dim):
            raise ValueError(
                f"{name} shape {feats.shape} disagrees with "
                f"({n}, {bank.embedding_dim})"
            )
        check_finite(feats, name)
    if len(bank.image_concepts) != n:
        raise ValueError("image_concepts must align with image_ids")


def require_ids_in_bank(image_ids, bank, what: str) -> None:
    """Raise with the full missing-id list when trials reference absent features."""
    known = set(bank.image_ids)
    missing = sorted({i for i in image_ids if i not in known})
    if missing:
        raise ValueError(f"{what} references image ids missing from the feature bank: {missing}")
