"""Train/validation index splits, frozen to disk and shared across runs."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock

logger = logging.getLogger(__name__)


def split_train_val(
    n_total: int,
    n_val: int,
    seed: int,
    concept_ids: Sequence[str] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Partition [0, n_total) into disjoint (train, val) index arrays.

    With `concept_ids` given (one label per index), validation indices are
    drawn round-robin over concepts in seeded random order, so every concept
    contributes before any concept contributes twice. Without labels the draw
    is uniform. Both outputs are sorted ascending; the same seed reproduces
    the same split.
    """
    if n_total < 1:
        raise ValueError("n_total must be at least 1")
    if not 0 <= n_val < n_total:
        raise ValueError(f"n_val must lie in [0, {n_total}), got {n_val}")
    rng = np.random.default_rng(seed)
    if concept_ids is None:
        perm = rng.permutation(n_total)
        val = np.sort(perm[:n_val])
    else:
        if len(concept_ids) != n_total:
            raise ValueError(
                f"concept_ids length {len(concept_ids)} disagrees with n_total {n_total}"
            )
        by_concept: dict[str, list[int]] = {}
        for idx, cid in enumerate(concept_ids):
            by_concept.setdefault(cid, []).append(idx)
        pools = []
        for cid in sorted(by_concept):
            members = np.array(by_concept[cid])
            rng.shuffle(members)
            pools.append(list(members))
        order = rng.permutation(len(pools))
        chosen: list[int] = []
        round_idx = 0
        while len(chosen) < n_val:
            progressed = False
            for pool_idx in order:
                pool = pools[pool_idx]
                if round_idx < len(pool):
                    chosen.append(int(pool[round_idx]))
                    progressed = True
                    if len(chosen) == n_val:
                        break
            if not progressed:
                raise RuntimeError("ran out of indices while stratifying the split")
            round_idx += 1
        val = np.sort(np.array(chosen, dtype=int))
    mask = np.ones(n_total, dtype=bool)
    mask[val] = False
    train = np.nonzero(mask)[0]
    return train, val


def save_split(path: str | Path, train: np.ndarray, val: np.ndarray, seed: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": 1,
        "seed": seed,
        "train": [int(i) for i in train],
        "val": [int(i) for i in val],
    }
    with FileLock(str(path) + ".lock"):
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)


def load_split(path: str | Path) -> tuple[np.ndarray, np.ndarray, int]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != 1:
        raise ValueError(f"unknown split file version in {path}")
    return (
        np.array(payload["train"], dtype=int),
        np.array(payload["val"], dtype=int),
        int(payload["seed"]),
    )


def ensure_split(
    path: str | Path,
    n_total: int,
    n_val: int,
    seed: int,
    concept_ids: Sequence[str] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Load the split at `path` if present, otherwise create and persist it.

    A stored split is reused across runs and training seeds, so every run sees
    the same held-out trials.
    """
    path = Path(path)
    if path.exists():
        train, val, stored_seed = load_split(path)
        if len(train) + len(val) != n_total:
            raise ValueError(
                f"stored split {path} covers {len(train) + len(val)} indices, "
                f"dataset has {n_total}"
            )
        logger.debug("reusing stored split %s (seed %d)", path, stored_seed)
        return train, val
    train, val = split_train_val(n_total, n_val, seed, concept_ids)
    save_split(path, train, val, seed)
    logger.info("froze new split to %s (%d train / %d val)", path, len(train), len(val))
    return train, val
