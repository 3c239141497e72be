"""On-disk tensor container: `<name>.manifest.json` plus `<name>.f32`.

The manifest is a versioned JSON document describing named tensors stored in a
single little-endian float32 blob. Feature banks, persisted trials, and model
checkpoints all share this convention, so one reader/writer covers every
artifact the pipeline moves between commands.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import numpy as np
from filelock import FileLock

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ContainerFormatError(ValueError):
    """Raised when a manifest or blob fails structural validation."""


def manifest_path(base: str | Path) -> Path:
    return Path(str(base) + ".manifest.json")


def blob_path(base: str | Path) -> Path:
    return Path(str(base) + ".f32")


def write_container(
    base: str | Path,
    kind: str,
    tensors: dict[str, np.ndarray],
    metadata: dict | None = None,
) -> None:
    """Write named tensors and metadata under `base`.

    Tensors are cast to little-endian float32 and concatenated into the blob in
    insertion order. The write takes an exclusive lock on the target and moves
    fully-written temp files into place, so readers never observe a torn pair.
    """
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries.append(
            {"name": name, "shape": list(arr32.shape), "offset": offset, "size": int(arr32.size)}
        )
        chunks.append(arr32.tobytes())
        offset += int(arr32.size)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "total_floats": offset,
        "tensors": entries,
        "metadata": metadata or {},
    }
    lock = FileLock(str(base) + ".lock")
    with lock:
        tmp_blob = blob_path(base).with_suffix(".f32.tmp")
        tmp_manifest = manifest_path(base).with_suffix(".json.tmp")
        with open(tmp_blob, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
        with open(tmp_manifest, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp_blob, blob_path(base))
        os.replace(tmp_manifest, manifest_path(base))
    logger.debug("wrote container %s (%s, %d floats)", base, kind, offset)


def read_container(base: str | Path, expected_kind: str | None = None):
    """Read a container, returning (kind, tensors, metadata).

    Raises ContainerFormatError on unknown versions, missing files, or a blob
    whose length disagrees with the manifest.
    """
    base = Path(base)
    mpath = manifest_path(base)
    bpath = blob_path(base)
    if not mpath.exists():
        raise ContainerFormatError(f"missing manifest: {mpath}")
    if not bpath.exists():
        raise ContainerFormatError(f"missing blob: {bpath}")
    with open(mpath, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContainerFormatError(f"manifest {mpath} is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ContainerFormatError(
            f"unknown container format version {version!r} in {mpath} "
            f"(this reader understands version {FORMAT_VERSION})"
        )
    kind = manifest.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise ContainerFormatError(
            f"container {base} holds kind {kind!r}, expected {expected_kind!r}"
        )
    raw = np.fromfile(bpath, dtype="<f4")
    total = manifest.get("total_floats")
    if raw.size != total:
        raise ContainerFormatError(
            f"blob {bpath} holds {raw.size} float32 values but the manifest declares {total}"
        )
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        offset = entry["offset"]
        size = entry["size"]
        expected = int(np.prod(shape)) if shape else 1
        if expected != size:
            raise ContainerFormatError(
                f"tensor {name!r} in {mpath} declares shape {shape} but size {size}"
            )
        if offset + size > raw.size:
            raise ContainerFormatError(
                f"tensor {name!r} in {mpath} overruns the blob "
                f"(offset {offset} + size {size} > {raw.size})"
            )
        tensors[name] = raw[offset : offset + size].reshape(shape).copy()
    return kind, tensors, manifest.get("metadata", {})
