"""Trial and raw-recording data structures plus their on-disk conventions.

A raw dataset lives under one directory per subject::

    <root>/<subject_id>/raw.npy          # (channels, samples) float array
    <root>/<subject_id>/recording.json   # {"sample_rate_hz": ..., "channel_names": [...]}
    <root>/<subject_id>/events.csv       # onset_sample,concept_id,image_id,repetition

Epoched trials are carried in memory as a TrialTensor and persisted through the
shared manifest + float32 blob container.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .containers import read_container, write_container
from .validation import check_trials

logger = logging.getLogger(__name__)


@dataclass
class Event:
    onset_sample: int
    concept_id: str
    image_id: str
    repetition: int


@dataclass
class RawRecording:
    """Continuous multichannel recording for one subject."""

    data: np.ndarray  # (channels, samples)
    sample_rate_hz: float
    channel_names: list[str]
    subject_id: str
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"raw data must be (channels, samples), got {self.data.shape}")
        if self.data.shape[0] != len(self.channel_names):
            raise ValueError(
                f"channel_names length {len(self.channel_names)} disagrees with "
                f"data channels {self.data.shape[0]}"
            )
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")


@dataclass
class TrialTensor:
    """Epoched trials: data (n_trials, channels, samples) plus aligned labels."""

    data: np.ndarray
    sample_rate_hz: float
    channel_names: list[str]
    subject_ids: list[str]
    concept_ids: list[str]
    image_ids: list[str]

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.channel_names = list(self.channel_names)
        self.subject_ids = list(self.subject_ids)
        self.concept_ids = list(self.concept_ids)
        self.image_ids = list(self.image_ids)
        check_trials(self)

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    def select(self, indices) -> "TrialTensor":
        """Return a new tensor holding the trials at `indices` (in that order)."""
        idx = np.asarray(indices, dtype=int)
        return TrialTensor(
            data=self.data[idx],
            sample_rate_hz=self.sample_rate_hz,
            channel_names=self.channel_names,
            subject_ids=[self.subject_ids[i] for i in idx],
            concept_ids=[self.concept_ids[i] for i in idx],
            image_ids=[self.image_ids[i] for i in idx],
        )

    def select_channels(self, names: Sequence[str]) -> "TrialTensor":
        """Restrict to the named channels, preserving their original order."""
        missing = [n for n in names if n not in self.channel_names]
        if missing:
            raise ValueError(f"unknown channels: {missing}")
        wanted = set(names)
        idx = [i for i, n in enumerate(self.channel_names) if n in wanted]
        return TrialTensor(
            data=self.data[:, idx, :],
            sample_rate_hz=self.sample_rate_hz,
            channel_names=[self.channel_names[i] for i in idx],
            subject_ids=self.subject_ids,
            concept_ids=self.concept_ids,
            image_ids=self.image_ids,
        )

    def crop_samples(self, start: int, stop: int) -> "TrialTensor":
        """Keep samples in [start, stop)."""
        if not (0 <= start < stop <= self.n_samples):
            raise ValueError(
                f"crop [{start}, {stop}) out of bounds for {self.n_samples} samples"
            )
        return TrialTensor(
            data=self.data[:, :, start:stop],
            sample_rate_hz=self.sample_rate_hz,
            channel_names=self.channel_names,
            subject_ids=self.subject_ids,
            concept_ids=self.concept_ids,
            image_ids=self.image_ids,
        )


def zscore_trials(trials: TrialTensor) -> TrialTensor:
    """Standardize each channel of each trial to zero mean, unit variance over time.

    Raises ValueError when any channel is constant within a trial, since that
    leaves the variance undefined.
    """
    data = trials.data.astype(np.float64)
    mean = data.mean(axis=2, keepdims=True)
    std = data.std(axis=2, keepdims=True)
    if np.any(std == 0):
        flat = np.argwhere(std[:, :, 0] == 0)
        trial, chan = flat[0]
        raise ValueError(
            f"cannot z-score: channel {trials.channel_names[chan]!r} is constant "
            f"in trial {trial}"
        )
    return TrialTensor(
        data=((data - mean) / std).astype(trials.data.dtype),
        sample_rate_hz=trials.sample_rate_hz,
        channel_names=trials.channel_names,
        subject_ids=trials.subject_ids,
        concept_ids=trials.concept_ids,
        image_ids=trials.image_ids,
    )


def average_repetitions(trials: TrialTensor, return_counts: bool = False):
    """Average repeated presentations of the same image within each subject.

    Trials are grouped by (subject_id, image_id) and averaged over the group.
    Output rows are ordered lexicographically by (subject_id, concept_id,
    image_id), so the result does not depend on the incoming trial order.
    With return_counts=True a parallel list of group sizes is returned.
    """
    groups: dict[tuple[str, str], list[int]] = {}
    concept_of: dict[tuple[str, str], str] = {}
    for i in range(trials.n_trials):
        key = (trials.subject_ids[i], trials.image_ids[i])
        groups.setdefault(key, []).append(i)
        prior = concept_of.setdefault(key, trials.concept_ids[i])
        if prior != trials.concept_ids[i]:
            raise ValueError(
                f"image {key[1]!r} maps to conflicting concepts "
                f"{prior!r} and {trials.concept_ids[i]!r}"
            )
    ordered = sorted(groups, key=lambda k: (k[0], concept_of[k], k[1]))
    rows = []
    subjects, concepts, images, counts = [], [], [], []
    for key in ordered:
        idx = sorted(groups[key])
        rows.append(trials.data[idx].astype(np.float64).mean(axis=0))
        subjects.append(key[0])
        concepts.append(concept_of[key])
        images.append(key[1])
        counts.append(len(idx))
    averaged = TrialTensor(
        data=np.stack(rows).astype(trials.data.dtype),
        sample_rate_hz=trials.sample_rate_hz,
        channel_names=trials.channel_names,
        subject_ids=subjects,
        concept_ids=concepts,
        image_ids=images,
    )
    logger.debug(
        "averaged %d trials into %d groups (sizes %d..%d)",
        trials.n_trials, len(ordered), min(counts), max(counts),
    )
    if return_counts:
        return averaged, counts
    return averaged


def save_trials(base: str | Path, trials: TrialTensor) -> None:
    """Persist trials under the manifest + float32 blob convention."""
    write_container(
        base,
        kind="trials",
        tensors={"data": trials.data},
        metadata={
            "sample_rate_hz": trials.sample_rate_hz,
            "channel_names": trials.channel_names,
            "subject_ids": trials.subject_ids,
            "concept_ids": trials.concept_ids,
            "image_ids": trials.image_ids,
        },
    )


def load_trials(base: str | Path) -> TrialTensor:
    _, tensors, meta = read_container(base, expected_kind="trials")
    return TrialTensor(
        data=tensors["data"],
        sample_rate_hz=float(meta["sample_rate_hz"]),
        channel_names=list(meta["channel_names"]),
        subject_ids=list(meta["subject_ids"]),
        concept_ids=list(meta["concept_ids"]),
        image_ids=list(meta["image_ids"]),
    )


EVENT_COLUMNS = ["onset_sample", "concept_id", "image_id", "repetition"]


def write_events_csv(path: str | Path, events: Sequence[Event]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_COLUMNS)
        for ev in events:
            writer.writerow([ev.onset_sample, ev.concept_id, ev.image_id, ev.repetition])


def read_events_csv(path: str | Path) -> list[Event]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVENT_COLUMNS:
            raise ValueError(
                f"events file {path} must start with header {','.join(EVENT_COLUMNS)}, "
                f"got {header}"
            )
        events = []
        for row in reader:
            if len(row) != 4:
                raise ValueError(f"malformed events row in {path}: {row}")
            events.append(Event(int(row[0]), row[1], row[2], int(row[3])))
    return events


def write_raw_dataset(root: str | Path, recordings: Sequence[RawRecording]) -> None:
    """Write recordings under the per-subject raw dataset directory convention."""
    root = Path(root)
    for rec in recordings:
        subject_dir = root / rec.subject_id
        subject_dir.mkdir(parents=True, exist_ok=True)
        np.save(subject_dir / "raw.npy", rec.data)
        with open(subject_dir / "recording.json", "w", encoding="utf-8") as fh:
            json.dump(
                {"sample_rate_hz": rec.sample_rate_hz, "channel_names": rec.channel_names},
                fh,
                indent=2,
            )
            fh.write("\n")
        write_events_csv(subject_dir / "events.csv", rec.events)


def read_raw_dataset(root: str | Path) -> list[RawRecording]:
    """Read every subject directory under `root`, sorted by subject id."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    recordings = []
    for subject_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        raw_path = subject_dir / "raw.npy"
        meta_path = subject_dir / "recording.json"
        events_path = subject_dir / "events.csv"
        for required in (raw_path, meta_path, events_path):
            if not required.exists():
                raise FileNotFoundError(f"subject {subject_dir.name}: missing {required.name}")
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        recordings.append(
            RawRecording(
                data=np.load(raw_path),
                sample_rate_hz=float(meta["sample_rate_hz"]),
                channel_names=list(meta["channel_names"]),
                subject_id=subject_dir.name,
                events=read_events_csv(events_path),
            )
        )
    if not recordings:
        raise FileNotFoundError(f"dataset root {root} holds no subject directories")
    return recordings
