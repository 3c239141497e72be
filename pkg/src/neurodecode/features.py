"""Feature bank: precomputed image and text embeddings keyed by image id.

Embeddings are computed once per dataset by an external backbone (or the
synthetic generator) and reused by every training run; nothing in the training
loops ever re-embeds an image. On disk a bank is a manifest + float32 blob
container, so the stored bit patterns round-trip exactly.
"""

from __future__ import annotations

import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .containers import read_container, write_container
from .validation import check_bank

# Prompt handed to caption providers, with <label> substituted per image.
PROMPT_TEMPLATE = (
    "Describe only what is directly visible in the image of <label> in one short sentence"
)

CATEGORY_NAMES = ("animal", "food", "vehicle", "tool", "others")


@dataclass
class FeatureBank:
    """Aligned image/text embeddings plus captions and concept categories."""

    image_ids: list[str]
    image_features: np.ndarray  # (n_images, d) float32
    text_features: np.ndarray   # (n_images, d) float32
    image_concepts: list[str]   # concept id per image
    captions: dict[str, str] = field(default_factory=dict)
    categories: dict[str, str] = field(default_factory=dict)  # concept id -> category
    provider_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.image_ids = list(self.image_ids)
        self.image_concepts = list(self.image_concepts)
        self.image_features = np.ascontiguousarray(self.image_features, dtype=np.float32)
        self.text_features = np.ascontiguousarray(self.text_features, dtype=np.float32)
        check_bank(self)
        self._index = {img: i for i, img in enumerate(self.image_ids)}

    @property
    def embedding_dim(self) -> int:
        return self.image_features.shape[1]

    @property
    def n_images(self) -> int:
        return len(self.image_ids)

    def index_of(self, image_ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self._index[i] for i in image_ids], dtype=int)
        except KeyError as exc:
            raise KeyError(f"image id {exc.args[0]!r} not in the feature bank") from exc

    def image_features_for(self, image_ids: Sequence[str]) -> np.ndarray:
        return self.image_features[self.index_of(image_ids)]

    def text_features_for(self, image_ids: Sequence[str]) -> np.ndarray:
        return self.text_features[self.index_of(image_ids)]

    def concept_for(self, image_id: str) -> str:
        return self.image_concepts[self._index[image_id]]

    def category_for_concept(self, concept_id: str) -> str:
        if concept_id not in self.categories:
            raise KeyError(f"concept {concept_id!r} has no category label")
        return self.categories[concept_id]


def save_bank(base: str | Path, bank: FeatureBank) -> None:
    write_container(
        base,
        kind="feature_bank",
        tensors={
            "image_features": bank.image_features,
            "text_features": bank.text_features,
        },
        metadata={
            "embedding_dim": bank.embedding_dim,
            "image_ids": bank.image_ids,
            "image_concepts": bank.image_concepts,
            "captions": bank.captions,
            "categories": bank.categories,
            "provider_metadata": bank.provider_metadata,
        },
    )


def load_bank(base: str | Path) -> FeatureBank:
    from .containers import ContainerFormatError

    _, tensors, meta = read_container(base, expected_kind="feature_bank")
    declared = meta.get("embedding_dim")
    feats = tensors["image_features"]
    if feats.ndim != 2 or feats.shape[1] != declared:
        raise ContainerFormatError(
            f"bank declares embedding_dim {declared} but the blob holds shape "
            f"{tuple(feats.shape)}"
        )
    return FeatureBank(
        image_ids=list(meta["image_ids"]),
        image_features=feats,
        text_features=tensors["text_features"],
        image_concepts=list(meta["image_concepts"]),
        captions=dict(meta.get("captions", {})),
        categories=dict(meta.get("categories", {})),
        provider_metadata=dict(meta.get("provider_metadata", {})),
    )


def cache_dir() -> Path:
    """Directory for reusable feature artifacts, from NEURODECODE_CACHE."""
    root = os.environ.get("NEURODECODE_CACHE")
    if root:
        return Path(root).expanduser()
    return Path("~/.cache/neurodecode").expanduser()


class StubCaptionProvider:
    """Deterministic offline captioner used when no captioning model is wired in."""

    def __call__(self, image_path: str, label: str, prompt: str = PROMPT_TEMPLATE) -> str:
        return f"a photo of {label}"


class CommandCaptionProvider:
    """Caption via an external command.

    The command template is a list of arguments; the placeholders {image},
    {label} and {prompt} are substituted before execution. The command's
    stripped stdout is the caption.
    """

    def __init__(self, command: Sequence[str]):
        if not command:
            raise ValueError("caption command must not be empty")
        self.command = list(command)

    def __call__(self, image_path: str, label: str, prompt: str = PROMPT_TEMPLATE) -> str:
        argv = [
            arg.format(image=image_path, label=label, prompt=prompt) for arg in self.command
        ]
        result = subprocess.run(argv, capture_output=True, text=True, check=True)
        return result.stdout.strip()


def build_captions(
    image_ids: Sequence[str],
    labels: dict[str, str],
    provider: Callable[[str, str, str], str] | None = None,
    prompt: str = PROMPT_TEMPLATE,
) -> dict[str, str]:
    """Produce a caption per image id via the given provider (stub by default)."""
    if provider is None:
        provider = StubCaptionProvider()
    captions = {}
    for image_id in image_ids:
        label = labels.get(image_id, image_id)
        captions[image_id] = provider(image_id, label, prompt.replace("<label>", label))
    return captions
