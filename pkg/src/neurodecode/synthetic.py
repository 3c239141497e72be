"""Synthetic dataset generator with planted, decodable concept structure.

Construction per seed:

- concept embeddings are unit vectors drawn around planted category centers,
  so category structure is recoverable from the embeddings alone;
- every image of a concept carries the concept's embedding; the text embedding
  is a small perturbation of it;
- a fixed random rank-limited spatiotemporal operator maps an embedding to a
  (channels x samples) pattern with unit per-entry RMS;
- each subject owns a fixed orthogonal channel-mixing matrix;
- a trial is `mixing @ (signal_to_noise * pattern) + noise_scale * N(0, 1)`.

Train and test concept sets are disjoint, so retrieval on the test set is
zero-shot by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ConfigError
from .features import CATEGORY_NAMES, FeatureBank, PROMPT_TEMPLATE, StubCaptionProvider
from .trials import TrialTensor

logger = logging.getLogger(__name__)

SYNTHETIC_RATE_HZ = 250.0


@dataclass
class SyntheticSpec:
    """Size and signal parameters of a generated dataset.

    `n_concepts` counts training concepts; `n_test_concepts` (default half of
    `n_concepts`) counts the disjoint held-out concepts used for zero-shot
    evaluation.
    """

    n_concepts: int = 20
    n_test_concepts: int | None = None
    images_per_concept: int = 1
    repetitions: int = 4
    n_subjects: int = 2
    channels: int = 16
    time_samples: int = 50
    embedding_dim: int = 32
    signal_to_noise: float = 2.0
    noise_scale: float = 1.0
    n_categories: int = 4
    seed: int = 0

    def resolved_test_concepts(self) -> int:
        if self.n_test_concepts is None:
            return max(1, self.n_concepts // 2)
        return self.n_test_concepts

    def validate(self) -> None:
        for name in (
            "n_concepts", "images_per_concept", "repetitions", "n_subjects",
            "channels", "time_samples", "embedding_dim",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.resolved_test_concepts() < 1:
            raise ConfigError("n_test_concepts must be at least 1")
        if self.signal_to_noise < 0:
            raise ConfigError("signal_to_noise must be nonnegative")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be nonnegative")
        if not 1 <= self.n_categories <= len(CATEGORY_NAMES):
            raise ConfigError(
                f"n_categories must be in [1, {len(CATEGORY_NAMES)}], got {self.n_categories}"
            )


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def generate_synthetic(spec: SyntheticSpec):
    """Generate (train trials, test trials, feature bank) for `spec`.

    Deterministic: the same spec (including seed) reproduces identical arrays.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_test = spec.resolved_test_concepts()
    n_total = spec.n_concepts + n_test
    d, c, t = spec.embedding_dim, spec.channels, spec.time_samples

    # Planted category clusters in embedding space.
    centers = rng.standard_normal((spec.n_categories, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    concept_ids = [f"concept_{i:04d}" for i in range(n_total)]
    concept_vecs = np.empty((n_total, d))
    categories: dict[str, str] = {}
    for i, cid in enumerate(concept_ids):
        k = i % spec.n_categories
        concept_vecs[i] = _unit(centers[k] + 0.6 * rng.standard_normal(d))
        categories[cid] = CATEGORY_NAMES[k]
    text_vecs = np.empty((n_total, d))
    for i in range(n_total):
        text_vecs[i] = _unit(concept_vecs[i] + 0.1 * rng.standard_normal(d))

    # Rank-limited spatiotemporal operator: d rank-one atoms, rotated latents.
    rotation = _random_orthogonal(rng, d)
    spatial = rng.standard_normal((d, c))
    temporal = rng.standard_normal((d, t))
    atoms = np.einsum("mc,mt->mct", spatial, temporal)
    atoms /= np.linalg.norm(atoms.reshape(d, -1), axis=1)[:, None, None]

    def pattern(vec: np.ndarray) -> np.ndarray:
        coeffs = rotation @ vec
        pat = np.tensordot(coeffs, atoms, axes=1)
        rms = np.sqrt(np.mean(pat**2))
        return pat / rms

    patterns = np.stack([pattern(v) for v in concept_vecs])

    mixings = [_random_orthogonal(rng, c) for _ in range(spec.n_subjects)]
    subject_ids = [f"sub{S:02d}" for S in range(spec.n_subjects)]

    train_concepts = list(range(spec.n_concepts))
    test_concepts = list(range(spec.n_concepts, n_total))

    def make_trials(concept_idx, images_per, reps):
        rows, subs, cons, imgs = [], [], [], []
        for s_idx, sid in enumerate(subject_ids):
            mix = mixings[s_idx]
            for ci in concept_idx:
                signal = mix @ (spec.signal_to_noise * patterns[ci])
                for j in range(images_per):
                    image_id = f"{concept_ids[ci]}_img{j:02d}"
                    for _ in range(reps):
                        noise = spec.noise_scale * rng.standard_normal((c, t))
                        rows.append((signal + noise).astype(np.float32))
                        subs.append(sid)
                        cons.append(concept_ids[ci])
                        imgs.append(image_id)
        return TrialTensor(
            data=np.stack(rows),
            sample_rate_hz=SYNTHETIC_RATE_HZ,
            channel_names=[f"ch{i:02d}" for i in range(c)],
            subject_ids=subs,
            concept_ids=cons,
            image_ids=imgs,
        )

    train = make_trials(train_concepts, spec.images_per_concept, spec.repetitions)
    test = make_trials(test_concepts, 1, spec.repetitions)

    image_ids, image_concepts, image_feats, text_feats = [], [], [], []
    for ci in range(n_total):
        n_images = spec.images_per_concept if ci < spec.n_concepts else 1
        for j in range(n_images):
            image_ids.append(f"{concept_ids[ci]}_img{j:02d}")
            image_concepts.append(concept_ids[ci])
            image_feats.append(concept_vecs[ci])
            text_feats.append(text_vecs[ci])
    captions = {
        img: StubCaptionProvider()(img, concept, PROMPT_TEMPLATE.replace("<label>", concept))
        for img, concept in zip(image_ids, image_concepts)
    }
    bank = FeatureBank(
        image_ids=image_ids,
        image_features=np.stack(image_feats).astype(np.float32),
        text_features=np.stack(text_feats).astype(np.float32),
        image_concepts=image_concepts,
        captions=captions,
        categories=categories,
        provider_metadata={
            "backbone": "synthetic-planted",
            "embedding_dim": d,
            "prompt_template": PROMPT_TEMPLATE,
            "seed": spec.seed,
        },
    )
    logger.info(
        "synthetic dataset: %d train / %d test trials, %d images, d=%d",
        train.n_trials, test.n_trials, bank.n_images, d,
    )
    return train, test, bank
