"""Shared fixtures: a small planted synthetic dataset and encoder configs.

Session-scoped fixtures carry fitted models across test modules so the slow
training paths run once. Tests that mutate trials or banks must copy first.
"""

import numpy as np
import pytest

from neurodecode.align import TrimodalAligner
from neurodecode.encoder import EncoderConfig, TsConvConfig
from neurodecode.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def tiny_spec():
    return SyntheticSpec(
        n_concepts=6,
        n_test_concepts=3,
        images_per_concept=1,
        repetitions=2,
        n_subjects=2,
        channels=8,
        time_samples=30,
        embedding_dim=8,
        signal_to_noise=2.0,
        n_categories=3,
        seed=7,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    return generate_synthetic(tiny_spec)


@pytest.fixture(scope="session")
def tiny_encoder_config(tiny_dataset):
    train, _, _ = tiny_dataset
    return EncoderConfig(
        channels=train.n_channels,
        time_samples=train.n_samples,
        embedding_dim=8,
        subject_ids=tuple(sorted(set(train.subject_ids))),
        transformer_model_dim=32,
        transformer_heads=4,
        tsconv=TsConvConfig.for_time_samples(train.n_samples),
    )


@pytest.fixture(scope="session")
def fitted_aligner(tiny_dataset, tiny_encoder_config):
    train, _, bank = tiny_dataset
    aligner = TrimodalAligner(
        encoder_config=tiny_encoder_config,
        max_epochs=4,
        batch_size=16,
        n_checkpoints=3,
        seed=0,
    )
    aligner.fit(train, bank)
    return aligner


@pytest.fixture
def rng():
    return np.random.default_rng(123)
