"""Window, region, and band analysis tests.

The load-bearing checks are the identity restrictions: a full-epoch window,
the all-channel region, and the `full` band must reproduce the unrestricted
baseline to the last bit, because they hand the very same trial object to the
same seeded training loop.
"""

import numpy as np
import pytest

from neurodecode.analyses import (
    AnalysisPipeline,
    BandSpec,
    WindowSpec,
    crop_to_window,
    default_bands,
    default_window_grid,
    filter_to_band,
    region_map_from_names,
    run_alignment_eval,
    spatial_region_analysis,
    spectral_band_analysis,
    temporal_window_analysis,
)
from neurodecode.config import ConfigError
from neurodecode.encoder import EncoderConfig, TsConvConfig
from neurodecode.synthetic import SyntheticSpec, generate_synthetic
from neurodecode.trials import TrialTensor


# --- window grammar ---------------------------------------------------------

def test_window_interval_hand_values():
    assert WindowSpec("cumulative", 300.0).interval_ms() == (0.0, 300.0)
    assert WindowSpec("sliding", 300.0).interval_ms() == (200.0, 300.0)
    assert WindowSpec("post_onset", 300.0).interval_ms() == (300.0, 1000.0)


def test_window_rejects_out_of_span_anchors():
    with pytest.raises(ConfigError, match="outside the epoch"):
        WindowSpec("sliding", 50.0)  # would start at -50 ms
    with pytest.raises(ConfigError, match="outside the epoch"):
        WindowSpec("post_onset", 1000.0)  # empty [1000, 1000)
    with pytest.raises(ConfigError, match="outside the epoch"):
        WindowSpec("cumulative", 0.0)
    with pytest.raises(ConfigError, match="unknown window mode"):
        WindowSpec("centered", 500.0)


def test_default_window_grid_has_29_entries():
    grid = default_window_grid()
    assert len(grid) == 29
    by_mode = {}
    for w in grid:
        by_mode.setdefault(w.mode, []).append(w.t_ms)
    assert by_mode["cumulative"] == [float(t) for t in range(100, 1001, 100)]
    assert by_mode["sliding"] == [float(t) for t in range(100, 1001, 100)]
    assert by_mode["post_onset"] == [float(t) for t in range(100, 901, 100)]


def test_crop_full_span_returns_same_object(tiny_dataset):
    train, _, _ = tiny_dataset
    # 30 samples at 250 Hz span 120 ms, so the 1 s cumulative window covers all.
    assert crop_to_window(train, WindowSpec("cumulative", 1000.0)) is train


def test_crop_sample_indices_hand_check():
    data = np.tile(
        np.arange(250, dtype=np.float32), (4, 2, 1)
    )
    trials = TrialTensor(
        data=data,
        sample_rate_hz=250.0,
        channel_names=["C3", "C4"],
        subject_ids=["s1"] * 4,
        concept_ids=["c1"] * 4,
        image_ids=["c1_img00"] * 4,
    )
    cropped = crop_to_window(trials, WindowSpec("sliding", 500.0))
    # [400, 500) ms at 250 Hz is samples [100, 125).
    assert cropped.n_samples == 25
    assert np.array_equal(cropped.data[0, 0], np.arange(100, 125, dtype=np.float32))


def test_crop_window_beyond_trial_span_is_none(tiny_dataset):
    train, _, _ = tiny_dataset
    # Trials end at 120 ms; a [500, 1000) ms window has nothing to keep.
    assert crop_to_window(train, WindowSpec("post_onset", 500.0)) is None


# --- band grammar -----------------------------------------------------------

def test_band_validation():
    BandSpec("alpha", 8.0, 13.0).validate(250.0)
    BandSpec("full", None, None).validate(250.0)
    with pytest.raises(ConfigError, match="both edges"):
        BandSpec("half", 8.0, None).validate(250.0)
    with pytest.raises(ConfigError, match="0 < low < high"):
        BandSpec("inverted", 13.0, 8.0).validate(250.0)
    with pytest.raises(ConfigError, match="Nyquist"):
        BandSpec("wide", 1.0, 125.0).validate(250.0)


def test_default_bands_cover_canonical_ranges():
    bands = default_bands()
    assert [b.name for b in bands] == ["full", "delta", "theta", "alpha", "beta", "gamma"]
    assert bands[0].is_identity
    for band in bands[1:]:
        band.validate(250.0)


def test_filter_identity_band_returns_same_object(tiny_dataset):
    train, _, _ = tiny_dataset
    assert filter_to_band(train, BandSpec("full", None, None)) is train


def test_filter_band_changes_data_but_not_shape(tiny_dataset):
    train, _, _ = tiny_dataset
    filtered = filter_to_band(train, BandSpec("alpha", 8.0, 13.0))
    assert filtered.data.shape == train.data.shape
    assert filtered.data.dtype == train.data.dtype
    assert not np.array_equal(filtered.data, train.data)
    assert filtered.channel_names == train.channel_names


# --- electrode regions ------------------------------------------------------

def test_region_map_longest_prefix_wins():
    regions = region_map_from_names(["PO3", "P3", "FT7", "Fp1", "FC1", "O1", "C3", "T7"])
    assert regions["occipital"] == ["PO3", "O1"]
    assert regions["parietal"] == ["P3"]
    assert regions["temporal"] == ["FT7", "T7"]
    assert regions["frontal"] == ["Fp1"]
    assert regions["central"] == ["FC1", "C3"]


def test_region_map_rejects_unknown_names():
    with pytest.raises(ValueError, match=r"\['ch00', 'x9'\]"):
        region_map_from_names(["O1", "ch00", "x9"])


# --- identity restrictions reproduce the baseline ---------------------------

def make_pipeline(config, **overrides):
    params = dict(max_epochs=2, batch_size=16, n_checkpoints=2)
    params.update(overrides.pop("aligner_params", {}))
    return AnalysisPipeline(
        encoder_config=config, aligner_params=params, k_list=(1,), **overrides
    )


def test_identity_restrictions_reproduce_baseline_bitwise(
    tiny_dataset, tiny_encoder_config
):
    train, test, bank = tiny_dataset
    pipeline = make_pipeline(tiny_encoder_config)
    baseline = run_alignment_eval(train, test, bank, pipeline, seed=0)["top_k"]

    window_rows = temporal_window_analysis(
        train, test, bank, pipeline, windows=[WindowSpec("cumulative", 1000.0)], seeds=(0,)
    )
    band_rows = spectral_band_analysis(
        train, test, bank, pipeline, bands=[BandSpec("full", None, None)], seeds=(0,)
    )
    region_rows = spatial_region_analysis(
        train, test, bank, pipeline,
        region_map={"all": list(train.channel_names)}, seeds=(0,),
    )
    for row in (window_rows[0], band_rows[0], region_rows[0]):
        assert row["status"] == "ok"
        assert row["top_k"][1] == baseline[1], row
        assert row["per_seed"][0][1] == baseline[1], row


def test_run_alignment_eval_row_contents(tiny_dataset, tiny_encoder_config):
    train, test, bank = tiny_dataset
    pipeline = make_pipeline(tiny_encoder_config)
    row = run_alignment_eval(train, test, bank, pipeline, seed=0)
    assert set(row) == {"top_k", "per_subject", "n_candidates", "stopped_epoch", "pretrain"}
    assert row["n_candidates"] == len(set(test.image_ids))
    assert row["pretrain"] == "none"
    assert set(row["per_subject"]) == set(test.subject_ids)


def test_config_for_keeps_base_when_shapes_match(tiny_encoder_config):
    pipeline = make_pipeline(tiny_encoder_config)
    base = pipeline.config_for(
        tiny_encoder_config.channels, tiny_encoder_config.time_samples
    )
    assert base is tiny_encoder_config
    shrunk = pipeline.config_for(4, 25)
    assert shrunk.channels == 4
    assert shrunk.time_samples == 25
    assert shrunk.tsconv == TsConvConfig.for_time_samples(25)
    assert shrunk.gate_hidden is None


def test_window_analysis_skips_and_reports(tiny_dataset, tiny_encoder_config):
    train, test, bank = tiny_dataset
    pipeline = make_pipeline(tiny_encoder_config)
    rows = temporal_window_analysis(
        train, test, bank, pipeline,
        windows=[WindowSpec("post_onset", 500.0)], seeds=(0,),
    )
    assert rows[0]["status"] == "skipped"
    assert "outside the trial span" in rows[0]["reason"]


def slow_rate_copy(trials):
    return TrialTensor(
        data=trials.data,
        sample_rate_hz=30.0,
        channel_names=trials.channel_names,
        subject_ids=trials.subject_ids,
        concept_ids=trials.concept_ids,
        image_ids=trials.image_ids,
    )


def test_window_analysis_skips_below_encoder_minimum(tiny_dataset, tiny_encoder_config):
    train, test, bank = tiny_dataset
    pipeline = make_pipeline(tiny_encoder_config)
    # At 30 Hz a 100 ms sliding window keeps 3 samples, too few to convolve.
    rows = temporal_window_analysis(
        slow_rate_copy(train), slow_rate_copy(test), bank, pipeline,
        windows=[WindowSpec("sliding", 100.0)], seeds=(0,),
    )
    assert rows[0]["status"] == "skipped"
    assert "minimum" in rows[0]["reason"]


def test_region_analysis_skips_empty_region(tiny_dataset, tiny_encoder_config):
    train, test, bank = tiny_dataset
    pipeline = make_pipeline(tiny_encoder_config)
    rows = spatial_region_analysis(
        train, test, bank, pipeline,
        region_map={"phantom": ["Z1", "Z2"]}, seeds=(0,),
    )
    assert rows[0]["status"] == "skipped"
    assert rows[0]["n_channels"] == 0


# --- planted spatial signal -------------------------------------------------

def test_region_carrying_the_signal_outscores_pure_noise_region():
    spec = SyntheticSpec(
        n_concepts=6,
        n_test_concepts=3,
        images_per_concept=1,
        repetitions=8,
        n_subjects=1,
        channels=8,
        time_samples=30,
        embedding_dim=8,
        signal_to_noise=8.0,
        n_categories=3,
        seed=3,
    )
    train, test, bank = generate_synthetic(spec)
    names = ["O1", "O2", "O3", "O4", "F3", "F4", "F7", "F8"]

    def rename_and_scrub(trials, seed):
        rng = np.random.default_rng(seed)
        data = trials.data.copy()
        data[:, 4:, :] = rng.standard_normal(data[:, 4:, :].shape).astype(np.float32)
        return TrialTensor(
            data=data,
            sample_rate_hz=trials.sample_rate_hz,
            channel_names=names,
            subject_ids=trials.subject_ids,
            concept_ids=trials.concept_ids,
            image_ids=trials.image_ids,
        )

    config = EncoderConfig(
        channels=8,
        time_samples=30,
        embedding_dim=8,
        subject_ids=tuple(sorted(set(train.subject_ids))),
        transformer_model_dim=32,
        transformer_heads=4,
        tsconv=TsConvConfig.for_time_samples(30),
    )
    pipeline = make_pipeline(
        config, aligner_params=dict(max_epochs=30, batch_size=64, n_checkpoints=2)
    )
    rows = spatial_region_analysis(
        rename_and_scrub(train, 100), rename_and_scrub(test, 101), bank, pipeline,
        region_map={"occipital": names[:4], "frontal": names[4:]},
        seeds=(0, 1),
    )
    by_region = {row["region"]: row["top_k"][1] for row in rows}
    assert by_region["occipital"] > by_region["frontal"]
