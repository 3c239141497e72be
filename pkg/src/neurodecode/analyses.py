"""Temporal, spatial, and spectral analyses over the alignment pipeline.

Each analysis restricts the trials (crop a time window, keep one electrode
region, band-pass one frequency band), retrains the alignment stage at the
configured scale, and evaluates zero-shot retrieval. Identity restrictions
(the full window, the all-channel region, the `full` band) pass the trials
through untouched, so with the same seed they reproduce the unrestricted
baseline exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .align import TrimodalAligner, ensemble_predict
from .config import ConfigError
from .encoder import EncoderConfig, TsConvConfig
from .evaluation import zero_shot_retrieval
from .features import FeatureBank
from .preprocessing import bandpass_filter
from .splits import split_train_val
from .trials import TrialTensor

logger = logging.getLogger(__name__)

EPOCH_SPAN_MS = (0.0, 1000.0)
WINDOW_MODES = ("cumulative", "sliding", "post_onset")
SLIDING_SPAN_MS = 100.0


@dataclass
class WindowSpec:
    """A time window on the epoch axis, defined by mode and anchor time t."""

    mode: str
    t_ms: float

    def __post_init__(self):
        if self.mode not in WINDOW_MODES:
            raise ConfigError(f"unknown window mode {self.mode!r}; choose from {WINDOW_MODES}")
        lo, hi = self.interval_ms()
        if not (EPOCH_SPAN_MS[0] <= lo < hi <= EPOCH_SPAN_MS[1]):
            raise ConfigError(
                f"window {self.mode} at t={self.t_ms} ms maps to [{lo}, {hi}) ms, "
                f"outside the epoch {list(EPOCH_SPAN_MS)} or empty"
            )

    def interval_ms(self) -> tuple[float, float]:
        if self.mode == "cumulative":
            return (0.0, self.t_ms)
        if self.mode == "sliding":
            return (self.t_ms - SLIDING_SPAN_MS, self.t_ms)
        return (self.t_ms, EPOCH_SPAN_MS[1])


def default_window_grid() -> list[WindowSpec]:
    """The three modes over t = 100..1000 ms in steps of 100.

    Post-onset windows stop at t = 900 since [1000, 1000) would be empty.
    """
    grid = []
    for t in range(100, 1001, 100):
        grid.append(WindowSpec("cumulative", float(t)))
        grid.append(WindowSpec("sliding", float(t)))
        if t <= 900:
            grid.append(WindowSpec("post_onset", float(t)))
    return grid


@dataclass
class BandSpec:
    """A frequency band; low/high of None marks the identity (`full`) band."""

    name: str
    low_hz: float | None
    high_hz: float | None

    @property
    def is_identity(self) -> bool:
        return self.low_hz is None and self.high_hz is None

    def validate(self, sample_rate_hz: float) -> None:
        if self.is_identity:
            return
        if self.low_hz is None or self.high_hz is None:
            raise ConfigError(f"band {self.name!r} must set both edges or neither")
        if not 0 < self.low_hz < self.high_hz:
            raise ConfigError(f"band {self.name!r} edges must satisfy 0 < low < high")
        if self.high_hz >= sample_rate_hz / 2:
            raise ConfigError(
                f"band {self.name!r} upper edge {self.high_hz} Hz reaches the Nyquist "
                f"rate {sample_rate_hz / 2} Hz"
            )


def default_bands() -> list[BandSpec]:
    return [
        BandSpec("full", None, None),
        BandSpec("delta", 0.5, 4.0),
        BandSpec("theta", 4.0, 8.0),
        BandSpec("alpha", 8.0, 13.0),
        BandSpec("beta", 13.0, 30.0),
        BandSpec("gamma", 30.0, 100.0),
    ]


REGION_PREFIXES = [
    ("Fp", "frontal"), ("AF", "frontal"),
    ("FT", "temporal"), ("FC", "central"),
    ("TP", "temporal"), ("CP", "parietal"),
    ("PO", "occipital"),
    ("F", "frontal"), ("T", "temporal"), ("C", "central"),
    ("P", "parietal"), ("O", "occipital"),
]


def region_map_from_names(channel_names: Sequence[str]) -> dict[str, list[str]]:
    """Group channels into scalp regions by standard electrode-name prefixes.

    Longest-prefix matching, so PO goes to occipital before P claims it for
    parietal. Unmatched names are an error listing every offender.
    """
    regions: dict[str, list[str]] = {}
    unmatched = []
    for name in channel_names:
        for prefix, region in REGION_PREFIXES:
            if name.startswith(prefix):
                regions.setdefault(region, []).append(name)
                break
        else:
            unmatched.append(name)
    if unmatched:
        raise ValueError(f"channels with no region prefix: {unmatched}")
    return regions


@dataclass
class AnalysisPipeline:
    """How to retrain and score the alignment stage inside an analysis.

    `encoder_config` describes the unrestricted data; restricted shapes derive
    from it. When `pretrained_state` is set it is reused only while the
    restricted shape still matches the unrestricted encoder (identity
    restrictions); otherwise the encoder re-initializes and the row records
    that.
    """

    encoder_config: EncoderConfig
    aligner_params: dict = field(default_factory=dict)
    n_val: int = 0
    split_seed: int = 0
    k_list: tuple[int, ...] = (1, 5)
    pretrained_state: dict | None = None
    transfer: str = "all"

    def config_for(self, channels: int, time_samples: int) -> EncoderConfig:
        base = self.encoder_config
        if channels == base.channels and time_samples == base.time_samples:
            return base
        return replace(
            base,
            channels=channels,
            time_samples=time_samples,
            gate_hidden=None,
            tsconv=TsConvConfig.for_time_samples(time_samples),
        )


def run_alignment_eval(
    train: TrialTensor,
    test: TrialTensor,
    bank: FeatureBank,
    pipeline: AnalysisPipeline,
    seed: int,
) -> dict:
    """Train the alignment stage once and score zero-shot retrieval."""
    config = pipeline.config_for(train.n_channels, train.n_samples)
    shapes_match = (
        config is pipeline.encoder_config and pipeline.pretrained_state is not None
    )
    if pipeline.pretrained_state is not None and not shapes_match:
        logger.info(
            "restricted shape (C=%d, T=%d) differs from the pretrained encoder; "
            "re-initializing", train.n_channels, train.n_samples,
        )
    params = dict(pipeline.aligner_params)
    aligner = TrimodalAligner(
        encoder_config=config,
        pretrained_state=pipeline.pretrained_state if shapes_match else None,
        transfer=pipeline.transfer,
        seed=seed,
        **params,
    )
    if pipeline.n_val > 0:
        train_idx, val_idx = split_train_val(
            train.n_trials, pipeline.n_val, pipeline.split_seed, train.concept_ids
        )
        fit_train = train.select(train_idx)
        fit_val = train.select(val_idx)
    else:
        fit_train, fit_val = train, None
    aligner.fit(fit_train, bank, fit_val)
    candidates = sorted(set(test.image_ids))
    sims, cand = ensemble_predict(
        aligner.checkpoints_, test, bank, candidates, "image", aligner.standardize
    )
    result = zero_shot_retrieval(sims, test.image_ids, cand, pipeline.k_list, test.subject_ids)
    return {
        "top_k": {int(k): v for k, v in result.top_k.items()},
        "per_subject": result.per_subject,
        "n_candidates": result.n_candidates,
        "stopped_epoch": aligner.stopped_epoch_,
        "pretrain": "reused" if shapes_match else (
            "none" if pipeline.pretrained_state is None else "reinit"
        ),
    }


def _aggregate(per_seed: dict[int, dict], k_list: Sequence[int]) -> dict:
    return {
        int(k): float(np.mean([per_seed[s]["top_k"][k] for s in per_seed])) for k in k_list
    }


def crop_to_window(trials: TrialTensor, window: WindowSpec) -> TrialTensor | None:
    """Slice trials to the window, clipped to the trial span; None if empty.

    Sample indices derive from the trials' own rate, so a cumulative window
    covering the whole epoch returns the data unchanged.
    """
    rate = trials.sample_rate_hz
    lo_ms, hi_ms = window.interval_ms()
    lo = int(round(lo_ms * rate / 1000.0))
    hi = int(round(hi_ms * rate / 1000.0))
    lo = max(0, lo)
    hi = min(trials.n_samples, hi)
    if hi <= lo:
        return None
    if lo == 0 and hi == trials.n_samples:
        return trials
    return trials.crop_samples(lo, hi)


def temporal_window_analysis(
    train: TrialTensor,
    test: TrialTensor,
    bank: FeatureBank,
    pipeline: AnalysisPipeline,
    windows: Sequence[WindowSpec] | None = None,
    seeds: Sequence[int] = (0,),
) -> list[dict]:
    """Retrain and score per time window; one result row per window."""
    if windows is None:
        windows = default_window_grid()
    rows = []
    for window in windows:
        row = {"mode": window.mode, "t_ms": window.t_ms}
        cropped_train = crop_to_window(train, window)
        cropped_test = crop_to_window(test, window)
        if cropped_train is None or cropped_test is None:
            row.update(status="skipped", reason="window outside the trial span")
            rows.append(row)
            continue
        try:
            candidate = pipeline.config_for(
                cropped_train.n_channels, cropped_train.n_samples
            )
            min_t = candidate.tsconv.min_time_samples
        except ConfigError as exc:
            row.update(status="skipped", reason=str(exc))
            rows.append(row)
            continue
        if cropped_train.n_samples < min_t:
            row.update(
                status="skipped",
                reason=f"{cropped_train.n_samples} samples is below the encoder minimum {min_t}",
            )
            rows.append(row)
            continue
        per_seed = {
            s: run_alignment_eval(cropped_train, cropped_test, bank, pipeline, s)
            for s in seeds
        }
        row.update(
            status="ok",
            n_samples=cropped_train.n_samples,
            pretrain=per_seed[seeds[0]]["pretrain"],
            top_k=_aggregate(per_seed, pipeline.k_list),
            per_seed={s: per_seed[s]["top_k"] for s in per_seed},
        )
        rows.append(row)
        logger.info(
            "window %s t=%g: top-1 %.3f",
            window.mode, window.t_ms, row["top_k"][pipeline.k_list[0]],
        )
    return rows


def spatial_region_analysis(
    train: TrialTensor,
    test: TrialTensor,
    bank: FeatureBank,
    pipeline: AnalysisPipeline,
    region_map: dict[str, Sequence[str]] | None = None,
    seeds: Sequence[int] = (0,),
) -> list[dict]:
    """Retrain and score per electrode region; channel order is preserved."""
    if region_map is None:
        region_map = region_map_from_names(train.channel_names)
    rows = []
    for region in sorted(region_map):
        names = [n for n in region_map[region] if n in set(train.channel_names)]
        row = {"region": region, "n_channels": len(names)}
        if not names:
            row.update(status="skipped", reason="no channels in this region")
            rows.append(row)
            continue
        if len(names) == train.n_channels:
            sub_train, sub_test = train, test
        else:
            sub_train = train.select_channels(names)
            sub_test = test.select_channels(names)
        per_seed = {
            s: run_alignment_eval(sub_train, sub_test, bank, pipeline, s) for s in seeds
        }
        row.update(
            status="ok",
            pretrain=per_seed[seeds[0]]["pretrain"],
            top_k=_aggregate(per_seed, pipeline.k_list),
            per_seed={s: per_seed[s]["top_k"] for s in per_seed},
        )
        rows.append(row)
        logger.info("region %s (%d ch): top-1 %.3f", region, len(names),
                    row["top_k"][pipeline.k_list[0]])
    return rows


def filter_to_band(trials: TrialTensor, band: BandSpec, order: int = 4) -> TrialTensor:
    """Zero-phase band-pass each trial; the identity band returns trials as-is."""
    if band.is_identity:
        return trials
    band.validate(trials.sample_rate_hz)
    filtered = bandpass_filter(
        trials.data, trials.sample_rate_hz, band.low_hz, band.high_hz, order
    )
    return TrialTensor(
        data=filtered.astype(trials.data.dtype),
        sample_rate_hz=trials.sample_rate_hz,
        channel_names=trials.channel_names,
        subject_ids=trials.subject_ids,
        concept_ids=trials.concept_ids,
        image_ids=trials.image_ids,
    )


def spectral_band_analysis(
    train: TrialTensor,
    test: TrialTensor,
    bank: FeatureBank,
    pipeline: AnalysisPipeline,
    bands: Sequence[BandSpec] | None = None,
    seeds: Sequence[int] = (0,),
) -> list[dict]:
    """Retrain and score per frequency band; `full` is the untouched baseline."""
    if bands is None:
        bands = default_bands()
    rows = []
    for band in bands:
        band.validate(train.sample_rate_hz)
        row = {
            "band": band.name,
            "low_hz": band.low_hz,
            "high_hz": band.high_hz,
        }
        band_train = filter_to_band(train, band)
        band_test = filter_to_band(test, band)
        per_seed = {
            s: run_alignment_eval(band_train, band_test, bank, pipeline, s) for s in seeds
        }
        row.update(
            status="ok",
            pretrain=per_seed[seeds[0]]["pretrain"],
            top_k=_aggregate(per_seed, pipeline.k_list),
            per_seed={s: per_seed[s]["top_k"] for s in per_seed},
        )
        rows.append(row)
        logger.info("band %s: top-1 %.3f", band.name, row["top_k"][pipeline.k_list[0]])
    return rows
