"""EEG preprocessing: re-referencing, filtering, epoching, baseline, resampling.

The pipeline applied by :func:`preprocess` is, in order:

1. average re-reference over channels,
2. zero-phase band-pass (Butterworth, forward-backward),
3. per-event epoch extraction at the raw rate,
4. per-channel baseline correction against the pre-stimulus window,
5. polyphase resampling of the stimulus-locked window to the target rate.

Each step is also exported on its own so the individual numerical guarantees
(zero channel mean after re-referencing, zero baseline mean after correction,
stop-band attenuation of the filter) can be checked in isolation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator

from .config import ConfigError
from .trials import RawRecording, TrialTensor

logger = logging.getLogger(__name__)


@dataclass
class PreprocessConfig:
    """Parameters of the preprocessing chain.

    Attributes
    ----------
    band_low_hz, band_high_hz : float
        Pass-band edges of the zero-phase Butterworth band-pass.
    filter_order : int
        Design order per edge of the Butterworth prototype.
    target_rate_hz : float
        Rate the stimulus-locked epoch is resampled to.
    epoch_ms : tuple
        Epoch window relative to stimulus onset, in milliseconds, [lo, hi).
    baseline_ms : tuple
        Pre-stimulus window whose per-channel mean is subtracted, [lo, hi).
    """

    band_low_hz: float = 0.1
    band_high_hz: float = 100.0
    filter_order: int = 4
    target_rate_hz: float = 250.0
    epoch_ms: tuple[float, float] = (0.0, 1000.0)
    baseline_ms: tuple[float, float] = (-200.0, 0.0)

    def validate(self) -> None:
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ConfigError(
                f"band edges must satisfy 0 < low < high, got "
                f"({self.band_low_hz}, {self.band_high_hz})"
            )
        if self.band_high_hz > self.target_rate_hz / 2:
            raise ConfigError(
                f"band_high_hz {self.band_high_hz} exceeds the Nyquist rate "
                f"{self.target_rate_hz / 2} of the target rate"
            )
        if self.filter_order < 1:
            raise ConfigError("filter_order must be at least 1")
        lo, hi = self.epoch_ms
        if not lo < hi:
            raise ConfigError(f"epoch_ms must be a nonempty interval, got {self.epoch_ms}")
        blo, bhi = self.baseline_ms
        if not blo < bhi:
            raise ConfigError(f"baseline_ms must be a nonempty interval, got {self.baseline_ms}")
        n_target = (hi - lo) * self.target_rate_hz / 1000.0
        if abs(n_target - round(n_target)) > 1e-9:
            raise ConfigError(
                f"epoch span {hi - lo} ms does not resample to an integer sample "
                f"count at {self.target_rate_hz} Hz"
            )

    def epoch_samples_target(self) -> int:
        lo, hi = self.epoch_ms
        return int(round((hi - lo) * self.target_rate_hz / 1000.0))


def rereference(data: np.ndarray) -> np.ndarray:
    """Subtract the instantaneous mean over channels from every channel.

    Parameters
    ----------
    data : ndarray, shape (channels, samples)

    Returns
    -------
    ndarray of the same shape whose channel-wise mean is zero at every sample.
    """
    data = np.asarray(data, dtype=np.float64)
    return data - data.mean(axis=0, keepdims=True)


def bandpass_sos(low_hz: float, high_hz: float, order: int, rate_hz: float) -> np.ndarray:
    """Design the band-pass as second-order sections for stable zero-phase use."""
    nyquist = rate_hz / 2.0
    if high_hz >= nyquist:
        raise ConfigError(
            f"band_high_hz {high_hz} must lie below the Nyquist rate {nyquist}"
        )
    return signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=rate_hz, output="sos")


def bandpass_filter(
    data: np.ndarray, rate_hz: float, low_hz: float, high_hz: float, order: int = 4
) -> np.ndarray:
    """Zero-phase band-pass along the last axis (forward-backward filtering)."""
    sos = bandpass_sos(low_hz, high_hz, order, rate_hz)
    return signal.sosfiltfilt(sos, np.asarray(data, dtype=np.float64), axis=-1)


def baseline_correct(
    epochs: np.ndarray, rate_hz: float, window_ms: tuple[float, float], t0_ms: float
) -> np.ndarray:
    """Subtract the per-channel mean over a reference window from each epoch.

    Parameters
    ----------
    epochs : ndarray, shape (n_epochs, channels, samples)
    rate_hz : float
        Sampling rate of `epochs`.
    window_ms : tuple
        Reference window [lo, hi) in milliseconds on the epoch's time axis.
    t0_ms : float
        Time, in milliseconds, of the first sample of the epoch.

    Returns
    -------
    ndarray of the same shape. Within the reference window every channel of
    every epoch has zero mean (up to roundoff).
    """
    epochs = np.asarray(epochs, dtype=np.float64)
    lo = int(round((window_ms[0] - t0_ms) * rate_hz / 1000.0))
    hi = int(round((window_ms[1] - t0_ms) * rate_hz / 1000.0))
    if not 0 <= lo < hi <= epochs.shape[-1]:
        raise ValueError(
            f"baseline window {window_ms} maps to samples [{lo}, {hi}) outside the epoch"
        )
    baseline = epochs[:, :, lo:hi].mean(axis=2, keepdims=True)
    return epochs - baseline


def resample(data: np.ndarray, rate_from: float, rate_to: float) -> np.ndarray:
    """Polyphase resampling along the last axis; identity when rates agree."""
    if rate_from == rate_to:
        return np.asarray(data, dtype=np.float64)
    ratio = Fraction(rate_to).limit_denominator(10**6) / Fraction(rate_from).limit_denominator(
        10**6
    )
    return signal.resample_poly(
        np.asarray(data, dtype=np.float64), ratio.numerator, ratio.denominator, axis=-1
    )


def preprocess(
    recordings: RawRecording | Sequence[RawRecording],
    config: PreprocessConfig | None = None,
) -> TrialTensor:
    """Run the full preprocessing chain over one or more raw recordings.

    Events whose cut window (covering both the baseline and the epoch) falls
    outside the recording are rejected and reported through the module logger.

    Returns
    -------
    TrialTensor with trials from all recordings concatenated in input order,
    at the configured target rate.
    """
    if config is None:
        config = PreprocessConfig()
    config.validate()
    if isinstance(recordings, RawRecording):
        recordings = [recordings]
    if not recordings:
        raise ValueError("no recordings given")

    channel_names = recordings[0].channel_names
    all_trials, subjects, concepts, images = [], [], [], []
    rejected = 0
    for rec in recordings:
        if rec.channel_names != channel_names:
            raise ValueError(
                f"subject {rec.subject_id}: channel names disagree with the first recording"
            )
        if rec.sample_rate_hz < 2 * config.band_high_hz:
            raise ConfigError(
                f"subject {rec.subject_id}: raw rate {rec.sample_rate_hz} Hz cannot "
                f"represent the {config.band_high_hz} Hz band edge"
            )
        referenced = rereference(rec.data)
        filtered = bandpass_filter(
            referenced,
            rec.sample_rate_hz,
            config.band_low_hz,
            config.band_high_hz,
            config.filter_order,
        )
        fs = rec.sample_rate_hz
        cut_lo_ms = min(config.baseline_ms[0], config.epoch_ms[0])
        cut_lo = int(round(cut_lo_ms * fs / 1000.0))
        epoch_lo = int(round(config.epoch_ms[0] * fs / 1000.0))
        epoch_hi = int(round(config.epoch_ms[1] * fs / 1000.0))
        n_samples = filtered.shape[1]
        for ev in rec.events:
            start = ev.onset_sample + cut_lo
            stop = ev.onset_sample + epoch_hi
            if start < 0 or stop > n_samples:
                rejected += 1
                logger.warning(
                    "subject %s: event at sample %d (image %s) exceeds recording "
                    "bounds [0, %d); rejected",
                    rec.subject_id, ev.onset_sample, ev.image_id, n_samples,
                )
                continue
            cut = filtered[:, start:stop][np.newaxis]
            corrected = baseline_correct(cut, fs, config.baseline_ms, cut_lo_ms)
            epoch = corrected[:, :, epoch_lo - cut_lo : epoch_hi - cut_lo]
            trial = resample(epoch, fs, config.target_rate_hz)[0]
            all_trials.append(trial)
            subjects.append(rec.subject_id)
            concepts.append(ev.concept_id)
            images.append(ev.image_id)
    if not all_trials:
        raise ValueError("every event was rejected; no trials produced")
    if rejected:
        logger.warning("rejected %d out-of-bounds events in total", rejected)
    data = np.stack(all_trials)
    expected = config.epoch_samples_target()
    if data.shape[2] != expected:
        raise RuntimeError(
            f"resampled epoch length {data.shape[2]} disagrees with the expected {expected}"
        )
    return TrialTensor(
        data=data,
        sample_rate_hz=config.target_rate_hz,
        channel_names=list(channel_names),
        subject_ids=subjects,
        concept_ids=concepts,
        image_ids=images,
    )


class EEGPreprocessor(BaseEstimator):
    """Estimator-style wrapper around :func:`preprocess`.

    Stateless: `fit` validates the configuration and returns self, `transform`
    maps raw recordings to a TrialTensor.
    """

    def __init__(
        self,
        band_low_hz: float = 0.1,
        band_high_hz: float = 100.0,
        filter_order: int = 4,
        target_rate_hz: float = 250.0,
        epoch_ms: tuple[float, float] = (0.0, 1000.0),
        baseline_ms: tuple[float, float] = (-200.0, 0.0),
    ):
        self.band_low_hz = band_low_hz
        self.band_high_hz = band_high_hz
        self.filter_order = filter_order
        self.target_rate_hz = target_rate_hz
        self.epoch_ms = epoch_ms
        self.baseline_ms = baseline_ms

    def _config(self) -> PreprocessConfig:
        return PreprocessConfig(
            band_low_hz=self.band_low_hz,
            band_high_hz=self.band_high_hz,
            filter_order=self.filter_order,
            target_rate_hz=self.target_rate_hz,
            epoch_ms=tuple(self.epoch_ms),
            baseline_ms=tuple(self.baseline_ms),
        )

    def fit(self, X=None, y=None):
        self._config().validate()
        return self

    def transform(self, X: RawRecording | Sequence[RawRecording]) -> TrialTensor:
        return preprocess(X, self._config())
