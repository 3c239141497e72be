"""Masked-reconstruction pretraining of the EEG encoder.

The time axis is cut into L = T / patch_len non-overlapping patches, a fixed
count round(r * L) of them is replaced with standard-normal noise, the encoder
runs on the corrupted signal, and a small transformer decoder predicts the
original patch contents. The loss is the mean squared error over every patch
entry of every sample (masked and visible alike), so the objective also keeps
visible patches faithful.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .config import ConfigError
from .encoder import (
    EEGEncoder,
    EncoderConfig,
    TransformerBlock,
    TsConvConfig,
    init_linear,
    _normal_,
)
from .trials import TrialTensor, zscore_trials
from .validation import check_trials

logger = logging.getLogger(__name__)

TRANSFER_STRATEGIES = ("none", "all_except_subject", "all")
SUBJECT_GROUP_PREFIX = "subject_adapter."


def patchify(x: torch.Tensor, patch_len: int) -> torch.Tensor:
    """(B, C, T) -> (B, L, C * patch_len), channel-major within each patch."""
    b, c, t = x.shape
    if t % patch_len != 0:
        raise ConfigError(f"patch_len {patch_len} does not divide time_samples {t}")
    n_patches = t // patch_len
    return (
        x.reshape(b, c, n_patches, patch_len)
        .permute(0, 2, 1, 3)
        .reshape(b, n_patches, c * patch_len)
    )


def unpatchify(tokens: torch.Tensor, channels: int) -> torch.Tensor:
    """Inverse of :func:`patchify`; exact, no arithmetic is performed."""
    b, n_patches, width = tokens.shape
    if width % channels != 0:
        raise ValueError(f"token width {width} is not a multiple of channels {channels}")
    patch_len = width // channels
    return (
        tokens.reshape(b, n_patches, channels, patch_len)
        .permute(0, 2, 1, 3)
        .reshape(b, channels, n_patches * patch_len)
    )


def mask_count(n_patches: int, ratio: float) -> int:
    """Number of masked patches: ratio * L rounded half up."""
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1], got {ratio}")
    return int(np.floor(ratio * n_patches + 0.5))


@dataclass
class MaskPlan:
    """Per-sample sorted masked-patch indices for one batch."""

    indices: np.ndarray  # (batch, n_masked) int64, each row sorted ascending
    n_patches: int
    ratio: float

    @property
    def n_masked(self) -> int:
        return self.indices.shape[1]


def sample_mask(
    batch_size: int, n_patches: int, ratio: float, rng: np.random.Generator
) -> MaskPlan:
    """Draw round(r * L) masked indices uniformly without replacement per sample."""
    m = mask_count(n_patches, ratio)
    rows = np.empty((batch_size, m), dtype=np.int64)
    for i in range(batch_size):
        rows[i] = np.sort(rng.choice(n_patches, size=m, replace=False))
    return MaskPlan(indices=rows, n_patches=n_patches, ratio=ratio)


def corrupt(tokens: torch.Tensor, plan: MaskPlan, rng: np.random.Generator) -> torch.Tensor:
    """Replace masked patches with standard-normal noise; visible patches are untouched."""
    b, n_patches, width = tokens.shape
    if plan.indices.shape[0] != b or plan.n_patches != n_patches:
        raise ValueError("mask plan does not match the token batch")
    corrupted = tokens.clone()
    if plan.n_masked == 0:
        return corrupted
    noise = rng.standard_normal((b, plan.n_masked, width))
    rows = torch.from_numpy(plan.indices)
    batch_idx = torch.arange(b).unsqueeze(1)
    corrupted[batch_idx, rows] = torch.as_tensor(noise, dtype=tokens.dtype)
    return corrupted


class ReconstructionDecoder(nn.Module):
    """Maps flat encoder features to per-patch reconstructions.

    A linear adapter turns the features into L tokens of width W, positional
    embeddings are added, D transformer blocks run, and a layer-normalized
    linear head predicts each patch's C * patch_len values.
    """

    def __init__(
        self,
        in_features: int,
        n_patches: int,
        patch_width: int,
        width: int = 256,
        depth: int = 2,
        heads: int = 4,
        seed: int = 0,
    ):
        super().__init__()
        if width % heads != 0:
            raise ConfigError(f"decoder width {width} not divisible by heads {heads}")
        g = torch.Generator().manual_seed(seed)
        self.n_patches = n_patches
        self.width = width
        self.latent_proj = nn.Linear(in_features, n_patches * width)
        init_linear(self.latent_proj, g)
        self.pos_embed = nn.Parameter(torch.empty(n_patches, width))
        _normal_(self.pos_embed, 0.02, g)
        self.blocks = nn.ModuleList(TransformerBlock(width, heads, g) for _ in range(depth))
        self.norm = nn.LayerNorm(width)
        self.pred = nn.Linear(width, patch_width)
        init_linear(self.pred, g)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        b = features.shape[0]
        z = self.latent_proj(features).view(b, self.n_patches, self.width)
        z = z + self.pos_embed
        for block in self.blocks:
            z = block(z)
        return self.pred(self.norm(z))


def reconstruct(
    encoder: EEGEncoder,
    decoder: ReconstructionDecoder,
    corrupted_signal: torch.Tensor,
    subject_ids: Sequence[str],
) -> torch.Tensor:
    """Encode the corrupted signal and decode per-patch predictions (B, L, C*p)."""
    return decoder(encoder.features(corrupted_signal, subject_ids))


def reconstruction_loss(
    predicted: torch.Tensor,
    target: torch.Tensor,
    plan: MaskPlan | None = None,
    loss_on: str = "all",
) -> torch.Tensor:
    """Mean squared error over patch entries.

    loss_on="all" averages over every entry of every patch (the default
    objective); loss_on="masked" averages over masked patches only and is kept
    for the ablation harness.
    """
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {target.shape}")
    if loss_on == "all":
        return ((predicted - target) ** 2).mean()
    if loss_on == "masked":
        if plan is None:
            raise ValueError("loss_on='masked' requires a mask plan")
        if plan.n_masked == 0:
            return predicted.new_zeros(())
        rows = torch.from_numpy(plan.indices)
        batch_idx = torch.arange(predicted.shape[0]).unsqueeze(1)
        diff = predicted[batch_idx, rows] - target[batch_idx, rows]
        return (diff**2).mean()
    raise ConfigError(f"loss_on must be 'all' or 'masked', got {loss_on!r}")


class MaskedReconstructionPretrainer(BaseEstimator):
    """Stage-1 trainer: fits the encoder by masked reconstruction.

    After `fit`, `encoder_` holds the trained encoder, `decoder_` the decoder
    (kept for inspection, discarded by weight transfer), and `loss_history_`
    the per-epoch mean training loss.
    """

    def __init__(
        self,
        patch_len: int = 10,
        mask_ratio: float = 0.3,
        decoder_width: int = 256,
        decoder_depth: int = 2,
        decoder_heads: int = 4,
        epochs: int = 200,
        batch_size: int = 1000,
        lr: float = 2e-4,
        betas: tuple[float, float] = (0.5, 0.999),
        weight_decay: float = 0.01,
        loss_on: str = "all",
        standardize: bool = True,
        encoder_config: EncoderConfig | None = None,
        seed: int = 0,
    ):
        self.patch_len = patch_len
        self.mask_ratio = mask_ratio
        self.decoder_width = decoder_width
        self.decoder_depth = decoder_depth
        self.decoder_heads = decoder_heads
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.loss_on = loss_on
        self.standardize = standardize
        self.encoder_config = encoder_config
        self.seed = seed

    def _resolve_config(self, trials: TrialTensor) -> EncoderConfig:
        if self.encoder_config is not None:
            cfg = self.encoder_config
            if cfg.channels != trials.n_channels or cfg.time_samples != trials.n_samples:
                raise ConfigError(
                    f"encoder config expects (C={cfg.channels}, T={cfg.time_samples}) "
                    f"but trials are (C={trials.n_channels}, T={trials.n_samples})"
                )
            return cfg
        return EncoderConfig(
            channels=trials.n_channels,
            time_samples=trials.n_samples,
            embedding_dim=64,
            subject_ids=tuple(sorted(set(trials.subject_ids))),
            tsconv=TsConvConfig.for_time_samples(trials.n_samples),
        )

    def fit(self, trials: TrialTensor):
        check_trials(trials)
        config = self._resolve_config(trials)
        if trials.n_samples % self.patch_len != 0:
            raise ConfigError(
                f"patch_len {self.patch_len} does not divide time_samples {trials.n_samples}"
            )
        n_patches = trials.n_samples // self.patch_len
        if self.standardize:
            trials = zscore_trials(trials)
        data = torch.as_tensor(trials.data, dtype=torch.float32)

        encoder = EEGEncoder(config, seed=self.seed, channel_names=trials.channel_names)
        decoder = ReconstructionDecoder(
            in_features=encoder.feature_length,
            n_patches=n_patches,
            patch_width=trials.n_channels * self.patch_len,
            width=self.decoder_width,
            depth=self.decoder_depth,
            heads=self.decoder_heads,
            seed=self.seed + 1,
        )
        params = list(encoder.parameters()) + list(decoder.parameters())
        optimizer = torch.optim.AdamW(
            params, lr=self.lr, betas=tuple(self.betas), weight_decay=self.weight_decay
        )
        rng = np.random.default_rng(self.seed)
        n = trials.n_trials
        history = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                xb = data[idx]
                ids = [trials.subject_ids[i] for i in idx]
                tokens = patchify(xb, self.patch_len)
                plan = sample_mask(len(idx), n_patches, self.mask_ratio, rng)
                corrupted = unpatchify(corrupt(tokens, plan, rng), trials.n_channels)
                predicted = reconstruct(encoder, decoder, corrupted, ids)
                loss = reconstruction_loss(predicted, tokens, plan, self.loss_on)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(loss.item())
            mean_loss = float(np.mean(epoch_losses))
            history.append(mean_loss)
            if epoch == 0 or (epoch + 1) % 25 == 0:
                logger.info("pretrain epoch %d/%d: loss %.6f", epoch + 1, self.epochs, mean_loss)
        self.encoder_ = encoder
        self.decoder_ = decoder
        self.config_ = config
        self.loss_history_ = np.array(history)
        return self


def transfer_weights(
    source_state: dict[str, torch.Tensor],
    target: EEGEncoder,
    strategy: str,
) -> dict[str, list[str]]:
    """Copy pretrained encoder groups into `target` per the named strategy.

    Strategies: "none" copies nothing, "all_except_subject" copies every group
    but the subject adapter, "all" copies everything. Returns the copied and
    skipped tensor names. Shape mismatches raise, naming the tensor.
    """
    if strategy not in TRANSFER_STRATEGIES:
        raise ConfigError(
            f"unknown transfer strategy {strategy!r}; choose from {TRANSFER_STRATEGIES}"
        )
    target_state = target.state_dict()
    copied, skipped = [], []
    with torch.no_grad():
        for name, tensor in source_state.items():
            if name not in target_state:
                raise ValueError(f"pretrained tensor {name!r} has no counterpart in the target")
            if strategy == "none" or (
                strategy == "all_except_subject" and name.startswith(SUBJECT_GROUP_PREFIX)
            ):
                skipped.append(name)
                continue
            if target_state[name].shape != tensor.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: pretrained {tuple(tensor.shape)} vs "
                    f"target {tuple(target_state[name].shape)}"
                )
            target_state[name].copy_(tensor)
            copied.append(name)
    target.load_state_dict(target_state)
    return {"copied": copied, "skipped": skipped}


def save_loss_history(path: str | Path, losses: Sequence[float]) -> None:
    """Write the `epoch,loss` history CSV (epochs numbered from 1)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(losses, start=1):
            writer.writerow([epoch, repr(float(loss))])


def load_loss_history(path: str | Path) -> np.ndarray:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "loss"]:
            raise ValueError(f"loss history {path} must start with header epoch,loss")
        return np.array([float(row[1]) for row in reader])
