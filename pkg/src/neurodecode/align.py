"""Contrastive alignment of EEG, image, and text embeddings.

One shared learnable temperature scales two similarity matrices: EEG-image
(the primary objective) and image-text (a regularizer that keeps the image
head close to the text geometry). EEG-text alignment is never trained
directly; it emerges through the shared image space. Image features pass
through a single trainable affine projection; text features are used as
stored, only normalized.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .config import ConfigError
from .containers import read_container, write_container
from .encoder import EEGEncoder, EncoderConfig, TsConvConfig, init_linear
from .features import FeatureBank
from .pretrain import transfer_weights
from .trials import TrialTensor, zscore_trials
from .validation import check_bank, check_trials, require_ids_in_bank

logger = logging.getLogger(__name__)


def normalize_rows(x: torch.Tensor, what: str = "embeddings") -> torch.Tensor:
    """Project rows onto the unit sphere; zero-norm rows are an error."""
    norms = x.norm(dim=-1, keepdim=True)
    if torch.any(norms == 0):
        raise ValueError(f"{what} contain a zero-norm row; cannot normalize")
    return x / norms


def similarity_matrices(
    f_eeg: torch.Tensor, f_img: torch.Tensor, f_text: torch.Tensor, tau: torch.Tensor | float
) -> tuple[torch.Tensor, torch.Tensor]:
    """Temperature-scaled EEG-image and image-text similarity matrices."""
    s_ei = tau * f_eeg @ f_img.T
    s_it = tau * f_img @ f_text.T
    return s_ei, s_it


def symmetric_infonce(scores: torch.Tensor) -> torch.Tensor:
    """Symmetric InfoNCE with matched pairs on the diagonal.

    Average of the row-wise and column-wise cross-entropy against the diagonal
    targets. For batch size 1 this is exactly zero.
    """
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"scores must be square, got shape {tuple(scores.shape)}")
    targets = torch.arange(scores.shape[0], device=scores.device)
    rows = nn.functional.cross_entropy(scores, targets)
    cols = nn.functional.cross_entropy(scores.T, targets)
    return 0.5 * (rows + cols)


def total_loss(
    loss_ei: torch.Tensor, loss_it: torch.Tensor, alpha: float
) -> torch.Tensor:
    """Convex combination (1 - alpha) * EEG-image + alpha * image-text."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return (1.0 - alpha) * loss_ei + alpha * loss_it


@dataclass
class AlignmentCheckpoint:
    """Weights snapshot taken at a low-validation-loss epoch."""

    encoder_config: EncoderConfig
    encoder_state: dict
    proj_weight: torch.Tensor
    proj_bias: torch.Tensor
    log_tau: float
    epoch: int
    val_loss: float


class TrimodalAligner(BaseEstimator):
    """Stage-2 trainer: contrastive alignment with early stopping.

    After `fit`: `encoder_` and `image_proj_` hold the final-epoch weights,
    `checkpoints_` the lowest-validation-loss snapshots (ascending loss),
    `history_` one row per epoch (epoch, train_loss, val_loss, tau).
    """

    def __init__(
        self,
        alpha: float = 0.1,
        batch_size: int = 1000,
        max_epochs: int = 150,
        patience: int = 10,
        n_checkpoints: int = 3,
        lr: float = 2e-4,
        betas: tuple[float, float] = (0.5, 0.999),
        weight_decay: float = 0.01,
        temperature_init: float = 1.0 / 0.07,
        encoder_config: EncoderConfig | None = None,
        pretrained_state: dict | None = None,
        transfer: str = "all",
        standardize: bool = True,
        seed: int = 0,
    ):
        self.alpha = alpha
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.n_checkpoints = n_checkpoints
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.temperature_init = temperature_init
        self.encoder_config = encoder_config
        self.pretrained_state = pretrained_state
        self.transfer = transfer
        self.standardize = standardize
        self.seed = seed

    def _resolve_config(self, trials: TrialTensor, bank: FeatureBank) -> EncoderConfig:
        if self.encoder_config is not None:
            cfg = self.encoder_config
            if cfg.channels != trials.n_channels or cfg.time_samples != trials.n_samples:
                raise ConfigError(
                    f"encoder config expects (C={cfg.channels}, T={cfg.time_samples}) "
                    f"but trials are (C={trials.n_channels}, T={trials.n_samples})"
                )
            if cfg.embedding_dim != bank.embedding_dim:
                raise ConfigError(
                    f"encoder embedding_dim {cfg.embedding_dim} disagrees with the "
                    f"feature bank dimension {bank.embedding_dim}"
                )
            return cfg
        return EncoderConfig(
            channels=trials.n_channels,
            time_samples=trials.n_samples,
            embedding_dim=bank.embedding_dim,
            subject_ids=tuple(sorted(set(trials.subject_ids))),
            tsconv=TsConvConfig.for_time_samples(trials.n_samples),
        )

    def _batch_loss(self, encoder, image_proj, log_tau, xb, ids, img_feats, text_feats):
        f_eeg = normalize_rows(encoder(xb, ids), "EEG embeddings")
        f_img = normalize_rows(image_proj(img_feats), "image embeddings")
        f_text = normalize_rows(text_feats, "text embeddings")
        tau = torch.exp(log_tau)
        s_ei, s_it = similarity_matrices(f_eeg, f_img, f_text, tau)
        return total_loss(symmetric_infonce(s_ei), symmetric_infonce(s_it), self.alpha)

    def fit(
        self,
        trials: TrialTensor,
        bank: FeatureBank,
        val_trials: TrialTensor | None = None,
    ):
        check_trials(trials)
        check_bank(bank)
        require_ids_in_bank(trials.image_ids, bank, "training trials")
        if val_trials is not None:
            check_trials(val_trials)
            require_ids_in_bank(val_trials.image_ids, bank, "validation trials")
        if self.temperature_init <= 0:
            raise ConfigError("temperature_init must be positive")
        config = self._resolve_config(trials, bank)

        if self.standardize:
            trials = zscore_trials(trials)
            val_trials = zscore_trials(val_trials) if val_trials is not None else None
        data = torch.as_tensor(trials.data, dtype=torch.float32)
        img_all = torch.as_tensor(bank.image_features_for(trials.image_ids), dtype=torch.float32)
        text_all = torch.as_tensor(bank.text_features_for(trials.image_ids), dtype=torch.float32)

        encoder = EEGEncoder(config, seed=self.seed, channel_names=trials.channel_names)
        if self.pretrained_state is not None:
            report = transfer_weights(self.pretrained_state, encoder, self.transfer)
            logger.info(
                "transferred %d pretrained tensors (strategy %s, skipped %d)",
                len(report["copied"]), self.transfer, len(report["skipped"]),
            )
        g = torch.Generator().manual_seed(self.seed + 101)
        image_proj = nn.Linear(bank.embedding_dim, bank.embedding_dim)
        init_linear(image_proj, g)
        log_tau = nn.Parameter(torch.tensor(math.log(self.temperature_init)))

        optimizer = torch.optim.AdamW(
            list(encoder.parameters()) + list(image_proj.parameters()) + [log_tau],
            lr=self.lr,
            betas=tuple(self.betas),
            weight_decay=self.weight_decay,
        )
        rng = np.random.default_rng(self.seed)

        if val_trials is not None:
            val_x = torch.as_tensor(val_trials.data, dtype=torch.float32)
            val_ids = val_trials.subject_ids
            val_img = torch.as_tensor(
                bank.image_features_for(val_trials.image_ids), dtype=torch.float32
            )
            val_text = torch.as_tensor(
                bank.text_features_for(val_trials.image_ids), dtype=torch.float32
            )

        n = trials.n_trials
        best = math.inf
        stale = 0
        kept: list[AlignmentCheckpoint] = []
        history = []
        for epoch in range(1, self.max_epochs + 1):
            order = rng.permutation(n)
            batch_losses = []
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                loss = self._batch_loss(
                    encoder, image_proj, log_tau,
                    data[idx], [trials.subject_ids[i] for i in idx],
                    img_all[idx], text_all[idx],
                )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                batch_losses.append(loss.item())
            train_loss = float(np.mean(batch_losses))
            if val_trials is not None:
                with torch.no_grad():
                    val_loss = self._batch_loss(
                        encoder, image_proj, log_tau, val_x, val_ids, val_img, val_text
                    ).item()
                monitored = val_loss
            else:
                val_loss = math.nan
                monitored = train_loss
            tau_now = float(torch.exp(log_tau).item())
            history.append((epoch, train_loss, val_loss, tau_now))

            kept.append(
                AlignmentCheckpoint(
                    encoder_config=config,
                    encoder_state={k: v.detach().clone() for k, v in encoder.state_dict().items()},
                    proj_weight=image_proj.weight.detach().clone(),
                    proj_bias=image_proj.bias.detach().clone(),
                    log_tau=float(log_tau.item()),
                    epoch=epoch,
                    val_loss=float(monitored),
                )
            )
            kept.sort(key=lambda ck: (ck.val_loss, ck.epoch))
            del kept[self.n_checkpoints :]

            if monitored < best:
                best = monitored
                stale = 0
            else:
                stale += 1
            if epoch % 25 == 0 or epoch == 1:
                logger.info(
                    "align epoch %d: train %.4f val %s tau %.3f",
                    epoch, train_loss,
                    "-" if math.isnan(val_loss) else f"{val_loss:.4f}", tau_now,
                )
            if stale >= self.patience:
                logger.info("early stop at epoch %d (no improvement for %d)", epoch, stale)
                break

        self.encoder_ = encoder
        self.image_proj_ = image_proj
        self.log_tau_ = float(log_tau.item())
        self.checkpoints_ = kept
        self.history_ = history
        self.stopped_epoch_ = history[-1][0]
        return self

    def predict_similarity(
        self,
        trials: TrialTensor,
        bank: FeatureBank,
        candidate_ids: Sequence[str] | None = None,
        space: str = "image",
    ):
        if not hasattr(self, "checkpoints_"):
            raise ValueError("aligner is not fitted; call fit first")
        return ensemble_predict(
            self.checkpoints_, trials, bank, candidate_ids, space, self.standardize
        )


def _checkpoint_model(ck: AlignmentCheckpoint, channel_names) -> tuple[EEGEncoder, nn.Linear]:
    encoder = EEGEncoder(ck.encoder_config, seed=0, channel_names=list(channel_names))
    encoder.load_state_dict(ck.encoder_state)
    encoder.eval()
    proj = nn.Linear(ck.proj_weight.shape[1], ck.proj_weight.shape[0])
    with torch.no_grad():
        proj.weight.copy_(ck.proj_weight)
        proj.bias.copy_(ck.proj_bias)
    return encoder, proj


def ensemble_predict(
    checkpoints: Sequence[AlignmentCheckpoint],
    trials: TrialTensor,
    bank: FeatureBank,
    candidate_ids: Sequence[str] | None = None,
    space: str = "image",
    standardize: bool = True,
):
    """Cosine similarities averaged over checkpoint models.

    Each checkpoint encodes the trials and, for space="image", projects the
    candidate image features through its own head; for space="text" the stored
    text features are used directly. Returns (similarity matrix of shape
    (n_trials, n_candidates), candidate id list).
    """
    if not checkpoints:
        raise ValueError("no checkpoints to ensemble")
    if space not in ("image", "text"):
        raise ValueError(f"space must be 'image' or 'text', got {space!r}")
    check_trials(trials)
    if candidate_ids is None:
        candidate_ids = list(bank.image_ids)
    candidate_ids = list(candidate_ids)
    if standardize:
        trials = zscore_trials(trials)
    data = torch.as_tensor(trials.data, dtype=torch.float32)
    accum = np.zeros((trials.n_trials, len(candidate_ids)), dtype=np.float64)
    for ck in checkpoints:
        encoder, proj = _checkpoint_model(ck, trials.channel_names)
        with torch.no_grad():
            f_eeg = normalize_rows(encoder(data, trials.subject_ids), "EEG embeddings")
            if space == "image":
                feats = torch.as_tensor(
                    bank.image_features_for(candidate_ids), dtype=torch.float32
                )
                cand = normalize_rows(proj(feats), "candidate embeddings")
            else:
                feats = torch.as_tensor(
                    bank.text_features_for(candidate_ids), dtype=torch.float32
                )
                cand = normalize_rows(feats, "candidate embeddings")
            accum += (f_eeg @ cand.T).numpy().astype(np.float64)
    return accum / len(checkpoints), candidate_ids


def save_alignment_checkpoint(base: str | Path, ck: AlignmentCheckpoint) -> None:
    tensors = {f"encoder.{k}": v.cpu().numpy() for k, v in ck.encoder_state.items()}
    tensors["image_proj.weight"] = ck.proj_weight.cpu().numpy()
    tensors["image_proj.bias"] = ck.proj_bias.cpu().numpy()
    write_container(
        base,
        kind="alignment_checkpoint",
        tensors=tensors,
        metadata={
            "config": ck.encoder_config.to_dict(),
            "log_tau": ck.log_tau,
            "epoch": ck.epoch,
            "val_loss": ck.val_loss,
        },
    )


def load_alignment_checkpoint(base: str | Path) -> AlignmentCheckpoint:
    _, tensors, metadata = read_container(base, expected_kind="alignment_checkpoint")
    config = EncoderConfig.from_dict(metadata["config"])
    encoder_state = {
        k[len("encoder."):]: torch.from_numpy(v)
        for k, v in tensors.items()
        if k.startswith("encoder.")
    }
    return AlignmentCheckpoint(
        encoder_config=config,
        encoder_state=encoder_state,
        proj_weight=torch.from_numpy(tensors["image_proj.weight"]),
        proj_bias=torch.from_numpy(tensors["image_proj.bias"]),
        log_tau=float(metadata["log_tau"]),
        epoch=int(metadata["epoch"]),
        val_loss=float(metadata["val_loss"]),
    )


def save_alignment_history(path: str | Path, history: Sequence[tuple]) -> None:
    """Write the `epoch,train_loss,val_loss,tau` training history CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "tau"])
        for epoch, train, val, tau in history:
            writer.writerow([epoch, repr(float(train)), repr(float(val)), repr(float(tau))])


def load_alignment_history(path: str | Path) -> list[tuple]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "train_loss", "val_loss", "tau"]:
            raise ValueError(f"history {path} has unexpected header {header}")
        return [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in reader]
