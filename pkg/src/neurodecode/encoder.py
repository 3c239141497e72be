"""Five-stage EEG encoder.

Stages, each shape-preserving until the final embedding:

1. subject adaptation: per-subject linear channel map
2. graph attention over the fully connected channel graph (with self-loops)
3. transformer over channel tokens, projected back to the time axis
4. channel gating from time-pooled features plus an electrode-coordinate prior
5. temporal/spatial convolution block, flattened and projected to the
   embedding dimension

All parameter initialization draws from an explicit torch.Generator, so a
fixed seed reproduces the model bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .config import ConfigError, dataclass_from_dict
from .containers import ContainerFormatError, read_container, write_container


@dataclass
class TsConvConfig:
    """Temporal/spatial convolution block sizes."""

    temporal_kernel: int = 25
    feature_maps: int = 40
    pool_window: int = 51
    pool_stride: int = 5
    input_norm: bool = True

    @property
    def min_time_samples(self) -> int:
        return self.temporal_kernel + self.pool_window - 1

    def pooled_length(self, time_samples: int) -> int:
        conv_len = time_samples - self.temporal_kernel + 1
        return (conv_len - self.pool_window) // self.pool_stride + 1

    def feature_length(self, time_samples: int) -> int:
        return self.feature_maps * self.pooled_length(time_samples)

    def validate(self, time_samples: int) -> None:
        for name in ("temporal_kernel", "feature_maps", "pool_window", "pool_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"tsconv.{name} must be at least 1")
        if time_samples < self.min_time_samples:
            raise ConfigError(
                f"time_samples {time_samples} is below the convolution block's "
                f"minimum {self.min_time_samples} "
                f"(temporal_kernel + pool_window - 1)"
            )

    @classmethod
    def for_time_samples(cls, time_samples: int) -> "TsConvConfig":
        """Full-scale sizes when the signal is long enough, reduced otherwise."""
        full = cls()
        if time_samples >= full.min_time_samples:
            return full
        kernel = max(3, time_samples // 5)
        window = max(3, time_samples // 5 + 1)
        stride = max(1, window // 3)
        cfg = cls(
            temporal_kernel=kernel,
            feature_maps=full.feature_maps,
            pool_window=window,
            pool_stride=stride,
            input_norm=full.input_norm,
        )
        cfg.validate(time_samples)
        return cfg


@dataclass
class EncoderConfig:
    channels: int
    time_samples: int
    embedding_dim: int
    subject_ids: tuple[str, ...]
    gat_heads: int = 1
    gat_leaky_slope: float = 0.2
    transformer_layers: int = 1
    transformer_model_dim: int = 250
    transformer_heads: int = 5
    gate_hidden: int | None = None
    coord_table: dict | None = None
    tsconv: TsConvConfig = field(default_factory=TsConvConfig)
    subject_init_noise: float = 1e-3
    shared_subject_map: bool = False

    def __post_init__(self):
        self.subject_ids = tuple(self.subject_ids)

    def resolved_gate_hidden(self) -> int:
        if self.gate_hidden is not None:
            return self.gate_hidden
        return math.ceil(self.channels / 2)

    def validate(self) -> None:
        if self.channels < 1:
            raise ConfigError("channels must be at least 1")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be at least 1")
        if not self.subject_ids:
            raise ConfigError("subject_ids must not be empty")
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise ConfigError("subject_ids must be unique")
        if self.gat_heads < 1:
            raise ConfigError("gat_heads must be at least 1")
        if self.transformer_layers < 0:
            raise ConfigError("transformer_layers must be nonnegative")
        if self.transformer_model_dim % self.transformer_heads != 0:
            raise ConfigError(
                f"transformer_model_dim {self.transformer_model_dim} must be divisible "
                f"by transformer_heads {self.transformer_heads}"
            )
        if self.resolved_gate_hidden() < 1:
            raise ConfigError("gate_hidden must be at least 1")
        self.tsconv.validate(self.time_samples)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["subject_ids"] = list(self.subject_ids)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return dataclass_from_dict(cls, data, "encoder_config")


# --- electrode coordinates -------------------------------------------------

def default_hemisphere_coords(n_channels: int) -> np.ndarray:
    """Deterministic spread of n points over the upper unit hemisphere."""
    golden = math.pi * (3.0 - math.sqrt(5.0))
    coords = np.empty((n_channels, 3))
    for i in range(n_channels):
        z = (i + 0.5) / n_channels
        r = math.sqrt(max(0.0, 1.0 - z * z))
        theta = golden * i
        coords[i] = (r * math.cos(theta), r * math.sin(theta), z)
    return coords


def resolve_coords(channel_names: Sequence[str], coord_table: dict | None) -> np.ndarray:
    """Coordinates per channel: from the table when named, hemisphere default otherwise."""
    fallback = default_hemisphere_coords(len(channel_names))
    coords = np.empty((len(channel_names), 3))
    for i, name in enumerate(channel_names):
        if coord_table and name in coord_table:
            coords[i] = np.asarray(coord_table[name], dtype=float)
        else:
            coords[i] = fallback[i]
    return coords


def read_coord_csv(path: str | Path) -> dict[str, tuple[float, float, float]]:
    """Read an electrode table: header name,x,y,z then one row per electrode."""
    table: dict[str, tuple[float, float, float]] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["name", "x", "y", "z"]:
            raise ValueError(f"coordinate file {path} must start with header name,x,y,z")
        for row in reader:
            if len(row) != 4:
                raise ValueError(f"malformed coordinate row in {path}: {row}")
            name = row[0]
            if name in table:
                raise ValueError(f"duplicate electrode {name!r} in {path}")
            table[name] = (float(row[1]), float(row[2]), float(row[3]))
    return table


def write_coord_csv(path: str | Path, table: dict[str, Sequence[float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "x", "y", "z"])
        for name, xyz in table.items():
            writer.writerow([name, repr(float(xyz[0])), repr(float(xyz[1])), repr(float(xyz[2]))])


# --- seeded initialization helpers ----------------------------------------

def _uniform_(tensor: torch.Tensor, bound: float, g: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_((torch.rand(tensor.shape, generator=g) * 2.0 - 1.0) * bound)


def _normal_(tensor: torch.Tensor, std: float, g: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_(torch.randn(tensor.shape, generator=g) * std)


def init_linear(layer: nn.Linear, g: torch.Generator) -> None:
    fan_in = layer.weight.shape[1]
    bound = 1.0 / math.sqrt(fan_in)
    _uniform_(layer.weight, bound, g)
    if layer.bias is not None:
        _uniform_(layer.bias, bound, g)


def init_conv(layer: nn.Conv2d, g: torch.Generator) -> None:
    fan_in = layer.in_channels * layer.kernel_size[0] * layer.kernel_size[1]
    bound = 1.0 / math.sqrt(fan_in)
    _uniform_(layer.weight, bound, g)
    if layer.bias is not None:
        _uniform_(layer.bias, bound, g)


# --- stages ----------------------------------------------------------------

class SubjectAdapter(nn.Module):
    """Per-subject channel-space linear map, initialized near identity."""

    def __init__(
        self,
        subject_ids: Sequence[str],
        channels: int,
        init_noise: float,
        shared: bool,
        g: torch.Generator,
    ):
        super().__init__()
        self.subject_ids = tuple(subject_ids)
        self.shared = shared
        n_maps = 1 if shared else len(self.subject_ids)
        eye = torch.eye(channels).expand(n_maps, channels, channels).clone()
        if init_noise:
            eye = eye + init_noise * torch.randn(eye.shape, generator=g)
        self.weight = nn.Parameter(eye)
        self._row = {sid: (0 if shared else i) for i, sid in enumerate(self.subject_ids)}

    def forward(self, x: torch.Tensor, subject_ids: Sequence[str]) -> torch.Tensor:
        try:
            rows = [self._row[s] for s in subject_ids]
        except KeyError as exc:
            raise ValueError(f"unknown subject id {exc.args[0]!r}") from exc
        maps = self.weight[rows]
        return torch.bmm(maps, x)


class ChannelGraphAttention(nn.Module):
    """Attention over the fully connected channel graph, with residual.

    Per head: scores e_ij = leaky_relu(a_src . (W h_i) + a_dst . (W h_j)),
    attention = softmax over j (self-loop included), output_i = sum_j a_ij W h_j.
    Heads are averaged before the residual.
    """

    def __init__(self, time_samples: int, heads: int, slope: float, g: torch.Generator):
        super().__init__()
        self.slope = slope
        self.weight = nn.Parameter(torch.empty(heads, time_samples, time_samples))
        _uniform_(self.weight, 1.0 / math.sqrt(time_samples), g)
        self.a_src = nn.Parameter(torch.zeros(heads, time_samples))
        self.a_dst = nn.Parameter(torch.zeros(heads, time_samples))

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Return the (B, heads, C, C) attention matrix for input (B, C, T)."""
        projected = torch.einsum("htu,bcu->bhct", self.weight, x)
        src = torch.einsum("bhct,ht->bhc", projected, self.a_src)
        dst = torch.einsum("bhct,ht->bhc", projected, self.a_dst)
        scores = nn.functional.leaky_relu(
            src.unsqueeze(3) + dst.unsqueeze(2), negative_slope=self.slope
        )
        return torch.softmax(scores, dim=3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        projected = torch.einsum("htu,bcu->bhct", self.weight, x)
        alpha = self.attention(x)
        aggregated = torch.matmul(alpha, projected)
        return aggregated.mean(dim=1) + x


class TransformerBlock(nn.Module):
    """Scaled dot-product self-attention and feed-forward, each with a residual."""

    def __init__(self, model_dim: int, heads: int, g: torch.Generator):
        super().__init__()
        if model_dim % heads != 0:
            raise ConfigError(f"model_dim {model_dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = nn.Linear(model_dim, model_dim)
        self.k = nn.Linear(model_dim, model_dim)
        self.v = nn.Linear(model_dim, model_dim)
        self.out = nn.Linear(model_dim, model_dim)
        self.ff1 = nn.Linear(model_dim, 2 * model_dim)
        self.ff2 = nn.Linear(2 * model_dim, model_dim)
        for layer in (self.q, self.k, self.v, self.out, self.ff1, self.ff2):
            init_linear(layer, g)

    def _attend(self, z: torch.Tensor) -> torch.Tensor:
        b, n, m = z.shape
        dk = m // self.heads
        q = self.q(z).view(b, n, self.heads, dk).transpose(1, 2)
        k = self.k(z).view(b, n, self.heads, dk).transpose(1, 2)
        v = self.v(z).view(b, n, self.heads, dk).transpose(1, 2)
        scores = torch.matmul(q, k.transpose(2, 3)) / math.sqrt(dk)
        attn = torch.softmax(scores, dim=3)
        mixed = torch.matmul(attn, v).transpose(1, 2).reshape(b, n, m)
        return self.out(mixed)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        z = z + self._attend(z)
        return z + self.ff2(nn.functional.gelu(self.ff1(z)))


class ChannelTransformer(nn.Module):
    """Channels as tokens: embed, self-attend, project back to the time axis."""

    def __init__(
        self,
        channels: int,
        time_samples: int,
        model_dim: int,
        heads: int,
        layers: int,
        g: torch.Generator,
    ):
        super().__init__()
        self.embed = nn.Linear(time_samples, model_dim)
        init_linear(self.embed, g)
        self.channel_embed = nn.Parameter(torch.empty(channels, model_dim))
        _normal_(self.channel_embed, 0.02, g)
        self.blocks = nn.ModuleList(
            TransformerBlock(model_dim, heads, g) for _ in range(layers)
        )
        self.unembed = nn.Linear(model_dim, time_samples)
        init_linear(self.unembed, g)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.embed(x) + self.channel_embed
        for block in self.blocks:
            z = block(z)
        return self.unembed(z)


class GateSpatialPrior(nn.Module):
    """Sigmoid channel gate from time-pooled features, plus a coordinate prior.

    gate g = sigmoid(MLP(mean over time)); gated = x * g + x; then a per-channel
    offset derived from [x, y, z, radial norm] electrode coordinates is added,
    broadcast over time.
    """

    COORD_HIDDEN = 16

    def __init__(self, channels: int, gate_hidden: int, coords: np.ndarray, g: torch.Generator):
        super().__init__()
        self.gate_in = nn.Linear(channels, gate_hidden)
        self.gate_out = nn.Linear(gate_hidden, channels)
        self.coord_in = nn.Linear(4, self.COORD_HIDDEN)
        self.coord_hidden = nn.Linear(self.COORD_HIDDEN, self.COORD_HIDDEN)
        self.coord_proj = nn.Linear(self.COORD_HIDDEN, 1)
        for layer in (self.gate_in, self.gate_out, self.coord_in, self.coord_hidden, self.coord_proj):
            init_linear(layer, g)
        coords = np.asarray(coords, dtype=np.float64)
        augmented = np.concatenate(
            [coords, np.linalg.norm(coords, axis=1, keepdims=True)], axis=1
        )
        self.register_buffer("coords_aug", torch.tensor(augmented, dtype=torch.float32))

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=2)
        return torch.sigmoid(self.gate_out(nn.functional.gelu(self.gate_in(pooled))))

    def spatial_prior(self) -> torch.Tensor:
        hidden = nn.functional.gelu(self.coord_in(self.coords_aug))
        hidden = nn.functional.gelu(self.coord_hidden(hidden))
        return self.coord_proj(hidden).squeeze(-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gated = x * self.gate(x).unsqueeze(2) + x
        return gated + self.spatial_prior().view(1, -1, 1)


class TemporalSpatialEmbed(nn.Module):
    """Normalization, temporal conv, average pool, spatial conv, ELU, flatten."""

    def __init__(self, channels: int, time_samples: int, cfg: TsConvConfig, g: torch.Generator):
        super().__init__()
        cfg.validate(time_samples)
        self.cfg = cfg
        self.norm = nn.LayerNorm([channels, time_samples]) if cfg.input_norm else None
        self.conv_t = nn.Conv2d(1, cfg.feature_maps, (1, cfg.temporal_kernel))
        self.pool = nn.AvgPool2d((1, cfg.pool_window), stride=(1, cfg.pool_stride))
        self.conv_s = nn.Conv2d(cfg.feature_maps, cfg.feature_maps, (channels, 1))
        init_conv(self.conv_t, g)
        init_conv(self.conv_s, g)
        self.out_features = cfg.feature_length(time_samples)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.norm is not None:
            x = self.norm(x)
        z = self.conv_t(x.unsqueeze(1))
        z = self.pool(z)
        z = self.conv_s(z)
        z = nn.functional.elu(z)
        return z.flatten(start_dim=1)


class EEGEncoder(nn.Module):
    """The five stages composed, ending in a linear head to the embedding.

    `channel_names` (optional) drives electrode-coordinate lookup in the
    config's coord_table; unnamed or unlisted channels fall back to the
    deterministic hemisphere layout.
    """

    def __init__(
        self,
        config: EncoderConfig,
        seed: int = 0,
        channel_names: Sequence[str] | None = None,
    ):
        super().__init__()
        config.validate()
        self.config = config
        g = torch.Generator().manual_seed(seed)
        c, t = config.channels, config.time_samples
        if channel_names is not None and len(channel_names) != c:
            raise ConfigError(
                f"channel_names length {len(channel_names)} disagrees with channels {c}"
            )
        self.subject_adapter = SubjectAdapter(
            config.subject_ids, c, config.subject_init_noise, config.shared_subject_map, g
        )
        self.gat = ChannelGraphAttention(t, config.gat_heads, config.gat_leaky_slope, g)
        self.transformer = ChannelTransformer(
            c, t, config.transformer_model_dim, config.transformer_heads,
            config.transformer_layers, g,
        )
        names = list(channel_names) if channel_names is not None else [f"ch{i}" for i in range(c)]
        coords = resolve_coords(names, config.coord_table)
        self.gate_spatial = GateSpatialPrior(c, config.resolved_gate_hidden(), coords, g)
        self.tsconv = TemporalSpatialEmbed(c, t, config.tsconv, g)
        self.head = nn.Linear(self.tsconv.out_features, config.embedding_dim)
        init_linear(self.head, g)

    @property
    def feature_length(self) -> int:
        return self.tsconv.out_features

    def features(self, x: torch.Tensor, subject_ids: Sequence[str]) -> torch.Tensor:
        """Flattened convolutional features before the embedding head."""
        x = x.to(self.head.weight.dtype)
        x = self.subject_adapter(x, subject_ids)
        x = self.gat(x)
        x = self.transformer(x)
        x = self.gate_spatial(x)
        return self.tsconv(x)

    def forward(self, x: torch.Tensor, subject_ids: Sequence[str]) -> torch.Tensor:
        return self.head(self.features(x, subject_ids))


# --- checkpoints ------------------------------------------------------------

def save_encoder_checkpoint(
    base: str | Path, encoder: EEGEncoder, extra_metadata: dict | None = None
) -> None:
    tensors = {name: t.detach().cpu().numpy() for name, t in encoder.state_dict().items()}
    metadata = {"config": encoder.config.to_dict()}
    if extra_metadata:
        metadata.update(extra_metadata)
    write_container(base, kind="encoder_checkpoint", tensors=tensors, metadata=metadata)


def load_encoder_checkpoint(base: str | Path) -> tuple[EEGEncoder, dict]:
    _, tensors, metadata = read_container(base, expected_kind="encoder_checkpoint")
    config = EncoderConfig.from_dict(metadata["config"])
    encoder = EEGEncoder(config, seed=0)
    expected = set(encoder.state_dict().keys())
    stored = set(tensors.keys())
    missing = sorted(expected - stored)
    if missing:
        raise ContainerFormatError(
            f"checkpoint {base} is missing parameter groups: {missing}"
        )
    unexpected = sorted(stored - expected)
    if unexpected:
        raise ContainerFormatError(
            f"checkpoint {base} holds unknown parameter groups: {unexpected}"
        )
    encoder.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    return encoder, metadata
