"""Convolutional-recurrent sequence autoencoder and the composite loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

__all__ = ["EncoderConfig", "ConvRecAutoencoder", "composite_loss"]


@dataclass(frozen=True)
class EncoderConfig:
    seq_len: int = 32
    n_features: int = 7
    kernel_sizes: tuple[int, int] = (5, 5)
    filters: tuple[int, int] = (32, 32)
    pool: int = 2
    hidden: int = 32
    latent_dim: int = 16
    dropout: float = 0.1
    # "lstm" follows the reference architecture; "mean" swaps the recurrent
    # summarizer for temporal mean pooling and is never the default
    summarizer: str = "lstm"

    def __post_init__(self):
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if any(k >= self.seq_len for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be smaller than the sequence length")
        if self.seq_len % (self.pool**2):
            raise ValueError("seq_len must be divisible by pool**2")
        if self.summarizer not in ("lstm", "mean"):
            raise ValueError(f"unknown summarizer {self.summarizer!r}")

    @property
    def pooled_len(self) -> int:
        return self.seq_len // self.pool**2

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["kernel_sizes"] = tuple(d["kernel_sizes"])
        d["filters"] = tuple(d["filters"])
        return cls(**d)


class ConvRecAutoencoder(nn.Module):
    """Two conv+ReLU+max-pool blocks, a bidirectional LSTM summarizer and a
    mirrored decoder (LSTM, then upsampling conv blocks)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        f1, f2 = cfg.filters
        k1, k2 = cfg.kernel_sizes
        h = cfg.hidden
        self.conv1 = nn.Conv1d(cfg.n_features, f1, k1, padding="same")
        self.conv2 = nn.Conv1d(f1, f2, k2, padding="same")
        self.drop = nn.Dropout(cfg.dropout)
        if cfg.summarizer == "lstm":
            self.encoder_rnn = nn.LSTM(f2, h, batch_first=True, bidirectional=True)
            self.to_latent = nn.Linear(2 * h, cfg.latent_dim)
        else:
            self.encoder_rnn = None
            self.to_latent = nn.Linear(f2, cfg.latent_dim)
        self.from_latent = nn.Linear(cfg.latent_dim, f2)
        self.decoder_rnn = nn.LSTM(f2, h, batch_first=True, bidirectional=True)
        self.deconv1 = nn.Conv1d(2 * h, f1, k2, padding="same")
        self.deconv2 = nn.Conv1d(f1, cfg.n_features, k1, padding="same")

    def _check(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[1:] != (self.cfg.seq_len, self.cfg.n_features):
            raise ValueError(
                f"expected (batch, {self.cfg.seq_len}, {self.cfg.n_features}) input, got {tuple(x.shape)}"
            )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check(x)
        p = self.cfg.pool
        z = x.transpose(1, 2)
        z = F.max_pool1d(F.relu(self.conv1(z)), p)
        z = F.max_pool1d(F.relu(self.conv2(self.drop(z))), p)
        z = z.transpose(1, 2)  # (B, T', f2)
        if self.encoder_rnn is not None:
            _, (hn, _) = self.encoder_rnn(z)
            summary = torch.cat([hn[0], hn[1]], dim=1)
        else:
            summary = z.mean(dim=1)
        return self.to_latent(self.drop(summary))

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.dim() != 2 or latent.shape[1] != self.cfg.latent_dim:
            raise ValueError(f"expected (batch, {self.cfg.latent_dim}) latents, got {tuple(latent.shape)}")
        p = self.cfg.pool
        seed = self.from_latent(latent).unsqueeze(1).expand(-1, self.cfg.pooled_len, -1)
        y, _ = self.decoder_rnn(seed.contiguous())
        y = y.transpose(1, 2)
        y = F.relu(self.deconv1(F.interpolate(y, scale_factor=p, mode="nearest")))
        y = self.deconv2(F.interpolate(y, scale_factor=p, mode="nearest"))
        return y.transpose(1, 2)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.encode(x)
        return z, self.decode(z)


def composite_loss(
    x: torch.Tensor,
    recon: torch.Tensor,
    latent: torch.Tensor,
    centroids: torch.Tensor | None,
    lam: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """``(1 - lam) * L_rec + lam * L_clu``.

    ``L_rec`` is the mean squared reconstruction error over all entries;
    ``L_clu`` the mean over segments of the squared Euclidean distance to the
    nearest (assigned) centroid. Returns ``(loss, L_rec, L_clu)``.
    """
    rec = torch.mean((x - recon) ** 2)
    if centroids is None:
        clu = torch.zeros((), dtype=rec.dtype)
    else:
        d = ((latent[:, None, :] - centroids.detach()[None, :, :]) ** 2).sum(dim=2)
        clu = d.min(dim=1).values.mean()
    if lam == 0:
        return rec, rec, clu
    if lam == 1:
        return clu, rec, clu
    return (1 - lam) * rec + lam * clu, rec, clu
