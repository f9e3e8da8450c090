"""Speaker conditioning: learned identity table (SI) or projected embeddings (SE, SE-norm)."""
from __future__ import annotations

from typing import Iterable

import numpy as np
import torch
from torch import nn

from .synthdata import EMBEDDING_DIM, Embedding, Identity

COND_DIM = 32
VAR_FLOOR = 1e-8
MODES = ("SI", "SE", "SE-norm")


def fit_standardizer(embeddings) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and floored standard deviation over training embeddings."""
    e = np.asarray(embeddings, dtype=np.float64)
    return e.mean(axis=0), np.sqrt(np.maximum(e.var(axis=0), VAR_FLOOR))


def standardize(embeddings, mean, std) -> np.ndarray:
    return (np.asarray(embeddings, dtype=np.float64) - mean) / std


class Conditioner(nn.Module):
    def __init__(self, mode: str, n_speakers: int | None = None, dim: int = COND_DIM):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"conditioning mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.dim = dim
        if mode == "SI":
            if not n_speakers:
                raise ValueError("SI conditioning needs the number of training speakers")
            self.table = nn.Embedding(n_speakers, dim)
            nn.init.normal_(self.table.weight, 0.0, 0.1)
        else:
            self.proj = nn.Linear(EMBEDDING_DIM, dim, bias=False)
            self.register_buffer("emb_mean", torch.zeros(EMBEDDING_DIM))
            self.register_buffer("emb_std", torch.ones(EMBEDDING_DIM))

    @property
    def n_speakers(self) -> int:
        return self.table.num_embeddings if self.mode == "SI" else 0

    def set_standardizer(self, mean, std) -> None:
        self.emb_mean.copy_(torch.as_tensor(mean))
        self.emb_std.copy_(torch.as_tensor(std))

    def forward(self, speaker: torch.Tensor) -> torch.Tensor:
        """(B,) identity indices for SI, (B, 512) embeddings otherwise -> (B, 32)."""
        if self.mode == "SI":
            if speaker.is_floating_point():
                raise TypeError("SI conditioning takes identity indices, got embeddings")
            if speaker.numel() and (speaker.min() < 0 or speaker.max() >= self.n_speakers):
                raise IndexError(f"speaker identity out of range [0, {self.n_speakers})")
            return self.table(speaker)
        if not speaker.is_floating_point() or speaker.shape[-1] != EMBEDDING_DIM:
            raise TypeError(f"{self.mode} conditioning takes {EMBEDDING_DIM}-d embeddings")
        speaker = speaker.to(self.proj.weight.dtype)
        if self.mode == "SE-norm":
            speaker = (speaker - self.emb_mean) / self.emb_std
        return self.proj(speaker)

    def condition_vector(self, desc: Identity | Embedding) -> torch.Tensor:
        if self.mode == "SI":
            if not isinstance(desc, Identity):
                raise TypeError("SI conditioning needs an Identity descriptor")
            return self(torch.tensor([desc.index]))[0]
        if not isinstance(desc, Embedding):
            raise TypeError(f"{self.mode} conditioning needs an Embedding descriptor")
        return self(torch.as_tensor(desc.vector)[None])[0]


def concat_condition(upsampled: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
    """Append the same conditioning vector to every frame: (..., F, d_v) + (..., 32)."""
    cond = cond.unsqueeze(-2).expand(*upsampled.shape[:-1], cond.shape[-1])
    return torch.cat([upsampled, cond.to(upsampled.dtype)], dim=-1)


def mean_embedding(descriptors: Iterable[Embedding | np.ndarray]) -> Embedding:
    vecs = [d.vector if isinstance(d, Embedding) else np.asarray(d, dtype=np.float64) for d in descriptors]
    if not vecs:
        raise ValueError("mean of an empty set of embeddings")
    return Embedding(np.mean(np.stack(vecs), axis=0))
