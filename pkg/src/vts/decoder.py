"""Autoregressive mel decoder (Tacotron2-shaped, attention-free) with frame dropout."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F


def apply_frame_dropout(
    frames: torch.Tensor,
    rate: float,
    mean_frame: torch.Tensor,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Replace each frame (row) by ``mean_frame`` independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1], got {rate}")
    if rate == 0.0:
        return frames
    mask = torch.rand(frames.shape[:-1], generator=generator, dtype=torch.float64) < rate
    return torch.where(mask.unsqueeze(-1), mean_frame.to(frames.dtype).expand_as(frames), frames)


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return F.mse_loss(pred, target)


class Decoder(nn.Module):
    """Emits ``r`` mel frames per step from the matching ``r`` context frames and the previous group."""

    def __init__(self, context_dim: int, n_mels: int = 40, r: int = 2, prenet_dim: int = 64, hidden: int = 128):
        super().__init__()
        if r < 1:
            raise ValueError("reduction factor must be >= 1")
        self.r, self.n_mels, self.context_dim = r, n_mels, context_dim
        self.prenet = nn.Sequential(
            nn.Linear(r * n_mels, prenet_dim), nn.ReLU(),
            nn.Linear(prenet_dim, prenet_dim), nn.ReLU(),
        )
        self.rnn = nn.LSTM(prenet_dim + r * context_dim, hidden, batch_first=True)
        self.proj = nn.Linear(hidden + r * context_dim, r * n_mels)
        self.register_buffer("mean_frame", torch.zeros(n_mels))

    def set_mean_frame(self, mean_frame) -> None:
        """Store the training-set mean frame; it is also the go frame and the output bias."""
        m = torch.as_tensor(mean_frame, dtype=self.mean_frame.dtype)
        self.mean_frame.copy_(m)
        with torch.no_grad():
            self.proj.bias.copy_(m.repeat(self.r))

    def _pad(self, context, target=None):
        extra = (-context.shape[1]) % self.r
        if extra:
            context = torch.cat([context, context[:, -1:].expand(-1, extra, -1)], dim=1)
            if target is not None:
                target = torch.cat([target, self.mean_frame.expand(target.shape[0], extra, -1).to(target.dtype)], dim=1)
        return context, target

    def _go(self, batch: int, dtype) -> torch.Tensor:
        return self.mean_frame.to(dtype).repeat(self.r).expand(batch, 1, -1)

    def forward(
        self,
        context: torch.Tensor,
        target: torch.Tensor,
        dropout_rate: float = 0.0,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Teacher-forced decoding: (B, F, C) context and (B, F, n_mels) target -> prediction."""
        if context.shape[:2] != target.shape[:2]:
            raise ValueError(f"context has {context.shape[1]} frames, target has {target.shape[1]}")
        B, n_frames = target.shape[:2]
        cond = apply_frame_dropout(target, dropout_rate, self.mean_frame, generator)
        context, cond = self._pad(context, cond)
        steps = context.shape[1] // self.r
        ctx = context.reshape(B, steps, self.r * self.context_dim)
        groups = cond.reshape(B, steps, self.r * self.n_mels)
        prev = torch.cat([self._go(B, groups.dtype), groups[:, :-1]], dim=1)
        h, _ = self.rnn(torch.cat([self.prenet(prev), ctx], dim=-1))
        out = self.proj(torch.cat([h, ctx], dim=-1)).reshape(B, steps * self.r, self.n_mels)
        return out[:, :n_frames]

    def free_running(self, context: torch.Tensor) -> torch.Tensor:
        """Inference: each step consumes the decoder's own previous prediction."""
        B, n_frames = context.shape[:2]
        context, _ = self._pad(context)
        steps = context.shape[1] // self.r
        ctx = context.reshape(B, steps, self.r * self.context_dim)
        prev = self._go(B, context.dtype)
        state, outs = None, []
        for t in range(steps):
            c = ctx[:, t : t + 1]
            h, state = self.rnn(torch.cat([self.prenet(prev), c], dim=-1), state)
            prev = self.proj(torch.cat([h, c], dim=-1))
            outs.append(prev)
        return torch.cat(outs, dim=1).reshape(B, steps * self.r, self.n_mels)[:, :n_frames]


def decode_teacher_forced(context, target, dropout_rate, generator, decoder: Decoder) -> torch.Tensor:
    return decoder(context, target, dropout_rate, generator)


def decode_free_running(context, decoder: Decoder, n_steps: int | None = None) -> torch.Tensor:
    if n_steps is not None and n_steps * decoder.r != context.shape[-2]:
        raise ValueError(f"{n_steps} steps of {decoder.r} frames do not cover {context.shape[-2]} context frames")
    squeeze = context.dim() == 2
    out = decoder.free_running(context.unsqueeze(0) if squeeze else context)
    return out.squeeze(0) if squeeze else out
