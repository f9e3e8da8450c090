"""Video processing network: 3D convolution, residual stack, LSTM over time."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride)

    def forward(self, x):
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(self.conv2(F.relu(self.conv1(x))) + skip)


class Frontend(nn.Module):
    """Maps (B, T, H, W) grayscale video to (B, T, d_v) features.

    The 3D convolution has stride 1 in time and replicate-edge temporal padding,
    so the number of output feature vectors always equals the number of frames.
    """

    def __init__(
        self,
        d_v: int = 64,
        conv_channels: int = 32,
        conv_kernel: tuple[int, int, int] = (3, 5, 5),
        widths: tuple[int, ...] = (32, 32, 64, 64),
        strides: tuple[int, ...] = (2, 1, 2, 1),
    ):
        super().__init__()
        kt, kh, kw = conv_kernel
        self.time_pad = (kt - 1) // 2
        self.conv3d = nn.Conv3d(1, conv_channels, conv_kernel, stride=(1, 2, 2), padding=(0, kh // 2, kw // 2))
        blocks, c = [], conv_channels
        for w, s in zip(widths, strides):
            blocks.append(ResidualBlock(c, w, s))
            c = w
        self.resnet = nn.Sequential(*blocks)
        self.lstm = nn.LSTM(c, d_v, batch_first=True)
        self.d_v = d_v

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        if video.dim() == 3:
            return self.forward(video.unsqueeze(0)).squeeze(0)
        if not torch.isfinite(video).all():
            raise ValueError("video contains non-finite pixels")
        B, T = video.shape[:2]
        x = video.unsqueeze(1)
        if self.time_pad:
            p = self.time_pad
            x = torch.cat([x[:, :, :1].expand(-1, -1, p, -1, -1), x, x[:, :, -1:].expand(-1, -1, p, -1, -1)], dim=2)
        x = F.relu(self.conv3d(x))  # (B, C, T, h, w)
        x = x.transpose(1, 2).reshape(B * T, *x.shape[1:2], *x.shape[3:])
        x = self.resnet(x).mean(dim=(2, 3)).reshape(B, T, -1)
        out, _ = self.lstm(x)
        return out


def encode_video(clip, frontend: Frontend) -> torch.Tensor:
    """Features for one clip (a VideoClip, array or tensor of shape (T, H, W))."""
    frames = getattr(clip, "frames", clip)
    if not isinstance(frames, torch.Tensor):
        frames = torch.as_tensor(np.asarray(frames))
    param = next(frontend.parameters())
    return frontend(frames.to(param.dtype))


def upsample_features(feats: torch.Tensor, factor: int, method: str = "nearest") -> torch.Tensor:
    """Stretch (..., T, d) features to (..., factor * T, d).

    ``nearest`` repeats each vector ``factor`` times (output[i] = feats[i // factor]);
    ``linear`` interpolates between neighbouring frames.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsampling factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if method == "nearest":
        return feats.repeat_interleave(factor, dim=-2)
    if method == "linear":
        x = feats.transpose(-1, -2)
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        y = F.interpolate(x, scale_factor=factor, mode="linear", align_corners=False)
        y = y.squeeze(0) if squeeze else y
        return y.transpose(-1, -2)
    raise ValueError(f"unknown upsampling method {method!r}")
