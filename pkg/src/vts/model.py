"""Full video-to-speech network: frontend -> upsample -> [concat speaker] -> decoder."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .conditioner import COND_DIM, Conditioner, concat_condition
from .decoder import Decoder
from .disentangle import SpeakerClassifier
from .frontend import Frontend, upsample_features

MODES = ("B", "B-spk", "SI", "SE", "SE-norm")


@dataclass
class ModelConfig:
    d_v: int = 64
    conv_channels: int = 32
    widths: tuple[int, ...] = (32, 32, 64, 64)
    strides: tuple[int, ...] = (2, 1, 2, 1)
    reduction: int = 2
    prenet_dim: int = 64
    decoder_hidden: int = 128
    classifier_hidden: int = 128
    upsample: str = "nearest"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.widths) != len(self.strides):
            raise ValueError("widths and strides must have the same length")


@dataclass
class ModelShape:
    """What the network needs to know about the data it is trained on."""

    n_speakers: int
    n_mels: int = 40
    r_av: int = 4


class VideoToSpeech(nn.Module):
    def __init__(self, mode: str, shape: ModelShape, cfg: ModelConfig = ModelConfig(), classifier: str | None = None):
        super().__init__()
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.r_av = shape.r_av
        self.upsample = cfg.upsample
        self.frontend = Frontend(cfg.d_v, cfg.conv_channels, widths=cfg.widths, strides=cfg.strides)
        self.conditioner = None
        ctx_dim = cfg.d_v
        if self.uses_speaker:
            self.conditioner = Conditioner(mode, n_speakers=shape.n_speakers)
            ctx_dim += COND_DIM
        self.decoder = Decoder(ctx_dim, shape.n_mels, cfg.reduction, cfg.prenet_dim, cfg.decoder_hidden)
        self.classifier = None
        if classifier is not None:
            self.classifier = SpeakerClassifier(classifier, cfg.d_v, shape.n_speakers, cfg.classifier_hidden)

    @property
    def uses_speaker(self) -> bool:
        return self.mode in ("SI", "SE", "SE-norm")

    @property
    def uses_embeddings(self) -> bool:
        return self.mode in ("SE", "SE-norm")

    def generator_parameters(self):
        for name, p in self.named_parameters():
            if not name.startswith("classifier."):
                yield p

    def context(self, feats: torch.Tensor, speaker: torch.Tensor | None = None) -> torch.Tensor:
        up = upsample_features(feats, self.r_av, self.upsample)
        if self.conditioner is None:
            return up
        if speaker is None:
            raise ValueError(f"mode {self.mode} needs a speaker input")
        return concat_condition(up, self.conditioner(speaker))

    def forward(self, video, target, speaker=None, dropout_rate: float = 0.0, generator=None):
        """Teacher-forced prediction and the visual features it was computed from."""
        feats = self.frontend(video)
        pred = self.decoder(self.context(feats, speaker), target, dropout_rate, generator)
        return pred, feats

    @torch.no_grad()
    def synthesize(self, video: torch.Tensor, speaker: torch.Tensor | None = None) -> torch.Tensor:
        feats = self.frontend(video)
        return self.decoder.free_running(self.context(feats, speaker))
