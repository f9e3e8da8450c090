"""Speaker classifier on visual features and the disentanglement objectives.

Two schemes:

* ``dispel`` alternates a discriminator step (cross-entropy of the classifier on
  detached features) and a generator step (reconstruction minus lambda times the
  entropy of the classifier's predictions, with the classifier held fixed);
* ``revgrad`` minimises reconstruction plus lambda times the cross-entropy, with
  the classifier reading the features through a gradient reversal layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.func import functional_call

from .decoder import reconstruction_loss

LOG_FLOOR = 1e-12
DEFAULT_LAMBDA = 1e-4
MODES = ("none", "dispel", "revgrad")
KINDS = ("linear", "mlp")


@dataclass
class DisentangleConfig:
    mode: str = "none"
    classifier: str = "linear"
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        self.classifier = self.classifier.lower()
        if self.mode not in MODES:
            raise ValueError(f"disentangle mode must be one of {MODES}, got {self.mode!r}")
        if self.classifier not in KINDS:
            raise ValueError(f"classifier must be one of {KINDS}, got {self.classifier!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


class SpeakerClassifier(nn.Module):
    """Utterance-level speaker posterior from a (B, T, d_v) feature sequence.

    ``linear`` pools over time and applies one linear map; ``mlp`` runs a two-layer
    network on every frame before pooling, then a linear head.
    """

    def __init__(self, kind: str, d_v: int, n_speakers: int, hidden: int = 128):
        super().__init__()
        self.kind = kind.lower()
        if self.kind == "linear":
            self.body = None
            self.head = nn.Linear(d_v, n_speakers)
        elif self.kind == "mlp":
            self.body = nn.Sequential(nn.Linear(d_v, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU())
            self.head = nn.Linear(hidden, n_speakers)
        else:
            raise ValueError(f"unknown classifier kind {kind!r}")

    def logits(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.shape[-2] == 0:
            raise ValueError("cannot classify an empty sequence")
        if self.body is not None:
            feats = self.body(feats)
        return self.head(feats.mean(dim=-2))

    def forward(self, feats: torch.Tensor, frozen: bool = False) -> torch.Tensor:
        if frozen:
            params = {k: v.detach() for k, v in self.named_parameters()}
            return functional_call(self, params, (feats,))
        return torch.softmax(self.logits(feats), dim=-1)


class _ReverseGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad.neg()


def gradient_reversal(x: torch.Tensor) -> torch.Tensor:
    """Identity on the forward pass; negates the gradient on the way back."""
    return _ReverseGrad.apply(x)


def _check_distribution(p: torch.Tensor) -> None:
    if (p < 0).any():
        raise ValueError("probabilities must be non-negative")
    if ((p.sum(dim=-1) - 1.0).abs() > 1e-4).any():
        raise ValueError("probabilities must sum to 1")


def entropy(p: torch.Tensor) -> torch.Tensor:
    """-sum p ln p over the last axis, with 0 ln 0 = 0."""
    p = torch.as_tensor(p)
    _check_distribution(p)
    return -torch.xlogy(p, p).sum(dim=-1)


def cross_entropy(s, p: torch.Tensor) -> torch.Tensor:
    """-ln p[s] (floored at 1e-12) for true identities ``s``."""
    p = torch.as_tensor(p)
    _check_distribution(p)
    s = torch.as_tensor(s, dtype=torch.long)
    k = p.shape[-1]
    if ((s < 0) | (s >= k)).any():
        raise ValueError(f"speaker index outside [0, {k})")
    picked = p.gather(-1, s.unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(LOG_FLOOR))


def discriminator_loss(classifier: SpeakerClassifier, feats: torch.Tensor, speakers) -> torch.Tensor:
    """Mean cross-entropy of the classifier; the features are treated as constants."""
    return cross_entropy(speakers, classifier(feats.detach())).mean()


def generator_loss(pred, target, classifier: SpeakerClassifier, feats, lam: float = DEFAULT_LAMBDA) -> torch.Tensor:
    """Reconstruction error minus lambda times the mean prediction entropy; classifier held fixed."""
    rec = reconstruction_loss(pred, target)
    if lam == 0:
        return rec
    return rec - lam * entropy(classifier(feats, frozen=True)).mean()


def revgrad_loss(pred, target, classifier: SpeakerClassifier, feats, speakers, lam: float = DEFAULT_LAMBDA) -> torch.Tensor:
    rec = reconstruction_loss(pred, target)
    if lam == 0:
        return rec
    return rec + lam * cross_entropy(speakers, classifier(gradient_reversal(feats))).mean()

