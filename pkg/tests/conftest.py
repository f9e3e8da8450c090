import contextlib

import numpy as np
import pytest
import torch
from torch.nn import functional as F

from vts.model import ModelShape, VideoToSpeech


def central_difference(fn, param: torch.Tensor, index, h: float = 1e-3) -> float:
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + h
        up = fn().item()
        param[index] = orig - h
        down = fn().item()
        param[index] = orig
    return (up - down) / (2 * h)


def analytic_grad(fn, param: torch.Tensor, index) -> float:
    param.grad = None
    fn().backward()
    return param.grad[index].item()


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_indices(param: torch.Tensor, n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    flat = rng.choice(param.numel(), size=min(n, param.numel()), replace=False)
    return [tuple(int(i) for i in np.unravel_index(f, param.shape)) for f in flat]


@contextlib.contextmanager
def relu_patterns(store: list):
    """Record the sign pattern of every ReLU input evaluated inside the block."""
    orig = F.relu

    def recording(x, inplace=False):
        store.append((x > 0).detach().clone())
        return orig(x, inplace=inplace)

    F.relu = recording
    try:
        yield
    finally:
        F.relu = orig


def fd_pairs(fn, param: torch.Tensor, n: int = 4, h: float = 1e-3, max_tries: int = 40, seed: int = 0, oracle=None):
    """(analytic, central difference) pairs at sampled indices where no ReLU switches within +-h.

    The analytic gradient is taken from ``fn``; the difference quotient from ``oracle``
    (defaults to ``fn``), so a gradient-rewriting objective can be checked against the
    plain function whose derivative it is supposed to produce.

    A finite difference across a ReLU kink measures an average of two slopes, not the
    gradient, so such indices are skipped rather than compared.
    """
    out = []
    for idx in sample_indices(param, max_tries, seed):
        pats = []
        for delta in (0.0, h, -h):
            rec: list = []
            with torch.no_grad(), relu_patterns(rec):
                orig = param[idx].item()
                param[idx] = orig + delta
                (oracle or fn)()
                param[idx] = orig
            pats.append(rec)
        if any(not torch.equal(a, b) for p in pats[1:] for a, b in zip(pats[0], p)):
            continue
        out.append((analytic_grad(fn, param, idx), central_difference(oracle or fn, param, idx, h)))
        if len(out) == n:
            break
    assert len(out) >= min(n, 2), "too few kink-free coordinates"
    return out


def toy_batch(n_speakers=2, batch=2, frames=4, size=32, r_av=4, n_mels=40, seed=0):
    g = torch.Generator().manual_seed(seed)
    video = torch.rand(batch, frames, size, size, generator=g, dtype=torch.float64)
    mel = torch.randn(batch, frames * r_av, n_mels, generator=g, dtype=torch.float64)
    speakers = torch.arange(batch) % n_speakers
    emb = torch.randn(batch, 512, generator=g, dtype=torch.float64)
    return video, mel, speakers, emb


def toy_model(mode="SI", classifier="linear", n_speakers=2, seed=0):
    torch.manual_seed(seed)
    model = VideoToSpeech(mode, ModelShape(n_speakers=n_speakers), classifier=classifier).double()
    model.decoder.set_mean_frame(torch.zeros(40, dtype=torch.float64))
    return model


@pytest.fixture
def toy():
    return toy_model(), toy_batch()
