"""Objective evaluation: MCD, cosine-distance EER and the linear speaker probe."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.optimize import minimize

from .vocoder import MelSpectrogram

log = logging.getLogger(__name__)

N_CEPSTRA = 13
_MCD_CONST = 10.0 / np.log(10.0)


class EvaluationError(ValueError):
    pass


# --- mel-cepstral distortion --------------------------------------------------------

def _frames(m) -> np.ndarray:
    return np.asarray(m.frames if isinstance(m, MelSpectrogram) else m, dtype=np.float64)


def mel_cepstra(logmel: np.ndarray) -> np.ndarray:
    return dct(logmel, type=2, norm="ortho", axis=-1)


def mcd_per_frame(ref, syn) -> np.ndarray:
    a, b = _frames(ref), _frames(syn)
    n = min(len(a), len(b))
    if n == 0:
        raise EvaluationError("no overlapping frames")
    if len(a) != len(b):
        warnings.warn(f"MCD: frame counts differ ({len(a)} vs {len(b)}), trimmed to {n}", stacklevel=2)
    diff = mel_cepstra(a[:n])[:, 1 : N_CEPSTRA + 1] - mel_cepstra(b[:n])[:, 1 : N_CEPSTRA + 1]
    return _MCD_CONST * np.sqrt(2.0 * np.sum(diff ** 2, axis=1))


def mcd(ref, syn) -> float:
    """Mean mel-cepstral distortion in dB over c_1..c_13 (c_0 excluded), no time warping."""
    return float(mcd_per_frame(ref, syn).mean())


# --- EER ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoredPair:
    distance: float
    positive: bool

    def __post_init__(self):
        if not -1e-9 <= self.distance <= 2.0 + 1e-9:
            raise ValueError(f"cosine distance {self.distance} outside [0, 2]")


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise EvaluationError("cosine distance undefined for a zero vector")
    return float(np.clip(1.0 - a @ b / (na * nb), 0.0, 2.0))


def _sample(rng: np.random.Generator, pool: np.ndarray, k: int, label: str) -> np.ndarray:
    if k <= len(pool):
        return pool[rng.choice(len(pool), size=k, replace=False)]
    warnings.warn(f"only {len(pool)} distinct {label} pairs for {k} requested; sampling with replacement",
                  stacklevel=3)
    return pool[rng.choice(len(pool), size=k, replace=True)]


def build_pairs(
    synth_embeddings,
    synth_labels,
    natural_embeddings,
    natural_labels,
    n_pairs: int = 2000,
    pos_fraction: float = 0.073,
    rng: np.random.Generator | None = None,
) -> list[ScoredPair]:
    """Random (synthesised, natural) pairs with a fixed share of same-speaker pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    s_lab = np.asarray(synth_labels)
    n_lab = np.asarray(natural_labels)
    same = s_lab[:, None] == n_lab[None, :]
    pos_pool = np.argwhere(same)
    neg_pool = np.argwhere(~same)
    n_pos = int(round(n_pairs * pos_fraction))
    n_neg = n_pairs - n_pos
    if (n_pos and not len(pos_pool)) or (n_neg and not len(neg_pool)):
        raise EvaluationError("requested pair composition cannot be built from these labels")
    S = np.asarray(synth_embeddings, dtype=np.float64)
    N = np.asarray(natural_embeddings, dtype=np.float64)
    S = S / np.linalg.norm(S, axis=1, keepdims=True)
    N = N / np.linalg.norm(N, axis=1, keepdims=True)
    pairs = []
    for pool, k, positive in ((pos_pool, n_pos, True), (neg_pool, n_neg, False)):
        if k == 0:
            continue
        idx = _sample(rng, pool, k, "positive" if positive else "negative")
        dist = np.clip(1.0 - np.einsum("ij,ij->i", S[idx[:, 0]], N[idx[:, 1]]), 0.0, 2.0)
        pairs += [ScoredPair(float(d), positive) for d in dist]
    return pairs


def operating_points(distances, positive) -> tuple[np.ndarray, np.ndarray]:
    """FAR and FRR for "accept if distance <= threshold", swept over all distinct thresholds.

    The first point is the reject-all threshold; one point follows every distinct distance.
    """
    d = np.asarray(distances, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = pos.sum(), (~pos).sum()
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("EER needs at least one positive and one negative pair")
    order = np.argsort(d, kind="stable")
    d, pos = d[order], pos[order]
    last_of_run = np.r_[d[1:] != d[:-1], True]
    far = np.r_[0.0, np.cumsum(~pos)[last_of_run] / n_neg]
    frr = np.r_[1.0, 1.0 - np.cumsum(pos)[last_of_run] / n_pos]
    return far, frr


def eer_from_operating_points(far: np.ndarray, frr: np.ndarray) -> float:
    gap = far - frr  # goes from -1 to +1, non-decreasing
    hit = np.flatnonzero(gap == 0.0)
    if hit.size:
        return float(0.5 * (far[hit[0]] + far[hit[-1]]))
    i = np.flatnonzero(gap < 0.0)[-1]
    alpha = -gap[i] / (gap[i + 1] - gap[i])
    return float(far[i] + alpha * (far[i + 1] - far[i]))


def eer(pairs=None, *, distances=None, positive=None) -> float:
    """Equal error rate, linearly interpolated between adjacent operating points."""
    if pairs is not None:
        distances = [p.distance for p in pairs]
        positive = [p.positive for p in pairs]
    return eer_from_operating_points(*operating_points(distances, positive))


# --- linear speaker probe -----------------------------------------------------------

def linear_probe_accuracy(train_x, train_y, test_x, test_y, l2: float = 1e-3) -> float:
    """Fit a fresh multinomial logistic regression and return held-out accuracy."""
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    classes, y = np.unique(np.asarray(train_y), return_inverse=True)
    if len(classes) < 2:
        raise EvaluationError("probe needs at least two speakers")
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd < 1e-8] = 1.0
    X = np.c_[(train_x - mu) / sd, np.ones(len(train_x))]
    Xt = np.c_[(test_x - mu) / sd, np.ones(len(test_x))]
    k, d = len(classes), X.shape[1]
    onehot = np.eye(k)[y]

    def objective(w):
        W = w.reshape(d, k)
        z = X @ W
        z -= z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -np.sum(onehot * logp) / len(X) + 0.5 * l2 * np.sum(W[:-1] ** 2)
        grad = X.T @ (np.exp(logp) - onehot) / len(X)
        grad[:-1] += l2 * W[:-1]
        return loss, grad.ravel()

    res = minimize(objective, np.zeros(d * k), jac=True, method="L-BFGS-B", options={"maxiter": 500})
    pred = classes[np.argmax(Xt @ res.x.reshape(d, k), axis=1)]
    return float(np.mean(pred == np.asarray(test_y)))


def probe_accuracy(model, train_clips, test_clips) -> float:
    """Held-out accuracy of a fresh linear probe on frozen, time-pooled visual features."""
    from .trainer import pooled_features

    return linear_probe_accuracy(
        pooled_features(model, train_clips), train_clips.speakers,
        pooled_features(model, test_clips), test_clips.speakers,
    )
