"""Mel analysis and synthesis.

Analysis: zero-padded Hann STFT -> magnitude -> triangular mel filterbank -> log.
Synthesis: per-frame non-negative least squares through the filterbank, then
Griffin-Lim phase reconstruction.
"""
from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import nnls
from scipy.signal import get_window

LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class AnalysisConfig:
    sample_rate: int = 16000
    fft_size: int = 512
    hop_len: int = 200
    win_len: int = 400
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float | None = None
    n_gl_iters: int = 60

    def __post_init__(self):
        if self.fft_size < self.win_len:
            raise ValueError("fft_size must be >= win_len")
        if self.hop_len < 1 or self.hop_len > self.win_len:
            raise ValueError("hop_len must be in [1, win_len]")
        if (self.win_len - self.hop_len) % 2:
            raise ValueError("win_len - hop_len must be even")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")

    @property
    def f_max(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    @property
    def pad(self) -> int:
        # Symmetric zero padding so that a signal of n * hop samples yields n frames.
        return (self.win_len - self.hop_len) // 2

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (F, n_mels) log-magnitude
    hop_len: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: AnalysisConfig) -> np.ndarray:
    """Lower edge, centre and upper edge of every band: ``n_mels + 2`` frequencies in Hz."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.f_max), cfg.n_mels + 2))


def mel_filterbank(cfg: AnalysisConfig) -> np.ndarray:
    """Triangular filters with unit peak, shape (n_mels, n_bins)."""
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.fft_size
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (ctr - lo)
    down = (hi - freqs) / (hi - ctr)
    return np.maximum(0.0, np.minimum(up, down))


def _window(cfg: AnalysisConfig) -> np.ndarray:
    return get_window("hann", cfg.win_len, fftbins=True)


def n_frames_for(n_samples: int, cfg: AnalysisConfig) -> int:
    return 1 + (n_samples + 2 * cfg.pad - cfg.win_len) // cfg.hop_len


def stft(x: np.ndarray, cfg: AnalysisConfig) -> np.ndarray:
    """Complex one-sided STFT, shape (F, n_bins)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("waveform must be 1-D")
    if len(x) < cfg.win_len:
        raise ValueError(f"waveform has {len(x)} samples, need at least win_len={cfg.win_len}")
    padded = np.pad(x, cfg.pad)
    n = n_frames_for(len(x), cfg)
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop_len * np.arange(n)[:, None]
    return np.fft.rfft(padded[idx] * _window(cfg), n=cfg.fft_size, axis=1)


def istft(spec: np.ndarray, length: int, cfg: AnalysisConfig) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (Griffin & Lim's overlap-add estimate)."""
    n = spec.shape[0]
    w = _window(cfg)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, : cfg.win_len] * w
    total = cfg.hop_len * (n - 1) + cfg.win_len
    out = np.zeros(max(total, length + 2 * cfg.pad))
    norm = np.zeros_like(out)
    for i in range(n):
        s = i * cfg.hop_len
        out[s : s + cfg.win_len] += frames[i]
        norm[s : s + cfg.win_len] += w * w
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return out[cfg.pad : cfg.pad + length]


def wav_to_mel(waveform: np.ndarray, cfg: AnalysisConfig = AnalysisConfig()) -> MelSpectrogram:
    mag = np.abs(stft(waveform, cfg))
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)), cfg.hop_len, cfg.sample_rate)


def mel_to_linear(mel: MelSpectrogram | np.ndarray, cfg: AnalysisConfig = AnalysisConfig()) -> np.ndarray:
    """Invert the filterbank frame by frame under a non-negativity constraint.

    Returns a (F, n_bins) magnitude spectrogram whose mel projection matches ``exp(mel)``.
    """
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    fb = mel_filterbank(cfg)
    target = np.exp(np.asarray(frames, dtype=np.float64))
    out = np.zeros((target.shape[0], cfg.n_bins))
    for i, row in enumerate(target):
        out[i], _ = nnls(fb, row)
    return out


def _two_sided_norm(z: np.ndarray, cfg: AnalysisConfig) -> float:
    # Norm over the full (two-sided) spectrum: interior bins appear twice.
    weights = np.full(cfg.n_bins, 2.0)
    weights[0] = 1.0
    if cfg.fft_size % 2 == 0:
        weights[-1] = 1.0
    return float(np.sqrt(np.sum(weights * np.abs(z) ** 2)))


def spectral_convergence(x: np.ndarray, magnitude: np.ndarray, cfg: AnalysisConfig) -> float:
    ref = _two_sided_norm(magnitude, cfg)
    if ref == 0.0:
        return 0.0
    return _two_sided_norm(np.abs(stft(x, cfg)) - magnitude, cfg) / ref


def griffin_lim(
    magnitude: np.ndarray,
    cfg: AnalysisConfig = AnalysisConfig(),
    n_iters: int | None = None,
    seed: int = 0,
    return_history: bool = False,
):
    """Classic Griffin-Lim (no momentum), which keeps spectral convergence non-increasing.

    The output has ``F * hop_len`` samples. With ``return_history`` the spectral
    convergence after the initial estimate and after every iteration is also returned.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    if np.any(magnitude < 0):
        raise ValueError("magnitude must be non-negative")
    if magnitude.ndim != 2 or magnitude.shape[1] != cfg.n_bins:
        raise ValueError(f"expected magnitude of shape (F, {cfg.n_bins})")
    n_iters = cfg.n_gl_iters if n_iters is None else n_iters
    length = magnitude.shape[0] * cfg.hop_len
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    x = istft(magnitude * phase, length, cfg)
    history = [spectral_convergence(x, magnitude, cfg)] if return_history else None
    for _ in range(n_iters):
        spec = stft(x, cfg)
        x = istft(magnitude * np.exp(1j * np.angle(spec)), length, cfg)
        if return_history:
            history.append(spectral_convergence(x, magnitude, cfg))
    return (x, history) if return_history else x


def mel_to_wav(mel: MelSpectrogram | np.ndarray, cfg: AnalysisConfig = AnalysisConfig(), seed: int = 0) -> np.ndarray:
    return griffin_lim(mel_to_linear(mel, cfg), cfg, seed=seed)


def quantize_pcm16(waveform: np.ndarray) -> np.ndarray:
    return np.round(np.clip(waveform, -1.0, 1.0) * 32767.0).astype("<i2")


def write_wav(path: str | Path, waveform: np.ndarray, sample_rate: int) -> None:
    """16-bit PCM mono."""
    pcm = quantize_pcm16(waveform)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM mono")
        sr = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return data.astype(np.float64) / 32767.0, sr
