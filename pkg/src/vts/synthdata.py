"""Synthetic audiovisual corpus with a tunable amount of speaker identity in the video.

Every token is drawn as a fixed smooth image (the "mouth shape") and voiced as a
harmonic tone complex. Speakers differ in the spectral envelope of their voice
and, scaled by ``leakage``, in an additive bias pattern on their video frames.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .vocoder import AnalysisConfig, MelSpectrogram, quantize_pcm16, read_wav, wav_to_mel, write_wav

EMBEDDING_DIM = 512
MANIFEST = "manifest.json"
CORPUS_SPEC = "corpus.json"
_MAX_DRAWS_PER_CLIP = 100


class CorpusError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    n_speakers: int = 4
    n_clips_per_speaker: int = 200
    n_tokens: int = 8
    clip_len_tokens: int = 4
    video_fps: int = 20
    frames_per_token: int = 5
    leakage: float = 0.5
    sample_rate: int = 16000
    n_mels: int = 40
    seed: int = 0
    image_size: int = 32
    audio_frames_per_video_frame: int = 4

    def __post_init__(self):
        if self.n_speakers < 2:
            raise CorpusError("n_speakers must be >= 2")
        if not 0.0 <= self.leakage <= 1.0:
            raise CorpusError("leakage must lie in [0, 1]")
        counts = ("n_clips_per_speaker", "n_tokens", "clip_len_tokens", "video_fps",
                  "frames_per_token", "sample_rate", "n_mels", "image_size",
                  "audio_frames_per_video_frame")
        for name in counts:
            if getattr(self, name) < 1:
                raise CorpusError(f"{name} must be >= 1")
        if self.sample_rate % (self.video_fps * self.r_av):
            raise CorpusError("sample_rate must be divisible by video_fps * audio_frames_per_video_frame")

    @property
    def r_av(self) -> int:
        return self.audio_frames_per_video_frame

    @property
    def n_video_frames(self) -> int:
        return self.clip_len_tokens * self.frames_per_token

    @property
    def n_audio_frames(self) -> int:
        return self.r_av * self.n_video_frames

    @property
    def analysis(self) -> AnalysisConfig:
        hop = self.sample_rate // (self.video_fps * self.r_av)
        win = 2 * hop
        return AnalysisConfig(
            sample_rate=self.sample_rate,
            fft_size=1 << (win - 1).bit_length(),
            hop_len=hop,
            win_len=win,
            n_mels=self.n_mels,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        return cls(**d)


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W), values in [0, 1]
    fps: int
    speaker_id: int
    tokens: tuple[int, ...] = field(default_factory=tuple)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class Identity:
    index: int


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (EMBEDDING_DIM,):
            raise ValueError(f"embedding must have shape ({EMBEDDING_DIM},), got {v.shape}")
        object.__setattr__(self, "vector", v)


SpeakerDescriptor = Identity | Embedding


# --- deterministic building blocks -------------------------------------------------

def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])


_TOKEN_STREAM, _SPEAKER_STREAM, _VOICE_STREAM, _SEQ_STREAM, _CLIP_STREAM = 1, 2, 3, 4, 5


def _blobs(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    img = np.zeros((size, size))
    for _ in range(n):
        cy, cx = rng.uniform(0.15, 0.85, 2)
        sy, sx = rng.uniform(0.08, 0.25, 2)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
        img += amp * np.exp(-0.5 * (((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2))
    return img


def token_pattern(token: int, spec: CorpusSpec) -> np.ndarray:
    """Fixed image for a token, rescaled to [0.15, 0.85]."""
    img = _blobs(_rng(spec.seed, _TOKEN_STREAM, token), spec.image_size, 4)
    lo, hi = img.min(), img.max()
    return 0.15 + 0.7 * (img - lo) / (hi - lo)


def speaker_bias(speaker_id: int, spec: CorpusSpec) -> np.ndarray:
    """Zero-mean bias image with peak magnitude 0.3; scaled by leakage before use."""
    img = _blobs(_rng(spec.seed, _SPEAKER_STREAM, speaker_id), spec.image_size, 3)
    img -= img.mean()
    return 0.3 * img / np.abs(img).max()


def token_f0(token: int, spec: CorpusSpec) -> float:
    return 110.0 * 2.0 ** (token / spec.n_tokens)


def speaker_envelope(speaker_id: int, spec: CorpusSpec):
    """Formant-like gain curve of a speaker, as a function of frequency in Hz."""
    rng = _rng(spec.seed, _VOICE_STREAM, speaker_id)
    nyq = spec.sample_rate / 2
    centres = np.sort(rng.uniform(0.05, 0.8, 3)) * nyq
    widths = rng.uniform(0.03, 0.08, 3) * nyq
    gains = rng.uniform(0.5, 1.0, 3)

    def envelope(f):
        f = np.asarray(f, dtype=np.float64)[..., None]
        return 0.02 + np.sum(gains * np.exp(-0.5 * ((f - centres) / widths) ** 2), axis=-1)

    return envelope


def _check_tokens(tokens, spec: CorpusSpec) -> tuple[int, ...]:
    tokens = tuple(int(t) for t in tokens)
    bad = [t for t in tokens if not 0 <= t < spec.n_tokens]
    if bad:
        raise CorpusError(f"tokens {bad} outside vocabulary of size {spec.n_tokens}")
    return tokens


def render_video(tokens, speaker_id: int, spec: CorpusSpec, rng: np.random.Generator) -> VideoClip:
    tokens = _check_tokens(tokens, spec)
    base = np.repeat(np.stack([token_pattern(t, spec) for t in tokens]), spec.frames_per_token, axis=0)
    frames = base + spec.leakage * speaker_bias(speaker_id, spec)
    frames = frames + rng.normal(0.0, 0.02, size=frames.shape)
    return VideoClip(np.clip(frames, 0.0, 1.0), spec.video_fps, int(speaker_id), tokens)


def synthesize_waveform(tokens, speaker_id: int, spec: CorpusSpec) -> np.ndarray:
    tokens = _check_tokens(tokens, spec)
    cfg = spec.analysis
    seg_len = spec.frames_per_token * spec.r_av * cfg.hop_len
    t = np.arange(seg_len) / spec.sample_rate
    envelope = speaker_envelope(speaker_id, spec)
    ramp_len = min(seg_len // 2, spec.sample_rate // 100)
    ramp = np.ones(seg_len)
    ramp[:ramp_len] = np.linspace(0.0, 1.0, ramp_len)
    ramp[-ramp_len:] = np.linspace(1.0, 0.0, ramp_len)
    segments = []
    for tok in tokens:
        f0 = token_f0(tok, spec)
        harmonics = f0 * np.arange(1, int(0.95 * spec.sample_rate / 2 / f0) + 1)
        seg = envelope(harmonics) @ np.sin(2 * np.pi * harmonics[:, None] * t[None, :])
        seg *= 0.1 / np.sqrt(np.mean(seg ** 2))
        segments.append(seg * ramp)
    return np.concatenate(segments)


def render_audio(tokens, speaker_id: int, spec: CorpusSpec) -> tuple[np.ndarray, MelSpectrogram]:
    """Waveform (as stored: 16-bit quantised) and its log-mel spectrogram."""
    wav = quantize_pcm16(synthesize_waveform(tokens, speaker_id, spec)).astype(np.float64) / 32767.0
    mel = wav_to_mel(wav, spec.analysis)
    assert mel.n_frames == spec.n_audio_frames
    return wav, mel


# --- oracle speaker embedding -------------------------------------------------------

def _embedding_basis(n_stats: int) -> np.ndarray:
    q, _ = np.linalg.qr(_rng(0x5EED, n_stats).standard_normal((EMBEDDING_DIM, n_stats)))
    return q


def oracle_speaker_embedding(waveform: np.ndarray, cfg: AnalysisConfig = AnalysisConfig()) -> np.ndarray:
    """Deterministic 512-d unit vector from long-term log-mel statistics.

    Per-band means and standard deviations (each centred across bands) are mapped
    to 512 dimensions by a fixed matrix with orthonormal columns, so cosine
    distances between embeddings equal those between the statistics.
    """
    x = np.asarray(waveform, dtype=np.float64).ravel()
    if x.size == 0 or not np.any(x):
        raise DegenerateInputError("cannot embed an empty or all-zero waveform")
    if x.size < cfg.win_len:
        x = np.pad(x, (0, cfg.win_len - x.size))
    logmel = wav_to_mel(x, cfg).frames
    mean = logmel.mean(axis=0)
    std = logmel.std(axis=0)
    stats = np.concatenate([mean - mean.mean(), std - std.mean()])
    emb = _embedding_basis(stats.size) @ stats
    norm = np.linalg.norm(emb)
    if norm == 0.0:
        raise DegenerateInputError("waveform has flat long-term spectrum")
    return emb / norm


# --- corpus generation --------------------------------------------------------------

def draw_token_sequences(spec: CorpusSpec, speaker_id: int) -> list[tuple[int, ...]]:
    """Distinct token sequences for one speaker, by rejection sampling."""
    need = spec.n_clips_per_speaker
    if spec.n_tokens ** spec.clip_len_tokens < need:
        raise CorpusError(
            f"only {spec.n_tokens}^{spec.clip_len_tokens} distinct sequences, {need} clips requested"
        )
    rng = _rng(spec.seed, _SEQ_STREAM, speaker_id)
    seen: set[tuple[int, ...]] = set()
    out = []
    for _ in range(_MAX_DRAWS_PER_CLIP * need):
        seq = tuple(int(t) for t in rng.integers(0, spec.n_tokens, spec.clip_len_tokens))
        if seq not in seen:
            seen.add(seq)
            out.append(seq)
            if len(out) == need:
                return out
    raise CorpusError("retry cap reached while drawing distinct token sequences")


def clip_id(speaker_id: int, index: int) -> str:
    return f"s{speaker_id:02d}_{index:04d}"


def _write_array(path: Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = {"dtype": "float32", "byteorder": "little", "shape": list(arr.shape)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def read_array(path: str | Path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta.get("dtype") != "float32":
        raise CorpusError(f"{path}: unsupported dtype {meta.get('dtype')!r}")
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise CorpusError(f"{path}: size does not match sidecar shape {shape}")
    return data.reshape(shape).astype(np.float32)


def write_video(path: str | Path, clip: VideoClip) -> None:
    _write_array(Path(path), clip.frames)


def generate_clip(spec: CorpusSpec, speaker_id: int, index: int, tokens) -> tuple[VideoClip, np.ndarray, MelSpectrogram]:
    rng = _rng(spec.seed, _CLIP_STREAM, speaker_id, index)
    video = render_video(tokens, speaker_id, spec, rng)
    wav, mel = render_audio(tokens, speaker_id, spec)
    return video, wav, mel


def generate_corpus(spec: CorpusSpec, out: str | Path) -> Path:
    out = Path(out)
    try:
        (out / "clips").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot write corpus to {out}: {exc}") from exc
    manifest = []
    for spk in range(spec.n_speakers):
        for i, tokens in enumerate(draw_token_sequences(spec, spk)):
            cid = clip_id(spk, i)
            video, wav, mel = generate_clip(spec, spk, i, tokens)
            entry = {
                "clip_id": cid,
                "speaker_id": spk,
                "tokens": list(tokens),
                "video_path": f"clips/{cid}.video.f32",
                "mel_path": f"clips/{cid}.mel.f32",
                "wav_path": f"clips/{cid}.wav",
            }
            write_video(out / entry["video_path"], video)
            _write_array(out / entry["mel_path"], mel.frames)
            write_wav(out / entry["wav_path"], wav, spec.sample_rate)
            manifest.append(entry)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (out / CORPUS_SPEC).write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    return out


# --- ingestion ----------------------------------------------------------------------

@dataclass
class Corpus:
    root: Path
    spec: CorpusSpec
    entries: list[dict]

    def __len__(self):
        return len(self.entries)

    def video(self, entry: dict) -> np.ndarray:
        return read_array(self.root / entry["video_path"])

    def mel(self, entry: dict) -> np.ndarray:
        return read_array(self.root / entry["mel_path"])

    def wav(self, entry: dict) -> np.ndarray:
        return read_wav(self.root / entry["wav_path"])[0]


def load_corpus(root: str | Path) -> Corpus:
    """Read and validate a corpus directory."""
    root = Path(root)
    try:
        entries = json.loads((root / MANIFEST).read_text())
        spec = CorpusSpec.from_dict(json.loads((root / CORPUS_SPEC).read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise CorpusError(f"{root}: not a valid corpus ({exc})") from exc
    if not entries:
        raise CorpusError(f"{root}: manifest is empty")
    keys = {"clip_id", "speaker_id", "tokens", "video_path", "mel_path", "wav_path"}
    for e in entries:
        if not keys <= set(e):
            raise CorpusError(f"{root}: manifest entry missing {sorted(keys - set(e))}")
        for k in ("video_path", "mel_path", "wav_path"):
            if not (root / e[k]).exists():
                raise CorpusError(f"{root}: missing file {e[k]}")
    return Corpus(root, spec, entries)


def validation_split(entries: list[dict], fraction: float = 0.1) -> tuple[list[dict], list[dict]]:
    """Per speaker, the clips with the smallest clip-id hashes go to validation."""
    by_spk: dict[int, list[dict]] = {}
    for e in entries:
        by_spk.setdefault(int(e["speaker_id"]), []).append(e)
    train, val = [], []
    for spk in sorted(by_spk):
        clips = sorted(by_spk[spk], key=lambda e: hashlib.sha256(e["clip_id"].encode()).hexdigest())
        n_val = max(1, int(round(fraction * len(clips)))) if len(clips) > 1 else 0
        val += clips[:n_val]
        train += clips[n_val:]
    order = {e["clip_id"]: i for i, e in enumerate(entries)}
    return sorted(train, key=lambda e: order[e["clip_id"]]), sorted(val, key=lambda e: order[e["clip_id"]])
