"""Training loop, configuration and checkpoints.

Checkpoint file layout (all integers little-endian)::

    b"VTSCKPT\\0" | u32 format version | u64 header length | JSON header | raw tensor bytes

The header lists every tensor (name, dtype, shape, offset, size), the training
configuration, the epoch counter and a SHA-256 of the tensor payload.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import evalkit, synthdata
from .conditioner import fit_standardizer
from .decoder import reconstruction_loss
from .disentangle import DisentangleConfig, discriminator_loss, generator_loss, revgrad_loss
from .model import MODES, ModelConfig, ModelShape, VideoToSpeech

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_MAGIC = b"VTSCKPT\0"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainingConfig:
    mode: str = "B"
    disentangle: DisentangleConfig = field(default_factory=DisentangleConfig)
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    corpus_path: str = ""
    speaker: int = 0  # B-spk: the single speaker to train on
    holdout_last_speaker: bool = False
    grad_clip: float = 1.0
    max_train_clips: int | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.disentangle, dict):
            self.disentangle = DisentangleConfig(**self.disentangle)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.disentangle.mode != "none" and self.mode in ("B", "B-spk"):
            raise ValueError(f"mode {self.mode} has no speaker input to disentangle from")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout_rate must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def read_config(path: str | Path, **overrides) -> TrainingConfig:
    """INI file with a ``[train]`` section plus optional ``[disentangle]`` and ``[model]``.

    ``disentangle.lambda`` is accepted as the name of the weight.
    """
    ini = configparser.ConfigParser()
    if not ini.read(path):
        raise FileNotFoundError(path)
    base = TrainingConfig()
    train = {}
    for key, raw in (ini["train"].items() if ini.has_section("train") else []):
        if key in ("disentangle", "model") or not hasattr(base, key):
            raise ValueError(f"unknown [train] key {key!r}")
        default = getattr(base, key)
        train[key] = None if raw.strip().lower() == "none" else _parse_value(raw, default if default is not None else 0)
    dis = dataclasses.asdict(base.disentangle)
    for key, raw in (ini["disentangle"].items() if ini.has_section("disentangle") else []):
        key = "lam" if key == "lambda" else key
        if key not in dis:
            raise ValueError(f"unknown [disentangle] key {key!r}")
        dis[key] = _parse_value(raw, dis[key])
    mod = dataclasses.asdict(base.model)
    for key, raw in (ini["model"].items() if ini.has_section("model") else []):
        if key not in mod:
            raise ValueError(f"unknown [model] key {key!r}")
        mod[key] = _parse_value(raw, mod[key])
    train.update({k: v for k, v in overrides.items() if k not in ("disentangle", "model") and v is not None})
    dis.update(overrides.get("disentangle") or {})
    mod.update(overrides.get("model") or {})
    return TrainingConfig(disentangle=DisentangleConfig(**dis), model=ModelConfig(**mod), **train)


def write_config(config: TrainingConfig, path: str | Path) -> None:
    ini = configparser.ConfigParser()
    d = config.to_dict()
    dis = d.pop("disentangle")
    mod = d.pop("model")
    ini["train"] = {k: str(v) for k, v in d.items()}
    ini["disentangle"] = {"mode": dis["mode"], "classifier": dis["classifier"], "lambda": repr(dis["lam"])}
    ini["model"] = {k: " ".join(map(str, v)) if isinstance(v, tuple) else str(v) for k, v in mod.items()}
    with open(path, "w") as fh:
        ini.write(fh)


# --- data ---------------------------------------------------------------------------

@dataclass
class ClipSet:
    """Clips held in memory as tensors."""

    clip_ids: list[str]
    videos: torch.Tensor  # (N, T, H, W)
    mels: torch.Tensor  # (N, F, n_mels)
    speakers: torch.Tensor  # (N,)
    embeddings: torch.Tensor  # (N, 512) oracle embeddings of the natural audio

    def __len__(self):
        return len(self.clip_ids)

    def subset(self, idx) -> "ClipSet":
        idx = torch.as_tensor(idx, dtype=torch.long)
        return ClipSet([self.clip_ids[i] for i in idx.tolist()], self.videos[idx], self.mels[idx],
                       self.speakers[idx], self.embeddings[idx])

    @classmethod
    def from_corpus(cls, corpus: synthdata.Corpus, entries: list[dict]) -> "ClipSet":
        cfg = corpus.spec.analysis
        if not entries:
            raise synthdata.CorpusError("no clips selected")
        return cls(
            [e["clip_id"] for e in entries],
            torch.from_numpy(np.stack([corpus.video(e) for e in entries])),
            torch.from_numpy(np.stack([corpus.mel(e) for e in entries])),
            torch.tensor([int(e["speaker_id"]) for e in entries]),
            torch.from_numpy(np.stack([synthdata.oracle_speaker_embedding(corpus.wav(e), cfg) for e in entries])).float(),
        )


def select_entries(corpus: synthdata.Corpus, config: TrainingConfig) -> list[dict]:
    entries = corpus.entries
    if config.mode == "B-spk":
        entries = [e for e in entries if e["speaker_id"] == config.speaker]
    elif config.holdout_last_speaker:
        entries = [e for e in entries if e["speaker_id"] != corpus.spec.n_speakers - 1]
    if not entries:
        raise synthdata.CorpusError("no clips left after speaker selection")
    return entries


def _balanced_head(entries: list[dict], n: int) -> list[dict]:
    """First ``n`` entries taken round-robin across speakers."""
    by_speaker: dict[int, list[dict]] = {}
    for e in entries:
        by_speaker.setdefault(e["speaker_id"], []).append(e)
    queues = [by_speaker[k] for k in sorted(by_speaker)]
    out = []
    for i in range(max(map(len, queues))):
        out += [q[i] for q in queues if i < len(q)]
    return out[:n]


def load_splits(config: TrainingConfig) -> tuple[synthdata.Corpus, ClipSet, ClipSet]:
    corpus = synthdata.load_corpus(config.corpus_path)
    train, val = synthdata.validation_split(select_entries(corpus, config))
    if config.max_train_clips:
        train = _balanced_head(train, config.max_train_clips)
    return corpus, ClipSet.from_corpus(corpus, train), ClipSet.from_corpus(corpus, val)


def model_shape(config: TrainingConfig, spec: synthdata.CorpusSpec) -> ModelShape:
    n = spec.n_speakers - (1 if config.holdout_last_speaker and config.mode != "B-spk" else 0)
    return ModelShape(n_speakers=n, n_mels=spec.n_mels, r_av=spec.r_av)


def speaker_input(model: VideoToSpeech, clips: ClipSet, idx=None):
    if not model.uses_speaker:
        return None
    src = clips.embeddings if model.uses_embeddings else clips.speakers
    return src if idx is None else src[idx]


@torch.no_grad()
def pooled_features(model: VideoToSpeech, clips: ClipSet, batch_size: int = 64) -> np.ndarray:
    """Time-averaged frontend features, one row per clip."""
    out = []
    for s in range(0, len(clips), batch_size):
        out.append(model.frontend(clips.videos[s : s + batch_size]).mean(dim=1))
    return torch.cat(out).double().numpy()


# --- training -----------------------------------------------------------------------

class Trainer:
    def __init__(self, config: TrainingConfig, shape: ModelShape, train: ClipSet, val: ClipSet | None = None):
        self.config = config
        self.shape = shape
        self.train_set, self.val_set = train, val
        torch.manual_seed(config.seed)
        dis = config.disentangle
        self.model = VideoToSpeech(config.mode, shape, config.model, dis.classifier if dis.mode != "none" else None)
        self.model.decoder.set_mean_frame(train.mels.reshape(-1, train.mels.shape[-1]).mean(dim=0))
        if config.mode == "SE-norm":
            self.model.conditioner.set_standardizer(*fit_standardizer(train.embeddings.double().numpy()))
        lr = config.learning_rate
        if dis.mode == "dispel":
            self.optimizers = {
                "generator": torch.optim.Adam(self.model.generator_parameters(), lr=lr),
                "discriminator": torch.optim.Adam(self.model.classifier.parameters(), lr=lr),
            }
        else:
            self.optimizers = {"main": torch.optim.Adam(self.model.parameters(), lr=lr)}
        self.generator = torch.Generator().manual_seed(config.seed)
        self.epoch = 0
        self.history: list[dict] = []
        self.corpus_spec: dict | None = None

    def _step(self, opt: torch.optim.Optimizer, loss: torch.Tensor, params) -> None:
        opt.zero_grad()
        loss.backward()
        if self.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(list(params), self.config.grad_clip)
        opt.step()

    def _check(self, name: str, value: torch.Tensor, step: int) -> None:
        if not torch.isfinite(value):
            raise TrainingError(f"{name} became {value.item()} at epoch {self.epoch + 1}, step {step}; aborting")

    def train_epoch(self) -> dict:
        cfg, model, clips = self.config, self.model, self.train_set
        dis = cfg.disentangle
        model.train()
        order = torch.randperm(len(clips), generator=self.generator)
        sums = {"train_mse": 0.0, "train_loss": 0.0}
        if dis.mode == "dispel":
            sums["disc_loss"] = 0.0
        n_batches = 0
        for step, s in enumerate(range(0, len(clips), cfg.batch_size)):
            idx = order[s : s + cfg.batch_size]
            target = clips.mels[idx]
            pred, feats = model(clips.videos[idx], target, speaker_input(model, clips, idx),
                                cfg.dropout_rate, self.generator)
            rec = reconstruction_loss(pred, target)
            self._check("reconstruction loss", rec, step)
            if dis.mode == "none":
                loss = rec
                self._step(self.optimizers["main"], loss, model.parameters())
            elif dis.mode == "revgrad":
                loss = revgrad_loss(pred, target, model.classifier, feats, clips.speakers[idx], dis.lam)
                self._check("loss", loss, step)
                self._step(self.optimizers["main"], loss, model.parameters())
            else:
                d_loss = discriminator_loss(model.classifier, feats, clips.speakers[idx])
                self._check("discriminator loss", d_loss, step)
                self._step(self.optimizers["discriminator"], d_loss, model.classifier.parameters())
                loss = generator_loss(pred, target, model.classifier, feats, dis.lam)
                self._check("generator loss", loss, step)
                self._step(self.optimizers["generator"], loss, model.generator_parameters())
                sums["disc_loss"] += d_loss.item()
            sums["train_mse"] += rec.item()
            sums["train_loss"] += loss.item()
            n_batches += 1
        self.epoch += 1
        metrics = {"epoch": self.epoch, **{k: v / n_batches for k, v in sums.items()}}
        metrics.update(self.validate())
        if dis.mode != "none" and self.val_set is not None and len(self.val_set):
            metrics["probe_acc"] = evalkit.probe_accuracy(model, clips, self.val_set)
        self.history.append(metrics)
        return metrics

    @torch.no_grad()
    def validate(self, clips: ClipSet | None = None, batch_size: int = 64) -> dict:
        clips = self.val_set if clips is None else clips
        if clips is None or len(clips) == 0:
            return {}
        model = self.model
        model.eval()
        sq, correct = 0.0, 0
        for s in range(0, len(clips), batch_size):
            idx = torch.arange(s, min(s + batch_size, len(clips)))
            pred, feats = model(clips.videos[idx], clips.mels[idx], speaker_input(model, clips, idx))
            sq += torch.sum((pred - clips.mels[idx]) ** 2).item()
            if model.classifier is not None:
                correct += (model.classifier(feats).argmax(dim=-1) == clips.speakers[idx]).sum().item()
        out = {"val_mse": sq / clips.mels.numel()}
        if model.classifier is not None:
            out["val_classifier_acc"] = correct / len(clips)
        return out

    def fit(self, epochs: int | None = None, on_epoch: Callable[[dict], None] | None = None) -> list[dict]:
        target = self.config.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            t0 = time.perf_counter()
            metrics = self.train_epoch()
            metrics["seconds"] = round(time.perf_counter() - t0, 3)
            log.info("epoch %d %s", self.epoch, {k: round(v, 6) for k, v in metrics.items() if k != "epoch"})
            if on_epoch is not None:
                on_epoch(metrics)
        return self.history

    # --- persistence --------------------------------------------------------------

    def checkpoint(self) -> "Checkpoint":
        arrays = {f"model.{k}": v.detach().cpu().numpy().copy() for k, v in self.model.state_dict().items()}
        optim_meta = {}
        for name, opt in self.optimizers.items():
            sd = opt.state_dict()
            for pid, state in sd["state"].items():
                for key, val in state.items():
                    arrays[f"optim.{name}.{pid}.{key}"] = torch.as_tensor(val).cpu().numpy().copy()
            optim_meta[name] = sd["param_groups"]
        arrays["rng.generator"] = self.generator.get_state().numpy().copy()
        if self.model.uses_embeddings:
            arrays["data.mean_embedding"] = self.train_set.embeddings.double().mean(dim=0).numpy()
        meta = {"shape": dataclasses.asdict(self.shape), "optimizers": optim_meta, "corpus": self.corpus_spec}
        return Checkpoint(self.config, self.epoch, arrays, meta)

    @classmethod
    def from_checkpoint(cls, ckpt: "Checkpoint", train: ClipSet, val: ClipSet | None = None) -> "Trainer":
        trainer = cls(ckpt.config, ModelShape(**ckpt.meta["shape"]), train, val)
        trainer.load_state(ckpt)
        trainer.corpus_spec = ckpt.meta.get("corpus")
        return trainer

    def load_state(self, ckpt: "Checkpoint") -> None:
        self.model.load_state_dict(ckpt.model_state())
        for name, opt in self.optimizers.items():
            prefix = f"optim.{name}."
            state: dict[int, dict] = {}
            for key, arr in ckpt.arrays.items():
                if key.startswith(prefix):
                    pid, field_name = key[len(prefix):].split(".", 1)
                    state.setdefault(int(pid), {})[field_name] = torch.from_numpy(arr.copy())
            opt.load_state_dict({"state": state, "param_groups": ckpt.meta["optimizers"][name]})
        self.generator.set_state(torch.from_numpy(ckpt.arrays["rng.generator"].copy()))
        self.epoch = ckpt.epoch


@dataclass
class Checkpoint:
    config: TrainingConfig
    epoch: int
    arrays: dict[str, np.ndarray]
    meta: dict

    def model_state(self) -> dict[str, torch.Tensor]:
        return {k[len("model."):]: torch.from_numpy(v.copy()) for k, v in self.arrays.items() if k.startswith("model.")}

    def build_model(self) -> VideoToSpeech:
        dis = self.config.disentangle
        model = VideoToSpeech(self.config.mode, ModelShape(**self.meta["shape"]), self.config.model,
                              dis.classifier if dis.mode != "none" else None)
        model.load_state_dict(self.model_state())
        return model.eval()

    @property
    def mean_embedding(self) -> np.ndarray | None:
        """Average oracle embedding of the training clips (embedding modes only)."""
        return self.arrays.get("data.mean_embedding")


def _jsonable(obj):
    if isinstance(obj, tuple):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, list):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    tensors, payload, offset = [], [], 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        tensors.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    body = b"".join(payload)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": _jsonable(ckpt.config.to_dict()),
        "epoch": ckpt.epoch,
        "meta": _jsonable(ckpt.meta),
        "tensors": tensors,
        "payload_sha256": hashlib.sha256(body).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)) + hbytes + body)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    fixed = len(_MAGIC) + 12
    if len(data) < fixed or data[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[len(_MAGIC) : fixed])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, expected {CHECKPOINT_VERSION}")
    if len(data) < fixed + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[fixed : fixed + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    body = data[fixed + hlen :]
    expected = sum(t["nbytes"] for t in header["tensors"])
    if len(body) != expected:
        raise CheckpointError(f"{path}: payload has {len(body)} bytes, expected {expected} (truncated?)")
    if hashlib.sha256(body).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays = {}
    for t in header["tensors"]:
        raw = body[t["offset"] : t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(raw, dtype=np.dtype(t["dtype"])).reshape(t["shape"]).copy()
    meta = header["meta"]
    for groups in meta.get("optimizers", {}).values():
        for g in groups:
            if "betas" in g:
                g["betas"] = tuple(g["betas"])
    return Checkpoint(TrainingConfig.from_dict(header["config"]), int(header["epoch"]), arrays, meta)


def append_metrics(path: str | Path, metrics: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(metrics, sort_keys=True) + "\n")


def train(
    config: TrainingConfig,
    out_dir: str | Path | None = None,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> Checkpoint:
    """Train from a corpus on disk; writes ``model.ckpt`` and ``metrics.jsonl`` into ``out_dir``."""
    corpus, train_set, val_set = load_splits(config)
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, train_set, val_set)
        trainer.config = dataclasses.replace(trainer.config, epochs=config.epochs)
    else:
        trainer = Trainer(config, model_shape(config, corpus.spec), train_set, val_set)
    trainer.corpus_spec = corpus.spec.to_dict()
    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"

    def record(m):
        if metrics_path is not None:
            append_metrics(metrics_path, m)
        if on_epoch is not None:
            on_epoch(m)

    trainer.fit(on_epoch=record)
    ckpt = trainer.checkpoint()
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir / "model.ckpt")
    return ckpt

