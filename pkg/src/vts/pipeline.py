"""End-to-end synthesis and evaluation on top of a trained checkpoint."""
from __future__ import annotations

import logging
import warnings

import numpy as np
import torch

from . import evalkit, synthdata
from .conditioner import mean_embedding
from .synthdata import Embedding, Identity
from .trainer import Checkpoint, ClipSet, select_entries
from .vocoder import AnalysisConfig, mel_to_wav

log = logging.getLogger(__name__)

METRICS = ("eer", "mcd", "probe")


def speaker_tensor(model, desc: Identity | Embedding | None) -> torch.Tensor | None:
    """Batch-of-one speaker input for ``model`` from a descriptor; checks mode compatibility."""
    if not model.uses_speaker:
        if desc is not None:
            warnings.warn(f"mode {model.mode} has no speaker input; descriptor ignored")
        return None
    if desc is None:
        raise ValueError(f"mode {model.mode} needs a speaker descriptor")
    if model.uses_embeddings:
        if not isinstance(desc, Embedding):
            raise TypeError(f"mode {model.mode} is conditioned on embeddings, not speaker ids")
        return torch.as_tensor(desc.vector, dtype=torch.float32)[None]
    if not isinstance(desc, Identity):
        raise TypeError("mode SI is conditioned on speaker ids; embeddings are not accepted")
    if not 0 <= desc.index < model.conditioner.n_speakers:
        raise IndexError(f"speaker id {desc.index} outside [0, {model.conditioner.n_speakers})")
    return torch.tensor([desc.index])


def synthesize_mel(model, video, desc: Identity | Embedding | None = None) -> np.ndarray:
    """Free-running (F, n_mels) log-mel prediction for one (T, H, W) video."""
    v = torch.as_tensor(np.asarray(video), dtype=torch.float32)[None]
    return model.synthesize(v, speaker_tensor(model, desc))[0].double().numpy()


def synthesize_wav(model, video, desc, cfg: AnalysisConfig, seed: int = 0) -> np.ndarray:
    return mel_to_wav(synthesize_mel(model, video, desc), cfg, seed=seed)


def speaker_descriptors(ckpt: Checkpoint, train: ClipSet) -> dict[int, Identity | Embedding]:
    """One conditioning descriptor per training speaker: its id, or the mean of its embeddings."""
    out = {}
    for s in sorted(set(train.speakers.tolist())):
        if ckpt.config.mode in ("SE", "SE-norm"):
            out[s] = mean_embedding(train.embeddings[train.speakers == s].double().numpy())
        else:
            out[s] = Identity(s)
    return out


def evaluate(
    ckpt: Checkpoint,
    corpus: synthdata.Corpus,
    metrics=METRICS,
    unseen: bool = False,
    n_pairs: int = 2000,
    seed: int = 0,
) -> dict:
    """Objective report for a checkpoint on a corpus.

    Seen evaluation synthesises every validation clip with its own speaker as the
    target. With ``unseen`` the held-out last speaker's videos are synthesised
    with the voices of the training speakers, assigned round-robin.
    """
    metrics = tuple(metrics)
    bad = [m for m in metrics if m not in METRICS]
    if bad:
        raise ValueError(f"unknown metrics {bad}; choose from {METRICS}")
    if not corpus.entries:
        raise synthdata.CorpusError("corpus has no clips")
    cfg = corpus.spec.analysis
    model = ckpt.build_model()
    train_entries, val_entries = synthdata.validation_split(select_entries(corpus, ckpt.config))
    train = ClipSet.from_corpus(corpus, train_entries)
    descs = speaker_descriptors(ckpt, train)
    if unseen:
        held = corpus.spec.n_speakers - 1
        if not ckpt.config.holdout_last_speaker:
            raise ValueError("unseen evaluation needs a checkpoint trained with holdout_last_speaker")
        eval_entries = [e for e in corpus.entries if e["speaker_id"] == held]
        seen = sorted(descs)
        targets = [seen[i % len(seen)] for i in range(len(eval_entries))]
    else:
        eval_entries = val_entries
        targets = [e["speaker_id"] for e in eval_entries]
    if not eval_entries:
        raise synthdata.CorpusError("no clips to evaluate")

    report: dict = {"n_clips": len(eval_entries), "config_hash": ckpt.config.hash()}
    if "mcd" in metrics or "eer" in metrics:
        mels, emb = [], []
        for i, (e, t) in enumerate(zip(eval_entries, targets)):
            desc = descs.get(t) if model.uses_speaker else None
            mel = synthesize_mel(model, corpus.video(e), desc)
            mels.append(mel)
            if "eer" in metrics:
                emb.append(synthdata.oracle_speaker_embedding(mel_to_wav(mel, cfg, seed=seed + i), cfg))
        if "mcd" in metrics:
            values = np.array([evalkit.mcd(corpus.mel(e), m) for e, m in zip(eval_entries, mels)])
            report["mcd_mean"] = float(values.mean())
            report["mcd_std"] = float(values.std())
        if "eer" in metrics:
            natural = [e for e in corpus.entries if e["speaker_id"] in descs] if unseen else val_entries
            nat_emb = [synthdata.oracle_speaker_embedding(corpus.wav(e), cfg) for e in natural]
            pairs = evalkit.build_pairs(np.stack(emb), np.array(targets), np.stack(nat_emb),
                                        np.array([e["speaker_id"] for e in natural]),
                                        n_pairs=n_pairs, rng=np.random.default_rng(seed))
            report["eer"] = evalkit.eer(pairs)
            report["n_pairs"] = len(pairs)
    if "probe" in metrics:
        test = ClipSet.from_corpus(corpus, val_entries)
        report["probe_accuracy"] = evalkit.probe_accuracy(model, train, test)
    return report
