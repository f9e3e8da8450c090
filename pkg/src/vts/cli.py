"""``vts`` command line: gen-data, train, synth, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import secrets
import sys
from pathlib import Path

import numpy as np

from . import pipeline, synthdata, trainer
from .synthdata import CorpusSpec, Embedding, Identity
from .vocoder import read_wav, write_wav

log = logging.getLogger("vts")


class UsageError(Exception):
    pass


def _print_resolved(command: str, config: dict) -> None:
    print(f"# vts {command} resolved config")
    print(json.dumps(config, indent=2, sort_keys=True, default=str))
    sys.stdout.flush()


def _draw_seed() -> int:
    return secrets.randbits(63)


def _ini(path: str | None) -> configparser.ConfigParser:
    ini = configparser.ConfigParser()
    if path is not None and not ini.read(path):
        raise UsageError(f"config file not found: {path}")
    return ini


# --- gen-data -----------------------------------------------------------------------

def _corpus_spec(path: str | None, seed: int | None) -> CorpusSpec:
    ini = _ini(path)
    base = CorpusSpec()
    values = {}
    section = ini["corpus"] if ini.has_section("corpus") else {}
    for key, raw in section.items():
        if not hasattr(base, key) or key.startswith("_"):
            raise UsageError(f"unknown [corpus] key {key!r}")
        values[key] = type(getattr(base, key))(raw) if not isinstance(getattr(base, key), float) else float(raw)
    if seed is not None:
        values["seed"] = seed
    elif "seed" not in values:
        values["seed"] = _draw_seed()
    try:
        return dataclasses.replace(base, **values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_gen_data(args) -> int:
    spec = _corpus_spec(args.config, args.seed)
    _print_resolved("gen-data", {"out": args.out, "corpus": spec.to_dict()})
    print(f"seed: {spec.seed}")
    root = synthdata.generate_corpus(spec, args.out)
    print(f"wrote {spec.n_speakers * spec.n_clips_per_speaker} clips to {root}")
    return 0


# --- train --------------------------------------------------------------------------

def cmd_train(args) -> int:
    overrides = {
        "corpus_path": args.corpus, "mode": args.mode, "epochs": args.epochs, "seed": args.seed,
        "batch_size": args.batch_size, "learning_rate": args.lr, "dropout_rate": args.dropout,
        "speaker": args.speaker, "max_train_clips": args.max_train_clips,
    }
    if args.holdout_last_speaker:
        overrides["holdout_last_speaker"] = True
    dis = {k: v for k, v in (("mode", args.disentangle), ("classifier", args.classifier), ("lam", args.lam))
           if v is not None}
    ini = _ini(args.config)
    if args.seed is None and not (ini.has_section("train") and ini.has_option("train", "seed")):
        overrides["seed"] = _draw_seed()
    try:
        if args.config is not None:
            config = trainer.read_config(args.config, disentangle=dis, **overrides)
        else:
            config = trainer.TrainingConfig(
                disentangle=trainer.DisentangleConfig(**dis),
                **{k: v for k, v in overrides.items() if v is not None},
            )
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    if not config.corpus_path:
        raise UsageError("a corpus is required (--corpus or corpus_path in the config)")
    _print_resolved("train", {"out": args.out, "config_hash": config.hash(), **config.to_dict()})
    print(f"seed: {config.seed}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.write_config(config, out / "config.ini")
    resume = trainer.load_checkpoint(args.resume) if args.resume else None

    def stream(m):
        print(json.dumps(m, sort_keys=True), flush=True)

    trainer.train(config, out, resume=resume, on_epoch=stream)
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


# --- synth --------------------------------------------------------------------------

def _load_video(path: str) -> np.ndarray:
    p = Path(path)
    video = np.load(p) if p.suffix == ".npy" else synthdata.read_array(p)
    if video.ndim != 3:
        raise UsageError(f"video must have shape (T, H, W), got {video.shape}")
    return video.astype(np.float32)


def cmd_synth(args) -> int:
    ckpt = trainer.load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    corpus = synthdata.CorpusSpec.from_dict(ckpt.meta["corpus"]) if ckpt.meta.get("corpus") else CorpusSpec()
    cfg = corpus.analysis
    if args.speaker_id is not None:
        if model.uses_embeddings:
            raise UsageError(f"mode {model.mode} is conditioned on embeddings; use --speaker-wav or --mean-embedding")
        desc, selection = Identity(args.speaker_id), {"speaker_id": args.speaker_id}
    elif args.speaker_wav is not None:
        if not model.uses_embeddings:
            raise UsageError(f"--speaker-wav needs an embedding-conditioned checkpoint, this one is mode {model.mode}")
        wav, sr = read_wav(args.speaker_wav)
        if sr != cfg.sample_rate:
            raise UsageError(f"--speaker-wav sample rate {sr} != model rate {cfg.sample_rate}")
        desc = Embedding(synthdata.oracle_speaker_embedding(wav, cfg))
        selection = {"speaker_wav": args.speaker_wav}
    else:
        if ckpt.mean_embedding is None:
            raise UsageError(f"--mean-embedding needs an embedding-conditioned checkpoint, this one is mode {model.mode}")
        desc, selection = Embedding(ckpt.mean_embedding), {"mean_embedding": True}
    if not model.uses_speaker:
        desc = None
    if model.mode == "SI" and not 0 <= args.speaker_id < model.conditioner.n_speakers:
        raise UsageError(f"--speaker-id {args.speaker_id} outside [0, {model.conditioner.n_speakers})")
    _print_resolved("synth", {"checkpoint": args.checkpoint, "video": args.video, "out": args.out,
                              "mode": model.mode, "seed": args.seed, "config_hash": ckpt.config.hash(), **selection})
    print(f"seed: {args.seed}")
    video = _load_video(args.video)
    wav = pipeline.synthesize_wav(model, video, desc, cfg, seed=args.seed)
    write_wav(args.out, wav, cfg.sample_rate)
    print(f"wrote {len(wav) / cfg.sample_rate:.3f} s to {args.out}")
    return 0


# --- eval ---------------------------------------------------------------------------

def _structured_error(out: str | None, exc: Exception) -> None:
    doc = json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}, indent=2)
    if out:
        Path(out).write_text(doc + "\n")
    print(doc)


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in metrics if m not in pipeline.METRICS]
    if bad or not metrics:
        raise UsageError(f"--metrics must be a subset of {','.join(pipeline.METRICS)}")
    ckpt = trainer.load_checkpoint(args.checkpoint)
    _print_resolved("eval", {"checkpoint": args.checkpoint, "corpus": args.corpus, "metrics": metrics,
                             "unseen": args.unseen, "pairs": args.pairs, "seed": args.seed,
                             "config_hash": ckpt.config.hash()})
    print(f"seed: {args.seed}")
    try:
        corpus = synthdata.load_corpus(args.corpus)
        report = pipeline.evaluate(ckpt, corpus, metrics, unseen=args.unseen, n_pairs=args.pairs, seed=args.seed)
    except synthdata.CorpusError as exc:
        _structured_error(args.out, exc)
        return 1
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    doc = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(doc + "\n")
    print(doc)
    return 0


# --- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vts", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic audio-visual corpus")
    g.add_argument("--config", help="INI file with a [corpus] section")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="INI file with [train], [disentangle], [model] sections")
    t.add_argument("--corpus")
    t.add_argument("--mode", choices=trainer.MODES)
    t.add_argument("--disentangle", choices=("none", "dispel", "revgrad"))
    t.add_argument("--classifier", choices=("linear", "mlp"))
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--dropout", type=float)
    t.add_argument("--speaker", type=int, help="speaker to train on in mode B-spk")
    t.add_argument("--holdout-last-speaker", action="store_true")
    t.add_argument("--max-train-clips", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesise speech for one video")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--video", required=True, help="raw float32 video with JSON sidecar, or .npy")
    who = s.add_mutually_exclusive_group(required=True)
    who.add_argument("--speaker-id", type=int)
    who.add_argument("--speaker-wav")
    who.add_argument("--mean-embedding", action="store_true")
    s.add_argument("--seed", type=int, default=0, help="Griffin-Lim initial phase seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="objective evaluation of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--metrics", default="eer,mcd,probe")
    e.add_argument("--unseen", action="store_true", help="held-out speaker videos with seen target voices")
    e.add_argument("--pairs", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"vts {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: one-line diagnostic, nonzero exit
        if args.verbose:
            raise
        print(f"vts {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
