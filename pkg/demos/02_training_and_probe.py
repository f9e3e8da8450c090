"""
Training and the speaker probe
==============================

A baseline model (no speaker input) learns to copy the speaker's voice from the
video, because the bias pattern in the pixels predicts it. A fresh linear probe on
the frozen visual features shows how much speaker information they carry. Adding
an adversarial speaker classifier behind a gradient reversal layer pushes that
information out, at some cost in reconstruction.
"""
import tempfile
from pathlib import Path

from vts import synthdata
from vts.disentangle import DisentangleConfig
from vts.evalkit import probe_accuracy
from vts.trainer import Trainer, TrainingConfig, load_splits, model_shape

root = Path(tempfile.mkdtemp()) / "corpus"
synthdata.generate_corpus(synthdata.CorpusSpec(n_speakers=4, n_clips_per_speaker=100, seed=1), root)


def run(mode, dis="none", lam=1e-4, epochs=8):
    cfg = TrainingConfig(mode=mode, disentangle=DisentangleConfig(dis, "linear", lam), corpus_path=str(root),
                         epochs=epochs, seed=0)
    corpus, train, val = load_splits(cfg)
    t = Trainer(cfg, model_shape(cfg, corpus.spec), train, val)
    t.fit(on_epoch=lambda m: print(f"  epoch {m['epoch']:2d}  train {m['train_mse']:.4f}  val {m['val_mse']:.4f}"))
    return t


for mode, dis, lam in [("B", "none", 0.0), ("SE-norm", "none", 0.0), ("SE-norm", "revgrad", 1.0)]:
    print(f"{mode} / {dis} / lambda={lam:g}")
    t = run(mode, dis, lam)
    print(f"  probe accuracy on frozen features: {probe_accuracy(t.model, t.train_set, t.val_set):.3f}"
          f"  (chance 0.25)")
