"""
Choosing the voice
==================

A speaker-embedding model (SE-norm) is trained, then one video is rendered with
several target voices: each training speaker's mean embedding, and the mean of all
training embeddings. The oracle embedder measures whose voice came out.
"""
import tempfile
from pathlib import Path

from vts import synthdata
from vts.conditioner import mean_embedding
from vts.evalkit import cosine_distance
from vts.pipeline import synthesize_wav
from vts.synthdata import Embedding
from vts.trainer import Trainer, TrainingConfig, load_splits, model_shape
from vts.vocoder import write_wav

work = Path(tempfile.mkdtemp())
synthdata.generate_corpus(synthdata.CorpusSpec(n_speakers=4, n_clips_per_speaker=100, seed=2), work / "corpus")
cfg = TrainingConfig(mode="SE-norm", corpus_path=str(work / "corpus"), epochs=10, seed=0)
corpus, train, val = load_splits(cfg)
trainer = Trainer(cfg, model_shape(cfg, corpus.spec), train, val)
trainer.fit()
model = trainer.model.eval()
acfg = corpus.spec.analysis

targets = {f"speaker {s}": mean_embedding(train.embeddings[train.speakers == s].double().numpy())
           for s in range(4)}
targets["mean of all"] = Embedding(train.embeddings.double().mean(dim=0).numpy())
natural = {s: targets[f"speaker {s}"].vector for s in range(4)}

video = val.videos[0].numpy()
print(f"video from speaker {int(val.speakers[0])}")
for name, desc in targets.items():
    wav = synthesize_wav(model, video, desc, acfg)
    write_wav(work / f"{name.replace(' ', '_')}.wav", wav, acfg.sample_rate)
    e = synthdata.oracle_speaker_embedding(wav, acfg)
    dists = "  ".join(f"{cosine_distance(e, natural[s]):.3f}" for s in range(4))
    print(f"  target {name:12s} -> distance to speakers 0..3: {dists}")
print("wav files in", work)
