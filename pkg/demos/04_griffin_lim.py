"""
From mel spectrogram back to audio
==================================

The vocoder maps log-mel frames to a linear magnitude spectrogram by non-negative
least squares against the mel filterbank, then recovers a phase with Griffin-Lim.
The spectral convergence error never goes up from one iteration to the next.
"""
import numpy as np

from vts.synthdata import CorpusSpec, synthesize_waveform
from vts.vocoder import AnalysisConfig, griffin_lim, mel_to_linear, stft, wav_to_mel

cfg = AnalysisConfig()
t = np.arange(cfg.sample_rate) / cfg.sample_rate
tone = 0.5 * np.sin(2 * np.pi * 440 * t)

_, hist = griffin_lim(np.abs(stft(tone, cfg)), cfg, n_iters=60, return_history=True)
print("pure tone, spectral convergence every 10 iterations:")
print("  " + "  ".join(f"{h:.3f}" for h in hist[::10]))

speech = synthesize_waveform((0, 3, 6, 1), 2, CorpusSpec())
mel = wav_to_mel(speech, cfg)
lin = mel_to_linear(mel, cfg)
wav, hist = griffin_lim(lin, cfg, n_iters=60, return_history=True)
print(f"token sequence: {mel.n_frames} mel frames -> {len(wav)} samples")
print(f"  spectral convergence {hist[0]:.3f} -> {hist[-1]:.3f}, "
      f"monotone: {bool(np.all(np.diff(hist) <= 1e-12))}")
