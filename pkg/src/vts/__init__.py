"""Speaker-conditioned video-to-speech synthesis on a synthetic audio-visual corpus."""
from .conditioner import Conditioner, concat_condition, mean_embedding
from .decoder import Decoder, apply_frame_dropout, reconstruction_loss
from .disentangle import DisentangleConfig, SpeakerClassifier, cross_entropy, entropy, gradient_reversal
from .evalkit import cosine_distance, eer, mcd, probe_accuracy
from .frontend import Frontend, upsample_features
from .model import ModelConfig, ModelShape, VideoToSpeech
from .synthdata import CorpusSpec, Embedding, Identity, generate_corpus, load_corpus, oracle_speaker_embedding
from .trainer import Checkpoint, Trainer, TrainingConfig, load_checkpoint, save_checkpoint, train
from .vocoder import AnalysisConfig, griffin_lim, mel_to_wav, wav_to_mel

__version__ = "0.1.0"
