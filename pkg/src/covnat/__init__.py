"""Non-autoregressive translation with token- and sentence-level coverage,
on a small numpy autodiff engine."""

from .autodiff import Parameter, Tensor, backward, finite_diff_check, no_grad
from .config import RunConfig
from .data import ParallelCorpus, SentencePair, Vocabulary, gen_synthetic
from .decoding import greedy_parallel_decode, lpd_decode
from .metrics import bleu, repeated_token_ratio
from .model import ModelConfig, NATModel
from .teacher import ATModel, TeacherConfig
from .training import TrainConfig, two_phase_train

__version__ = "0.1.0"

__all__ = [
    "ATModel", "ModelConfig", "NATModel", "ParallelCorpus", "Parameter", "RunConfig", "SentencePair",
    "TeacherConfig", "Tensor", "TrainConfig", "Vocabulary", "backward", "bleu", "finite_diff_check",
    "gen_synthetic", "greedy_parallel_decode", "lpd_decode", "no_grad", "repeated_token_ratio",
    "two_phase_train",
]
