"""Desk-scale attentive GRU sequence-to-sequence models and a decoding suite
built around noisy parallel approximate decoding."""

from .chains import ChainResult, NpadConfig, noise_sigma, npad_decode, npad_search, run_chain
from .core import ContractError, RngStream, categorical_sample, derive_seed, gaussian_vec, matvec, softmax
from .decode import (
    DecodeLimits,
    Hypothesis,
    NoiseSchedule,
    ScheduledNoise,
    SilentNoise,
    beam_decode,
    diverse_beam_decode,
    exact_decode,
    force_score,
    greedy_decode,
    sample_decode,
)
from .evaluate import Cell, EvalRecord, ExperimentSpec, corpus_bleu, mean_nll, run_experiment
from .model import (
    BOS,
    EOS,
    PAD,
    BoundModel,
    DecoderState,
    Dims,
    EncodedSource,
    ModelParams,
    Vocab,
    VocabError,
    attention_context,
    decoder_step,
    encode,
    init_params,
    score_sequence,
)
from .tasks import SequencePair, TaskData, gen_task
from .train import TrainConfig, clip_gradients, grad_check, nll_loss, train

__all__ = [name for name in dir() if not name.startswith("_")]
