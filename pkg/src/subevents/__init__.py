"""Sub-event detection in social-media streams.

Posts are bucketed into fixed-width time bins, each bin is encoded as a
vector under one of several neural representations, and the bin sequence
is labeled with typed BIO tags — optionally through a chronological LSTM
that carries context between consecutive bins. Includes three evaluation
protocols, a posting-rate burst baseline, a synthetic stream generator
and a from-scratch reverse-mode autodiff engine (float64, numpy).
"""

from .autodiff import (AdamState, GradCheckReport, LstmParams, Rng, Tensor,
                       adam_step, gradient_check, read_tensors, write_tensors)
from .encoders import (CONV_WINDOW, VARIANT_KINDS, EncoderVariant, TfIdfStats,
                       encode_bin, encoded_dim, fit_tfidf, init_encoder_params)
from .evalkit import (AnnotationError, EvalReport, LabelScheme, SubEventSpan,
                      bio_to_spans, burst_baseline, eval_bin_level,
                      eval_binary_event, eval_relaxed, positive_runs,
                      spans_to_bio)
from .ingest import (Bin, ConfigError, StreamAnnotation, StreamExample,
                     TokenizedTweet, TweetRecord, Vocab, assign_bins,
                     build_example, build_vocab, load_streams, parse_annotation,
                     parse_tweets, scheme_from_dir, tokenize)
from .labeler import (ModelConfig, TrainingDiverged, TrainResult, forward,
                      init_params, load_checkpoint, predict_binary, predict_bio,
                      save_checkpoint, train, write_curve)
from .synth import GeneratedStream, SynthConfig, generate, write_dataset

__version__ = "0.1.0"

__all__ = [
    "AdamState", "GradCheckReport", "LstmParams", "Rng", "Tensor",
    "adam_step", "gradient_check", "read_tensors", "write_tensors",
    "CONV_WINDOW", "VARIANT_KINDS", "EncoderVariant", "TfIdfStats",
    "encode_bin", "encoded_dim", "fit_tfidf", "init_encoder_params",
    "AnnotationError", "EvalReport", "LabelScheme", "SubEventSpan",
    "bio_to_spans", "burst_baseline", "eval_bin_level", "eval_binary_event",
    "eval_relaxed", "positive_runs", "spans_to_bio",
    "Bin", "ConfigError", "StreamAnnotation", "StreamExample",
    "TokenizedTweet", "TweetRecord", "Vocab", "assign_bins", "build_example",
    "build_vocab", "load_streams", "parse_annotation", "parse_tweets",
    "scheme_from_dir", "tokenize",
    "ModelConfig", "TrainingDiverged", "TrainResult", "forward", "init_params",
    "load_checkpoint", "predict_binary", "predict_bio", "save_checkpoint",
    "train", "write_curve",
    "GeneratedStream", "SynthConfig", "generate", "write_dataset",
    "__version__",
]
