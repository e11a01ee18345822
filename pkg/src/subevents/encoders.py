"""Per-bin vector encoders.

Each variant turns one time bin into a fixed-size vector:

  word-tfidf      tf-idf over the vocabulary, L2-normalized, dense + ReLU
  word-avg        mean of the word embeddings of the whole bin
  word-cnn-avg    word embeddings, window-3 convolution + ReLU, mean pool
  word-attention  additive attention over the bin's word embeddings
  tweet-avg       per-tweet vectors (embedding mean, or the final state of
                  a per-tweet LSTM when tl is set), then mean over tweets
  tweet-attention additive attention over the per-tweet vectors
  tweet-cnn       window-3 convolution + ReLU over the tweet sequence,
                  then mean pool

Empty bins encode to the zero vector without touching any parameters.
The per-tweet LSTM (tl flag) only applies to tweet-level variants.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import LstmParams, Rng, Tensor
from .ingest import Bin

WORD_TFIDF = "word-tfidf"
WORD_AVG = "word-avg"
WORD_CNN_AVG = "word-cnn-avg"
WORD_ATTENTION = "word-attention"
TWEET_AVG = "tweet-avg"
TWEET_ATTENTION = "tweet-attention"
TWEET_CNN = "tweet-cnn"

VARIANT_KINDS = (WORD_TFIDF, WORD_AVG, WORD_CNN_AVG, WORD_ATTENTION,
                 TWEET_AVG, TWEET_ATTENTION, TWEET_CNN)

CONV_WINDOW = 3

# fitted tf-idf statistics ride in the parameter dict but are never trained
STATIC_PARAM_NAMES = ("tfidf.df", "tfidf.n_docs")


@dataclass(frozen=True)
class EncoderVariant:
    """Architecture selector: one of VARIANT_KINDS plus the tweet-LSTM flag."""
    kind: str
    tl: bool = False

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError("unknown encoder variant %r (choose from %s)"
                             % (self.kind, ", ".join(VARIANT_KINDS)))
        if self.tl and not self.is_tweet_level:
            raise ValueError("the tweet-level LSTM flag needs a tweet-* variant, "
                             "got %r" % (self.kind,))

    @property
    def is_tweet_level(self) -> bool:
        return self.kind.startswith("tweet-")

    @property
    def uses_embeddings(self) -> bool:
        return self.kind != WORD_TFIDF


# ---------------------------------------------------------------------------
# tf-idf statistics


@dataclass(frozen=True)
class TfIdfStats:
    """Per-token document frequency with bins as documents, training split only."""
    df: np.ndarray          # (vocab_size,)
    n_docs: int

    def idf(self) -> np.ndarray:
        return np.log((1.0 + self.n_docs) / (1.0 + self.df)) + 1.0


def fit_tfidf(training_bins: Sequence[Bin], vocab_size: int) -> TfIdfStats:
    """Count, for every vocab token, the number of training bins containing it."""
    if not training_bins:
        raise ValueError("cannot fit tf-idf on an empty training set")
    df = np.zeros(vocab_size)
    for b in training_bins:
        for tok in set(b.word_ids()):
            df[tok] += 1
    return TfIdfStats(df=df, n_docs=len(training_bins))


def attach_tfidf_stats(params: Dict[str, Tensor], stats: TfIdfStats) -> None:
    params["tfidf.df"] = Tensor(stats.df)
    params["tfidf.n_docs"] = Tensor(float(stats.n_docs))


def tfidf_stats_from(params: Dict[str, Tensor]) -> TfIdfStats:
    return TfIdfStats(df=params["tfidf.df"].data,
                      n_docs=int(params["tfidf.n_docs"].data))


def tfidf_vector(word_ids: Sequence[int], stats: TfIdfStats, vocab_size: int) -> np.ndarray:
    """tf * idf over the vocabulary, L2-normalized (zero stays zero)."""
    tf = np.bincount(np.asarray(word_ids, dtype=np.intp), minlength=vocab_size).astype(float)
    x = tf * stats.idf()
    norm = np.linalg.norm(x)
    return x / norm if norm > 0 else x


# ---------------------------------------------------------------------------
# initialization


def glorot(shape: Tuple[int, ...], gen: np.random.Generator) -> np.ndarray:
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:  # conv kernels (w, d_in, d_out)
        fan_in, fan_out = shape[0] * shape[1], shape[2]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)


def embedding_table(vocab_size: int, dim: int, gen: np.random.Generator) -> np.ndarray:
    # Scale matters: mean-pooled bins shrink by ~1/sqrt(len), and a much
    # smaller range starves the recurrent layer of input signal early on.
    return gen.uniform(-0.5, 0.5, size=(vocab_size, dim))


def lstm_bias(hidden: int) -> np.ndarray:
    """Zero gate biases except the forget gate, which starts at 1."""
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return b


def init_encoder_params(variant: EncoderVariant, vocab_size: int, d_embed: int,
                        d_tweet_lstm: int, d_bin: int, rng: Rng) -> Dict[str, Tensor]:
    """Fresh encoder parameters, one named substream per tensor."""
    p: Dict[str, Tensor] = {}

    def add_param(name, array):
        p[name] = Tensor(array, requires_grad=True)

    if variant.uses_embeddings:
        add_param("embed", embedding_table(vocab_size, d_embed, rng.stream("init/embed")))
    d_tweet = tweet_vector_dim(variant, d_embed, d_tweet_lstm)
    if variant.kind == WORD_TFIDF:
        add_param("tfidf.w", glorot((vocab_size, d_bin), rng.stream("init/tfidf.w")))
        add_param("tfidf.b", np.zeros(d_bin))
        attach_tfidf_stats(p, TfIdfStats(df=np.zeros(vocab_size), n_docs=1))
    elif variant.kind == WORD_CNN_AVG:
        add_param("cnn.kernels", glorot((CONV_WINDOW, d_embed, d_bin),
                                        rng.stream("init/cnn.kernels")))
        add_param("cnn.bias", np.zeros(d_bin))
    elif variant.kind == WORD_ATTENTION:
        _add_attention(add_param, d_embed, rng)
    elif variant.kind == TWEET_ATTENTION:
        _add_attention(add_param, d_tweet, rng)
    elif variant.kind == TWEET_CNN:
        add_param("cnn.kernels", glorot((CONV_WINDOW, d_tweet, d_bin),
                                        rng.stream("init/cnn.kernels")))
        add_param("cnn.bias", np.zeros(d_bin))
    if variant.tl:
        add_param("tweet_lstm.wx", glorot((d_embed, 4 * d_tweet_lstm),
                                          rng.stream("init/tweet_lstm.wx")))
        add_param("tweet_lstm.wh", glorot((d_tweet_lstm, 4 * d_tweet_lstm),
                                          rng.stream("init/tweet_lstm.wh")))
        add_param("tweet_lstm.b", lstm_bias(d_tweet_lstm))
    return p


def _add_attention(add_param, dim: int, rng: Rng) -> None:
    add_param("attention.w", glorot((dim, dim), rng.stream("init/attention.w")))
    add_param("attention.b", np.zeros(dim))
    add_param("attention.v", glorot((dim,), rng.stream("init/attention.v")))


def tweet_vector_dim(variant: EncoderVariant, d_embed: int, d_tweet_lstm: int) -> int:
    return d_tweet_lstm if variant.tl else d_embed


def encoder_output_dim(variant: EncoderVariant, d_embed: int, d_tweet_lstm: int,
                       d_bin: int) -> int:
    """The bin-vector width each variant produces; fixed across a run."""
    if variant.kind in (WORD_TFIDF, WORD_CNN_AVG, TWEET_CNN):
        return d_bin
    if variant.kind in (WORD_AVG, WORD_ATTENTION):
        return d_embed
    return tweet_vector_dim(variant, d_embed, d_tweet_lstm)  # tweet-avg / tweet-attention


# ---------------------------------------------------------------------------
# encoding


def additive_attention(items: Tensor, w: Tensor, b: Tensor, v: Tensor):
    """u_t = tanh(items @ w + b), alpha = softmax(u @ v), out = alpha @ items.

    Returns (pooled vector, attention weights)."""
    u = ad.tanh(ad.add(ad.matmul(items, w), b))
    alpha = ad.softmax_vec(ad.matmul(u, v))
    return ad.matmul(alpha, items), alpha


def _require(params: Dict[str, Tensor], names: Sequence[str], variant: EncoderVariant):
    missing = [n for n in names if n not in params]
    if missing:
        raise ValueError("variant %s is missing parameters: %s"
                         % (variant.kind, ", ".join(missing)))


def _tweet_vectors(b: Bin, params: Dict[str, Tensor], variant: EncoderVariant) -> List[Tensor]:
    embed = params["embed"]
    vectors = []
    if variant.tl:
        lstm = LstmParams(params["tweet_lstm.wx"], params["tweet_lstm.wh"],
                          params["tweet_lstm.b"])
    for tweet in b.tweets:
        rows = ad.embedding_lookup(embed, list(tweet.tokens))
        if variant.tl:
            states = ad.lstm_sequence([ad.take_row(rows, i) for i in range(len(tweet.tokens))],
                                      lstm)
            vectors.append(states[-1])
        else:
            vectors.append(ad.mean_pool(rows))
    return vectors


def encode_bin(variant: EncoderVariant, b: Bin, params: Dict[str, Tensor],
               mode: str = "eval") -> Tensor:
    """One fixed-size vector for a bin; empty bins yield the zero vector."""
    if variant.uses_embeddings:
        _require(params, ["embed"], variant)
    if b.tweet_count == 0:
        return ad.zeros(encoded_dim(variant, params))

    if variant.kind == WORD_TFIDF:
        _require(params, ["tfidf.w", "tfidf.b", "tfidf.df", "tfidf.n_docs"], variant)
        stats = tfidf_stats_from(params)
        vocab_size = params["tfidf.w"].data.shape[0]
        x = Tensor(tfidf_vector(b.word_ids(), stats, vocab_size))
        return ad.relu(ad.add(ad.matmul(x, params["tfidf.w"]), params["tfidf.b"]))

    if variant.kind == WORD_AVG:
        return ad.mean_pool(ad.embedding_lookup(params["embed"], b.word_ids()))

    if variant.kind == WORD_CNN_AVG:
        _require(params, ["cnn.kernels", "cnn.bias"], variant)
        rows = ad.embedding_lookup(params["embed"], b.word_ids())
        return ad.mean_pool(ad.relu(ad.conv1d(rows, params["cnn.kernels"],
                                              params["cnn.bias"])))

    if variant.kind == WORD_ATTENTION:
        _require(params, ["attention.w", "attention.b", "attention.v"], variant)
        rows = ad.embedding_lookup(params["embed"], b.word_ids())
        pooled, _ = additive_attention(rows, params["attention.w"],
                                       params["attention.b"], params["attention.v"])
        return pooled

    if variant.tl:
        _require(params, ["tweet_lstm.wx", "tweet_lstm.wh", "tweet_lstm.b"], variant)
    vectors = _tweet_vectors(b, params, variant)

    if variant.kind == TWEET_AVG:
        return ad.mean_pool(ad.stack_rows(vectors))

    if variant.kind == TWEET_ATTENTION:
        _require(params, ["attention.w", "attention.b", "attention.v"], variant)
        pooled, _ = additive_attention(ad.stack_rows(vectors), params["attention.w"],
                                       params["attention.b"], params["attention.v"])
        return pooled

    if variant.kind == TWEET_CNN:
        _require(params, ["cnn.kernels", "cnn.bias"], variant)
        seq = ad.stack_rows(vectors)
        return ad.mean_pool(ad.relu(ad.conv1d(seq, params["cnn.kernels"],
                                              params["cnn.bias"])))

    raise AssertionError("unreachable variant %r" % (variant.kind,))


def encoded_dim(variant: EncoderVariant, params: Dict[str, Tensor]) -> int:
    """Output width derived from the parameter shapes themselves."""
    if variant.kind == WORD_TFIDF:
        return params["tfidf.w"].data.shape[1]
    if variant.kind in (WORD_CNN_AVG, TWEET_CNN):
        return params["cnn.bias"].data.shape[0]
    if variant.tl:
        return params["tweet_lstm.wh"].data.shape[0]
    return params["embed"].data.shape[1]
