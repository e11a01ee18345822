"""Bin-sequence labeling heads and the training loop.

Two classifier shapes over the encoded bin vectors:

  chronological   a unidirectional LSTM runs left-to-right over the bins
                  (zero initial state); each hidden state goes through
                  dropout and a dense layer to the output logits.
  independent     each bin vector goes through dropout and a one-hidden-
                  layer ReLU MLP, with no information flow between bins.

Two heads: "bio" predicts one BIO label per bin; "binary" predicts
presence/absence per bin and is always independent (it is the per-bin
detection baseline, so it deliberately has no chronological layer).

Training runs one Adam update per stream so each stream's bins stay in
a single graph and chronological gradients flow across all of them.
Model selection is by dev micro F1 (bin-level for the bio head, binary
event-level for the binary head), with early stopping on `patience`
epochs without improvement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import encoders
from .autodiff import AdamState, LstmParams, Rng, Tensor
from .encoders import EncoderVariant
from .evalkit import (LabelScheme, bio_to_spans, eval_bin_level,
                      eval_binary_event)
from .ingest import StreamExample, Vocab

HEADS = ("bio", "binary")
BINARY_NO_EVENT = 0
BINARY_EVENT = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; names the offending stream."""


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build and train one model, fully serializable."""
    variant: EncoderVariant
    chronological: bool = True
    head: str = "bio"
    d_embed: int = 64
    d_tweet_lstm: int = 64
    d_bin: int = 64
    d_chrono: int = 128
    dropout_p: float = 0.3
    seed: int = 0
    epochs: int = 100
    patience: int = 10
    lr: float = 1e-3
    class_weighting: bool = False

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError("head must be one of %s, got %r" % (HEADS, self.head))
        if self.head == "binary" and self.chronological:
            raise ValueError("the binary presence/absence head is a per-bin "
                             "baseline and never uses the chronological LSTM; "
                             "set chronological=false")
        for name in ("d_embed", "d_tweet_lstm", "d_bin", "d_chrono"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be a positive integer" % name)
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must satisfy 0 <= p < 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def n_classes(self, scheme: Optional[LabelScheme]) -> int:
        if self.head == "binary":
            return 2
        if scheme is None:
            raise ValueError("bio head needs a label scheme")
        return scheme.n_labels

    def to_json(self) -> dict:
        return {
            "variant": self.variant.kind,
            "tl": self.variant.tl,
            "chronological": self.chronological,
            "head": self.head,
            "d_embed": self.d_embed,
            "d_tweet_lstm": self.d_tweet_lstm,
            "d_bin": self.d_bin,
            "d_chrono": self.d_chrono,
            "dropout_p": self.dropout_p,
            "seed": self.seed,
            "epochs": self.epochs,
            "patience": self.patience,
            "lr": self.lr,
            "class_weighting": self.class_weighting,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {"variant", "tl", "chronological", "head", "d_embed",
                 "d_tweet_lstm", "d_bin", "d_chrono", "dropout_p", "seed",
                 "epochs", "patience", "lr", "class_weighting"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError("unknown model config keys: %s" % ", ".join(sorted(unknown)))
        data = dict(obj)
        variant = EncoderVariant(data.pop("variant"), data.pop("tl", False))
        return cls(variant=variant, **data)


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, n_classes: int, vocab_size: int,
                rng: Rng) -> Dict[str, Tensor]:
    """Fresh parameters for encoder + classifier, named and seeded."""
    params = encoders.init_encoder_params(config.variant, vocab_size,
                                          config.d_embed, config.d_tweet_lstm,
                                          config.d_bin, rng)
    d_rep = encoders.encoder_output_dim(config.variant, config.d_embed,
                                        config.d_tweet_lstm, config.d_bin)
    if config.chronological:
        params["chrono.wx"] = Tensor(
            encoders.glorot((d_rep, 4 * config.d_chrono), rng.stream("init/chrono.wx")),
            requires_grad=True)
        params["chrono.wh"] = Tensor(
            encoders.glorot((config.d_chrono, 4 * config.d_chrono),
                            rng.stream("init/chrono.wh")),
            requires_grad=True)
        params["chrono.b"] = Tensor(encoders.lstm_bias(config.d_chrono),
                                    requires_grad=True)
    else:
        params["mlp.w"] = Tensor(
            encoders.glorot((d_rep, config.d_chrono), rng.stream("init/mlp.w")),
            requires_grad=True)
        # small positive bias keeps ReLU units initially active and moves the
        # exact-zero pre-activation of empty bins off the ReLU kink
        params["mlp.b"] = Tensor(np.full(config.d_chrono, 0.01), requires_grad=True)
    params["out.w"] = Tensor(
        encoders.glorot((config.d_chrono, n_classes), rng.stream("init/out.w")),
        requires_grad=True)
    params["out.b"] = Tensor(np.zeros(n_classes), requires_grad=True)
    return params


# ---------------------------------------------------------------------------
# forward / predict


def forward(config: ModelConfig, params: Dict[str, Tensor], stream: StreamExample,
            mode: str = "eval", rng: Optional[Rng] = None,
            drop_prefix: str = "dropout") -> Tensor:
    """Logits, one row per bin. In train mode, dropout masks are drawn from
    named substreams under `drop_prefix`, so identical (rng, prefix) pairs
    rebuild identical masks — which is what makes finite differencing and
    per-epoch determinism possible."""
    if stream.n_bins == 0:
        raise ValueError("stream %r has no bins" % (stream.stream_id,))
    drop = config.dropout_p > 0 and mode == "train"

    def masked(t: Tensor, name: str) -> Tensor:
        if not drop:
            return t
        return ad.dropout(t, config.dropout_p, mode,
                          rng.stream("%s/%s" % (drop_prefix, name)) if rng else None)

    reps = [masked(encoders.encode_bin(config.variant, b, params, mode), "rep%d" % i)
            for i, b in enumerate(stream.bins)]
    if config.chronological:
        lstm = LstmParams(params["chrono.wx"], params["chrono.wh"], params["chrono.b"])
        states = ad.lstm_sequence(reps, lstm)
        rows = [ad.add(ad.matmul(masked(h, "state%d" % i), params["out.w"]),
                       params["out.b"])
                for i, h in enumerate(states)]
    else:
        rows = []
        for r in reps:
            hidden = ad.relu(ad.add(ad.matmul(r, params["mlp.w"]), params["mlp.b"]))
            rows.append(ad.add(ad.matmul(hidden, params["out.w"]), params["out.b"]))
    return ad.stack_rows(rows)


def predict_bio(config: ModelConfig, params: Dict[str, Tensor],
                stream: StreamExample) -> List[int]:
    """Per-bin argmax over BIO labels; ties break to the lowest label id."""
    if config.head != "bio":
        raise ValueError("predict_bio needs head='bio', config has %r" % (config.head,))
    logits = forward(config, params, stream, "eval")
    return [int(i) for i in np.argmax(logits.data, axis=1)]


def predict_binary(config: ModelConfig, params: Dict[str, Tensor],
                   stream: StreamExample) -> List[int]:
    """Per-bin event/no-event, class order [no-event, event]; ties -> no-event."""
    if config.head != "binary":
        raise ValueError("predict_binary needs head='binary', config has %r"
                         % (config.head,))
    logits = forward(config, params, stream, "eval")
    return [int(i) for i in np.argmax(logits.data, axis=1)]


def binary_targets(gold_labels: Sequence[int]) -> List[int]:
    """Collapse BIO gold labels to event presence (anything non-O is an event)."""
    return [BINARY_NO_EVENT if g == 0 else BINARY_EVENT for g in gold_labels]


def gold_targets(config: ModelConfig, stream: StreamExample) -> List[int]:
    if config.head == "binary":
        return binary_targets(stream.gold_labels)
    return list(stream.gold_labels)


# ---------------------------------------------------------------------------
# training


def class_weights(n_classes: int, streams: Sequence[StreamExample],
                  head: str) -> np.ndarray:
    """Inverse-frequency weights, normalised so a balanced set gives all ones."""
    counts = np.zeros(n_classes)
    total = 0
    for s in streams:
        targets = binary_targets(s.gold_labels) if head == "binary" else s.gold_labels
        for t in targets:
            counts[t] += 1
            total += 1
    return total / (n_classes * np.maximum(counts, 1.0))


def dev_f1(config: ModelConfig, params: Dict[str, Tensor],
           scheme: Optional[LabelScheme],
           dev_streams: Sequence[StreamExample]) -> float:
    """Selection metric: bin-level micro F1 for the bio head, binary
    event-level micro F1 for the binary head."""
    if config.head == "binary":
        gold_spans = [bio_to_spans(s.gold_labels, scheme) for s in dev_streams]
        preds = [predict_binary(config, params, s) for s in dev_streams]
        return eval_binary_event(gold_spans, preds, "micro").f1
    gold = [s.gold_labels for s in dev_streams]
    preds = [predict_bio(config, params, s) for s in dev_streams]
    return eval_bin_level(gold, preds, scheme, "micro").f1


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    dev_f1: float


@dataclass
class TrainResult:
    params: Dict[str, Tensor]
    best_epoch: int
    best_dev_f1: float
    curve: List[EpochStats]


def train(config: ModelConfig, scheme: Optional[LabelScheme], vocab_size: int,
          train_streams: Sequence[StreamExample],
          dev_streams: Sequence[StreamExample],
          log=None) -> TrainResult:
    """Full training run; returns the parameters of the best dev epoch.

    One forward/backward/Adam step per stream per epoch, stream order
    reshuffled each epoch from a named substream of the config seed. Early
    stopping fires once `patience` consecutive epochs fail to improve dev
    F1 (patience=0 therefore runs exactly one epoch).
    """
    if not train_streams:
        raise ValueError("training set is empty")
    if not dev_streams:
        raise ValueError("dev set is empty (pass the training streams to "
                         "select on training F1)")
    rng = Rng(config.seed)
    n_classes = config.n_classes(scheme)
    params = init_params(config, n_classes, vocab_size, rng)
    if config.variant.kind == encoders.WORD_TFIDF:
        all_bins = [b for s in train_streams for b in s.bins]
        encoders.attach_tfidf_stats(params, encoders.fit_tfidf(all_bins, vocab_size))
    weights = (class_weights(n_classes, train_streams, config.head)
               if config.class_weighting else None)

    adam = AdamState()
    curve: List[EpochStats] = []
    best_f1 = -1.0
    best_epoch = -1
    best_snapshot: Dict[str, np.ndarray] = {}
    stale = 0

    for epoch in range(config.epochs):
        order = list(range(len(train_streams)))
        rng.stream("shuffle/epoch%d" % epoch).shuffle(order)
        total_loss = 0.0
        for si in order:
            s = train_streams[si]
            ad.zero_grads(params)
            logits = forward(config, params, s, "train", rng,
                             drop_prefix="dropout/epoch%d/%s" % (epoch, s.stream_id))
            loss = ad.softmax_cross_entropy(logits, gold_targets(config, s), weights)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    "non-finite loss on stream %r at epoch %d" % (s.stream_id, epoch))
            loss.backward()
            ad.adam_step(params, adam, lr=config.lr)
            total_loss += loss.item()
        train_loss = total_loss / len(train_streams)
        f1 = dev_f1(config, params, scheme, dev_streams)
        curve.append(EpochStats(epoch, train_loss, f1))
        if log is not None:
            print("epoch %d  loss %.6f  dev_f1 %.4f" % (epoch, train_loss, f1),
                  file=log)
        if f1 > best_f1:
            best_f1 = f1
            best_epoch = epoch
            best_snapshot = {name: p.data.copy() for name, p in params.items()}
            stale = 0
        else:
            stale += 1
        if stale >= config.patience:
            break

    for name, arr in best_snapshot.items():
        params[name].data = arr
    return TrainResult(params=params, best_epoch=best_epoch,
                       best_dev_f1=best_f1, curve=curve)


def write_curve(path, curve: Sequence[EpochStats]) -> None:
    """Learning-curve CSV: header epoch,train_loss,dev_f1, one row per epoch.
    Floats use repr() for exact round-tripping (and byte-stable reruns)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,dev_f1\n")
        for row in curve:
            fh.write("%d,%s,%s\n" % (row.epoch, repr(row.train_loss),
                                     repr(row.dev_f1)))


# ---------------------------------------------------------------------------
# checkpoints: binary tensor file + sidecar JSON with config/scheme/vocab


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path, config: ModelConfig, params: Dict[str, Tensor],
                    scheme: Optional[LabelScheme] = None,
                    vocab: Optional[Vocab] = None) -> None:
    ad.write_tensors(path, params)
    meta = {"config": config.to_json(),
            "label_scheme": scheme.to_json() if scheme is not None else None,
            "vocab": vocab.to_json() if vocab is not None else None}
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Tuple[ModelConfig, Optional[LabelScheme],
                                   Dict[str, Tensor], Optional[Vocab]]:
    arrays = ad.read_tensors(path)
    with open(sidecar_path(path), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    config = ModelConfig.from_json(meta["config"])
    scheme = (LabelScheme.from_json(meta["label_scheme"])
              if meta.get("label_scheme") else None)
    vocab = Vocab.from_json(meta["vocab"]) if meta.get("vocab") else None
    params = {name: Tensor(arr, requires_grad=name not in encoders.STATIC_PARAM_NAMES)
              for name, arr in arrays.items()}
    return config, scheme, params, vocab
