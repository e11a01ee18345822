"""Synthetic match-stream generator.

Produces reproducible post streams with gold sub-event spans in the exact
JSONL/annotation formats the ingest module reads. The generative story,
all knobs in SynthConfig:

  * per-bin post counts are Poisson: base_rate background, burst_rate
    inside sub-event spans (a random minority of spans are "quiet" and
    burst at quiet_rate instead — detectable by content, not by rate);
  * occasional content-free rate spikes (retweet storms etc.) hit
    non-event bins with noise_spike_prob — rate without content;
  * sub-event posts carry a shared excitement vocabulary (excite_prob
    per post, whole span) plus type-specific cue tokens; cue tokens for
    bin j of a span appear only if that bin's cue gate is on, which
    happens with probability cue_gate_decay**j. First bins always name
    the sub-event type; later bins increasingly only sustain excitement,
    so the type must be carried over from context;
  * cue tokens also leak into a non-event bin with probability
    cue_leak_prob (someone mentions goals when there is no goal).

Span lengths are geometric (mean span_mean_len), placement is rejection
sampling with at least one clear bin between spans. Every span bin
contains at least one sub-event post.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .autodiff import Rng
from .evalkit import SubEventSpan
from .ingest import (StreamAnnotation, TweetRecord, write_annotation,
                     write_tweets)

_TYPE_RE = re.compile(r"[a-z][a-z0-9]*")

DEFAULT_TYPES = ("card", "goal", "kickoff", "penalty")

_MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class SynthConfig:
    n_streams: int = 20
    n_bins: int = 95
    interval: int = 60
    base_rate: float = 8.0
    burst_rate: float = 40.0
    types: Tuple[str, ...] = DEFAULT_TYPES
    cues_per_type: int = 5
    span_mean_len: float = 2.0
    events_per_stream: int = 9
    noise_vocab: int = 500
    tweet_len_mean: float = 8.0
    cue_prob: float = 0.7
    cue_gate_decay: float = 0.5
    cue_leak_prob: float = 0.02
    excite_tokens: int = 5
    excite_prob: float = 0.5
    noise_spike_prob: float = 0.03
    spike_rate: float = 35.0
    quiet_span_prob: float = 0.2
    quiet_rate: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.n_streams < 1 or self.n_bins < 1 or self.interval < 1:
            raise ValueError("n_streams, n_bins and interval must be >= 1")
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")
        for name in ("burst_rate", "quiet_rate", "spike_rate"):
            if getattr(self, name) <= self.base_rate:
                raise ValueError("%s must exceed base_rate" % name)
        if not self.types:
            raise ValueError("need at least one sub-event type")
        if len(set(self.types)) != len(self.types):
            raise ValueError("duplicate sub-event type names")
        for t in self.types:
            if not _TYPE_RE.fullmatch(t):
                raise ValueError("type name %r is not a lowercase word" % (t,))
        if self.cues_per_type < 1 or self.noise_vocab < 1 or self.excite_tokens < 1:
            raise ValueError("cues_per_type, noise_vocab, excite_tokens must be >= 1")
        if self.span_mean_len < 1:
            raise ValueError("span_mean_len must be >= 1")
        if self.events_per_stream < 0:
            raise ValueError("events_per_stream must be >= 0")
        if self.tweet_len_mean <= 0:
            raise ValueError("tweet_len_mean must be positive")
        for name in ("cue_prob", "cue_leak_prob", "excite_prob",
                     "noise_spike_prob", "quiet_span_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError("%s must lie in [0, 1]" % name)
        if not 0.0 < self.cue_gate_decay <= 1.0:
            raise ValueError("cue_gate_decay must lie in (0, 1]")

    # --- token inventories (disjoint by construction) ---

    def cue_tokens(self, type_name: str) -> List[str]:
        return ["%scue%d" % (type_name, k) for k in range(self.cues_per_type)]

    def excitement_tokens(self) -> List[str]:
        return ["wow%d" % k for k in range(self.excite_tokens)]

    def noise_tokens(self) -> List[str]:
        return ["ntok%03d" % i for i in range(self.noise_vocab)]

    def all_cue_tokens(self) -> List[str]:
        return [c for t in self.types for c in self.cue_tokens(t)]

    def to_json(self) -> dict:
        out = {name: getattr(self, name) for name in self.__dataclass_fields__}
        out["types"] = list(self.types)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError("unknown synth config keys: %s" % ", ".join(sorted(unknown)))
        data = dict(obj)
        if "types" in data:
            data["types"] = tuple(data["types"])
        return cls(**data)


@dataclass(frozen=True)
class GeneratedStream:
    records: Tuple[TweetRecord, ...]
    annotation: StreamAnnotation


def _sample_spans(config: SynthConfig, gen: np.random.Generator) -> List[SubEventSpan]:
    """Non-overlapping spans with a gap of at least one bin between them."""
    occupied = np.zeros(config.n_bins, dtype=bool)
    spans: List[SubEventSpan] = []
    rejections = 0
    for _ in range(config.events_per_stream):
        while True:
            type_name = config.types[int(gen.integers(len(config.types)))]
            length = int(gen.geometric(1.0 / config.span_mean_len))
            if length <= config.n_bins:
                start = int(gen.integers(0, config.n_bins - length + 1))
                lo = max(0, start - 1)
                hi = min(config.n_bins, start + length + 1)
                if not occupied[lo:hi].any():
                    occupied[start:start + length] = True
                    spans.append(SubEventSpan(type_name, start, start + length - 1))
                    break
            rejections += 1
            if rejections > _MAX_REJECTIONS:
                raise ValueError(
                    "span sampling failed after %d rejections; the config packs "
                    "too many/long sub-events into %d bins"
                    % (_MAX_REJECTIONS, config.n_bins))
    spans.sort(key=lambda s: s.first_bin)
    return spans


def _noise_tweet(config: SynthConfig, gen: np.random.Generator,
                 noise: Sequence[str]) -> List[str]:
    n = max(1, int(gen.poisson(config.tweet_len_mean)))
    return [noise[int(i)] for i in gen.integers(0, len(noise), size=n)]


def _insert(tokens: List[str], token: str, gen: np.random.Generator) -> None:
    tokens.insert(int(gen.integers(0, len(tokens) + 1)), token)


def generate_stream(config: SynthConfig, index: int, rng: Rng) -> GeneratedStream:
    """One fully determined stream; all randomness comes from substreams
    named after the stream index."""
    sid = "match%02d" % index
    g_spans = rng.stream("%s/spans" % sid)
    g_rates = rng.stream("%s/rates" % sid)
    g_gates = rng.stream("%s/gates" % sid)
    g_text = rng.stream("%s/text" % sid)
    g_time = rng.stream("%s/time" % sid)

    spans = _sample_spans(config, g_spans)
    quiet = {s: g_rates.random() < config.quiet_span_prob for s in spans}
    gates: Dict[Tuple[SubEventSpan, int], bool] = {}
    for s in spans:
        for j in range(s.last_bin - s.first_bin + 1):
            gates[(s, j)] = g_gates.random() < config.cue_gate_decay ** j

    by_bin: Dict[int, SubEventSpan] = {}
    for s in spans:
        for b in range(s.first_bin, s.last_bin + 1):
            by_bin[b] = s

    noise = config.noise_tokens()
    excitement = config.excitement_tokens()
    all_cues = config.all_cue_tokens()

    records: List[TweetRecord] = []
    seq = 0

    def emit(bin_index: int, tokens: List[str]) -> None:
        nonlocal seq
        ts = bin_index * config.interval + int(g_time.integers(0, config.interval))
        records.append(TweetRecord(id="%s-%05d" % (sid, seq), timestamp=ts,
                                   text=" ".join(tokens)))
        seq += 1

    for b in range(config.n_bins):
        span = by_bin.get(b)
        if span is not None:
            rate = config.quiet_rate if quiet[span] else config.burst_rate
            n_noise = int(g_rates.poisson(config.base_rate))
            n_event = max(1, int(g_rates.poisson(rate - config.base_rate)))
            gate_on = gates[(span, b - span.first_bin)]
        else:
            spike = g_rates.random() < config.noise_spike_prob
            n_noise = int(g_rates.poisson(config.spike_rate if spike
                                          else config.base_rate))
            n_event = 0
            gate_on = False

        leak = span is None and n_noise > 0 and g_text.random() < config.cue_leak_prob
        for k in range(n_noise):
            tokens = _noise_tweet(config, g_text, noise)
            if leak and k == 0:
                _insert(tokens, all_cues[int(g_text.integers(len(all_cues)))], g_text)
            emit(b, tokens)
        for _ in range(n_event):
            tokens = _noise_tweet(config, g_text, noise)
            if g_text.random() < config.excite_prob:
                _insert(tokens, excitement[int(g_text.integers(len(excitement)))],
                        g_text)
            if gate_on and g_text.random() < config.cue_prob:
                cues = config.cue_tokens(span.type)
                _insert(tokens, cues[int(g_text.integers(len(cues)))], g_text)
            emit(b, tokens)

    ann = StreamAnnotation(stream_id=sid, start=0,
                           end=config.n_bins * config.interval,
                           interval=config.interval, spans=tuple(spans))
    return GeneratedStream(records=tuple(records), annotation=ann)


def generate(config: SynthConfig) -> List[GeneratedStream]:
    rng = Rng(config.seed)
    return [generate_stream(config, i, rng) for i in range(config.n_streams)]


def write_stream(directory, stream: GeneratedStream) -> None:
    directory = Path(directory)
    sid = stream.annotation.stream_id
    write_tweets(directory / ("%s.tweets.jsonl" % sid), stream.records)
    write_annotation(directory / ("%s.ann.json" % sid), stream.annotation)


def write_dataset(config: SynthConfig, out_dir, n_train: int = 3,
                  n_dev: int = 7) -> Dict[str, int]:
    """Generate and split into out_dir/{train,dev,test}; returns split sizes."""
    if n_train < 1 or n_dev < 1:
        raise ValueError("need at least one train and one dev stream")
    if n_train + n_dev >= config.n_streams:
        raise ValueError("split %d train + %d dev leaves no test streams of %d"
                         % (n_train, n_dev, config.n_streams))
    streams = generate(config)
    out_dir = Path(out_dir)
    splits = {"train": streams[:n_train],
              "dev": streams[n_train:n_train + n_dev],
              "test": streams[n_train + n_dev:]}
    for name, members in splits.items():
        sub = out_dir / name
        sub.mkdir(parents=True, exist_ok=True)
        for s in members:
            write_stream(sub, s)
    return {name: len(members) for name, members in splits.items()}
