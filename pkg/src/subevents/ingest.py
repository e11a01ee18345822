"""Parsing, tokenization and time-binning of timestamped post streams.

File formats:
  * tweets: JSON Lines, one {"id", "ts", "text"} object per line.
  * annotations: one JSON object per stream with the labeling window and
    the gold sub-event spans:
    {"stream_id", "start", "end", "interval",
     "spans": [{"type", "first_bin", "last_bin"}]}

The stream window comes from the annotation file, never from the tweet
timestamps, so the bin count is reproducible. Tweets outside the window
are discarded and counted; empty bins are kept so that bin index equals
elapsed intervals.
"""

from __future__ import annotations

import json
import math
import re
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .evalkit import AnnotationError, LabelScheme, SubEventSpan, spans_to_bio

PAD_ID, UNK_ID, URL_ID, USER_ID = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, URL_TOKEN, USER_TOKEN = "<pad>", "<unk>", "<url>", "<user>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, URL_TOKEN, USER_TOKEN)


class ConfigError(ValueError):
    """Bad run configuration (non-positive interval, inverted window, ...)."""


# URLs and mentions are replaced by markers before the punctuation split,
# hashtags lose their '#', everything else is lowercased alphanumeric runs.
_PIECE_RE = re.compile(r"(https?://\S+|www\.\S+)|(@\w+)|([a-z0-9]+)")


def tokenize(text: str) -> List[str]:
    """Normalize one post into tokens.

    Lowercase, URLs -> <url>, @-mentions -> <user>, '#' stripped, split
    on whitespace and punctuation with punctuation dropped. May return
    an empty list; callers substitute a single <unk>.
    """
    out = []
    for url, mention, word in _PIECE_RE.findall(text.lower()):
        if url:
            out.append(URL_TOKEN)
        elif mention:
            out.append(USER_TOKEN)
        else:
            out.append(word)
    return out


class Vocab:
    """Token to id map with reserved ids 0..3 (<pad>, <unk>, <url>, <user>).

    Built from training streams only; unseen tokens map to <unk>.
    """

    def __init__(self, token_to_id: Dict[str, int]):
        for i, tok in enumerate(RESERVED_TOKENS):
            if token_to_id.get(tok) != i:
                raise ValueError("vocab is missing reserved token %r at id %d" % (tok, i))
        self.token_to_id = dict(token_to_id)

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], min_count: int = 2) -> "Vocab":
        """Count tokens over training posts; tokens below min_count become <unk>."""
        counts = Counter()
        for toks in token_lists:
            counts.update(toks)
        mapping = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
        for tok in sorted(t for t, c in counts.items()
                          if c >= min_count and t not in mapping):
            mapping[tok] = len(mapping)
        return cls(mapping)

    def to_json(self) -> dict:
        return {"token_to_id": self.token_to_id}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        return cls({t: int(i) for t, i in obj["token_to_id"].items()})


@dataclass(frozen=True)
class TweetRecord:
    id: str
    timestamp: int
    text: str


@dataclass(frozen=True)
class TokenizedTweet:
    tokens: Tuple[int, ...]


@dataclass(frozen=True)
class Bin:
    """All posts of one fixed-width time interval, in chronological order."""
    index: int
    start_time: int
    tweets: Tuple[TokenizedTweet, ...]

    @property
    def tweet_count(self) -> int:
        return len(self.tweets)

    @property
    def word_count(self) -> int:
        return sum(len(t.tokens) for t in self.tweets)

    def word_ids(self) -> List[int]:
        """Chronological concatenation of the bin's token ids."""
        return [tok for tw in self.tweets for tok in tw.tokens]


@dataclass(frozen=True)
class StreamAnnotation:
    stream_id: str
    start: int
    end: int
    interval: int
    spans: Tuple[SubEventSpan, ...]

    @property
    def n_bins(self) -> int:
        return math.ceil((self.end - self.start) / self.interval)


@dataclass(frozen=True)
class StreamExample:
    stream_id: str
    bins: Tuple[Bin, ...]
    gold_labels: Tuple[int, ...]

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    def tweet_counts(self) -> List[int]:
        return [b.tweet_count for b in self.bins]


# ---------------------------------------------------------------------------
# file I/O


def parse_tweets(path) -> List[TweetRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            text = str(obj["text"])
            ts = int(obj["ts"])
            if not text.strip():
                raise ValueError("%s:%d: empty post body" % (path, lineno))
            if ts < 0:
                raise ValueError("%s:%d: negative timestamp" % (path, lineno))
            records.append(TweetRecord(id=str(obj["id"]), timestamp=ts, text=text))
    return records


def write_tweets(path, records: Sequence[TweetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "ts": r.timestamp, "text": r.text}))
            fh.write("\n")


def parse_annotation(path) -> StreamAnnotation:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    spans = tuple(SubEventSpan(s["type"], int(s["first_bin"]), int(s["last_bin"]))
                  for s in obj["spans"])
    ann = StreamAnnotation(stream_id=str(obj["stream_id"]), start=int(obj["start"]),
                           end=int(obj["end"]), interval=int(obj["interval"]),
                           spans=spans)
    if ann.interval <= 0:
        raise ConfigError("%s: non-positive bin interval" % path)
    if ann.end <= ann.start:
        raise ConfigError("%s: stream end before start" % path)
    return ann


def write_annotation(path, ann: StreamAnnotation) -> None:
    obj = {"stream_id": ann.stream_id, "start": ann.start, "end": ann.end,
           "interval": ann.interval,
           "spans": [{"type": s.type, "first_bin": s.first_bin, "last_bin": s.last_bin}
                     for s in ann.spans]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# binning and label alignment


def tokenize_record(record: TweetRecord, vocab: Vocab) -> TokenizedTweet:
    ids = vocab.encode(tokenize(record.text))
    if not ids:  # text was pure punctuation/markers-free residue
        ids = [UNK_ID]
    return TokenizedTweet(tokens=tuple(ids))


def assign_bins(tweets: Sequence[TweetRecord], stream_start: int, stream_end: int,
                interval: int, vocab: Vocab) -> Tuple[List[Bin], int]:
    """Partition tweets into ceil((end-start)/interval) consecutive bins.

    Sorts stably by (timestamp, id); tweets outside [start, end) are
    dropped and returned as a count. Empty bins are materialized.
    """
    if interval <= 0:
        raise ConfigError("bin interval must be positive, got %r" % (interval,))
    if stream_end <= stream_start:
        raise ConfigError("stream window is empty: [%r, %r)" % (stream_start, stream_end))
    n_bins = math.ceil((stream_end - stream_start) / interval)
    kept = sorted((t for t in tweets if stream_start <= t.timestamp < stream_end),
                  key=lambda t: (t.timestamp, t.id))
    discarded = len(tweets) - len(kept)
    grouped: List[List[TokenizedTweet]] = [[] for _ in range(n_bins)]
    for t in kept:
        grouped[(t.timestamp - stream_start) // interval].append(tokenize_record(t, vocab))
    bins = [Bin(index=i, start_time=stream_start + i * interval, tweets=tuple(g))
            for i, g in enumerate(grouped)]
    return bins, discarded


def align_labels(bins: Sequence[Bin], spans: Sequence[SubEventSpan],
                 scheme: LabelScheme) -> List[int]:
    """Gold BIO labels for the bin sequence; overlap errors name the spans."""
    return spans_to_bio(len(bins), spans, scheme)


def build_example(records: Sequence[TweetRecord], ann: StreamAnnotation,
                  vocab: Vocab, scheme: LabelScheme) -> Tuple[StreamExample, int]:
    bins, discarded = assign_bins(records, ann.start, ann.end, ann.interval, vocab)
    labels = align_labels(bins, ann.spans, scheme)
    example = StreamExample(stream_id=ann.stream_id, bins=tuple(bins),
                            gold_labels=tuple(labels))
    return example, discarded


# ---------------------------------------------------------------------------
# dataset directories: per stream, <id>.tweets.jsonl next to <id>.ann.json


def stream_paths(directory) -> List[Tuple[Path, Path]]:
    directory = Path(directory)
    pairs = []
    for ann_path in sorted(directory.glob("*.ann.json")):
        tweets_path = ann_path.with_name(ann_path.name[:-len(".ann.json")] + ".tweets.jsonl")
        if not tweets_path.exists():
            raise FileNotFoundError("no tweets file for annotation %s" % ann_path)
        pairs.append((tweets_path, ann_path))
    if not pairs:
        raise FileNotFoundError("no *.ann.json streams under %s" % directory)
    return pairs


def iter_training_tokens(directory) -> Iterable[List[str]]:
    """Token lists of every post in a directory, for vocabulary building."""
    for tweets_path, _ in stream_paths(directory):
        for record in parse_tweets(tweets_path):
            yield tokenize(record.text)


def build_vocab(directory, min_count: int = 2) -> Vocab:
    return Vocab.build(iter_training_tokens(directory), min_count=min_count)


def scheme_from_dir(directory) -> LabelScheme:
    types = set()
    for _, ann_path in stream_paths(directory):
        types.update(s.type for s in parse_annotation(ann_path).spans)
    return LabelScheme.from_types(types)


def load_streams(directory, vocab: Vocab, scheme: LabelScheme,
                 quiet: bool = False) -> List[StreamExample]:
    """Load every stream in a directory; one stderr summary line reports
    how many tweets fell outside their stream windows."""
    examples = []
    discarded = 0
    for tweets_path, ann_path in stream_paths(directory):
        records = parse_tweets(tweets_path)
        ann = parse_annotation(ann_path)
        example, n = build_example(records, ann, vocab, scheme)
        examples.append(example)
        discarded += n
    if not quiet:
        print("ingest: discarded %d tweet(s) outside stream windows from %s"
              % (discarded, directory), file=sys.stderr)
    return examples
