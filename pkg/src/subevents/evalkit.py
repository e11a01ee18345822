"""BIO label codec, typed span decoding and the three evaluation protocols.

Labels live on bins. Label id 0 is O; each sub-event type t contributes a
(B-t, I-t) pair in the scheme's fixed type order. Spans are inclusive bin
ranges and never overlap within one stream.

Protocols:
  * bin-level   -- every bin scored individually on its collapsed type
                   (B-t and I-t both count as t).
  * relaxed     -- a gold span is correct if any one of its bins has the
                   right predicted type; one decision per gold span, so
                   precision = recall = F1 = accuracy.
  * binary-event -- presence/absence. A gold span is recalled if any of
                   its bins is flagged; a predicted event is a maximal
                   run of flagged bins and is precise if it overlaps
                   some gold span.

Micro aggregation pools counts over streams; macro takes the unweighted
mean of per-stream scores. Empty denominators score 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

O_ID = 0


class AnnotationError(ValueError):
    """Raised for illegal gold annotations (overlaps, out-of-range spans)."""


@dataclass(frozen=True)
class SubEventSpan:
    """A typed sub-event covering bins first_bin..last_bin inclusive."""
    type: str
    first_bin: int
    last_bin: int

    def __post_init__(self):
        if self.first_bin > self.last_bin:
            raise AnnotationError("span %s: first_bin %d > last_bin %d"
                                  % (self.type, self.first_bin, self.last_bin))
        if self.first_bin < 0:
            raise AnnotationError("span %s: negative first_bin" % self.type)

    def overlaps(self, other: "SubEventSpan") -> bool:
        return self.first_bin <= other.last_bin and other.first_bin <= self.last_bin


@dataclass(frozen=True)
class LabelScheme:
    """Sub-event type inventory and its BIO label ids.

    Ids: O = 0, then (B-t, I-t) pairs following the order of `types`.
    """
    types: Tuple[str, ...]

    def __post_init__(self):
        if len(set(self.types)) != len(self.types):
            raise ValueError("duplicate sub-event types: %r" % (self.types,))

    @classmethod
    def from_types(cls, types: Iterable[str]) -> "LabelScheme":
        return cls(tuple(sorted(set(types))))

    @property
    def n_labels(self) -> int:
        return 2 * len(self.types) + 1

    def b_id(self, type_name: str) -> int:
        return 1 + 2 * self.types.index(type_name)

    def i_id(self, type_name: str) -> int:
        return 2 + 2 * self.types.index(type_name)

    def label_name(self, label_id: int) -> str:
        if label_id == O_ID:
            return "O"
        t = self.types[(label_id - 1) // 2]
        return ("B-" if label_id % 2 == 1 else "I-") + t

    def label_id(self, name: str) -> int:
        if name == "O":
            return O_ID
        prefix, _, t = name.partition("-")
        if prefix == "B":
            return self.b_id(t)
        if prefix == "I":
            return self.i_id(t)
        raise ValueError("bad BIO label %r" % (name,))

    def type_of(self, label_id: int) -> str | None:
        """Collapse a label id to its sub-event type; None for O."""
        if label_id == O_ID:
            return None
        return self.types[(label_id - 1) // 2]

    def is_begin(self, label_id: int) -> bool:
        return label_id != O_ID and label_id % 2 == 1

    def to_json(self) -> dict:
        return {"types": list(self.types)}

    @classmethod
    def from_json(cls, obj: dict) -> "LabelScheme":
        return cls(tuple(obj["types"]))


# ---------------------------------------------------------------------------
# codec


def check_spans(n_bins: int, spans: Sequence[SubEventSpan]) -> None:
    """Validate range and pairwise non-overlap; errors name the offenders."""
    for s in spans:
        if s.last_bin >= n_bins:
            raise AnnotationError("span %s(%d,%d) exceeds %d bins"
                                  % (s.type, s.first_bin, s.last_bin, n_bins))
    ordered = sorted(spans, key=lambda s: (s.first_bin, s.last_bin))
    for a, b in zip(ordered, ordered[1:]):
        if a.overlaps(b):
            raise AnnotationError(
                "overlapping spans: %s(%d,%d) and %s(%d,%d)"
                % (a.type, a.first_bin, a.last_bin, b.type, b.first_bin, b.last_bin))


def spans_to_bio(n_bins: int, spans: Sequence[SubEventSpan],
                 scheme: LabelScheme) -> List[int]:
    """First bin of each span gets B-type, the rest I-type, all others O."""
    check_spans(n_bins, spans)
    labels = [O_ID] * n_bins
    for s in spans:
        labels[s.first_bin] = scheme.b_id(s.type)
        for i in range(s.first_bin + 1, s.last_bin + 1):
            labels[i] = scheme.i_id(s.type)
    return labels


def bio_to_spans(labels: Sequence[int], scheme: LabelScheme) -> List[SubEventSpan]:
    """Decode maximal runs, repairing illegal sequences:

    an I-t with no open span of type t starts a new span; an I-t while a
    span of a different type is open closes it and opens t; B-t always
    opens a new span.
    """
    spans: List[SubEventSpan] = []
    cur_type: str | None = None
    cur_start = -1

    def close(end: int) -> None:
        nonlocal cur_type
        if cur_type is not None:
            spans.append(SubEventSpan(cur_type, cur_start, end))
            cur_type = None

    for i, lab in enumerate(labels):
        t = scheme.type_of(lab)
        if t is None:
            close(i - 1)
        elif scheme.is_begin(lab) or t != cur_type:
            close(i - 1)
            cur_type = t
            cur_start = i
    close(len(labels) - 1)
    return spans


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class EvalReport:
    protocol: str
    aggregation: str
    precision: float
    recall: float
    f1: float
    support: Dict[str, int]

    def to_json(self) -> dict:
        return {"protocol": self.protocol, "aggregation": self.aggregation,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "support": dict(self.support)}

    def __str__(self) -> str:
        return json.dumps(self.to_json())


def prf(correct: int, predicted: int, gold: int) -> Tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    if p == r:
        f = p  # exact: 2pr/(p+r) reduces to p, skip the float detour
    else:
        f = 2 * p * r / (p + r)
    return p, r, f


def _aggregate(protocol: str, aggregation: str,
               per_stream: List[Tuple[int, int, int]],
               support: Dict[str, int]) -> EvalReport:
    if aggregation == "micro":
        c = sum(x[0] for x in per_stream)
        pr = sum(x[1] for x in per_stream)
        g = sum(x[2] for x in per_stream)
        p, r, f = prf(c, pr, g)
    elif aggregation == "macro":
        scores = [prf(*x) for x in per_stream]
        n = len(scores)
        p = sum(s[0] for s in scores) / n if n else 0.0
        r = sum(s[1] for s in scores) / n if n else 0.0
        f = sum(s[2] for s in scores) / n if n else 0.0
    else:
        raise ValueError("aggregation must be 'micro' or 'macro'")
    return EvalReport(protocol, aggregation, p, r, f, support)


# ---------------------------------------------------------------------------
# protocols


def eval_bin_level(gold_labels: Sequence[Sequence[int]],
                   pred_labels: Sequence[Sequence[int]],
                   scheme: LabelScheme,
                   aggregation: str = "micro") -> EvalReport:
    """Per-bin type matching: B-/I- prefixes are ignored, a predicted non-O
    bin counts as one prediction and is correct iff the gold type matches."""
    if len(gold_labels) != len(pred_labels):
        raise ValueError("gold/pred stream counts differ")
    per_stream = []
    for gs, ps in zip(gold_labels, pred_labels):
        if len(gs) != len(ps):
            raise ValueError("gold/pred lengths differ within a stream: %d vs %d"
                             % (len(gs), len(ps)))
        correct = predicted = gold_n = 0
        for g, p in zip(gs, ps):
            gt = scheme.type_of(g)
            pt = scheme.type_of(p)
            if pt is not None:
                predicted += 1
                if pt == gt:
                    correct += 1
            if gt is not None:
                gold_n += 1
        per_stream.append((correct, predicted, gold_n))
    support = {"streams": len(per_stream),
               "correct": sum(x[0] for x in per_stream),
               "predicted": sum(x[1] for x in per_stream),
               "gold": sum(x[2] for x in per_stream)}
    return _aggregate("bin-level", aggregation, per_stream, support)


def eval_relaxed(gold_spans: Sequence[Sequence[SubEventSpan]],
                 pred_labels: Sequence[Sequence[int]],
                 scheme: LabelScheme,
                 aggregation: str = "micro") -> EvalReport:
    """Boundaries given: a gold span is correct iff at least one of its bins
    has the right predicted type. Each gold span is exactly one decision,
    hence precision = recall = F1."""
    if len(gold_spans) != len(pred_labels):
        raise ValueError("gold/pred stream counts differ")
    per_stream = []
    for spans, ps in zip(gold_spans, pred_labels):
        correct = 0
        for s in spans:
            types = {scheme.type_of(ps[i]) for i in range(s.first_bin, s.last_bin + 1)}
            if s.type in types:
                correct += 1
        per_stream.append((correct, len(spans), len(spans)))
    support = {"streams": len(per_stream),
               "correct": sum(x[0] for x in per_stream),
               "gold": sum(x[2] for x in per_stream)}
    return _aggregate("relaxed", aggregation, per_stream, support)


def positive_runs(flags: Sequence[int]) -> List[Tuple[int, int]]:
    """Maximal runs of consecutive positive bins, as inclusive (start, end)."""
    runs = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def eval_binary_event(gold_spans: Sequence[Sequence[SubEventSpan]],
                      pred_bins: Sequence[Sequence[int]],
                      aggregation: str = "micro") -> EvalReport:
    """Presence/absence at the event level.

    Recall counts gold spans containing at least one flagged bin. A
    predicted event is a maximal run of flagged bins; precision counts
    runs that overlap at least one gold span.
    """
    if len(gold_spans) != len(pred_bins):
        raise ValueError("gold/pred stream counts differ")
    per_stream = []  # (recalled, matched_runs, n_runs, n_spans)
    for spans, flags in zip(gold_spans, pred_bins):
        runs = positive_runs(flags)
        recalled = sum(1 for s in spans
                       if any(flags[i] for i in range(s.first_bin,
                                                      min(s.last_bin + 1, len(flags)))))
        matched = sum(1 for (a, b) in runs
                      if any(s.first_bin <= b and a <= s.last_bin for s in spans))
        per_stream.append((recalled, matched, len(runs), len(spans)))

    def stream_prf(row):
        recalled, matched, n_runs, n_spans = row
        p = matched / n_runs if n_runs else 0.0
        r = recalled / n_spans if n_spans else 0.0
        if p == r:
            f = p
        else:
            f = 2 * p * r / (p + r)
        return p, r, f

    support = {"streams": len(per_stream),
               "recalled": sum(x[0] for x in per_stream),
               "matched_runs": sum(x[1] for x in per_stream),
               "predicted_runs": sum(x[2] for x in per_stream),
               "gold_spans": sum(x[3] for x in per_stream)}
    if aggregation == "micro":
        recalled, matched, n_runs, n_spans = (sum(x[i] for x in per_stream)
                                              for i in range(4))
        p = matched / n_runs if n_runs else 0.0
        r = recalled / n_spans if n_spans else 0.0
        if p == r:
            f = p
        else:
            f = 2 * p * r / (p + r)
    elif aggregation == "macro":
        scores = [stream_prf(x) for x in per_stream]
        n = len(scores)
        p = sum(s[0] for s in scores) / n if n else 0.0
        r = sum(s[1] for s in scores) / n if n else 0.0
        f = sum(s[2] for s in scores) / n if n else 0.0
    else:
        raise ValueError("aggregation must be 'micro' or 'macro'")
    return EvalReport("binary-event", aggregation, p, r, f, support)


# ---------------------------------------------------------------------------
# burst baseline


def burst_baseline(counts: Sequence[float], threshold: float = 3.0,
                   window: int = 5) -> List[int]:
    """Flag bins whose posting rate exceeds a threshold.

    window = 0: absolute rule, flag iff count >= threshold.
    window > 0: flag iff count >= threshold * mean of the previous
    `window` counts; the first `window` bins fall back to the stream's
    global mean count.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if window < 0:
        raise ValueError("window must be >= 0")
    counts = list(counts)
    if not counts:
        return []
    if window == 0:
        return [1 if c >= threshold else 0 for c in counts]
    global_mean = sum(counts) / len(counts)
    flags = []
    for i, c in enumerate(counts):
        if i < window:
            trailing = global_mean
        else:
            trailing = sum(counts[i - window:i]) / window
        flags.append(1 if c >= threshold * trailing else 0)
    return flags
