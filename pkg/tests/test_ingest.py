"""Tokenizer rules, vocabulary building, time-binning and the stream file
formats."""

import json

import numpy as np
import pytest

from subevents.evalkit import AnnotationError, LabelScheme, SubEventSpan
from subevents.ingest import (PAD_ID, UNK_ID, URL_ID, USER_ID, Bin,
                              ConfigError, StreamAnnotation, TweetRecord,
                              Vocab, assign_bins, align_labels, build_example,
                              build_vocab, load_streams, parse_annotation,
                              parse_tweets, scheme_from_dir, stream_paths,
                              tokenize, tokenize_record, write_annotation,
                              write_tweets)


# ---------------------------------------------------------------------------
# tokenizer


def test_tokenize_url_hashtag():
    assert tokenize("GOAL!!! #WorldCup http://t.co/x") == [
        "goal", "worldcup", "<url>"]


def test_tokenize_empty():
    assert tokenize("") == []
    assert tokenize("!!! ... ???") == []


def test_tokenize_mention():
    assert tokenize("@ref Yellow card") == ["<user>", "yellow", "card"]


def test_tokenize_www_and_numbers():
    assert tokenize("2-0 see www.example.com/x NOW") == [
        "2", "0", "see", "<url>", "now"]


def test_tokenize_record_pure_punctuation_becomes_unk():
    vocab = Vocab.build([["goal"], ["goal"]])
    tt = tokenize_record(TweetRecord("1", 0, "?!?!"), vocab)
    assert tt.tokens == (UNK_ID,)


# ---------------------------------------------------------------------------
# vocabulary


def test_vocab_reserved_ids():
    v = Vocab.build([])
    assert len(v) == 4
    assert v.id_of("<pad>") == PAD_ID
    assert v.id_of("<unk>") == UNK_ID
    assert v.id_of("<url>") == URL_ID
    assert v.id_of("<user>") == USER_ID


def test_vocab_min_count_and_unk():
    v = Vocab.build([["goal", "goal", "ref"], ["goal", "card", "card"]])
    assert v.id_of("goal") != UNK_ID
    assert v.id_of("card") != UNK_ID
    assert v.id_of("ref") == UNK_ID      # count 1 < min_count
    assert v.id_of("never-seen") == UNK_ID
    assert v.encode(["goal", "ref"]) == [v.id_of("goal"), UNK_ID]


def test_vocab_assignment_is_sorted_and_bijective():
    v = Vocab.build([["b", "a", "b", "a", "c", "c"]])
    assert v.id_of("a") < v.id_of("b") < v.id_of("c")
    ids = list(v.token_to_id.values())
    assert sorted(ids) == list(range(len(v)))


def test_vocab_json_roundtrip():
    v = Vocab.build([["goal", "goal", "card", "card"]])
    w = Vocab.from_json(v.to_json())
    assert w.token_to_id == v.token_to_id


def test_vocab_requires_reserved_tokens():
    with pytest.raises(ValueError):
        Vocab({"goal": 0})


# ---------------------------------------------------------------------------
# binning

VOCAB = Vocab.build([["goal", "goal", "card", "card", "kick", "kick"]])


def tw(id_, ts, text="goal"):
    return TweetRecord(str(id_), ts, text)


def test_assign_bins_two_bins():
    t0 = 1000
    bins, discarded = assign_bins([tw(1, t0 + 5), tw(2, t0 + 61)],
                                  t0, t0 + 120, 60, VOCAB)
    assert discarded == 0
    assert len(bins) == 2
    assert [b.tweet_count for b in bins] == [1, 1]
    assert [b.start_time for b in bins] == [t0, t0 + 60]
    assert [b.index for b in bins] == [0, 1]


def test_assign_bins_95_minute_window():
    bins, _ = assign_bins([], 0, 95 * 60, 60, VOCAB)
    assert len(bins) == 95


def test_assign_bins_empty_window_is_materialized():
    bins, discarded = assign_bins([], 0, 180, 60, VOCAB)
    assert [b.tweet_count for b in bins] == [0, 0, 0]
    assert discarded == 0


def test_assign_bins_ceil_partial_last_bin():
    bins, _ = assign_bins([tw(1, 125)], 0, 130, 60, VOCAB)
    assert len(bins) == 3
    assert bins[2].tweet_count == 1


def test_assign_bins_discards_outside_window():
    bins, discarded = assign_bins(
        [tw(1, -1), tw(2, 0), tw(3, 119), tw(4, 120), tw(5, 500)],
        0, 120, 60, VOCAB)
    assert discarded == 3  # -1, 120 (right-open) and 500
    assert sum(b.tweet_count for b in bins) == 2


def test_assign_bins_stable_order_within_bin():
    recs = [tw("b", 10, "card"), tw("a", 10, "goal"), tw("c", 5, "kick")]
    bins, _ = assign_bins(recs, 0, 60, 60, VOCAB)
    texts = [t.tokens for t in bins[0].tweets]
    # ts=5 first, then the two ts=10 tweets ordered by id
    assert texts == [(VOCAB.id_of("kick"),), (VOCAB.id_of("goal"),),
                     (VOCAB.id_of("card"),)]


def test_assign_bins_input_order_irrelevant():
    gen = np.random.default_rng(3)
    recs = [tw(i, int(gen.integers(0, 300)), "goal") for i in range(40)]
    a, _ = assign_bins(recs, 0, 300, 60, VOCAB)
    shuffled = [recs[i] for i in gen.permutation(len(recs))]
    b, _ = assign_bins(shuffled, 0, 300, 60, VOCAB)
    assert a == b


def test_assign_bins_partition_property():
    gen = np.random.default_rng(4)
    recs = [tw(i, int(gen.integers(-50, 350)), "goal") for i in range(120)]
    bins, discarded = assign_bins(recs, 0, 300, 60, VOCAB)
    kept = sum(1 for r in recs if 0 <= r.timestamp < 300)
    assert sum(b.tweet_count for b in bins) == kept
    assert discarded == len(recs) - kept
    for b in bins:
        lo, hi = b.start_time, b.start_time + 60
        assert b.index * 60 == b.start_time


def test_assign_bins_rejects_bad_window():
    with pytest.raises(ConfigError):
        assign_bins([], 0, 100, 0, VOCAB)
    with pytest.raises(ConfigError):
        assign_bins([], 100, 100, 60, VOCAB)


def test_bin_word_ids_concatenate_chronologically():
    recs = [tw(1, 0, "goal goal"), tw(2, 30, "card")]
    bins, _ = assign_bins(recs, 0, 60, 60, VOCAB)
    b = bins[0]
    g, c = VOCAB.id_of("goal"), VOCAB.id_of("card")
    assert b.word_ids() == [g, g, c]
    assert b.word_count == 3
    assert b.tweet_count == 2


# ---------------------------------------------------------------------------
# label alignment and examples

SCHEME = LabelScheme(("card", "goal"))


def test_align_labels_overlap_names_spans():
    bins, _ = assign_bins([], 0, 300, 60, VOCAB)
    spans = [SubEventSpan("goal", 0, 2), SubEventSpan("card", 2, 3)]
    with pytest.raises(AnnotationError, match="goal"):
        align_labels(bins, spans, SCHEME)


def test_build_example_shapes():
    ann = StreamAnnotation("m1", 0, 300, 60,
                           (SubEventSpan("goal", 1, 2),))
    recs = [tw(1, 70, "goal"), tw(2, 500, "late")]
    ex, discarded = build_example(recs, ann, VOCAB, SCHEME)
    assert discarded == 1
    assert ex.stream_id == "m1"
    assert ex.n_bins == 5
    assert len(ex.gold_labels) == 5
    assert ex.gold_labels[1] == SCHEME.b_id("goal")
    assert ex.tweet_counts() == [0, 1, 0, 0, 0]


# ---------------------------------------------------------------------------
# file formats


def test_tweets_roundtrip(tmp_path):
    path = tmp_path / "s.tweets.jsonl"
    recs = [TweetRecord("a", 5, "GOAL!"), TweetRecord("b", 9, "zzz #x")]
    write_tweets(path, recs)
    assert parse_tweets(path) == recs


def test_parse_tweets_skips_blank_lines(tmp_path):
    path = tmp_path / "s.tweets.jsonl"
    path.write_text('{"id": "a", "ts": 1, "text": "hi"}\n\n')
    assert len(parse_tweets(path)) == 1


def test_parse_tweets_rejects_bad_records(tmp_path):
    path = tmp_path / "s.tweets.jsonl"
    path.write_text('{"id": "a", "ts": 1, "text": "  "}\n')
    with pytest.raises(ValueError, match="empty post"):
        parse_tweets(path)
    path.write_text('{"id": "a", "ts": -4, "text": "hi"}\n')
    with pytest.raises(ValueError, match="negative timestamp"):
        parse_tweets(path)


def test_annotation_roundtrip(tmp_path):
    path = tmp_path / "s.ann.json"
    ann = StreamAnnotation("m7", 100, 400, 60,
                           (SubEventSpan("goal", 0, 1),
                            SubEventSpan("card", 3, 4)))
    write_annotation(path, ann)
    assert parse_annotation(path) == ann
    assert ann.n_bins == 5


def test_parse_annotation_validates_window(tmp_path):
    path = tmp_path / "s.ann.json"
    obj = {"stream_id": "m", "start": 0, "end": 100, "interval": 0, "spans": []}
    path.write_text(json.dumps(obj))
    with pytest.raises(ConfigError):
        parse_annotation(path)
    obj.update(interval=60, end=0)
    path.write_text(json.dumps(obj))
    with pytest.raises(ConfigError):
        parse_annotation(path)


# ---------------------------------------------------------------------------
# dataset directories


def make_stream(directory, stream_id, spans, texts):
    ann = StreamAnnotation(stream_id, 0, 60 * len(texts), 60, tuple(spans))
    write_annotation(directory / ("%s.ann.json" % stream_id), ann)
    recs = [TweetRecord("%s-%d" % (stream_id, i), 60 * i + 5, t)
            for i, t in enumerate(texts)]
    write_tweets(directory / ("%s.tweets.jsonl" % stream_id), recs)


def test_stream_paths_sorted_pairs(tmp_path):
    make_stream(tmp_path, "m2", [], ["x x"])
    make_stream(tmp_path, "m1", [], ["y y"])
    pairs = stream_paths(tmp_path)
    assert [p[1].name for p in pairs] == ["m1.ann.json", "m2.ann.json"]


def test_stream_paths_missing_tweets_file(tmp_path):
    make_stream(tmp_path, "m1", [], ["x"])
    (tmp_path / "m1.tweets.jsonl").unlink()
    with pytest.raises(FileNotFoundError):
        stream_paths(tmp_path)


def test_stream_paths_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        stream_paths(tmp_path)


def test_directory_vocab_scheme_and_loading(tmp_path, capsys):
    make_stream(tmp_path, "m1", [SubEventSpan("goal", 0, 1)],
                ["goal goal", "goal again", "quiet"])
    make_stream(tmp_path, "m2", [SubEventSpan("card", 2, 2)],
                ["calm", "calm", "card card"])
    vocab = build_vocab(tmp_path)
    assert vocab.id_of("goal") != UNK_ID
    assert vocab.id_of("again") == UNK_ID  # count 1
    scheme = scheme_from_dir(tmp_path)
    assert scheme.types == ("card", "goal")

    streams = load_streams(tmp_path, vocab, scheme, quiet=True)
    assert capsys.readouterr().err == ""
    assert [s.stream_id for s in streams] == ["m1", "m2"]
    assert streams[0].gold_labels == (
        scheme.b_id("goal"), scheme.i_id("goal"), 0)

    load_streams(tmp_path, vocab, scheme)
    assert "discarded 0" in capsys.readouterr().err
