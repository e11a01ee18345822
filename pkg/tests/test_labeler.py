"""Classifier heads over encoded bins, the training loop, and checkpoints."""

import numpy as np
import pytest

from subevents import autodiff as ad
from subevents import labeler
from subevents.autodiff import Rng, Tensor
from subevents.encoders import EncoderVariant
from subevents.evalkit import (LabelScheme, bio_to_spans, eval_bin_level,
                               eval_binary_event)
from subevents.ingest import Bin, StreamExample, TokenizedTweet, Vocab
from subevents.labeler import (BINARY_EVENT, BINARY_NO_EVENT, ModelConfig,
                               TrainingDiverged, binary_targets, class_weights,
                               dev_f1, forward, gold_targets, init_params,
                               load_checkpoint, predict_bio, predict_binary,
                               save_checkpoint, train, write_curve)

SCHEME = LabelScheme(("card", "goal"))
VOCAB_SIZE = 12

# token ids: 4/5 mark goals, 6/7 mark cards, 8..11 are background chatter
GOAL_A, GOAL_B, CARD_A, CARD_B = 4, 5, 6, 7


def make_stream(stream_id, bins_tokens, labels):
    bins = tuple(
        Bin(index=i, start_time=60 * i,
            tweets=tuple(TokenizedTweet(tuple(t)) for t in tweets))
        for i, tweets in enumerate(bins_tokens))
    return StreamExample(stream_id=stream_id, bins=bins, gold_labels=tuple(labels))


def small_config(**kw):
    base = dict(variant=EncoderVariant("word-avg"), chronological=True,
                d_embed=6, d_tweet_lstm=5, d_bin=6, d_chrono=7,
                dropout_p=0.0, seed=3, epochs=2, patience=2, lr=0.01)
    base.update(kw)
    return ModelConfig(**base)


B, I = SCHEME.b_id, SCHEME.i_id

TRAIN_STREAM = make_stream(
    "s0",
    [[[GOAL_A, GOAL_B], [8]], [[GOAL_B, 9]], [], [[CARD_A, CARD_B]], [[10, 11]]],
    [B("goal"), I("goal"), 0, B("card"), 0])

SECOND_STREAM = make_stream(
    "s1",
    [[[9, 10]], [[CARD_A], [CARD_B, 8]], [[GOAL_A]]],
    [0, B("card"), B("goal")])


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ValueError, match="head"):
        small_config(head="spans")
    with pytest.raises(ValueError, match="chronological"):
        small_config(head="binary", chronological=True)
    with pytest.raises(ValueError, match="d_chrono"):
        small_config(d_chrono=0)
    with pytest.raises(ValueError, match="dropout_p"):
        small_config(dropout_p=1.0)
    with pytest.raises(ValueError, match="epochs"):
        small_config(epochs=0)
    with pytest.raises(ValueError, match="patience"):
        small_config(patience=-1)
    with pytest.raises(ValueError, match="lr"):
        small_config(lr=0.0)


def test_config_n_classes():
    assert small_config().n_classes(SCHEME) == 5
    binary = small_config(head="binary", chronological=False)
    assert binary.n_classes(None) == 2
    with pytest.raises(ValueError):
        small_config().n_classes(None)


def test_config_json_roundtrip():
    cfg = small_config(variant=EncoderVariant("tweet-cnn", tl=True),
                       class_weighting=True)
    back = ModelConfig.from_json(cfg.to_json())
    assert back == cfg
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_json(dict(cfg.to_json(), momentum=0.9))


# ---------------------------------------------------------------------------
# parameters


def test_init_params_layout():
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(0))
    assert {"embed", "chrono.wx", "chrono.wh", "chrono.b", "out.w", "out.b"} == set(p)
    assert p["chrono.wx"].data.shape == (6, 4 * 7)
    assert p["out.w"].data.shape == (7, 5)

    flat = small_config(chronological=False)
    q = init_params(flat, 5, VOCAB_SIZE, Rng(0))
    assert {"embed", "mlp.w", "mlp.b", "out.w", "out.b"} == set(q)
    assert q["mlp.w"].data.shape == (6, 7)


def test_init_params_deterministic():
    cfg = small_config()
    a = init_params(cfg, 5, VOCAB_SIZE, Rng(11))
    b = init_params(cfg, 5, VOCAB_SIZE, Rng(11))
    for name in a:
        assert np.array_equal(a[name].data, b[name].data)


# ---------------------------------------------------------------------------
# forward


def test_forward_shape_and_empty_stream():
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(0))
    logits = forward(cfg, p, TRAIN_STREAM)
    assert logits.data.shape == (5, 5)
    with pytest.raises(ValueError, match="no bins"):
        forward(cfg, p, make_stream("empty", [], []))


def test_independent_head_is_permutation_equivariant():
    cfg = small_config(chronological=False)
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(1))
    base = forward(cfg, p, TRAIN_STREAM).data
    order = [3, 0, 4, 1, 2]
    permuted = make_stream(
        "perm",
        [[[tok for tok in tw.tokens] for tw in TRAIN_STREAM.bins[i].tweets]
         for i in order],
        [TRAIN_STREAM.gold_labels[i] for i in order])
    out = forward(cfg, p, permuted).data
    assert np.array_equal(out, base[order])


def test_chronological_head_propagates_content_forward():
    cfg = small_config()
    changed = make_stream(
        "s0b",
        [[[CARD_A, CARD_B], [8]], [[GOAL_B, 9]], [], [[CARD_A, CARD_B]], [[10, 11]]],
        TRAIN_STREAM.gold_labels)
    hit = False
    for seed in range(5):
        p = init_params(cfg, 5, VOCAB_SIZE, Rng(seed))
        a = forward(cfg, p, TRAIN_STREAM).data
        b = forward(cfg, p, changed).data
        if np.any(np.abs(a[1:] - b[1:]) > 1e-9):
            hit = True
    assert hit, "bin-0 edit never reached later bins on any seed"


def test_zero_classifier_gives_uniform_softmax():
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(2))
    p["out.w"].data[:] = 0.0
    p["out.b"].data[:] = 0.0
    logits = forward(cfg, p, TRAIN_STREAM).data
    assert np.array_equal(logits, np.zeros_like(logits))


def test_zeroed_recurrence_degenerates_to_constant_rows():
    # Zero LSTM input/recurrent weights: gates are constant, cell stays 0,
    # every hidden state is 0, so logits rows all equal out.b regardless of
    # bin content — nothing leaks between bins through a dead recurrence.
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(3))
    p["chrono.wx"].data[:] = 0.0
    p["chrono.wh"].data[:] = 0.0
    logits = forward(cfg, p, TRAIN_STREAM).data
    for row in logits:
        np.testing.assert_allclose(row, p["out.b"].data, atol=1e-15)


def test_train_mode_dropout_needs_rng_and_is_seeded():
    cfg = small_config(dropout_p=0.4)
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(4))
    with pytest.raises(ValueError):
        forward(cfg, p, TRAIN_STREAM, "train", rng=None)
    a = forward(cfg, p, TRAIN_STREAM, "train", rng=Rng(77)).data
    b = forward(cfg, p, TRAIN_STREAM, "train", rng=Rng(77)).data
    c = forward(cfg, p, TRAIN_STREAM, "train", rng=Rng(78)).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    # eval mode ignores dropout entirely
    d = forward(cfg, p, TRAIN_STREAM, "eval").data
    e = forward(small_config(dropout_p=0.0), p, TRAIN_STREAM, "eval").data
    assert np.array_equal(d, e)


# ---------------------------------------------------------------------------
# prediction


def test_predict_head_mismatch():
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(0))
    with pytest.raises(ValueError):
        predict_binary(cfg, p, TRAIN_STREAM)
    binary = small_config(head="binary", chronological=False)
    q = init_params(binary, 2, VOCAB_SIZE, Rng(0))
    with pytest.raises(ValueError):
        predict_bio(binary, q, TRAIN_STREAM)


def test_uniform_logits_tie_to_lowest_id():
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(5))
    p["out.w"].data[:] = 0.0
    p["out.b"].data[:] = 0.0
    assert predict_bio(cfg, p, TRAIN_STREAM) == [0] * 5

    binary = small_config(head="binary", chronological=False)
    q = init_params(binary, 2, VOCAB_SIZE, Rng(5))
    q["out.w"].data[:] = 0.0
    q["out.b"].data[:] = 0.0
    assert predict_binary(binary, q, TRAIN_STREAM) == [BINARY_NO_EVENT] * 5


def test_binary_class_order():
    binary = small_config(head="binary", chronological=False)
    q = init_params(binary, 2, VOCAB_SIZE, Rng(6))
    q["out.w"].data[:] = 0.0
    q["out.b"].data = np.array([2.0, -1.0])
    assert predict_binary(binary, q, TRAIN_STREAM) == [BINARY_NO_EVENT] * 5
    q["out.b"].data = np.array([-1.0, 2.0])
    assert predict_binary(binary, q, TRAIN_STREAM) == [BINARY_EVENT] * 5


def test_single_bin_stream():
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(7))
    one = make_stream("one", [[[GOAL_A]]], [B("goal")])
    assert len(predict_bio(cfg, p, one)) == 1


def test_targets():
    assert binary_targets([0, B("goal"), I("goal"), 0]) == [0, 1, 1, 0]
    cfg = small_config()
    assert gold_targets(cfg, TRAIN_STREAM) == list(TRAIN_STREAM.gold_labels)
    binary = small_config(head="binary", chronological=False)
    assert gold_targets(binary, TRAIN_STREAM) == [1, 1, 0, 1, 0]


def test_class_weights():
    w = class_weights(2, [TRAIN_STREAM], "binary")  # 3 events, 2 non-events
    np.testing.assert_allclose(w, [5 / (2 * 2), 5 / (2 * 3)])
    balanced = make_stream("b", [[[4]], [[5]]], [0, B("goal")])
    w = class_weights(2, [balanced], "binary")
    np.testing.assert_allclose(w, [1.0, 1.0])
    # a class that never occurs falls back to count 1 instead of dividing by 0
    w = class_weights(5, [TRAIN_STREAM], "bio")
    assert np.isfinite(w).all()


def test_dev_f1_matches_protocols():
    cfg = small_config()
    p = init_params(cfg, 5, VOCAB_SIZE, Rng(8))
    streams = [TRAIN_STREAM, SECOND_STREAM]
    want = eval_bin_level([s.gold_labels for s in streams],
                          [predict_bio(cfg, p, s) for s in streams],
                          SCHEME, "micro").f1
    assert dev_f1(cfg, p, SCHEME, streams) == want


# ---------------------------------------------------------------------------
# training loop


def test_patience_zero_runs_one_epoch():
    cfg = small_config(epochs=50, patience=0)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [SECOND_STREAM])
    assert len(res.curve) == 1
    assert res.best_epoch == 0


def test_training_curve_bookkeeping():
    cfg = small_config(epochs=6, patience=6)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM, SECOND_STREAM],
                [SECOND_STREAM])
    assert [row.epoch for row in res.curve] == list(range(len(res.curve)))
    devs = [row.dev_f1 for row in res.curve]
    assert res.best_dev_f1 == max(devs)
    assert res.best_epoch == devs.index(max(devs))  # strict > keeps the first
    assert all(np.isfinite(row.train_loss) for row in res.curve)
    # returned params really are the best-epoch snapshot
    assert dev_f1(cfg, res.params, SCHEME, [SECOND_STREAM]) == res.best_dev_f1


def test_training_is_bit_deterministic():
    cfg = small_config(epochs=4, patience=4, dropout_p=0.3)
    a = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM, SECOND_STREAM],
              [SECOND_STREAM])
    b = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM, SECOND_STREAM],
              [SECOND_STREAM])
    assert a.curve == b.curve
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data), name


def test_training_rejects_empty_sets():
    cfg = small_config()
    with pytest.raises(ValueError, match="empty"):
        train(cfg, SCHEME, VOCAB_SIZE, [], [SECOND_STREAM])
    with pytest.raises(ValueError, match="dev"):
        train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_the_stream():
    # a colossal step size overflows the weights on purpose
    cfg = small_config(chronological=False, lr=1e200, epochs=4, patience=4)
    with pytest.raises(TrainingDiverged, match="s[01]"):
        train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM, SECOND_STREAM],
              [SECOND_STREAM])


def test_word_tfidf_training_fits_stats():
    cfg = small_config(variant=EncoderVariant("word-tfidf"), epochs=1,
                       patience=1)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [SECOND_STREAM])
    assert res.params["tfidf.df"].data.sum() > 0
    assert int(res.params["tfidf.n_docs"].data) == TRAIN_STREAM.n_bins


def test_overfits_one_tiny_stream():
    cfg = small_config(epochs=80, patience=80, lr=0.05, seed=1)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [TRAIN_STREAM])
    assert res.curve[-1].train_loss < 0.05
    assert predict_bio(cfg, res.params, TRAIN_STREAM) == list(TRAIN_STREAM.gold_labels)


def test_class_weighting_knob_runs():
    cfg = small_config(epochs=2, patience=2, class_weighting=True)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [SECOND_STREAM])
    assert len(res.curve) >= 1


def test_binary_head_trains_and_selects_on_event_f1():
    # Selection is event-level: one merged run covering both gold spans
    # already scores 1.0, so the best snapshot is an early epoch even
    # though per-bin boundaries are still sloppy. The event-level report
    # of the returned snapshot must match the selection score.
    cfg = small_config(head="binary", chronological=False, epochs=30,
                       patience=30, lr=0.05, seed=2)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [TRAIN_STREAM])
    assert res.best_dev_f1 == 1.0
    preds = predict_binary(cfg, res.params, TRAIN_STREAM)
    gold_spans = bio_to_spans(TRAIN_STREAM.gold_labels, SCHEME)
    assert eval_binary_event([gold_spans], [preds], "micro").f1 == 1.0
    # the final epoch kept driving per-bin loss down regardless
    assert res.curve[-1].train_loss < 0.01


# ---------------------------------------------------------------------------
# curve files and checkpoints


def test_write_curve_format(tmp_path):
    path = tmp_path / "curve.csv"
    cfg = small_config(epochs=3, patience=3)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [SECOND_STREAM])
    write_curve(path, res.curve)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,dev_f1"
    assert len(lines) == 1 + len(res.curve)
    for line, row in zip(lines[1:], res.curve):
        epoch, loss, f1 = line.split(",")
        assert int(epoch) == row.epoch
        assert float(loss) == row.train_loss  # repr() round-trips exactly
        assert float(f1) == row.dev_f1


def test_checkpoint_roundtrip_bitwise(tmp_path):
    path = tmp_path / "model.ckpt"
    cfg = small_config(epochs=2, patience=2)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [SECOND_STREAM])
    vocab = Vocab.build([["goal", "goal"], ["card", "card"]])
    save_checkpoint(path, cfg, res.params, SCHEME, vocab)

    cfg2, scheme2, params2, vocab2 = load_checkpoint(path)
    assert cfg2 == cfg
    assert scheme2 == SCHEME
    assert vocab2.token_to_id == vocab.token_to_id
    a = forward(cfg, res.params, TRAIN_STREAM).data
    b = forward(cfg2, params2, TRAIN_STREAM).data
    assert np.array_equal(a, b)


def test_checkpoint_without_sidecar_extras(tmp_path):
    path = tmp_path / "model.ckpt"
    cfg = small_config(variant=EncoderVariant("word-tfidf"), epochs=1,
                       patience=1)
    res = train(cfg, SCHEME, VOCAB_SIZE, [TRAIN_STREAM], [SECOND_STREAM])
    save_checkpoint(path, cfg, res.params)
    cfg2, scheme2, params2, vocab2 = load_checkpoint(path)
    assert scheme2 is None and vocab2 is None
    assert not params2["tfidf.df"].requires_grad
    assert params2["embed"].requires_grad if "embed" in params2 else True
