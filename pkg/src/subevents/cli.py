"""Command-line entry point.

Subcommands: generate | train | eval | predict | gradcheck.

Configuration is a single flat JSON object shared by all subcommands
(the union of the generator's, the model's and the pipeline's knobs);
``--set key=value`` flags override file values, unknown keys are
rejected, and every command that writes files also writes the fully
resolved config next to them.

Exit codes: 0 success, 1 verification failure, 2 usage/config error.
Reports go to stdout as JSON; progress and warnings go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import autodiff as ad
from . import encoders, evalkit, ingest, labeler, synth
from .autodiff import Rng
from .encoders import EncoderVariant
from .ingest import Bin, StreamExample, TokenizedTweet
from .labeler import ModelConfig
from .synth import SynthConfig


class CliError(Exception):
    """Usage or configuration problem; exits with status 2."""


# ---------------------------------------------------------------------------
# config plumbing

MODEL_KEYS = {"variant", "tl", "chronological", "head", "d_embed",
              "d_tweet_lstm", "d_bin", "d_chrono", "dropout_p", "seed",
              "epochs", "patience", "lr", "class_weighting"}
SYNTH_KEYS = set(SynthConfig.__dataclass_fields__)
PIPELINE_KEYS = {"n_train", "n_dev", "burst_threshold", "burst_window"}
ALL_KEYS = MODEL_KEYS | SYNTH_KEYS | PIPELINE_KEYS

DEFAULT_VARIANT = "tweet-avg"


def default_run_config() -> Dict:
    cfg = SynthConfig().to_json()
    cfg.update(ModelConfig(variant=EncoderVariant(DEFAULT_VARIANT)).to_json())
    cfg.update({"n_train": 3, "n_dev": 7, "burst_threshold": 3.0,
                "burst_window": 5})
    return cfg


def _check_keys(keys, source: str) -> None:
    unknown = set(keys) - ALL_KEYS
    if unknown:
        raise CliError("unknown config key(s) in %s: %s"
                       % (source, ", ".join(sorted(unknown))))


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw  # bare strings may be given unquoted


def resolve_config(config_path: Optional[str], overrides: Sequence[str],
                   seed: Optional[int]) -> Dict:
    """Defaults <- config file <- --set flags <- --seed, with key validation."""
    cfg = default_run_config()
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as e:
            raise CliError("cannot read config file: %s" % e)
        except json.JSONDecodeError as e:
            raise CliError("config file %s is not valid JSON: %s" % (config_path, e))
        if not isinstance(loaded, dict):
            raise CliError("config file %s must hold one flat JSON object" % config_path)
        _check_keys(loaded, config_path)
        cfg.update(loaded)
    for item in overrides or ():
        if "=" not in item:
            raise CliError("--set expects key=value, got %r" % (item,))
        key, _, raw = item.partition("=")
        _check_keys([key], "--set")
        cfg[key] = _parse_value(raw)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def model_config_from(cfg: Dict) -> ModelConfig:
    try:
        return ModelConfig.from_json({k: cfg[k] for k in MODEL_KEYS})
    except (ValueError, TypeError) as e:
        raise CliError(str(e))


def synth_config_from(cfg: Dict) -> SynthConfig:
    try:
        return SynthConfig.from_json({k: cfg[k] for k in SYNTH_KEYS})
    except (ValueError, TypeError) as e:
        raise CliError(str(e))


def write_resolved(cfg: Dict, out_dir: Path) -> Path:
    path = out_dir / "config.resolved.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def emit(report) -> None:
    json.dump(report, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    config = synth_config_from(cfg)
    n_train, n_dev = int(cfg["n_train"]), int(cfg["n_dev"])
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        sizes = synth.write_dataset(config, out_dir, n_train, n_dev)
    except (OSError, ValueError) as e:
        raise CliError(str(e))
    write_resolved(cfg, out_dir)
    log("generate: wrote %d streams under %s" % (config.n_streams, out_dir))
    emit({"command": "generate", "out": str(out_dir), "splits": sizes,
          "seed": config.seed})
    return 0


# ---------------------------------------------------------------------------
# train


def _load_split(directory, vocab, scheme) -> List[StreamExample]:
    try:
        return ingest.load_streams(directory, vocab, scheme)
    except (OSError, ValueError) as e:
        raise CliError(str(e))


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set, args.seed)
    config = model_config_from(cfg)
    out_dir = Path(args.out)
    ckpt = out_dir / "model.ckpt"
    if ckpt.exists():
        raise CliError("checkpoint %s already exists; training is single-shot, "
                       "pick a fresh output directory" % ckpt)
    try:
        scheme = ingest.scheme_from_dir(args.train)
        dev_scheme = ingest.scheme_from_dir(args.dev)
        vocab = ingest.build_vocab(args.train)
    except (OSError, ValueError) as e:
        raise CliError(str(e))
    missing = set(dev_scheme.types) - set(scheme.types)
    if missing:
        raise CliError("dev label %r does not appear in the training scheme"
                       % sorted(missing)[0])
    train_streams = _load_split(args.train, vocab, scheme)
    dev_streams = _load_split(args.dev, vocab, scheme)

    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(str(e))
    t0 = time.time()
    try:
        result = labeler.train(config, scheme, len(vocab), train_streams,
                               dev_streams, log=sys.stderr)
    except labeler.TrainingDiverged as e:
        log("train: %s" % e)
        return 1
    labeler.save_checkpoint(ckpt, config, result.params, scheme, vocab)
    curve_path = out_dir / "curve.csv"
    labeler.write_curve(curve_path, result.curve)
    write_resolved(cfg, out_dir)
    log("train: %d epoch(s) in %.1fs, best dev F1 %.4f at epoch %d"
        % (len(result.curve), time.time() - t0, result.best_dev_f1,
           result.best_epoch))
    emit({"command": "train", "checkpoint": str(ckpt), "curve": str(curve_path),
          "epochs_run": len(result.curve), "best_epoch": result.best_epoch,
          "best_dev_f1": result.best_dev_f1})
    return 0


# ---------------------------------------------------------------------------
# eval / predict


def _load_checkpoint(path):
    try:
        config, scheme, params, vocab = labeler.load_checkpoint(path)
    except (OSError, ValueError, KeyError) as e:
        raise CliError("cannot load checkpoint %s: %s" % (path, e))
    if vocab is None:
        raise CliError("checkpoint %s carries no vocabulary; cannot tokenize "
                       "evaluation data" % path)
    return config, scheme, params, vocab


def _gold_spans(streams, scheme):
    return [evalkit.bio_to_spans(s.gold_labels, scheme) for s in streams]


def cmd_eval(args) -> int:
    if bool(args.checkpoint) == bool(args.baseline):
        raise CliError("need exactly one of --checkpoint or --baseline burst")
    cfg = resolve_config(args.config, args.set, None)
    aggs = ("micro", "macro") if args.all else (args.agg,)

    if args.baseline:
        if args.baseline != "burst":
            raise CliError("unknown baseline %r" % (args.baseline,))
        if not args.all and args.protocol != "binary-event":
            raise CliError("the burst baseline is untyped; only the "
                           "binary-event protocol applies")
        try:
            scheme = ingest.scheme_from_dir(args.data)
            vocab = ingest.build_vocab(args.data)
        except (OSError, ValueError) as e:
            raise CliError(str(e))
        streams = _load_split(args.data, vocab, scheme)
        theta = float(cfg["burst_threshold"])
        window = int(cfg["burst_window"])
        preds = [evalkit.burst_baseline(s.tweet_counts(), theta, window)
                 for s in streams]
        reports = [evalkit.eval_binary_event(_gold_spans(streams, scheme),
                                             preds, agg) for agg in aggs]
        emit([r.to_json() for r in reports] if args.all else reports[0].to_json())
        return 0

    config, scheme, params, vocab = _load_checkpoint(args.checkpoint)
    if config.head == "bio" and scheme is None:
        raise CliError("bio-head checkpoint lacks its label scheme")
    streams = _load_split(args.data, vocab, scheme)
    gold_spans = _gold_spans(streams, scheme)
    protocols = (("bin-level", "relaxed", "binary-event") if args.all
                 else (args.protocol,))
    if config.head == "binary":
        bad = [p for p in protocols if p != "binary-event"]
        if bad and not args.all:
            raise CliError("a binary-head model cannot be scored with the %r "
                           "protocol" % (bad[0],))
        protocols = ("binary-event",)
        flags = [labeler.predict_binary(config, params, s) for s in streams]
        preds = None
    else:
        preds = [labeler.predict_bio(config, params, s) for s in streams]
        flags = [[0 if p == 0 else 1 for p in ps] for ps in preds]

    reports = []
    for protocol in protocols:
        for agg in aggs:
            if protocol == "bin-level":
                r = evalkit.eval_bin_level([s.gold_labels for s in streams],
                                           preds, scheme, agg)
            elif protocol == "relaxed":
                r = evalkit.eval_relaxed(gold_spans, preds, scheme, agg)
            else:
                r = evalkit.eval_binary_event(gold_spans, flags, agg)
            reports.append(r)
    emit([r.to_json() for r in reports] if args.all else reports[0].to_json())
    return 0


def cmd_predict(args) -> int:
    config, scheme, params, vocab = _load_checkpoint(args.checkpoint)
    streams = _load_split(args.data, vocab, scheme)
    out = []
    for s in streams:
        if config.head == "binary":
            flags = labeler.predict_binary(config, params, s)
            out.append({"stream_id": s.stream_id, "flags": flags,
                        "runs": [list(r) for r in evalkit.positive_runs(flags)]})
        else:
            pred = labeler.predict_bio(config, params, s)
            spans = evalkit.bio_to_spans(pred, scheme)
            out.append({"stream_id": s.stream_id,
                        "labels": [scheme.label_name(p) for p in pred],
                        "spans": [{"type": sp.type, "first_bin": sp.first_bin,
                                   "last_bin": sp.last_bin} for sp in spans]})
    emit(out)
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _toy_stream(vocab_size: int, scheme) -> StreamExample:
    """Three bins — full, empty, full — so gradients cross an empty bin."""
    def tweet(*ids):
        return TokenizedTweet(tokens=tuple(ids))

    def mk_bin(i, tweets):
        return Bin(index=i, start_time=i * 60, tweets=tuple(tweets))

    hi = vocab_size - 1
    bins = (mk_bin(0, [tweet(4, 5, 6), tweet(7, 4)]),
            mk_bin(1, []),
            mk_bin(2, [tweet(hi, 8, 9), tweet(10, hi, 5)]))
    gold = (scheme.b_id("goal"), 0, scheme.b_id("card"))
    return StreamExample(stream_id="toy", bins=bins, gold_labels=gold)


def gradcheck_combos():
    for kind in encoders.VARIANT_KINDS:
        tl_options = (False, True) if kind.startswith("tweet-") else (False,)
        for tl in tl_options:
            for chrono in (False, True):
                yield EncoderVariant(kind, tl), chrono


def run_gradcheck(tolerance: float, seed: int, dropout_p: float = 0.2):
    """Finite-difference check of every variant x chronological x TL combo
    on a 3-bin toy stream, in train mode so dropout backward is covered."""
    vocab_size = 12
    scheme = evalkit.LabelScheme.from_types(["goal", "card"])
    stream = _toy_stream(vocab_size, scheme)
    results = []
    for variant, chrono in gradcheck_combos():
        config = ModelConfig(variant=variant, chronological=chrono, head="bio",
                             d_embed=5, d_tweet_lstm=4, d_bin=6, d_chrono=7,
                             dropout_p=dropout_p, seed=seed)
        rng = Rng(seed)
        params = labeler.init_params(config, scheme.n_labels, vocab_size, rng)
        if variant.kind == encoders.WORD_TFIDF:
            encoders.attach_tfidf_stats(
                params, encoders.fit_tfidf([b for b in stream.bins
                                            if b.tweet_count], vocab_size))

        def objective():
            logits = labeler.forward(config, params, stream, "train", rng)
            return ad.softmax_cross_entropy(logits, list(stream.gold_labels))

        report = ad.gradient_check(objective, params, tolerance=tolerance)
        results.append({"variant": variant.kind, "tl": variant.tl,
                        "chronological": chrono,
                        "max_rel_err": report.max_rel_err,
                        "worst_param": report.worst_param,
                        "passed": report.passed})
    return results


def cmd_gradcheck(args) -> int:
    t0 = time.time()
    results = run_gradcheck(args.tolerance, args.seed if args.seed is not None else 0)
    ok = all(r["passed"] for r in results)
    log("gradcheck: %d combination(s) in %.1fs, %s"
        % (len(results), time.time() - t0, "all passed" if ok else "FAILURES"))
    emit({"command": "gradcheck", "tolerance": args.tolerance,
          "passed": ok, "results": results})
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subevents",
        description="Detect and type sub-events in time-binned post streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("generate", help="write a synthetic dataset")
    add_config_flags(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model")
    add_config_flags(p)
    p.add_argument("--train", required=True, help="training stream directory")
    p.add_argument("--dev", required=True, help="development stream directory")
    p.add_argument("--out", required=True, help="output directory for "
                   "checkpoint, curve and resolved config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or the burst baseline")
    add_config_flags(p)
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--baseline", choices=["burst"],
                   help="evaluate a parameter-free baseline instead")
    p.add_argument("--data", required=True, help="evaluation stream directory")
    p.add_argument("--protocol", default="bin-level",
                   choices=["bin-level", "relaxed", "binary-event"])
    p.add_argument("--agg", default="micro", choices=["micro", "macro"])
    p.add_argument("--all", action="store_true",
                   help="emit every applicable protocol x aggregation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="emit per-stream predictions as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="verify gradients against finite "
                       "differences for every model shape")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        log("error: %s" % e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
