"""Command-line driver: synth, transform, train, eval, compare, render.

Every subcommand writes its outputs under ``--out`` (falling back to
``$TAYLORSKEL_OUT``) together with ``resolved_config.json``, a snapshot of
the settings actually used. Exit codes: 0 success, 1 usage error, 2 data or
validation error (reported on stderr as one JSON object).

Train config files are JSON with optional sections::

    {"model": {...}, "train": {...}, "taylor": {...}, "preprocess": {...},
     "micro": false, "seed": 0}

Flags given on the command line override values from the file.
"""

import argparse
import json
import logging
import os
import sys

from . import evaluation, models, render, training
from . import numerics as nx
from .skeleton_data import (PreprocessConfig, SkeletonFormatError, load_manifest, read_sequence,
                            save_manifest, split_dataset, synth_generate, write_sequence)
from .taylor import TaylorConfig, motion_field_to_dict, motion_magnitude, taylor_transform
from .topology import build_ntu_graph, load_hypergraph_config

log = logging.getLogger("taylorskel")

SNAPSHOT = "resolved_config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _out_dir(args):
    out = args.out or os.environ.get("TAYLORSKEL_OUT")
    if not out:
        raise UsageError("no output directory: pass --out or set TAYLORSKEL_OUT")
    os.makedirs(out, exist_ok=True)
    return out


def _threads():
    raw = os.environ.get("TAYLORSKEL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TAYLORSKEL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("TAYLORSKEL_THREADS must be >= 1")
    return n


def _snapshot(out, command, settings):
    path = os.path.join(out, SNAPSHOT)
    with open(path, "w") as fh:
        json.dump({"command": command, **settings}, fh, indent=1, sort_keys=True)
    return path


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ------------------------------------------------------------------ subcommands


def cmd_synth(args):
    out = _out_dir(args)
    manifest = synth_generate(args.seed, args.classes, args.per_class, args.frames, args.noise)
    path = save_manifest(out, manifest)
    _snapshot(out, "synth", {"seed": args.seed, "classes": args.classes, "per_class": args.per_class,
                             "frames": args.frames, "noise": args.noise})
    print(f"wrote {len(manifest.sequences)} sequences and {path}")


def cmd_transform(args):
    out = _out_dir(args)
    cfg = TaylorConfig(args.block, args.step, args.order, args.mode)
    for src in args.inputs:
        seq = read_sequence(src)
        stem = os.path.splitext(os.path.basename(src))[0]
        write_sequence(os.path.join(out, f"{stem}.taylor.json"), taylor_transform(seq, cfg))
        if args.motion:
            with open(os.path.join(out, f"{stem}.motion.json"), "w") as fh:
                json.dump(motion_field_to_dict(motion_magnitude(seq, cfg), cfg), fh)
    _snapshot(out, "transform", {"inputs": args.inputs, "taylor": vars(cfg), "motion": args.motion})
    print(f"transformed {len(args.inputs)} sequence(s) into {out}")


def _train_settings(args):
    doc = _read_json(args.config) if args.config else {}
    unknown = set(doc) - {"model", "train", "taylor", "preprocess", "micro", "seed"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    micro = args.micro or doc.get("micro", False)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)

    taylor_cfg = TaylorConfig(**doc.get("taylor", {}))
    in_channels = training.input_channels(args.input, taylor_cfg)

    pre = dict(doc.get("preprocess", {}))
    if args.frames is not None:
        pre["target_frames"] = args.frames
    pre.setdefault("target_frames", 16 if micro else 64)
    pre_cfg = PreprocessConfig(**pre)

    base = models.micro_config(args.model, 2, in_channels, pre_cfg.target_frames).to_dict() if micro else {}
    model_doc = {**base, **doc.get("model", {}), "in_channels": in_channels}
    if args.model == "hyperformer":
        model_doc["target_frames"] = pre_cfg.target_frames

    if args.model == "stgcn":
        train_doc = training.stgcn_train_config().to_dict()
    else:
        train_doc = training.hyperformer_train_config().to_dict()
    train_doc.update(doc.get("train", {}))
    for key, flag in (("total_epochs", args.epochs), ("base_lr", args.lr), ("batch_size", args.batch_size)):
        if flag is not None:
            train_doc[key] = flag
    if args.schedule_every is not None:
        train_doc["schedule"] = {"kind": "step", "every": args.schedule_every, "factor": 0.1}
    train_doc["seed"] = seed
    sched = train_doc.get("schedule")
    if isinstance(sched, dict) and sched.get("kind") == "milestone":
        # short runs keep only the milestones that fall inside them
        sched["milestones"] = [m for m in sched["milestones"] if m < train_doc["total_epochs"]]
    return model_doc, train_doc, taylor_cfg, pre_cfg


def cmd_train(args):
    out = _out_dir(args)
    data = load_manifest(args.manifest)
    model_doc, train_doc, taylor_cfg, pre_cfg = _train_settings(args)
    model_doc["num_classes"] = data.num_classes
    model_cfg = models.config_from_dict(args.model, model_doc)
    train_cfg = training.TrainConfig(**train_doc)
    topology = models.default_topology(args.model)
    hyperedges = None
    if args.hypergraph:
        if args.model != "hyperformer":
            raise UsageError("--hypergraph only applies to --model hyperformer")
        topology = load_hypergraph_config(args.hypergraph)
        hyperedges = dict(zip(topology.names, [list(e) for e in topology.hyperedges]))

    settings = {
        "model_kind": args.model,
        "input_kind": args.input,
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "taylor": vars(taylor_cfg),
        "preprocess": vars(pre_cfg),
        "hyperedges": hyperedges,
        "manifest": os.path.abspath(args.manifest),
    }
    _snapshot(out, "train", settings)
    result = training.train(args.model, data, train_cfg, model_cfg, args.input, taylor_cfg, pre_cfg, topology)
    meta = {**settings, "num_classes": data.num_classes, "class_names": data.class_names,
            "epochs_run": len(result.history)}
    ckpt = os.path.join(out, "checkpoint.json")
    nx.save_checkpoint(ckpt, result.params.tensors, result.params.flat_buffers(), meta)
    history = args.history or os.path.join(out, "history.csv")
    training.write_history_csv(history, result.history)
    last = result.history[-1] if result.history else {"loss": float("nan"), "top1": float("nan")}
    print(f"trained {len(result.history)} epoch(s): loss {last['loss']:.4f} top1 {last['top1']:.2f}; wrote {ckpt}")


def _load_model(path):
    params, buffers, meta = nx.load_checkpoint(path)
    for key in ("model_kind", "input_kind", "model", "taylor", "preprocess"):
        if key not in meta:
            raise ValueError(f"checkpoint {path}: meta lacks {key!r}")
    kind = meta["model_kind"]
    cfg = models.config_from_dict(kind, meta["model"])
    topology = models.default_topology(kind)
    if meta.get("hyperedges"):
        from .topology import build_bodypart_hypergraph

        topology = build_bodypart_hypergraph({k: tuple(v) for k, v in meta["hyperedges"].items()})
    return kind, cfg, topology, models.ParameterSet.from_arrays(params, buffers), meta


def cmd_eval(args):
    out = _out_dir(args)
    kind, cfg, topology, params, meta = _load_model(args.checkpoint)
    data = load_manifest(args.manifest)
    if data.num_classes != cfg.num_classes:
        raise ValueError(f"manifest has {data.num_classes} classes, checkpoint {cfg.num_classes}")
    train_seqs, test_seqs = split_dataset(data)
    seqs = test_seqs if args.split == "test" else train_seqs
    if not seqs:
        raise ValueError(f"{args.split} split is empty")
    x, y = training.prepare_sequences(seqs, meta["input_kind"], TaylorConfig(**meta["taylor"]),
                                      PreprocessConfig(**meta["preprocess"]))
    logits = training.predict(kind, params, x, cfg, topology)
    tag = args.tag or f"{kind}:{meta['input_kind']}"
    report = evaluation.evaluate(logits, y, cfg.num_classes, tag, data.class_names, shards=_threads())
    report.save(os.path.join(out, "report.json"), os.path.join(out, "confusion.csv"))
    _snapshot(out, "eval", {"checkpoint": os.path.abspath(args.checkpoint),
                            "manifest": os.path.abspath(args.manifest), "split": args.split, "tag": tag})
    print(f"{tag}: top1 {report.top1:.2f} top5 {report.top5:.2f} on {report.sample_count} samples")


def cmd_compare(args):
    a, b = evaluation.EvalReport.load(args.a), evaluation.EvalReport.load(args.b)
    table = evaluation.delta_table(a, b, k=args.top)
    text = table.format()
    sys.stdout.write(text)
    if args.out or os.environ.get("TAYLORSKEL_OUT"):
        out = _out_dir(args)
        with open(os.path.join(out, "delta.txt"), "w") as fh:
            fh.write(text)
        with open(os.path.join(out, "delta.csv"), "w", newline="") as fh:
            fh.write(table.to_csv())
        _snapshot(out, "compare", {"a": os.path.abspath(args.a), "b": os.path.abspath(args.b), "top": args.top})


def cmd_render(args):
    out = _out_dir(args)
    style = render.RenderStyle()
    if args.what == "skeleton":
        seq = read_sequence(args.sequence)
        if not 0 <= args.frame < seq.num_frames:
            raise ValueError(f"frame {args.frame} outside [0, {seq.num_frames})")
        motion = None
        if args.taylor:
            cfg = TaylorConfig(args.block, args.step, 1)
            field = motion_magnitude(seq, cfg)
            block = min(args.frame // cfg.step, field.magnitudes.shape[0] - 1)
            motion = field.magnitudes[block, args.body]
        svg = render.render_skeleton_svg(seq.frames[args.frame, args.body], build_ntu_graph(), motion, style)
        path = os.path.join(out, "skeleton.svg")
        settings = {"sequence": os.path.abspath(args.sequence), "frame": args.frame, "body": args.body,
                    "taylor": args.taylor, "block": args.block, "step": args.step}
    else:
        report = evaluation.EvalReport.load(args.report)
        if report.confusion is None:
            raise ValueError(f"report {args.report} has no confusion matrix")
        matrix = evaluation.filter_confusion(report, args.threshold)
        svg = render.render_confusion_svg(matrix, report.class_names if args.labels else None, style)
        path = os.path.join(out, "confusion.svg")
        settings = {"report": os.path.abspath(args.report), "threshold": args.threshold, "labels": args.labels}
    with open(path, "w") as fh:
        fh.write(svg)
    _snapshot(out, "render", settings)
    print(f"wrote {path}")


# ------------------------------------------------------------------ parser


def build_parser():
    p = _Parser(prog="taylorskel", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic labelled dataset")
    s.add_argument("--classes", type=int, default=8)
    s.add_argument("--per-class", type=int, default=16)
    s.add_argument("--frames", type=int, default=32)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("transform", help="Taylor-transform JSON sequences")
    s.add_argument("--in", dest="inputs", nargs="+", required=True)
    s.add_argument("--block", type=int, default=4)
    s.add_argument("--step", type=int, default=1)
    s.add_argument("--order", type=int, default=1)
    s.add_argument("--mode", choices=("replace", "concat"), default="replace")
    s.add_argument("--motion", action="store_true", help="also write per-joint motion magnitudes")
    s.add_argument("--out")
    s.set_defaults(func=cmd_transform)

    s = sub.add_parser("train", help="train a classifier on a manifest's train split")
    s.add_argument("--model", choices=models.MODEL_KINDS, required=True)
    s.add_argument("--input", choices=training.INPUT_KINDS, default="original")
    s.add_argument("--manifest", required=True)
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--micro", action="store_true", help="use the small CPU-sized model")
    s.add_argument("--hypergraph", help="JSON body-part hyperedges for the hyperformer")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--schedule-every", type=int, help="step schedule, x0.1 every N epochs")
    s.add_argument("--frames", type=int, help="resample sequences to this length")
    s.add_argument("--seed", type=int)
    s.add_argument("--history", help="history CSV path (default: OUT/history.csv)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", choices=("test", "train"), default="test")
    s.add_argument("--tag")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="per-class gain/loss table between two reports")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("render", help="SVG figures")
    s.add_argument("what", choices=("skeleton", "confusion"))
    s.add_argument("--sequence")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--body", type=int, default=0)
    s.add_argument("--taylor", action="store_true", help="overlay motion circles")
    s.add_argument("--block", type=int, default=4)
    s.add_argument("--step", type=int, default=1)
    s.add_argument("--report")
    s.add_argument("--threshold", type=float, default=5.0)
    s.add_argument("--labels", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_render)
    return p


def _check_render_args(args):
    if args.what == "skeleton" and not args.sequence:
        raise UsageError("render skeleton needs --sequence")
    if args.what == "confusion" and not args.report:
        raise UsageError("render confusion needs --report")


def dispatch(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if args.command == "render":
            _check_render_args(args)
        if args.command == "compare" and args.top < 1:
            raise UsageError("--top must be >= 1")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1

    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                                logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (SkeletonFormatError, evaluation.FixtureError, nx.ShapeError, ValueError, KeyError, TypeError,
            OSError, json.JSONDecodeError, training.DivergenceError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": str(msg)}),
              file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
