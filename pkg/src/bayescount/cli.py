"""Command-line front end: ``bayescount {gen,train,eval,entropy,density,sweep}``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import losses, scene, synth, toy
from .posterior import entropy_map

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_SHAPE = 4
EXIT_FORMAT = 5

MANIFEST = "manifest.json"


class CliError(Exception):
    def __init__(self, msg, code=EXIT_ERROR):
        super().__init__(msg)
        self.code = code


def _print_config(name, cfg):
    print("config " + json.dumps({"command": name, **cfg}, sort_keys=True, default=str))


def _require_file(path):
    if not os.path.isfile(path):
        raise CliError(f"no such file: {path}", EXIT_MISSING)


def _float_list(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


# -- shared option groups --------------------------------------------------

def _add_loss_flags(p, background_flag=True):
    g = p.add_argument_group("loss")
    g.add_argument("--sigma", type=float, default=8.0, help="Gaussian likelihood width in cells (default 8)")
    g.add_argument("--d", type=float, default=None, help="absolute background margin in cells")
    g.add_argument("--d-frac", type=float, default=None,
                   help="background margin as a fraction of the shorter side (default 0.15)")
    if background_flag:
        g.add_argument("--background", action="store_true", help="enable the background label")
    g.add_argument("--distance", choices=("abs", "squared"), default="abs",
                   help="penalty on count residuals (default abs)")


def _loss_config(args, background=None):
    if args.d is not None and args.d_frac is not None:
        print("warning: both --d and --d-frac given; using --d", file=sys.stderr)
    d_frac = 0.15 if args.d_frac is None else args.d_frac
    bg = getattr(args, "background", False) if background is None else background
    return scene.LossConfig(sigma=args.sigma, background=bg, margin_d=args.d,
                            d_frac=d_frac, distance=args.distance)


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--loss", choices=toy.LOSSES, default="bayes+", help="training loss (default bayes+)")
    g.add_argument("--epochs", type=int, default=50, help="training epochs (default 50)")
    g.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate (default 1e-3)")
    g.add_argument("--batch-size", type=int, default=4, help="images per update (default 4)")
    g.add_argument("--seed", type=int, default=7, help="initialization/shuffling seed (default 7)")


def _train_config(args):
    return toy.TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                           seed=args.seed, loss=args.loss, loss_cfg=_loss_config(args))


def _add_spec_flags(p):
    g = p.add_argument_group("synthetic data")
    g.add_argument("--spec", choices=sorted(synth.SPECS), default="synth-v1",
                   help="named benchmark to start from (default synth-v1)")
    g.add_argument("--data-seed", type=int, default=None, help="override the benchmark seed")
    g.add_argument("--n-train", type=int, default=None, help="override the training split size")
    g.add_argument("--n-test", type=int, default=None, help="override the held-out split size")
    g.add_argument("--noise", type=float, default=None, help="override the additive input noise level")


def _synth_spec(args):
    spec = synth.SPECS[args.spec]
    over = {k: v for k, v in (("seed", args.data_seed), ("n_train", args.n_train),
                              ("n_test", args.n_test), ("noise", args.noise)) if v is not None}
    return replace(spec, **over) if over else spec


# -- dataset directories ---------------------------------------------------

def _write_dataset(spec, out):
    os.makedirs(out, exist_ok=True)
    names = []
    for k in range(spec.n_train + spec.n_test):
        img, sc = synth.generate_scene(spec, k)
        stem = f"{k:04d}"
        scene.write_scene(sc, os.path.join(out, f"scene_{stem}.json"))
        scene.write_density(scene.DensityGrid(img), os.path.join(out, f"input_{stem}.pdens"))
        names.append(stem)
    manifest = {
        "spec": asdict(spec),
        "train": names[:spec.n_train],
        "test": names[spec.n_train:],
    }
    with open(os.path.join(out, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def _load_split(data_dir, split):
    path = os.path.join(data_dir, MANIFEST)
    _require_file(path)
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"malformed manifest {path}: {exc}", EXIT_FORMAT) from None
    if split not in manifest:
        raise CliError(f"manifest has no split {split!r}", EXIT_FORMAT)
    pairs = []
    for stem in manifest[split]:
        spath = os.path.join(data_dir, f"scene_{stem}.json")
        ipath = os.path.join(data_dir, f"input_{stem}.pdens")
        _require_file(spath)
        _require_file(ipath)
        sc = scene.read_scene(spath)
        img = scene.read_density(ipath).values
        if img.shape != sc.shape:
            raise CliError(f"input {ipath} is {img.shape}, scene is {sc.shape}", EXIT_SHAPE)
        pairs.append((img, sc))
    return pairs


# -- subcommands -----------------------------------------------------------

def cmd_gen(args):
    spec = _synth_spec(args)
    _print_config("gen", {"spec": asdict(spec), "out": args.out})
    manifest = _write_dataset(spec, args.out)
    print(f"wrote {len(manifest['train'])} train + {len(manifest['test'])} test scenes to {args.out}")


def _metrics_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image", "true_count", "estimated_count"))
        for k, (n, c) in enumerate(report.per_image):
            w.writerow((k, "%d" % n, repr(c)))


def cmd_train(args):
    cfg = _train_config(args)
    trace_path = args.trace or os.path.splitext(args.out)[0] + ".trace.csv"
    _print_config("train", {"data": args.data, "out": args.out, "trace": trace_path,
                            "train": asdict(cfg)})
    train_set = _load_split(args.data, "train")
    test_set = _load_split(args.data, "test")

    def report(epoch, _model, mean_loss):
        print(f"epoch {epoch} loss {mean_loss!r}", flush=True)

    model, trace = toy.train(train_set, cfg, on_epoch=report)
    toy.save_checkpoint(model, args.out)
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss"))
        for e, v in enumerate(trace):
            w.writerow((e, repr(v)))
    rep = synth.evaluate(model, test_set)
    print(f"held-out MAE {rep.mae!r} MSE {rep.mse!r} K {rep.k}")


def cmd_eval(args):
    _print_config("eval", {"checkpoint": args.checkpoint, "data": args.data,
                           "split": args.split, "out": args.out})
    _require_file(args.checkpoint)
    model = toy.load_checkpoint(args.checkpoint)
    rep = synth.evaluate(model, _load_split(args.data, args.split))
    if args.out:
        _metrics_csv(rep, args.out)
    print(f"held-out MAE {rep.mae!r} MSE {rep.mse!r} K {rep.k}")


def cmd_entropy(args):
    _require_file(args.scene)
    sc = scene.read_scene(args.scene)
    cfg = _loss_config(args)
    _print_config("entropy", {"scene": args.scene, "out": args.out, "loss": asdict(cfg),
                              "margin": cfg.margin(sc)})
    if sc.n == 0:
        raise CliError("entropy map needs at least one annotated head", EXIT_FORMAT)
    ent = entropy_map(sc, cfg)
    lo, hi = scene.write_pgm(args.out, ent)
    print(f"entropy range [{lo!r}, {hi!r}] of [0, {math.log(cfg.n_labels(sc))!r}]")


def cmd_density(args):
    if args.mode == "estimate":
        if not args.checkpoint or not args.input:
            raise CliError("--mode estimate needs --checkpoint and --input", EXIT_USAGE)
        _require_file(args.checkpoint)
        _require_file(args.input)
        model = toy.load_checkpoint(args.checkpoint)
        grid = scene.DensityGrid(toy.forward(model, scene.read_density(args.input).values))
        resolved = {"checkpoint": args.checkpoint, "input": args.input}
    else:
        if not args.scene:
            raise CliError("--mode baseline-gt needs --scene", EXIT_USAGE)
        _require_file(args.scene)
        sc = scene.read_scene(args.scene)
        kernel = (losses.AdaptiveKernel(beta=args.adaptive_beta) if args.adaptive_beta
                  else losses.FixedKernel(args.sigma))
        grid = losses.baseline_density(sc, kernel)
        resolved = {"scene": args.scene, "kernel": repr(kernel)}
    _print_config("density", {"mode": args.mode, "out": args.out, **resolved})
    scene.write_density(grid, args.out)
    pgm = os.path.splitext(args.out)[0] + ".pgm"
    scene.write_pgm(pgm, grid.values)
    print(f"count {losses.total_count(grid)!r} -> {args.out}, {pgm}")


def cmd_sweep(args):
    tcfg = _train_config(args)
    settings = args.values if args.values is not None else ()
    cfg = synth.SweepConfig(kind=args.kind, settings=settings, losses=args.losses,
                            seeds=args.seeds, spec=_synth_spec(args), train=tcfg)
    workers = synth.worker_count()
    _print_config("sweep", {"sweep": asdict(cfg), "out": args.out, "workers": workers})
    rows = synth.run_sweep(cfg, workers=workers)
    text = synth.rows_to_csv(rows)
    with open(args.out, "w", newline="") as fh:
        fh.write(text)
    sys.stdout.write(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bayescount",
        description="Bayesian expected-count loss: synthetic data, training, evaluation, plots.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset directory")
    _add_spec_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the toy estimator on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory written by gen")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", default=None, help="loss-trace CSV (default <out>.trace.csv)")
    _add_train_flags(p)
    _add_loss_flags(p, background_flag=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    p.add_argument("--data", required=True, help="dataset directory written by gen")
    p.add_argument("--split", choices=("train", "test"), default="test", help="split to score (default test)")
    p.add_argument("--out", default=None, help="per-image CSV output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("entropy", help="render the posterior entropy map of a scene as PGM")
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--out", required=True, help="output PGM path (bounds go to <out>.bounds.txt)")
    _add_loss_flags(p)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("density", help="write an estimated or Gaussian ground-truth density map")
    p.add_argument("--mode", choices=("estimate", "baseline-gt"), required=True, help="density source")
    p.add_argument("--checkpoint", default=None, help="checkpoint (estimate mode)")
    p.add_argument("--input", default=None, help="input grid as a PDENS file (estimate mode)")
    p.add_argument("--scene", default=None, help="scene JSON (baseline-gt mode)")
    p.add_argument("--sigma", type=float, default=8.0, help="fixed kernel width in cells (default 8)")
    p.add_argument("--adaptive-beta", type=float, default=None,
                   help="use a geometry-adaptive kernel with this beta instead of --sigma")
    p.add_argument("--out", required=True, help="output density file; a .pgm is written alongside")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("sweep", help="run a sigma, noise, or loss-comparison sweep")
    p.add_argument("--kind", choices=("sigma", "noise", "loss-compare"), required=True, help="sweep type")
    p.add_argument("--values", type=_float_list, default=None,
                   help="comma-separated sigmas or deviations (fractions of grid height)")
    p.add_argument("--losses", type=_str_list, default=toy.LOSSES, help="comma-separated loss selectors")
    p.add_argument("--seeds", type=_int_list, default=(0, 1, 2), help="comma-separated training seeds")
    p.add_argument("--out", required=True, help="output CSV")
    _add_train_flags(p)
    _add_loss_flags(p, background_flag=False)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except scene.ShapeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except (scene.FormatError, scene.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValueError, synth.SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
