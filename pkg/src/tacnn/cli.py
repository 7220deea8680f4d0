"""Command line: gen-data, spv-build, rbm-train, train, eval, detect, curves.

Every command reads the run configuration (``--config`` plus ``--set``
overrides), works inside the run directory (``--out``, default from
``TACNN_RUN_DIR`` or ``./run``) and prints a short summary.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import formats as fm
from .config import ConfigError, RunConfig, load_config
from .datagen import gen_scenes, gen_synthetic_multisource, gen_test_patches
from .evalkit import (confusion_matrix, evaluate, log_avg_miss_rate, read_curve_csv, reference_miss_rates,
                      write_curve_csv)
from .pipeline import add_mined_negatives, build_spv, detect, fit_seed_scorer
from .taskcodec import VIEWPOINTS, decode_viewpoint
from .trainer import (TrainingDiverged, algorithm1_train, predict, restrict, spv_inputs, standardize_patches,
                      train_rbm, validation_split)

RUN_DIR_ENV = "TACNN_RUN_DIR"
COMMANDS = ("gen-data", "spv-build", "rbm-train", "train", "eval", "detect", "curves")


class Context:
    def __init__(self, args, cfg: RunConfig):
        self.args, self.cfg = args, cfg
        self.out = Path(args.out)
        self.quiet = args.quiet

    def say(self, msg):
        if not self.quiet:
            print(msg)

    @property
    def data_dir(self):
        return self.out / "data"

    def snapshot(self, name="config.txt"):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(self.cfg.to_text())

    def require(self, path, hint):
        if not Path(path).exists():
            raise RuntimeError(f"missing {path}; run '{hint}' first")
        return path


# ---------------------------------------------------------------- commands

def cmd_gen_data(ctx: Context):
    scfg = ctx.cfg.synthetic()
    ds = gen_synthetic_multisource(scfg)
    fm.save_dataset(ctx.data_dir / "train", ds)
    fm.save_dataset(ctx.data_dir / "test_patches", gen_test_patches(scfg))
    scenes = gen_scenes(scfg, "scene")
    fm.save_scenes(ctx.data_dir / "scenes", scenes)
    fm.save_scenes(ctx.data_dir / "mining", gen_scenes(scfg, "mine"))
    ctx.snapshot()
    counts = {s: ds.sources.count(s) for s in ("P", "Ba", "Bb", "Bc")}
    ctx.say(f"generated {len(ds)} training patches {counts}, {len(scenes.ids)} scenes "
            f"with {len(scenes.truths)} pedestrians -> {ctx.data_dir}")


def cmd_spv_build(ctx: Context):
    ds = fm.load_dataset(ctx.require(ctx.data_dir / "train", "gen-data"))
    spv = build_spv(ds, ctx.cfg.seed, ctx.cfg.spv_standardize)
    fm.save_checkpoint(ctx.out / "spv.ckpt", fm.Checkpoint(fm.pack_spv(spv), ctx.cfg.to_text()))
    ctx.say(f"SPV model: {spv.dim} leaves over {spv.leaves.shape[1]}-dim HOG -> {ctx.out / 'spv.ckpt'}")


def _load_spv(ctx: Context):
    path = ctx.out / "spv.ckpt"
    if not path.exists():
        return None
    return fm.unpack_spv(fm.load_checkpoint(path), ctx.cfg.spv_standardize)


def _training_data(ctx: Context, tcfg):
    ds = fm.load_dataset(ctx.require(ctx.data_dir / "train", "gen-data"))
    scorer = fit_seed_scorer(ds, tcfg.mining, tcfg.seed)
    mined = []
    if tcfg.mining.enabled and (ctx.data_dir / "mining").exists():
        ds, mined = add_mined_negatives(ds, scorer, fm.load_scenes(ctx.data_dir / "mining"), tcfg.mining)
    return ds, scorer, mined


def cmd_rbm_train(ctx: Context):
    from .model import TaCnnModel
    tcfg = ctx.cfg.train()
    ds, _, _ = _training_data(ctx, tcfg)
    spv = _load_spv(ctx) if tcfg.use_spv else None
    train, _ = validation_split(restrict(ds, tcfg.groups, tcfg.sources), tcfg.val_fraction, tcfg.seed)
    model = TaCnnModel.init(tcfg.arch, tcfg.seed)
    x = standardize_patches(train.patches)
    rbm = train_rbm(model, x, spv_inputs(train.patches, spv, tcfg.arch), train.bits, train.mask, tcfg)
    fm.save_checkpoint(ctx.out / "rbm.ckpt", fm.Checkpoint(fm.pack_rbm(rbm), ctx.cfg.to_text()))
    ctx.say(f"RBM with {rbm.n_hidden} hidden units trained on {len(train)} samples -> {ctx.out / 'rbm.ckpt'}")


def cmd_train(ctx: Context):
    tcfg = ctx.cfg.train()
    ds, scorer, mined = _training_data(ctx, tcfg)
    spv = None
    if tcfg.use_spv:
        spv = _load_spv(ctx)
        if spv is None:
            spv = build_spv(ds, tcfg.seed, ctx.cfg.spv_standardize)
            fm.save_checkpoint(ctx.out / "spv.ckpt", fm.Checkpoint(fm.pack_spv(spv), ctx.cfg.to_text()))
    rbm = None
    if (ctx.out / "rbm.ckpt").exists():
        rbm = fm.unpack_rbm(fm.load_checkpoint(ctx.out / "rbm.ckpt"))
    ctx.snapshot()

    def on_epoch(row):
        outer, ep, lr, tl, vl = row
        ctx.say(f"outer {outer} epoch {ep}: lr {lr:.4g} train loss {tl:.5f} val loss {vl:.5f}")

    status = 0
    try:
        model, coeffs, run = algorithm1_train(ds, tcfg, spv, rbm=rbm, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        if exc.model is None:
            raise
        print(f"error: {exc}; writing last finite model", file=sys.stderr)
        model, coeffs, run, status = exc.model, exc.coeffs, None, 1
    arrays = {**fm.pack_model(model), **fm.pack_coeffs(coeffs), **fm.pack_scorer(scorer)}
    if spv is not None:
        arrays.update(fm.pack_spv(spv))
    if run is not None and run.rbm is not None:
        arrays.update(fm.pack_rbm(run.rbm))
    fm.save_checkpoint(ctx.out / "model.ckpt", fm.Checkpoint(arrays, ctx.cfg.to_text()))
    if run is None:
        return status
    (ctx.out / "epochs.csv").write_text(run.epoch_csv())
    (ctx.out / "lambda.csv").write_text(run.lambda_csv())
    if run.table is not None:
        fm.write_prob_table(ctx.out / "prob_table.tsv", run.table)
    ctx.say(f"training {run.status}: {len(run.epochs)} epochs, {len(mined)} mined negatives, "
            f"lambda = [{' '.join(f'{v:.3f}' for v in coeffs.lam)}] -> {ctx.out / 'model.ckpt'}")
    return 0


def _load_model(ctx: Context, path=None):
    path = Path(path) if path else ctx.require(ctx.out / "model.ckpt", "train")
    ckpt = fm.load_checkpoint(path)
    from .config import parse_config_text
    cfg = parse_config_text(ckpt.config) if ckpt.config else ctx.cfg
    model = fm.unpack_model(ckpt, cfg.arch())
    spv = fm.unpack_spv(ckpt, cfg.spv_standardize) if cfg.train().use_spv else None
    return model, spv, fm.unpack_coeffs(ckpt), cfg


def cmd_eval(ctx: Context):
    model, spv, _, mcfg = _load_model(ctx, ctx.args.checkpoint)
    scenes = fm.load_scenes(ctx.require(ctx.data_dir / "scenes", "gen-data"))
    dcfg = ctx.cfg.detect()
    dets = detect(model, spv, scenes, dcfg)
    lamr, curve, match = evaluate(dets, scenes.truths, scenes.ids, reasonable=dcfg.reasonable)
    fm.write_detections(ctx.out / "detections.tsv", dets)
    write_curve_csv(ctx.out / "curve.csv", curve)
    rows = ["metric,value", f"lamr,{lamr!r}", f"n_images,{len(scenes.ids)}", f"n_truth,{match.n_truth}",
            f"n_detections,{len(dets)}"]
    tp_path = ctx.data_dir / "test_patches"
    cm = None
    if tp_path.exists():
        tp = fm.load_dataset(tp_path)
        if len(tp):
            probs, _ = predict(model, standardize_patches(tp.patches), spv_inputs(tp.patches, spv, model.arch))
            true = [2 * int(lab.bits[9]) + int(lab.bits[10]) for lab in tp.labels]
            pred = [VIEWPOINTS.index(decode_viewpoint(p[9], p[10])) for p in probs]
            cm = confusion_matrix(true, pred)
            with open(ctx.out / "viewpoint_confusion.csv", "w") as fh:
                fh.write("true," + ",".join(VIEWPOINTS) + "\n")
                for name, row in zip(VIEWPOINTS, cm.counts):
                    fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
            acc = np.trace(cm.counts) / cm.counts.sum()
            rows.append(f"viewpoint_accuracy,{float(acc)!r}")
    (ctx.out / "metrics.csv").write_text("\n".join(rows) + "\n")
    ctx.say(f"LAMR (reasonable={dcfg.reasonable}): {lamr:.2f}% over {len(scenes.ids)} images, "
            f"{match.n_truth} pedestrians, {len(dets)} detections")
    if cm is not None:
        ctx.say(f"viewpoint accuracy on {int(cm.counts.sum())} test patches: "
                f"{np.trace(cm.counts) / cm.counts.sum():.3f}")


def cmd_detect(ctx: Context):
    from .datagen import SceneSet
    model, spv, _, _ = _load_model(ctx, ctx.args.checkpoint)
    if not ctx.args.images:
        raise RuntimeError("detect needs at least one --image")
    images, ids = [], []
    for p in ctx.args.images:
        img = fm.read_raster(p, model.arch.channels)
        if img.shape[1] < model.arch.height or img.shape[2] < model.arch.width:
            raise RuntimeError(f"{p}: image {img.shape[1]}x{img.shape[2]} is smaller than the window")
        images.append(img), ids.append(Path(p).stem)
    dets = detect(model, spv, SceneSet(images, ids, []), ctx.cfg.detect())
    dets = [d for d in dets if d.score >= ctx.args.min_score]
    ctx.out.mkdir(parents=True, exist_ok=True)
    fm.write_detections(ctx.out / "detect.tsv", dets)
    for d in sorted(dets, key=lambda d: -d.score)[:ctx.args.top]:
        ctx.say(f"{d.image_id}\t" + "\t".join(f"{v:g}" for v in d.box) + f"\t{d.score:.4f}")
    ctx.say(f"{len(dets)} detections -> {ctx.out / 'detect.tsv'}")


def cmd_curves(ctx: Context):
    paths = ctx.args.curves or [ctx.require(ctx.out / "curve.csv", "eval")]
    rows = ["curve,lamr," + ",".join(f"mr@{r:.4g}" for r in 10.0 ** np.linspace(-2, 0, 9))]
    for p in paths:
        curve = read_curve_csv(p)
        lamr = log_avg_miss_rate(curve)
        refs = reference_miss_rates(curve)
        rows.append(f"{p},{lamr!r}," + ",".join(repr(float(v)) for v in refs))
        ctx.say(f"{p}: LAMR {lamr:.2f}%")
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "curves_summary.csv").write_text("\n".join(rows) + "\n")


HANDLERS = {"gen-data": cmd_gen_data, "spv-build": cmd_spv_build, "rbm-train": cmd_rbm_train, "train": cmd_train,
            "eval": cmd_eval, "detect": cmd_detect, "curves": cmd_curves}


# ---------------------------------------------------------------- entry

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="shortcut for --set seed=N")
    common.add_argument("--out", default=os.environ.get(RUN_DIR_ENV, "run"),
                        help=f"run directory (default ${RUN_DIR_ENV} or ./run)")
    common.add_argument("--quiet", action="store_true", help="suppress the summary on standard output")
    p = argparse.ArgumentParser(prog="tacnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    helps = {"gen-data": "render the synthetic multi-source datasets", "spv-build": "build the SPV k-means trees",
             "rbm-train": "train the joint RBM used for sample weights", "train": "alternating multi-task training",
             "eval": "sliding-window detection and LAMR on the scene set",
             "detect": "detect pedestrians in raster images", "curves": "summarise miss-rate curve files"}
    parsers = {name: sub.add_parser(name, parents=[common], help=helps[name]) for name in COMMANDS}
    for name in ("eval", "detect"):
        parsers[name].add_argument("--checkpoint", help="model checkpoint (default <out>/model.ckpt)")
    parsers["detect"].add_argument("--image", dest="images", action="append", default=[], help="raster image")
    parsers["detect"].add_argument("--min-score", type=float, default=-np.inf, help="drop weaker detections")
    parsers["detect"].add_argument("--top", type=int, default=20, help="detections to print")
    parsers["curves"].add_argument("curves", nargs="*", help="curve CSV files (default <out>/curve.csv)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(args.overrides)
        if args.seed is not None:
            cfg = cfg.with_overrides([("seed", str(args.seed))])
    except (ConfigError, OSError) as exc:
        print(f"tacnn: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        rc = HANDLERS[args.command](Context(args, cfg))
    except Exception as exc:  # runtime failures become exit code 1 with a message
        print(f"tacnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
