"""Command-line entry point: prepare | train | sweep | eval | ledger | plot.

Exit codes: 0 success, 1 user error (bad arguments, files or configuration), 2 internal error.
Run artifacts go to ``$FUSIONNET_RUN_ROOT`` (default ``./runs``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import subprocess
import sys
import time
import traceback
from pathlib import Path

from .architecture import ConfigError
from .boxes import Detection, GroundTruth
from .config import ConfigFileError, ExperimentConfig, parse_pairs
from .data import CropSpec, DatasetManifest, ManifestError, make_toy_dataset, materialize_version, skip_counter
from .evaluation import (
    FITNESS_PRESETS,
    METRIC_NAMES,
    average_precision_detail,
    evaluate,
    fp_analysis,
    get_fitness_weights,
    improvement_ledger,
    read_predictions,
    write_predictions,
)
from .loss import BOX_WEIGHT_GRID

RUN_ROOT_ENV = "FUSIONNET_RUN_ROOT"
log = logging.getLogger("fusionnet")


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- run directories


def git_describe() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                           timeout=10, cwd=Path(__file__).resolve().parent)
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def make_run_dir(kind: str, name: str | None) -> Path:
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    run = root / (name or f"{kind}-{time.strftime('%Y%m%d-%H%M%S')}")
    suffix = 1
    base = run
    while name is None and run.exists():
        run = Path(f"{base}-{suffix}")
        suffix += 1
    run.mkdir(parents=True, exist_ok=True)
    return run


def write_run_meta(run: Path, cfg: ExperimentConfig):
    (run / "config.txt").write_text(cfg.to_text())
    (run / "seed.txt").write_text(f"{cfg.train.seed}\n")
    (run / "git_describe.txt").write_text(git_describe() + "\n")


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for item in getattr(args, "set", None) or []:
        cfg.update(parse_pairs(item.replace(",", "\n") if "=" in item else item))
    flags = {
        "manifest": "data.manifest", "epochs": "train.epochs", "batch": "train.batch", "imgsz": "train.imgsz",
        "seed": "train.seed", "fusion": "model.fusion", "backbone": "model.backbone", "width": "model.width",
        "box_weight": "loss.box", "crop": "data.crop", "fitness_preset": "eval.fitness_preset", "lr0": "train.lr0",
    }
    for attr, key in flags.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg.set(key, v)
    return cfg


# --------------------------------------------------------------------------- commands


def cmd_prepare(args) -> int:
    out = Path(args.out)
    if args.toy:
        m = make_toy_dataset(args.toy, args.image_side, args.seed, out / "toy")
        print(f"toy dataset: {len(m)} images -> {out / 'toy' / 'manifest.jsonl'}")
        source = m
    else:
        if not args.manifest:
            raise UserError("prepare needs --manifest or --toy")
        source = DatasetManifest.load(args.manifest)
    for mode in args.crop:
        spec = CropSpec.parse(mode, args.seed)
        before = dict(skip_counter)
        version = materialize_version(source, spec, out / spec.mode, args.seed)
        skipped = {k: skip_counter[k] - before.get(k, 0) for k in skip_counter}
        print(f"{spec.mode}: {len(version)} images -> {out / spec.mode / 'manifest.jsonl'}  skipped={skipped}")
    return 0


def _train_one(cfg: ExperimentConfig, run: Path, resume=None):
    from .train import evaluate_model, train
    from .plots import plot_loss_curve

    run.mkdir(parents=True, exist_ok=True)
    write_run_meta(run, cfg)
    manifest = DatasetManifest.load(cfg.data.manifest)
    result = train(cfg, run, manifest, resume=resume)
    plot_loss_curve(result.history, run / "loss_curve.png")
    report, _, _ = evaluate_model(result.model, manifest, "val", cfg)
    report.save(run / "report.json", with_records=False)
    return result, report


def cmd_train(args) -> int:
    cfg = load_config(args)
    if not cfg.data.manifest:
        raise UserError("no dataset: pass --manifest or set data.manifest")
    if args.sweep_box_weight:
        return _sweep(cfg, args)
    run = make_run_dir("train", args.name)
    result, report = _train_one(cfg, run, args.resume)
    print(json.dumps({"run": str(run), "history": result.history, "val": report.to_dict()["metrics"]}, indent=2))
    return 0


def _sweep(cfg: ExperimentConfig, args) -> int:
    run = make_run_dir("sweep", args.name)
    write_run_meta(run, cfg)
    dataset = args.dataset_name or Path(cfg.data.manifest).parent.name
    rows = []
    for w1 in BOX_WEIGHT_GRID:
        sub = ExperimentConfig.from_text(cfg.to_text())
        sub.set("loss.box", w1)
        _, report = _train_one(sub, run / f"w1_{w1:g}")
        rows.append({"w1": w1, "dataset": dataset, "crop": cfg.data.crop, "mAP25": report.map25, "mAP50": report.map50,
                     "FNR": report.fnr, "FDR": report.fdr, "fitness": report.fitness})
        print(f"w1={w1:g} fitness={report.fitness:.4f}", flush=True)
    with open(run / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"sweep report -> {run / 'sweep.csv'}")
    return 0


def cmd_sweep(args) -> int:
    args.sweep_box_weight = True
    return cmd_train(args)


def _write_gt(path: Path, gts):
    write_predictions(path, [Detection(g.image_id, g.box, 1.0) for g in gts])


def cmd_eval(args) -> int:
    from .train import load_model, predict

    cfg = load_config(args)
    if args.size_filter is not None:
        cfg.set("eval.size_filter", args.size_filter)
    if args.conf is not None:
        cfg.set("eval.conf", args.conf)
    if args.iou is not None:
        cfg.set("eval.iou", args.iou)
    weights = get_fitness_weights(cfg.eval.fitness_preset)
    if not cfg.data.manifest:
        raise UserError("no dataset: pass --manifest or set data.manifest")
    manifest = DatasetManifest.load(cfg.data.manifest)

    if args.predictions:
        dets = read_predictions(args.predictions)
        entries = manifest.split(args.split)
        gts = [GroundTruth(e.image_path, tuple(float(v) for v in b), c) for e in entries
               for b, c in zip(e.pixel_boxes(), e.classes)]
    else:
        if not args.checkpoint:
            raise UserError("eval needs --checkpoint or --predictions")
        model, payload = load_model(args.checkpoint)
        max_cls = max((c for e in manifest.entries for c in e.classes), default=-1)
        if max_cls >= model.nc:
            raise UserError(f"dataset has class id {max_cls} but the checkpoint predicts {model.nc} class(es)")
        cfg.set("train.imgsz", model.imgsz)
        dets, gts = predict(model, manifest, args.split, model.imgsz, 0.001, cfg.eval.nms_iou)

    size = cfg.eval.size_filter if cfg.eval.size_filter > 0 else None
    report = evaluate(dets, gts, weights, cfg.eval.iou, cfg.eval.conf, size)
    report.settings.update({"split": args.split, "fitness_preset": cfg.eval.fitness_preset})
    run = make_run_dir("eval", args.name)
    write_run_meta(run, cfg)
    report.save(run / "report.json")
    write_predictions(run / "predictions.txt", dets)
    _write_gt(run / "ground_truth.txt", gts)
    if args.plots:
        _emit_plots(run, dets, gts, report, manifest)
    print(json.dumps({"run": str(run), **report.to_dict()}, indent=2))
    return 0


def _emit_plots(run: Path, dets, gts, report, manifest: DatasetManifest | None = None, cell: int = 16):
    from .evaluation import size_filter
    from .plots import plot_dimension_scatter, plot_fp_heatmaps, plot_pr_curves

    fov = lambda image_id: Path(image_id).parent.name or "all"
    sizes = {}
    if manifest is not None:
        for e in manifest.entries:
            sizes.setdefault(fov(e.image_path), (e.width, e.height))
    if not sizes:
        extent = [d.box for d in dets] + [g.box for g in gts]
        w = int(max((b[2] for b in extent), default=1)) + 1
        h = int(max((b[3] for b in extent), default=1)) + 1
        sizes = {fov(x.image_id): (w, h) for x in list(dets) + list(gts)}
    analysis = fp_analysis(report.records, fov, sizes, cell)
    plot_fp_heatmaps(analysis, run / "plots")
    plot_dimension_scatter(analysis, run / "plots" / "dimensions.png")
    px = report.settings.get("size_filter_px")
    if px:
        dets, gts = size_filter(dets, px), size_filter(gts, px)
    plot_pr_curves({"IoU 0.25": average_precision_detail(dets, gts, 0.25),
                    "IoU 0.5": average_precision_detail(dets, gts, 0.5)}, run / "plots" / "pr_curves.png")
    stats = {k: vars(v) for k, v in analysis.stats.items()}
    (run / "plots" / "dimension_stats.json").write_text(json.dumps(stats, indent=2))


def cmd_plot(args) -> int:
    from .evaluation import MatchRecord, MetricReport

    run = Path(args.run)
    report_path = run / "report.json"
    if not report_path.is_file():
        raise UserError(f"{report_path} not found; run eval first")
    data = json.loads(report_path.read_text())
    dets = read_predictions(run / "predictions.txt")
    gts = [GroundTruth(d.image_id, d.box) for d in read_predictions(run / "ground_truth.txt")]
    m = data["metrics"]
    report = MetricReport(m["map25"], m["map50"], m["fnr"], m["fdr"], m["fitness"],
                          records=[MatchRecord(**{**r, "box": tuple(r["box"]),
                                                  "gt_box": tuple(r["gt_box"]) if r.get("gt_box") else None})
                                   for r in data.get("records", [])],
                          settings=data.get("settings", {}))
    manifest = DatasetManifest.load(args.manifest) if args.manifest else None
    _emit_plots(run, dets, gts, report, manifest, args.cell)
    print(f"plots -> {run / 'plots'}")
    return 0


def _quad(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UserError(f"metric quadruple must be four numbers, got {text!r}") from None
    if len(vals) != 4:
        raise UserError(f"metric quadruple must be four numbers, got {text!r}")
    return vals


def cmd_ledger(args) -> int:
    from .reported import LEDGER_PUBLISHED, LEDGER_STEPS, ledger_stages

    if args.reported:
        crop, dataset = int(args.reported[0]), args.reported[1]
        if (crop, dataset) not in LEDGER_PUBLISHED:
            raise UserError(f"no published ledger for {crop} {dataset}")
        stages = ledger_stages(crop, dataset)
        baseline, steps, names = stages[0], stages[1:], list(LEDGER_STEPS)
    else:
        if not args.baseline or not args.step:
            raise UserError("ledger needs --baseline and at least one --step (or --reported CROP DATASET)")
        baseline = _quad(args.baseline)
        names, steps = [], []
        for s in args.step:
            name, _, vals = s.rpartition("=") if "=" in s else ("", "", s)
            names.append(name or f"step {len(names) + 1}")
            steps.append(_quad(vals))
    table = improvement_ledger(baseline, steps, names)
    header = ("row",) + METRIC_NAMES
    lines = ["  ".join(f"{h:>24}" if i == 0 else f"{h:>8}" for i, h in enumerate(header))]
    for row in table.rows():
        sign = "" if row[0] == "baseline" else "+"
        lines.append("  ".join(f"{row[0]:>24}" if i == 0 else f"{v:{sign}8.3f}" for i, v in enumerate(row)))
    print("\n".join(lines))
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(table.rows())
    return 0


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fusionnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat 'section.key = value' file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--manifest")
        sp.add_argument("--name", help="run directory name under $%s" % RUN_ROOT_ENV)
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("prepare", help="materialize cropped dataset versions")
    sp.add_argument("--manifest")
    sp.add_argument("--toy", type=int, metavar="N", help="generate a synthetic set of N images first")
    sp.add_argument("--image-side", type=int, default=192)
    sp.add_argument("--crop", nargs="+", default=["640"], help="640, 1080 and/or dyn")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_prepare)

    for name, func in (("train", cmd_train), ("sweep", cmd_sweep)):
        sp = sub.add_parser(name, help="train a network" if name == "train" else "box-loss weight sweep (14 runs)")
        common(sp)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--imgsz", type=int)
        sp.add_argument("--lr0", type=float)
        sp.add_argument("--fusion")
        sp.add_argument("--backbone")
        sp.add_argument("--width", type=float)
        sp.add_argument("--box-weight", type=float)
        sp.add_argument("--crop")
        sp.add_argument("--resume", help="checkpoint to continue from")
        sp.add_argument("--sweep-box-weight", action="store_true", help="train once per box-loss weight and write a CSV")
        sp.add_argument("--dataset-name", help="dataset label in the sweep CSV")
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval", help="evaluate a checkpoint or a predictions file")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--predictions", help="lines of 'image_id x y w h confidence'")
    sp.add_argument("--split", default="test")
    sp.add_argument("--size-filter", type=float, metavar="PX", help="drop boxes narrower or shorter than PX")
    sp.add_argument("--fitness-preset", choices=sorted(FITNESS_PRESETS))
    sp.add_argument("--conf", type=float)
    sp.add_argument("--iou", type=float)
    sp.add_argument("--plots", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ledger", help="step-wise improvement table")
    sp.add_argument("--baseline", help="mAP25,mAP50,FNR,FDR")
    sp.add_argument("--step", action="append", help="[name=]mAP25,mAP50,FNR,FDR (repeatable, in order)")
    sp.add_argument("--reported", nargs=2, metavar=("CROP", "DATASET"), help="use the published stages, e.g. 640 R2")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_ledger)

    sp = sub.add_parser("plot", help="figures from an eval run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--cell", type=int, default=16)
    sp.set_defaults(func=cmd_plot)
    return p


USER_ERRORS = (UserError, ConfigError, ConfigFileError, ManifestError, FileNotFoundError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        print("internal error", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
