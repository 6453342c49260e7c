"""``dense-target`` command line.

Exit codes: 0 on success, 2 for invalid input or configuration, 3 when
training diverges. Option values resolve as flag > ``--config`` file >
built-in default, and the effective configuration is written next to
every output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import synthgen
from .autodiff import load_checkpoint, save_checkpoint
from .datasets import AnnotationFile, coco_to_annotations, load_split
from .errors import ConfigError, DenseTargetError, FormatError
from .evaluation import evaluate
from .geometry import CompositionMode
from .heatmap import GaussianPatchSpec, build_target_map, write_raster
from .losses import LossWeights
from .postprocess import detections_from_arrays, filter_and_cap_indices, read_detections, write_detections

JOBS_ENV = "DENSE_TARGET_JOBS"
CONFIG_NAME = "effective_config.json"

# built-in defaults per command; argparse defaults stay None so that
# explicitly passed flags can be told apart from unset ones
DEFAULTS = {
    "gen-synthetic": {"spec": "standard", "seed": None, "jobs": None},
    "gen-targets": {"downscale": 2, "patch_size": 120, "sigma": 40.0, "mode": "max", "jobs": None},
    "train-toy": {"kind": "gln", "seed": 0, "epochs": 8, "lr": 0.01, "momentum": 0.9, "lambda_cls": 1.0,
                  "lambda_reg": 1.0, "lambda_gl": 1.0, "clip_norm": 10.0},
    "predict": {"split": "test", "score_thresh": 0.05, "nms_iou": 0.5, "max_dets": 300, "maps": None},
    "eval": {"caps": 300, "out": None},
    "convert-coco": {},
}


def _resolve(args) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        for key, value in file_cfg.items():
            key = key.replace("-", "_")
            if key not in cfg:
                raise ConfigError(f"{args.config}: unknown option {key!r} for {args.command}")
            cfg[key] = value
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            cfg[key] = value
    return cfg


def _jobs(value) -> int:
    if value is None:
        env = os.environ.get(JOBS_ENV)
        if env:
            try:
                value = int(env)
            except ValueError as exc:
                raise ConfigError(f"{JOBS_ENV} must be an integer, got {env!r}") from exc
        else:
            value = os.cpu_count() or 1
    if int(value) < 1:
        raise ConfigError(f"--jobs must be >= 1, got {value}")
    return int(value)


def _echo_config(cfg: dict, path: Path) -> None:
    shown = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(cfg.items()) if k != "jobs"}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(shown, indent=2, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------------

def cmd_gen_synthetic(cfg: dict) -> int:
    if cfg["spec"] == "standard":
        spec_cfg = synthgen.standard_benchmark()
    else:
        try:
            spec_cfg = json.loads(Path(cfg["spec"]).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{cfg['spec']}: {exc}") from exc
    if cfg.get("seed") is not None:
        spec_cfg["seed"] = int(cfg["seed"])
    spec, ds = synthgen.split_config(spec_cfg)
    missing = {"n_train", "n_val", "n_test"} - set(ds)
    if missing:
        raise ConfigError(f"scene spec lacks split sizes {sorted(missing)}")
    out = Path(cfg["out"])
    summary = synthgen.generate_dataset(spec, ds["n_train"], ds["n_val"], ds["n_test"],
                                        ds.get("seed", spec.seed), out, _jobs(cfg["jobs"]))
    _echo_config({**cfg, "spec": spec_cfg}, out / CONFIG_NAME)
    for split, info in summary["splits"].items():
        print(f"{split}: {info['images']} images, {info['boxes']} boxes")
    return 0


def _target_job(task):
    boxes, h, w, spec, downscale, mode = task
    return build_target_map(boxes, h, w, spec, downscale, mode)


def cmd_gen_targets(cfg: dict) -> int:
    ann = AnnotationFile.load(cfg["annotations"])
    spec = GaussianPatchSpec(int(cfg["patch_size"]), float(cfg["sigma"]))
    mode = CompositionMode(cfg["mode"])
    downscale = int(cfg["downscale"])
    if downscale < 1:
        raise ConfigError(f"--downscale must be >= 1, got {downscale}")
    ids = sorted(ann.images)
    tasks = [(ann.images[i].boxes, ann.images[i].height, ann.images[i].width, spec, downscale, mode) for i in ids]
    jobs = _jobs(cfg["jobs"])
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            maps = list(pool.map(_target_job, tasks, chunksize=8))
    else:
        maps = [_target_job(t) for t in tasks]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for image_id, m in zip(ids, maps):
        write_raster(m, out / f"{image_id:06d}.dtr")
    _echo_config(cfg, out / CONFIG_NAME)
    print(f"wrote {len(ids)} target maps to {out}")
    return 0


def cmd_train_toy(cfg: dict) -> int:
    from .toynet import TrainConfig, ToyModelKind, build_model, train

    weights = LossWeights(float(cfg["lambda_cls"]), float(cfg["lambda_reg"]), float(cfg["lambda_gl"]))
    kind = ToyModelKind(cfg["kind"], weights)
    if kind.weights.lambda_gl != weights.lambda_gl:
        cfg["lambda_gl"] = kind.weights.lambda_gl
    epochs = int(cfg["epochs"])
    if epochs < 0:
        raise ConfigError(f"--epochs must be >= 0, got {epochs}")
    clip = cfg["clip_norm"]
    clip = None if clip is None or float(clip) <= 0 else float(clip)
    tcfg = TrainConfig(epochs=epochs, lr=float(cfg["lr"]), momentum=float(cfg["momentum"]),
                       seed=int(cfg["seed"]), clip_norm=clip)
    model = build_model(kind, seed=int(cfg["seed"]))
    train_set = load_split(cfg["dataset"], "train")
    val_set = load_split(cfg["dataset"], "val")

    def progress(rec):
        print(f"epoch {rec.epoch}: loss {rec.loss_total:.6f} val AP.50 {rec.val_ap50:.6f}", file=sys.stderr)

    result = train(model, train_set, val_set, tcfg, progress)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    result.log.write(out / "training_log.csv")
    save_checkpoint(result.best_state, out / "checkpoint")
    model.save_config(out / "checkpoint" / "model.json")
    _echo_config(cfg, out / CONFIG_NAME)
    print(f"best epoch {result.best_epoch} val AP.50 {result.best_val_ap50:.6f}")
    return 0


def _load_model(checkpoint: Path):
    from .toynet import Model

    try:
        config = json.loads((checkpoint / "model.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{checkpoint / 'model.json'}: {exc}") from exc
    model = Model.from_config(config)
    model.load_state_dict(load_checkpoint(checkpoint))
    return model


def cmd_predict(cfg: dict) -> int:
    from .toynet import predict

    model = _load_model(Path(cfg["checkpoint"]))
    samples = load_split(cfg["dataset"], cfg["split"])
    maps_dir = Path(cfg["maps"]) if cfg["maps"] else None
    dets = []
    for s in samples:
        p = predict(model, s.image)
        keep = filter_and_cap_indices(p.boxes, p.scores, float(cfg["score_thresh"]), float(cfg["nms_iou"]),
                                      int(cfg["max_dets"]))
        # decoded boxes may leave the image; clip them to it
        h, w = s.image.shape
        boxes = np.clip(p.boxes[keep], 0, [w, h, w, h])
        ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
        dets.extend(detections_from_arrays(boxes[ok], p.scores[keep][ok], s.image_id))
        if maps_dir is not None and p.gaussian_map is not None:
            maps_dir.mkdir(parents=True, exist_ok=True)
            write_raster(p.gaussian_map, maps_dir / f"{s.image_id:06d}.dtr")
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_detections(dets, out)
    _echo_config(cfg, out.with_suffix(".config.json"))
    print(f"{len(dets)} detections on {len(samples)} images")
    return 0


def cmd_eval(cfg: dict) -> int:
    dets = read_detections(cfg["detections"])
    ann = AnnotationFile.load(cfg["annotations"])
    report = evaluate(dets, ann.gt_boxes(), max_dets=int(cfg["caps"]))
    out = Path(cfg["out"]) if cfg["out"] else Path(cfg["detections"]).with_name("metrics.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(json_path=out, csv_path=out.with_suffix(".csv"))
    _echo_config({**cfg, "out": str(out)}, out.with_suffix(".config.json"))
    print(report.csv_row())
    return 0


def cmd_convert_coco(cfg: dict) -> int:
    try:
        coco = json.loads(Path(cfg["coco"]).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{cfg['coco']}: {exc}") from exc
    try:
        ann = coco_to_annotations(coco)
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"{cfg['coco']}: not a COCO-style file ({exc!r})") from exc
    ann.save(cfg["out"])
    n = sum(len(r.boxes) for r in ann.images.values())
    print(f"{len(ann.images)} images, {n} boxes")
    return 0


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "gen-targets": cmd_gen_targets,
    "train-toy": cmd_train_toy,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "convert-coco": cmd_convert_coco,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dense-target", description="Gaussian-map dense detection toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        c = sub.add_parser(name, help=help_text, argument_default=None)
        c.add_argument("--config", help="JSON file of option values (flags take precedence)")
        return c

    c = command("gen-synthetic", "render a synthetic dense-scene dataset")
    c.add_argument("--spec", help='scene spec JSON file, or "standard" for the shipped benchmark')
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, help="override the master seed")
    c.add_argument("--jobs", type=int, help=f"worker processes (default: ${JOBS_ENV} or all cores)")

    c = command("gen-targets", "write Gaussian target maps for an annotation file")
    c.add_argument("--annotations", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--downscale", type=int)
    c.add_argument("--patch-size", type=int)
    c.add_argument("--sigma", type=float)
    c.add_argument("--mode", choices=[m.value for m in CompositionMode])
    c.add_argument("--jobs", type=int)

    c = command("train-toy", "train a toy detector on a generated dataset")
    c.add_argument("--dataset", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--kind", choices=["baseline", "gdn", "gln"])
    c.add_argument("--seed", type=int)
    c.add_argument("--epochs", type=int)
    c.add_argument("--lr", type=float)
    c.add_argument("--momentum", type=float)
    c.add_argument("--lambda-cls", type=float)
    c.add_argument("--lambda-reg", type=float)
    c.add_argument("--lambda-gl", type=float)
    c.add_argument("--clip-norm", type=float, help="gradient norm cap; 0 disables")

    c = command("predict", "run a trained checkpoint over one split")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--dataset", required=True)
    c.add_argument("--out", required=True, help="detections JSON")
    c.add_argument("--split")
    c.add_argument("--score-thresh", type=float)
    c.add_argument("--nms-iou", type=float)
    c.add_argument("--max-dets", type=int)
    c.add_argument("--maps", help="directory for predicted Gaussian maps")

    c = command("eval", "score detections against annotations")
    c.add_argument("--detections", required=True)
    c.add_argument("--annotations", required=True)
    c.add_argument("--caps", type=int, help="max detections per image")
    c.add_argument("--out", help="JSON report path (default: metrics.json beside the detections)")

    c = command("convert-coco", "convert COCO-style [x, y, w, h] annotations")
    c.add_argument("--coco", required=True)
    c.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg)
    except DenseTargetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
