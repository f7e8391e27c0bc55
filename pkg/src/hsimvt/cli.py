"""Command-line pipeline: synth, preprocess, train, eval, audit, sweep, map.

Every command is deterministic given its config and seed. On failure the
process exits nonzero after printing a single machine-parsable JSON line
on stderr: {"error": message, "type": exception class}.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import hsz
from .data import (TEST, LabelMap, PatchSource, load_cube, load_labels,
                   save_cube, save_labels, stratified_split, synth_scene)
from .errors import CompatibilityError, ConfigError, HsimvtError
from .experiments import preprocess, sweep, write_sweep_csv
from .metrics import evaluate, predict_coords, rotation_audit
from .model import ModelParams, load_params, save_params
from .mpca import save_pca_models, view_spec
from .render import render_class_map, write_ppm
from .runconfig import RunConfig
from .training import derive_seeds, train

REPRESENTATION_FILE = "representation.hsz"
PCA_FILE = "pca_models.hsz"
CHECKPOINT_FILE = "checkpoint.hsz"
HISTORY_FILE = "history.jsonl"


def _emit(doc: dict):
    print(json.dumps(doc, sort_keys=True))


def _require_file(path, hint: str):
    if not os.path.exists(path):
        raise ConfigError(f"missing {hint}: {path}")
    return path


def _out_path(config: RunConfig, name: str) -> str:
    out_dir = config["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _load_inputs(config: RunConfig):
    cube = load_cube(_require_file(config["data"]["cube_path"], "cube file"))
    labels = load_labels(_require_file(config["data"]["labels_path"], "labels file"))
    if labels.shape != (cube.height, cube.width):
        raise ConfigError(
            f"label raster {labels.shape} does not match cube {cube.height}x{cube.width}")
    return cube, labels


def _load_representation(config: RunConfig) -> np.ndarray:
    path = _require_file(_out_path(config, REPRESENTATION_FILE),
                         "preprocessed representation (run `hsimvt preprocess` first)")
    values, _ = hsz.read_cube_raster(path)
    return values


def _checkpoint_params(config: RunConfig, checkpoint, labels: LabelMap) -> ModelParams:
    path = checkpoint or _out_path(config, CHECKPOINT_FILE)
    params = load_params(_require_file(path, "checkpoint"))
    expected = config.model_config(labels.num_classes)
    if params.config != expected:
        raise CompatibilityError(
            f"checkpoint config {params.config} does not match the run config "
            f"{expected}")
    return params


def _test_set(config: RunConfig, labels: LabelMap):
    """Re-derive the (deterministic) split and return the test coordinates."""
    split_seed = derive_seeds(config["train"]["seed"])[0]
    split = stratified_split(labels, fractions=config.fractions, seed=split_seed)
    coords = split.coords(TEST)
    true_ids = labels.ids[coords[:, 0], coords[:, 1]]
    return coords, true_ids


def cmd_synth(args) -> int:
    cube, labels = synth_scene(seed=args.seed, height=args.height, width=args.width,
                               bands=args.bands, num_classes=args.classes,
                               noise_sigma=args.noise)
    os.makedirs(args.out, exist_ok=True)
    cube_path = os.path.join(args.out, "synth_cube.hsz")
    labels_path = os.path.join(args.out, "synth_labels.hsz")
    save_cube(cube, cube_path)
    save_labels(labels, labels_path)
    _emit({"cube": cube_path, "labels": labels_path,
           "shape": [cube.height, cube.width, cube.bands], "classes": labels.num_classes})
    return 0


def cmd_preprocess(args) -> int:
    config = RunConfig.load(args.config)
    cube, _ = _load_inputs(config)
    p = config["mpca"]
    rep, models = preprocess(cube, p["views"], p["components"], enabled=p["enabled"])
    rep_path = _out_path(config, REPRESENTATION_FILE)
    hsz.write_cube_raster(rep_path, rep)
    pca_path = _out_path(config, PCA_FILE)
    fitted_views = p["views"] if p["enabled"] else 1
    save_pca_models(pca_path, view_spec(cube.bands, fitted_views), models)
    _emit({"representation": rep_path, "pca": pca_path,
           "channels": int(rep.shape[2])})
    return 0


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    _, labels = _load_inputs(config)
    rep = _load_representation(config)
    history_path = _out_path(config, HISTORY_FILE)
    with open(history_path, "w") as history_file:
        result = train(rep, labels, config.model_config(labels.num_classes),
                       config.train_config(), fractions=config.fractions,
                       log=lambda h: print(json.dumps(h, sort_keys=True),
                                           file=history_file))
    ckpt_path = _out_path(config, CHECKPOINT_FILE)
    save_params(ckpt_path, result.params)
    _emit({"checkpoint": ckpt_path, "history": history_path,
           "best_epoch": result.best_epoch, "best_val_oa": result.best_val_oa})
    return 0


def cmd_eval(args) -> int:
    config = RunConfig.load(args.config)
    _, labels = _load_inputs(config)
    rep = _load_representation(config)
    params = _checkpoint_params(config, args.checkpoint, labels)
    coords, true_ids = _test_set(config, labels)
    source = PatchSource(rep, params.config.patch_size)
    report = evaluate(params, source, coords, true_ids)
    _emit(report.to_json_dict())
    return 0


def cmd_audit(args) -> int:
    config = RunConfig.load(args.config)
    _, labels = _load_inputs(config)
    rep = _load_representation(config)
    params = _checkpoint_params(config, args.checkpoint, labels)
    coords, true_ids = _test_set(config, labels)
    source = PatchSource(rep, params.config.patch_size)
    audit = rotation_audit(params, source, coords, true_ids)
    _emit(audit.to_json_dict())
    return 0


def cmd_sweep(args) -> int:
    config = RunConfig.load(args.config)
    cube, labels = _load_inputs(config)
    try:
        values = [json.loads(v) for v in args.values.split(",") if v]
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--values must be comma-separated numbers: {exc}") from exc
    m = config["model"]
    base_model = {"patch_size": m["patch_size"], "encoder_kernels": m["encoder_kernels"],
                  "squeeze_channels": m["squeeze_channels"],
                  "token_channels": m["token_channels"], "num_heads": m["heads"],
                  "feature_dim": m["feature_dim"], "use_sed": m["use_sed"],
                  "use_global_token": m["use_global_token"]}
    t = config["train"]
    base_train = {"epochs": t["epochs"], "batch_size": t["batch"],
                  "learning_rate": t["lr"], "seed": t["seed"]}
    if args.axis in ("patch_size", "heads"):
        base_model.pop({"patch_size": "patch_size", "heads": "num_heads"}[args.axis])
    p = config["mpca"]
    rows = sweep(cube, labels, base_model, base_train, args.axis, values,
                 mpca_views=p["views"], mpca_components=p["components"],
                 mpca_enabled=p["enabled"], val_fraction=config.fractions[1],
                 train_fraction=config.fractions[0],
                 log=lambda row: print(json.dumps(row, sort_keys=True), file=sys.stderr))
    csv_path = args.out or _out_path(config, "sweep.csv")
    write_sweep_csv(rows, csv_path)
    _emit({"csv": csv_path, "rows": len(rows)})
    return 0


def cmd_map(args) -> int:
    config = RunConfig.load(args.config)
    _, labels = _load_inputs(config)
    rep = _load_representation(config)
    params = _checkpoint_params(config, args.checkpoint, labels)
    coords = labels.labeled_coords()
    source = PatchSource(rep, params.config.patch_size)
    predicted = predict_coords(params, source, coords)
    ids = np.zeros(labels.shape, dtype=np.int64)
    ids[coords[:, 0], coords[:, 1]] = predicted
    map_path = args.out or _out_path(config, "map.ppm")
    write_ppm(map_path, render_class_map(ids, labels.num_classes))
    _emit({"map": map_path, "pixels": int(len(coords))})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsimvt",
        description="Multiview-PCA transformer pipeline for hyperspectral cubes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic Voronoi scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=40)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(fn=cmd_synth)

    for name, fn, extra in (
            ("preprocess", cmd_preprocess, ()),
            ("train", cmd_train, ()),
            ("eval", cmd_eval, ("checkpoint",)),
            ("audit", cmd_audit, ("checkpoint",)),
            ("sweep", cmd_sweep, ("axis", "values", "out")),
            ("map", cmd_map, ("checkpoint", "out"))):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON run config (defaults apply)")
        if "checkpoint" in extra:
            p.add_argument("--checkpoint", default=None)
        if "axis" in extra:
            p.add_argument("--axis", required=True)
            p.add_argument("--values", required=True,
                           help="comma-separated values, e.g. 3,5,7")
        if "out" in extra:
            p.add_argument("--out", default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (HsimvtError, OSError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
