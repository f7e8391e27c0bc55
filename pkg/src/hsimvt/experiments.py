"""Preprocessing composition and single-axis parameter sweeps."""

from __future__ import annotations

import csv

import numpy as np

from .data import TEST, HsiCube, LabelMap, PatchSource, mmnorm
from .errors import ConfigError
from .metrics import evaluate
from .model import ModelConfig
from .mpca import mpca
from .training import TrainConfig, train

SWEEP_AXES = ("patch_size", "views", "components", "heads", "train_fraction")


def preprocess(cube: HsiCube, views: int, components: int, enabled: bool = True):
    """MMNorm then multiview PCA; returns (raster, PcaModel list, ViewSpec fields).

    With ``enabled`` false the whole cube is treated as a single view and
    reduced to ``views * components`` channels — plain PCA with the same
    output width, the representation-ablation baseline.
    """
    normalized = mmnorm(cube)
    if enabled:
        return mpca(normalized, num_views=views, components=components)
    return mpca(normalized, num_views=1, components=views * components)


def run_once(cube: HsiCube, labels: LabelMap, model_config: ModelConfig,
             train_config: TrainConfig, mpca_views: int, mpca_components: int,
             mpca_enabled: bool = True, fractions=(0.05, 0.05, 0.90)):
    """One preprocess -> train -> test-evaluate pass; returns (report, result)."""
    rep, _ = preprocess(cube, mpca_views, mpca_components, enabled=mpca_enabled)
    result = train(rep, labels, model_config, train_config, fractions=fractions)
    source = PatchSource(rep, model_config.patch_size)
    coords = result.split.coords(TEST)
    true_ids = labels.ids[coords[:, 0], coords[:, 1]]
    report = evaluate(result.params, source, coords, true_ids)
    return report, result


def sweep(cube: HsiCube, labels: LabelMap, base_model: dict, base_train: dict,
          axis: str, values, mpca_views: int = 10, mpca_components: int = 3,
          mpca_enabled: bool = True, val_fraction: float = 0.05,
          train_fraction: float = 0.05, log=None):
    """Train and test once per value of one axis; everything else held fixed.

    ``base_model`` / ``base_train`` are keyword dicts for ModelConfig and
    TrainConfig (num_classes is taken from ``labels``). Axis names:
    patch_size, views, components, heads, train_fraction (a fraction like
    0.05; the validation share stays fixed and the test share absorbs the
    rest).
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in values:
        model_kw = dict(base_model)
        views, components = mpca_views, mpca_components
        f_train = train_fraction
        if axis == "patch_size":
            model_kw["patch_size"] = int(value)
        elif axis == "views":
            views = int(value)
        elif axis == "components":
            components = int(value)
        elif axis == "heads":
            model_kw["num_heads"] = int(value)
        elif axis == "train_fraction":
            f_train = float(value)
        fractions = (f_train, val_fraction, 1.0 - f_train - val_fraction)
        model_config = ModelConfig(num_classes=labels.num_classes,
                                   num_views=views if mpca_enabled else 1,
                                   view_components=components if mpca_enabled
                                   else views * components,
                                   use_mpca=mpca_enabled, **model_kw)
        train_config = TrainConfig(**base_train)
        report, result = run_once(cube, labels, model_config, train_config,
                                  views, components, mpca_enabled=mpca_enabled,
                                  fractions=fractions)
        row = {"axis": axis, "value": value, "oa": report.oa, "aa": report.aa,
               "best_epoch": result.best_epoch, "best_val_oa": result.best_val_oa}
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def write_sweep_csv(rows, path):
    """Write sweep rows as CSV with a header row."""
    fieldnames = ["axis", "value", "oa", "aa", "best_epoch", "best_val_oa"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
