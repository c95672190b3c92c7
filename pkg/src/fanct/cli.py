"""Command-line experiment harness.

Usage::

    fanct <command> [--config FILE] [--set KEY=VALUE ...] [--out DIR]
                    [--seed N] [file arguments]

Commands
--------
simulate       phantom + forward projection + noise -> truth image, sinogram
fbp            filtered backprojection of a sinogram file
sb             split-Bregman reconstruction of a sinogram file
cppd           primal-dual TV reconstruction of a sinogram file
sugar-train    train the unrolled reconstructor on a seeded corpus
sugar-recon    single-grid unrolled reconstruction with saved parameters
two-stage      coarse-then-fine reconstruction with two parameter files
metrics        PSNR / SSIM / MSE between a reconstruction and a reference
ablate-hr      fine-stage benefit experiment (per-phantom MSE comparison)
ablate-direct  staged versus direct training at equal budgets

Configuration is a YAML file; any key can be overridden on the command
line with ``--set section.key=value``.  Unknown keys are rejected with
exit code 2, naming the key.  Commands that draw random numbers require
``--seed``.  Outputs land in ``--out`` (default ``$FANCT_OUT`` or
``./fanct-out``): data files, a ``<command>-report.json`` whose bytes
depend only on config and seed, and a ``<command>-manifest.json`` with
the resolved config, package version, and wall-clock timings.  Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .data import (
    FormatError,
    add_gaussian_noise,
    add_poisson_noise,
    load_image,
    load_sinogram,
    psnr,
    random_ellipse_phantom,
    save_image,
    save_png,
    save_sinogram,
    shepp_logan,
    ssim,
)
from .geometry import FanBeamGeometry, make_clinical_geometry, make_desk_geometry, subsample_views
from .projector import FILTERS, fbp, forward_project, projector_norm_sq
from .solvers import (
    NumericalFailure,
    SplitBregmanConfig,
    chambolle_pock_tv,
    split_bregman,
)
from .sugar import (
    SugarConfig,
    TrainConfig,
    TrainingFailure,
    init_sugar_params,
    load_params,
    save_params,
    sugar_forward,
    train_sugar,
    two_stage_recon,
)
from . import experiments

__all__ = ["main", "ConfigError"]

logger = logging.getLogger(__name__)

_OUT_ENV = "FANCT_OUT"


class ConfigError(Exception):
    """Invalid configuration; message names the offending key."""


# ---------------------------------------------------------------------------
# config plumbing

_GEOMETRY_DEFAULTS = {
    "preset": "desk",
    "image_n": 128,
    "n_views": 36,
    "arc_deg": None,
}

_ARCH_DEFAULTS = {
    "n_blocks": 5,
    "n_scales": 2,
    "channels": [16, 32],
    "kernel_size": 3,
    "transform": "learned",
    "adjoint_mode": "fbp",
    "lambda1_scale": 0.03,
    "shared_weights": False,
}

_STAGE_TRAIN_DEFAULTS = {
    "epochs": 12,
    "learning_rate": 2e-3,
    "lr_decay": 0.8,
    "schedule_step_epochs": 4,
    "batch_size": 1,
    "precision": "single",
    "n_blocks": None,
}

_CORPUS_DEFAULTS = {
    "n_phantoms": 200,
    "n_holdout": 20,
    "hr_n": 128,
    "le_factor": 2,
    "n_views": 36,
    "noise_level": 0.01,
}

_DEFAULTS: dict[str, dict] = {
    "simulate": {
        "geometry": dict(_GEOMETRY_DEFAULTS),
        "phantom": {"kind": "shepp-logan", "max_ellipses": 7},
        "noise": {"kind": "gaussian", "level": 0.01, "incident_counts": 1e5},
    },
    "fbp": {"fbp": {"filter": "ramp"}},
    "sb": {
        "solver": {
            "lam": 60.0,
            "lambda1": None,
            "eta": 1.0,
            "n_iters": 300,
            "transform": "gradient",
            "haar_levels": 2,
            "x0_mode": "fbp",
            "lambda1_scale": 0.03,
        }
    },
    "cppd": {
        "solver": {
            "lam": 10.0,
            "n_iters": 800,
            "step_balance": 0.25,
            "x0_mode": "fbp",
        }
    },
    "sugar-train": {
        "corpus": dict(_CORPUS_DEFAULTS),
        "train": {
            "mode": "two-stage",
            "arch": dict(_ARCH_DEFAULTS),
            "le": {**_STAGE_TRAIN_DEFAULTS, "epochs": 16, "schedule_step_epochs": 5},
            "hr": dict(_STAGE_TRAIN_DEFAULTS),
            "init_seed_le": 0,
            "init_seed_hr": 1,
        },
        "evaluate": True,
    },
    "sugar-recon": {},
    "two-stage": {"two_stage": {"le_n": None}},
    "metrics": {},
    "ablate-hr": {
        "corpus": dict(_CORPUS_DEFAULTS),
        "train": {
            "arch": dict(_ARCH_DEFAULTS),
            "le": {**_STAGE_TRAIN_DEFAULTS, "epochs": 16, "schedule_step_epochs": 5},
            "hr": dict(_STAGE_TRAIN_DEFAULTS),
            "init_seed_le": 0,
            "init_seed_hr": 1,
        },
    },
    "ablate-direct": {
        "corpus": dict(_CORPUS_DEFAULTS),
        "budget": {"n_train": 30, "le_epochs": 8, "hr_epochs": 4},
    },
}

_NEEDS_SEED = {"simulate", "sugar-train", "ablate-hr", "ablate-direct"}


def _merge_config(defaults: dict, user: dict, prefix: str = "") -> dict:
    """Recursive merge that rejects keys absent from the defaults."""
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(defaults[key], dict) and not isinstance(value, dict):
            raise ConfigError(f"config key {path} must be a mapping")
        if isinstance(defaults[key], dict):
            merged[key] = _merge_config(defaults[key], value, prefix=f"{path}.")
        else:
            merged[key] = value
    return merged


def _apply_override(config: dict, defaults: dict, expr: str) -> None:
    if "=" not in expr:
        raise ConfigError(f"--set expects KEY=VALUE, got {expr!r}")
    dotted, raw = expr.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value for {dotted}: {e}") from e
    node, dnode = config, defaults
    for i, key in enumerate(keys):
        path = ".".join(keys[: i + 1])
        if not isinstance(dnode, dict) or key not in dnode:
            raise ConfigError(f"unknown config key: {path}")
        if i == len(keys) - 1:
            if isinstance(dnode[key], dict):
                raise ConfigError(f"config key {path} is a section, not a value")
            node[key] = value
        else:
            node = node.setdefault(key, {})
            dnode = dnode[key]


def _load_config(command: str, args: argparse.Namespace) -> dict:
    defaults = _DEFAULTS[command]
    user: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse config file {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        user = loaded
    config = _merge_config(defaults, user)
    for expr in args.set or []:
        _apply_override(config, defaults, expr)
    return config


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get(_OUT_ENV) or "fanct-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


class _Run:
    """Collects outputs and timings, then writes report + manifest."""

    def __init__(self, command: str, config: dict, args: argparse.Namespace):
        self.command = command
        self.config = config
        self.seed = args.seed
        self.out = _out_dir(args)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self, report: dict) -> Path:
        report_path = self.path(f"{self.command}-report.json")
        _write_json(report_path, report)
        self.timings["total_s"] = round(time.perf_counter() - self._t0, 3)
        manifest = {
            "command": self.command,
            "version": __version__,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings": self.timings,
        }
        _write_json(self.out / f"{self.command}-manifest.json", manifest)
        return report_path


# ---------------------------------------------------------------------------
# shared builders

def _build_geometry(section: dict) -> FanBeamGeometry:
    preset = section["preset"]
    if preset == "clinical":
        geom = make_clinical_geometry()
        if section["n_views"] and section["n_views"] < len(geom.view_angles_rad):
            geom = subsample_views(geom, section["n_views"])
        return geom
    if preset == "desk":
        kwargs = {}
        if section["arc_deg"] is not None:
            kwargs["arc_deg"] = float(section["arc_deg"])
        return make_desk_geometry(int(section["image_n"]),
                                  n_views=int(section["n_views"]), **kwargs)
    raise ConfigError(f"unknown config key value geometry.preset={preset!r}")


def _corpus_config(section: dict, seed: int) -> experiments.CorpusConfig:
    return experiments.CorpusConfig(
        n_phantoms=int(section["n_phantoms"]),
        n_holdout=int(section["n_holdout"]),
        hr_n=int(section["hr_n"]),
        le_factor=int(section["le_factor"]),
        n_views=int(section["n_views"]),
        noise_level=float(section["noise_level"]),
        seed=seed,
    )


def _arch_config(arch: dict, geom: FanBeamGeometry) -> SugarConfig:
    lambda1 = float(arch["lambda1_scale"]) * projector_norm_sq(geom)
    return SugarConfig(
        n_blocks=int(arch["n_blocks"]),
        transform=str(arch["transform"]),
        adjoint_mode=str(arch["adjoint_mode"]),
        lambda1=lambda1,
        n_scales=int(arch["n_scales"]),
        channels=tuple(int(c) for c in arch["channels"]),
        kernel_size=int(arch["kernel_size"]),
        shared_weights=bool(arch["shared_weights"]),
    )


def _stage_spec(train: dict, stage: str, geom: FanBeamGeometry,
                seed: int) -> experiments.StageSpec:
    section = train[stage]
    tcfg = TrainConfig(
        epochs=int(section["epochs"]),
        learning_rate=float(section["learning_rate"]),
        lr_decay=float(section["lr_decay"]),
        schedule_step_epochs=int(section["schedule_step_epochs"]),
        batch_size=int(section["batch_size"]),
        seed=seed,
        precision=str(section["precision"]),
    )
    sugar = _arch_config(train["arch"], geom)
    if section["n_blocks"] is not None:
        sugar = dataclasses.replace(sugar, n_blocks=int(section["n_blocks"]))
    return experiments.StageSpec(
        sugar=sugar,
        train=tcfg,
        init_seed=int(train[f"init_seed_{stage}"]),
    )


def _image_stats(x: np.ndarray) -> dict:
    return {
        "min": float(x.min()),
        "max": float(x.max()),
        "mean": float(x.mean()),
    }


def _quality(x: np.ndarray, ref: np.ndarray) -> dict:
    return {
        "mse": float(np.mean((x - ref) ** 2)),
        "psnr_db": psnr(x, ref),
        "ssim": ssim(x, ref),
    }


def _load_reference(run: _Run, path: str | None) -> np.ndarray | None:
    if not path:
        return None
    ref, _ = load_image(path)
    run.inputs["reference"] = str(path)
    return ref


# ---------------------------------------------------------------------------
# commands

def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config("simulate", args)
    run = _Run("simulate", config, args)
    geom = _build_geometry(config["geometry"])
    pk = config["phantom"]["kind"]
    if pk == "shepp-logan":
        truth = shepp_logan(geom.image_n)
    elif pk == "random-ellipse":
        truth = random_ellipse_phantom(geom.image_n, seed=args.seed,
                                       max_ellipses=int(config["phantom"]["max_ellipses"]))
    else:
        raise ConfigError(f"unknown config key value phantom.kind={pk!r}")

    t0 = time.perf_counter()
    clean = forward_project(truth, geom)
    run.timings["forward_s"] = round(time.perf_counter() - t0, 3)

    nk = config["noise"]["kind"]
    if nk == "gaussian":
        sino = add_gaussian_noise(clean, float(config["noise"]["level"]), seed=args.seed + 1)
    elif nk == "poisson":
        sino, _ = add_poisson_noise(clean, float(config["noise"]["incident_counts"]),
                                    seed=args.seed + 1)
    elif nk == "none":
        sino = clean
    else:
        raise ConfigError(f"unknown config key value noise.kind={nk!r}")

    save_image(run.path("simulate-truth.img"), truth, geom.pixel_size_mm)
    run.outputs.append("simulate-truth.img.json")
    save_sinogram(run.path("simulate-sino.sin"), sino, geom)
    run.outputs.append("simulate-sino.sin.json")
    save_png(run.path("simulate-truth.png"), truth)
    save_png(run.path("simulate-sino.png"), sino)

    report = {
        "image_n": geom.image_n,
        "n_views": len(geom.view_angles_rad),
        "n_detectors": geom.n_detectors,
        "phantom": _image_stats(truth),
        "sinogram": _image_stats(sino),
        "noise_kind": nk,
    }
    path = run.finish(report)
    print(f"simulate: sinogram {sino.shape[0]}x{sino.shape[1]} -> {run.out}")
    logger.info("report at %s", path)
    return 0


def _recon_report(run: _Run, recon: np.ndarray, ref: np.ndarray | None,
                  extra: dict) -> dict:
    report = {"reconstruction": _image_stats(recon), **extra}
    if ref is not None:
        if ref.shape != recon.shape:
            raise ConfigError(
                f"reference shape {ref.shape} does not match reconstruction {recon.shape}")
        report["quality"] = _quality(recon, ref)
    return report


def _cmd_fbp(args: argparse.Namespace) -> int:
    config = _load_config("fbp", args)
    run = _Run("fbp", config, args)
    sino, geom, _ = load_sinogram(args.input)
    run.inputs["sinogram"] = args.input
    ref = _load_reference(run, args.reference)
    filter_name = str(config["fbp"]["filter"])
    if filter_name not in FILTERS:
        raise ConfigError(f"unknown config key value fbp.filter={filter_name!r}")
    recon = fbp(sino, geom, filter_name=filter_name)
    save_image(run.path("fbp-recon.img"), recon, geom.pixel_size_mm)
    run.outputs.append("fbp-recon.img.json")
    save_png(run.path("fbp-recon.png"), recon)
    report = _recon_report(run, recon, ref, {"filter": filter_name})
    run.finish(report)
    msg = f"fbp: reconstructed {geom.image_n}x{geom.image_n}"
    if "quality" in report:
        msg += f", PSNR {report['quality']['psnr_db']:.2f} dB"
    print(f"{msg} -> {run.out}")
    return 0


def _cmd_sb(args: argparse.Namespace) -> int:
    config = _load_config("sb", args)
    run = _Run("sb", config, args)
    sino, geom, _ = load_sinogram(args.input)
    run.inputs["sinogram"] = args.input
    ref = _load_reference(run, args.reference)
    s = config["solver"]
    lambda1 = s["lambda1"]
    if lambda1 is None:
        lambda1 = float(s["lambda1_scale"]) * projector_norm_sq(geom)
    cfg = SplitBregmanConfig(
        lam=float(s["lam"]),
        lambda1=float(lambda1),
        eta=float(s["eta"]),
        n_iters=int(s["n_iters"]),
        transform=str(s["transform"]),
        haar_levels=int(s["haar_levels"]),
        x0_mode=str(s["x0_mode"]),
    )
    recon, trace = split_bregman(sino, geom, cfg)
    save_image(run.path("sb-recon.img"), recon, geom.pixel_size_mm)
    run.outputs.append("sb-recon.img.json")
    save_png(run.path("sb-recon.png"), recon)
    _write_json(run.path("sb-trace.json"), trace.to_dict())
    report = _recon_report(run, recon, ref, {
        "n_iters": cfg.n_iters,
        "lam": cfg.lam,
        "lambda1": float(lambda1),
        "final_objective": trace.objective[-1],
        "final_data_fidelity": trace.data_fidelity[-1],
    })
    run.finish(report)
    msg = f"sb: {cfg.n_iters} iterations, objective {trace.objective[-1]:.4g}"
    if "quality" in report:
        msg += f", PSNR {report['quality']['psnr_db']:.2f} dB"
    print(f"{msg} -> {run.out}")
    return 0


def _cmd_cppd(args: argparse.Namespace) -> int:
    config = _load_config("cppd", args)
    run = _Run("cppd", config, args)
    sino, geom, _ = load_sinogram(args.input)
    run.inputs["sinogram"] = args.input
    ref = _load_reference(run, args.reference)
    s = config["solver"]
    recon, trace = chambolle_pock_tv(
        sino, geom,
        lam=float(s["lam"]),
        n_iters=int(s["n_iters"]),
        step_balance=float(s["step_balance"]),
        x0_mode=str(s["x0_mode"]),
    )
    save_image(run.path("cppd-recon.img"), recon, geom.pixel_size_mm)
    run.outputs.append("cppd-recon.img.json")
    save_png(run.path("cppd-recon.png"), recon)
    _write_json(run.path("cppd-trace.json"), trace.to_dict())
    report = _recon_report(run, recon, ref, {
        "n_iters": int(s["n_iters"]),
        "lam": float(s["lam"]),
        "final_objective": trace.objective[-1],
        "final_data_fidelity": trace.data_fidelity[-1],
    })
    run.finish(report)
    msg = f"cppd: {s['n_iters']} iterations, objective {trace.objective[-1]:.4g}"
    if "quality" in report:
        msg += f", PSNR {report['quality']['psnr_db']:.2f} dB"
    print(f"{msg} -> {run.out}")
    return 0


def _cmd_sugar_train(args: argparse.Namespace) -> int:
    config = _load_config("sugar-train", args)
    run = _Run("sugar-train", config, args)
    corpus = experiments.build_corpus(_corpus_config(config["corpus"], args.seed))
    train_cfg = config["train"]
    mode = train_cfg["mode"]
    report: dict = {"mode": mode, "corpus": corpus.config.to_dict()}

    if mode == "two-stage":
        le_spec = _stage_spec(train_cfg, "le", corpus.geom_le, args.seed)
        hr_spec = _stage_spec(train_cfg, "hr", corpus.geom_hr, args.seed)
        t0 = time.perf_counter()
        trained = experiments.train_two_stage(corpus, le_spec, hr_spec)
        run.timings["train_s"] = round(time.perf_counter() - t0, 3)
        save_params(run.path("sugar-train-params-le.sugr"), trained["params_le"])
        save_params(run.path("sugar-train-params-hr.sugr"), trained["params_hr"])
        report["history_le"] = trained["history_le"]
        report["history_hr"] = trained["history_hr"]
        if config["evaluate"]:
            ev = experiments.evaluate_two_stage(
                corpus, trained["params_le"], trained["params_hr"])
            report["holdout"] = ev
        summary = f"holdout PSNR {report['holdout']['mean_psnr_hr']:.2f} dB" \
            if config["evaluate"] else "trained"
    elif mode == "single":
        hr_spec = _stage_spec(train_cfg, "hr", corpus.geom_hr, args.seed)
        dataset = [(corpus.sinograms[i], corpus.truths_hr[i])
                   for i in corpus.train_indices]
        init = init_sugar_params(hr_spec.sugar, corpus.geom_hr,
                                 seed=hr_spec.init_seed)
        t0 = time.perf_counter()
        params, history = train_sugar(dataset, corpus.geom_hr, hr_spec.train, init)
        run.timings["train_s"] = round(time.perf_counter() - t0, 3)
        save_params(run.path("sugar-train-params.sugr"), params)
        report["history"] = history
        if config["evaluate"]:
            vals = [psnr(sugar_forward(corpus.sinograms[i], corpus.geom_hr, params),
                         corpus.truths_hr[i])
                    for i in corpus.holdout_indices]
            report["holdout"] = {"mean_psnr": float(np.mean(vals))}
            summary = f"holdout PSNR {report['holdout']['mean_psnr']:.2f} dB"
        else:
            summary = "trained"
    else:
        raise ConfigError(f"unknown config key value train.mode={mode!r}")

    run.finish(report)
    print(f"sugar-train: {summary} -> {run.out}")
    return 0


def _cmd_sugar_recon(args: argparse.Namespace) -> int:
    config = _load_config("sugar-recon", args)
    run = _Run("sugar-recon", config, args)
    sino, geom, _ = load_sinogram(args.input)
    run.inputs["sinogram"] = args.input
    params = load_params(args.params)
    run.inputs["params"] = args.params
    ref = _load_reference(run, args.reference)
    recon = sugar_forward(sino, geom, params)
    save_image(run.path("sugar-recon.img"), recon, geom.pixel_size_mm)
    run.outputs.append("sugar-recon.img.json")
    save_png(run.path("sugar-recon.png"), recon)
    report = _recon_report(run, recon, ref,
                           {"n_blocks": params.config.n_blocks})
    run.finish(report)
    msg = f"sugar-recon: {params.config.n_blocks} blocks"
    if "quality" in report:
        msg += f", PSNR {report['quality']['psnr_db']:.2f} dB"
    print(f"{msg} -> {run.out}")
    return 0


def _cmd_two_stage(args: argparse.Namespace) -> int:
    config = _load_config("two-stage", args)
    run = _Run("two-stage", config, args)
    sino, geom, _ = load_sinogram(args.input)
    run.inputs["sinogram"] = args.input
    params_le = load_params(args.params_le)
    params_hr = load_params(args.params_hr)
    run.inputs["params_le"] = args.params_le
    run.inputs["params_hr"] = args.params_hr
    ref = _load_reference(run, args.reference)
    le_n = config["two_stage"]["le_n"]
    le_n = geom.image_n // 2 if le_n is None else int(le_n)
    recon, x_up, x_le = two_stage_recon(sino, geom, params_le, params_hr, le_n,
                                        return_intermediate=True)
    save_image(run.path("two-stage-recon.img"), recon, geom.pixel_size_mm)
    run.outputs.append("two-stage-recon.img.json")
    save_png(run.path("two-stage-recon.png"), recon)
    save_image(run.path("two-stage-coarse.img"), x_le,
               geom.pixel_size_mm * geom.image_n / le_n)
    run.outputs.append("two-stage-coarse.img.json")
    extra = {"le_n": le_n}
    report = _recon_report(run, recon, ref, extra)
    if ref is not None:
        report["quality_upsampled_le"] = _quality(x_up, ref)
    run.finish(report)
    msg = f"two-stage: coarse {le_n} -> fine {geom.image_n}"
    if "quality" in report:
        msg += f", PSNR {report['quality']['psnr_db']:.2f} dB"
    print(f"{msg} -> {run.out}")
    return 0


def _cmd_metrics(args: argparse.Namespace) -> int:
    config = _load_config("metrics", args)
    run = _Run("metrics", config, args)
    x, _ = load_image(args.input)
    ref, _ = load_image(args.reference)
    run.inputs["image"] = args.input
    run.inputs["reference"] = args.reference
    if x.shape != ref.shape:
        raise ConfigError(f"image shape {x.shape} does not match reference {ref.shape}")
    report = _quality(x, ref)
    run.finish(report)
    print(f"metrics: PSNR {report['psnr_db']:.2f} dB, SSIM {report['ssim']:.4f} "
          f"-> {run.out}")
    return 0


def _cmd_ablate_hr(args: argparse.Namespace) -> int:
    config = _load_config("ablate-hr", args)
    run = _Run("ablate-hr", config, args)
    corpus = experiments.build_corpus(_corpus_config(config["corpus"], args.seed))
    le_spec = _stage_spec(config["train"], "le", corpus.geom_le, args.seed)
    hr_spec = _stage_spec(config["train"], "hr", corpus.geom_hr, args.seed)
    t0 = time.perf_counter()
    trained = experiments.train_two_stage(corpus, le_spec, hr_spec)
    run.timings["train_s"] = round(time.perf_counter() - t0, 3)
    save_params(run.path("ablate-hr-params-le.sugr"), trained["params_le"])
    save_params(run.path("ablate-hr-params-hr.sugr"), trained["params_hr"])
    result = experiments.hr_ablation(corpus, trained["params_le"],
                                     trained["params_hr"])
    report = {"corpus": corpus.config.to_dict(), **result}
    run.finish(report)
    print(f"ablate-hr: fine stage improved {result['n_improved']}/{result['n_total']} "
          f"holdout phantoms -> {run.out}")
    return 0


def _cmd_ablate_direct(args: argparse.Namespace) -> int:
    config = _load_config("ablate-direct", args)
    run = _Run("ablate-direct", config, args)
    corpus = experiments.build_corpus(_corpus_config(config["corpus"], args.seed))
    b = config["budget"]
    t0 = time.perf_counter()
    result = experiments.direct_ablation(
        corpus,
        n_train=int(b["n_train"]),
        le_epochs=int(b["le_epochs"]),
        hr_epochs=int(b["hr_epochs"]),
    )
    run.timings["train_s"] = round(time.perf_counter() - t0, 3)
    report = {"corpus": corpus.config.to_dict(), **result}
    run.finish(report)
    print(f"ablate-direct: staged {result['staged']['mean_psnr']:.2f} dB vs "
          f"direct {result['direct']['mean_psnr']:.2f} dB -> {run.out}")
    return 0


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "simulate": (_cmd_simulate, "generate a phantom, project it, add noise"),
    "fbp": (_cmd_fbp, "filtered backprojection of a sinogram file"),
    "sb": (_cmd_sb, "split-Bregman reconstruction"),
    "cppd": (_cmd_cppd, "primal-dual TV reconstruction"),
    "sugar-train": (_cmd_sugar_train, "train the unrolled reconstructor"),
    "sugar-recon": (_cmd_sugar_recon, "reconstruct with saved parameters"),
    "two-stage": (_cmd_two_stage, "coarse-then-fine reconstruction"),
    "metrics": (_cmd_metrics, "PSNR/SSIM/MSE between image files"),
    "ablate-hr": (_cmd_ablate_hr, "fine-stage benefit experiment"),
    "ablate-direct": (_cmd_ablate_direct, "staged vs direct training"),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fanct",
        description="Few-view fan-beam CT reconstruction experiments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${_OUT_ENV} or ./fanct-out)")
        p.add_argument("--seed", type=int,
                       help="random seed (required for randomized commands)")
        p.add_argument("-v", "--verbose", action="store_true",
                       help="log progress to stderr")
        if name in ("fbp", "sb", "cppd", "sugar-recon", "two-stage"):
            p.add_argument("--input", required=True, help="input sinogram file")
            p.add_argument("--reference", help="reference image for quality metrics")
        if name == "sugar-recon":
            p.add_argument("--params", required=True, help="trained parameter file")
        if name == "two-stage":
            p.add_argument("--params-le", required=True, dest="params_le",
                           help="coarse-stage parameter file")
            p.add_argument("--params-hr", required=True, dest="params_hr",
                           help="fine-stage parameter file")
        if name == "metrics":
            p.add_argument("--input", required=True, help="image file to score")
            p.add_argument("--reference", required=True, help="reference image file")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
    if args.command in _NEEDS_SEED and args.seed is None:
        print(f"config error: --seed is required for {args.command}", file=sys.stderr)
        return 2
    if args.seed is None:
        args.seed = 0
    handler = _COMMANDS[args.command][0]
    try:
        return handler(args)
    except (ConfigError, ValueError, FormatError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericalFailure, TrainingFailure, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        history = getattr(e, "history", None)
        if history is not None:
            print(f"loss history: {history}", file=sys.stderr)
        trace = getattr(e, "trace", None)
        if trace is not None:
            print(f"objective trace: {trace.to_dict()}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
