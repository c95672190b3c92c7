"""Reproducible experiment drivers shared by the CLI and the test suite.

Every training experiment follows one recipe: build a seeded corpus of
random-ellipse phantoms at the fine grid, form coarse ground truth by
block averaging, measure each phantom once with a shared fan-beam
geometry plus Gaussian noise, then train the unrolled reconstructor in
two stages (coarse grid first, fine grid warm-started from the upsampled
coarse reconstruction).  Ablation drivers reuse the same corpus so the
comparisons stay paired.

Results come back as plain dictionaries of floats and lists so callers
can serialize them as deterministic reports: nothing here records wall
time, hostnames, or other run-specific values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import add_gaussian_noise, psnr, random_ellipse_phantom
from .geometry import FanBeamGeometry, make_desk_geometry, with_image_grid
from .projector import forward_project, projector_norm_sq
from .solvers import SplitBregmanConfig, split_bregman
from .sugar import (
    SugarConfig,
    SugarParams,
    TrainConfig,
    downsample_mean,
    init_sugar_params,
    sugar_forward,
    train_sugar,
    two_stage_recon,
    upsample,
)

__all__ = [
    "CorpusConfig",
    "Corpus",
    "StageSpec",
    "build_corpus",
    "default_le_spec",
    "default_hr_spec",
    "default_sb_config",
    "train_two_stage",
    "evaluate_two_stage",
    "evaluate_split_bregman",
    "hr_ablation",
    "direct_ablation",
]

logger = logging.getLogger(__name__)

# Seed layout inside one corpus: phantom i draws from _SEED_BASE*(seed+1)+i
# and its noise from the next _SEED_BASE block, so streams never collide
# for corpora below _SEED_BASE phantoms.
_SEED_BASE = 1000


@dataclass(frozen=True)
class CorpusConfig:
    """Describes a synthetic phantom corpus and its measurement setup."""

    n_phantoms: int = 200
    n_holdout: int = 20
    hr_n: int = 128
    le_factor: int = 2
    n_views: int = 36
    noise_level: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_phantoms < 2 or self.n_phantoms >= _SEED_BASE:
            raise ValueError(f"n_phantoms must be in [2, {_SEED_BASE}), got {self.n_phantoms}")
        if not 1 <= self.n_holdout < self.n_phantoms:
            raise ValueError(f"n_holdout must be in [1, {self.n_phantoms}), got {self.n_holdout}")
        if self.le_factor < 1 or self.hr_n % self.le_factor:
            raise ValueError(f"le_factor {self.le_factor} must divide hr_n {self.hr_n}")
        if self.hr_n // self.le_factor < 16:
            raise ValueError("coarse grid would fall below 16 pixels")
        if self.n_views < 1:
            raise ValueError(f"n_views must be positive, got {self.n_views}")
        if self.noise_level < 0:
            raise ValueError(f"noise_level must be >= 0, got {self.noise_level}")

    def to_dict(self) -> dict:
        return {
            "n_phantoms": self.n_phantoms,
            "n_holdout": self.n_holdout,
            "hr_n": self.hr_n,
            "le_factor": self.le_factor,
            "n_views": self.n_views,
            "noise_level": self.noise_level,
            "seed": self.seed,
        }


@dataclass
class Corpus:
    """Phantom corpus with shared geometry and precomputed sinograms."""

    config: CorpusConfig
    geom_hr: FanBeamGeometry
    geom_le: FanBeamGeometry
    truths_hr: list[np.ndarray]
    truths_le: list[np.ndarray]
    sinograms: list[np.ndarray]
    train_indices: list[int]
    holdout_indices: list[int]

    @property
    def le_n(self) -> int:
        return self.config.hr_n // self.config.le_factor


def build_corpus(cfg: CorpusConfig) -> Corpus:
    """Generate the corpus deterministically from its config.

    The last ``n_holdout`` phantoms are held out; sinograms are measured
    on the fine grid only, since that is all a scanner would see.
    """
    geom_hr = make_desk_geometry(cfg.hr_n, n_views=cfg.n_views)
    geom_le = with_image_grid(geom_hr, cfg.hr_n // cfg.le_factor)
    base = _SEED_BASE * (cfg.seed + 1)
    truths_hr: list[np.ndarray] = []
    truths_le: list[np.ndarray] = []
    sinograms: list[np.ndarray] = []
    for i in range(cfg.n_phantoms):
        truth = random_ellipse_phantom(cfg.hr_n, seed=base + i)
        clean = forward_project(truth, geom_hr)
        noisy = add_gaussian_noise(clean, cfg.noise_level, seed=base + _SEED_BASE + i)
        truths_hr.append(truth)
        truths_le.append(downsample_mean(truth, cfg.le_factor))
        sinograms.append(noisy)
    n_train = cfg.n_phantoms - cfg.n_holdout
    return Corpus(
        config=cfg,
        geom_hr=geom_hr,
        geom_le=geom_le,
        truths_hr=truths_hr,
        truths_le=truths_le,
        sinograms=sinograms,
        train_indices=list(range(n_train)),
        holdout_indices=list(range(n_train, cfg.n_phantoms)),
    )


@dataclass(frozen=True)
class StageSpec:
    """Architecture, trainer settings, and init seed for one training stage."""

    sugar: SugarConfig
    train: TrainConfig
    init_seed: int = 0


def _recon_arch(lambda1: float) -> SugarConfig:
    return SugarConfig(
        n_blocks=5,
        transform="learned",
        adjoint_mode="fbp",
        lambda1=lambda1,
        n_scales=2,
        channels=(16, 32),
    )


def default_le_spec(corpus: Corpus) -> StageSpec:
    """Coarse-stage defaults tuned on this corpus family."""
    lambda1 = 0.03 * projector_norm_sq(corpus.geom_le)
    train = TrainConfig(
        epochs=16,
        learning_rate=2e-3,
        lr_decay=0.8,
        schedule_step_epochs=5,
        batch_size=1,
        seed=0,
        precision="single",
    )
    return StageSpec(sugar=_recon_arch(lambda1), train=train, init_seed=0)


def default_hr_spec(corpus: Corpus) -> StageSpec:
    """Fine-stage defaults: shorter schedule since the init is already good."""
    lambda1 = 0.03 * projector_norm_sq(corpus.geom_hr)
    train = TrainConfig(
        epochs=12,
        learning_rate=2e-3,
        lr_decay=0.8,
        schedule_step_epochs=4,
        batch_size=1,
        seed=0,
        precision="single",
    )
    return StageSpec(sugar=_recon_arch(lambda1), train=train, init_seed=1)


def default_sb_config(geom: FanBeamGeometry) -> SplitBregmanConfig:
    """Baseline total-variation solver settings for corpus phantoms."""
    return SplitBregmanConfig(
        lam=60.0,
        lambda1=0.03 * projector_norm_sq(geom),
        n_iters=300,
        transform="gradient",
    )


def _train_stage(
    corpus: Corpus,
    spec: StageSpec,
    geom: FanBeamGeometry,
    truths: list[np.ndarray],
    indices: list[int],
    x0_images: list[np.ndarray] | None,
) -> tuple[SugarParams, list[float]]:
    dataset = [(corpus.sinograms[i], truths[i]) for i in indices]
    init = init_sugar_params(spec.sugar, geom, seed=spec.init_seed)
    return train_sugar(dataset, geom, spec.train, init, x0_images=x0_images)


def _le_warm_starts(
    corpus: Corpus, params_le: SugarParams, indices: list[int]
) -> list[np.ndarray]:
    outputs = []
    for i in indices:
        x_le = sugar_forward(corpus.sinograms[i], corpus.geom_le, params_le)
        outputs.append(upsample(x_le, corpus.config.le_factor))
    return outputs


def train_two_stage(
    corpus: Corpus,
    le_spec: StageSpec | None = None,
    hr_spec: StageSpec | None = None,
    train_indices: list[int] | None = None,
) -> dict:
    """Train the coarse stage, then the fine stage from upsampled warm starts.

    Returns ``{"params_le", "params_hr", "history_le", "history_hr"}``.
    ``train_indices`` restricts training to a subset of the corpus training
    split (used by the equal-budget ablation); holdout indices are rejected.
    """
    le_spec = le_spec or default_le_spec(corpus)
    hr_spec = hr_spec or default_hr_spec(corpus)
    indices = list(corpus.train_indices if train_indices is None else train_indices)
    bad = set(indices) - set(corpus.train_indices)
    if bad:
        raise ValueError(f"train_indices contain holdout or unknown ids: {sorted(bad)}")

    logger.info("coarse stage: %d samples at %d^2", len(indices), corpus.le_n)
    params_le, history_le = _train_stage(
        corpus, le_spec, corpus.geom_le, corpus.truths_le, indices, None
    )
    logger.info("fine stage: %d samples at %d^2", len(indices), corpus.config.hr_n)
    warm = _le_warm_starts(corpus, params_le, indices)
    params_hr, history_hr = _train_stage(
        corpus, hr_spec, corpus.geom_hr, corpus.truths_hr, indices, warm
    )
    return {
        "params_le": params_le,
        "params_hr": params_hr,
        "history_le": history_le,
        "history_hr": history_hr,
    }


def evaluate_two_stage(
    corpus: Corpus,
    params_le: SugarParams,
    params_hr: SugarParams,
    indices: list[int] | None = None,
) -> dict:
    """Per-phantom quality of the staged reconstruction on ``indices``.

    Reports both the final output and the upsampled coarse intermediate,
    so the fine-stage contribution is visible sample by sample.
    """
    indices = list(corpus.holdout_indices if indices is None else indices)
    rows = []
    for i in indices:
        x_hr, x_up, _ = two_stage_recon(
            corpus.sinograms[i],
            corpus.geom_hr,
            params_le,
            params_hr,
            corpus.le_n,
            return_intermediate=True,
        )
        truth = corpus.truths_hr[i]
        rows.append(
            {
                "index": i,
                "psnr_hr": psnr(x_hr, truth),
                "psnr_upsampled_le": psnr(x_up, truth),
                "mse_hr": float(np.mean((x_hr - truth) ** 2)),
                "mse_upsampled_le": float(np.mean((x_up - truth) ** 2)),
            }
        )
    return {
        "per_phantom": rows,
        "mean_psnr_hr": float(np.mean([r["psnr_hr"] for r in rows])),
        "mean_psnr_upsampled_le": float(
            np.mean([r["psnr_upsampled_le"] for r in rows])
        ),
    }


def evaluate_split_bregman(
    corpus: Corpus,
    config: SplitBregmanConfig | None = None,
    indices: list[int] | None = None,
) -> dict:
    """Baseline solver quality on ``indices`` (holdout by default)."""
    config = config or default_sb_config(corpus.geom_hr)
    indices = list(corpus.holdout_indices if indices is None else indices)
    rows = []
    for i in indices:
        x, _ = split_bregman(corpus.sinograms[i], corpus.geom_hr, config)
        rows.append({"index": i, "psnr": psnr(x, corpus.truths_hr[i])})
    return {
        "per_phantom": rows,
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
    }


def hr_ablation(
    corpus: Corpus,
    params_le: SugarParams,
    params_hr: SugarParams,
) -> dict:
    """Fine-stage benefit: per-holdout MSE of the final output vs. its
    upsampled coarse input, plus the fraction of phantoms improved."""
    result = evaluate_two_stage(corpus, params_le, params_hr)
    rows = [
        {
            "index": r["index"],
            "mse_hr": r["mse_hr"],
            "mse_upsampled_le": r["mse_upsampled_le"],
            "improved": bool(r["mse_hr"] < r["mse_upsampled_le"]),
        }
        for r in result["per_phantom"]
    ]
    return {
        "per_phantom": rows,
        "n_improved": sum(r["improved"] for r in rows),
        "n_total": len(rows),
        "all_improved": bool(all(r["improved"] for r in rows)),
    }


def direct_ablation(
    corpus: Corpus,
    n_train: int = 30,
    le_epochs: int = 8,
    hr_epochs: int = 4,
) -> dict:
    """Staged versus direct fine-grid training under equal budgets.

    Both arms see the same ``n_train`` training phantoms and the same
    total epoch count (``le_epochs + hr_epochs``).  The direct arm gets
    double the block count so its parameter count matches the two staged
    networks combined, and it trains on the fine grid from the filtered
    backprojection by itself.
    """
    if n_train > len(corpus.train_indices):
        raise ValueError(
            f"n_train {n_train} exceeds corpus training split {len(corpus.train_indices)}"
        )
    subset = corpus.train_indices[:n_train]
    total_epochs = le_epochs + hr_epochs

    le_spec = default_le_spec(corpus)
    hr_spec = default_hr_spec(corpus)
    le_spec = StageSpec(
        sugar=le_spec.sugar,
        train=_with_epochs(le_spec.train, le_epochs, schedule_step_epochs=4),
        init_seed=le_spec.init_seed,
    )
    hr_spec = StageSpec(
        sugar=hr_spec.sugar,
        train=_with_epochs(hr_spec.train, hr_epochs, schedule_step_epochs=4),
        init_seed=hr_spec.init_seed,
    )
    staged = train_two_stage(corpus, le_spec, hr_spec, train_indices=subset)
    staged_eval = evaluate_two_stage(
        corpus, staged["params_le"], staged["params_hr"]
    )

    n_blocks = le_spec.sugar.n_blocks + hr_spec.sugar.n_blocks
    direct_cfg = SugarConfig(
        n_blocks=n_blocks,
        transform="learned",
        adjoint_mode="fbp",
        lambda1=0.03 * projector_norm_sq(corpus.geom_hr),
        n_scales=le_spec.sugar.n_scales,
        channels=le_spec.sugar.channels,
    )
    direct_spec = StageSpec(
        sugar=direct_cfg,
        train=_with_epochs(hr_spec.train, total_epochs, schedule_step_epochs=4),
        init_seed=2,
    )
    logger.info("direct arm: %d blocks, %d epochs at %d^2",
                n_blocks, total_epochs, corpus.config.hr_n)
    params_direct, history_direct = _train_stage(
        corpus, direct_spec, corpus.geom_hr, corpus.truths_hr, subset, None
    )
    direct_rows = []
    for i in corpus.holdout_indices:
        x = sugar_forward(corpus.sinograms[i], corpus.geom_hr, params_direct)
        direct_rows.append({"index": i, "psnr": psnr(x, corpus.truths_hr[i])})

    staged_mean = staged_eval["mean_psnr_hr"]
    direct_mean = float(np.mean([r["psnr"] for r in direct_rows]))
    return {
        "n_train": n_train,
        "total_epochs": total_epochs,
        "staged": {
            "mean_psnr": staged_mean,
            "per_phantom": [
                {"index": r["index"], "psnr": r["psnr_hr"]}
                for r in staged_eval["per_phantom"]
            ],
        },
        "direct": {
            "mean_psnr": direct_mean,
            "per_phantom": direct_rows,
            "n_blocks": n_blocks,
            "history": [float(v) for v in history_direct],
        },
        "staged_minus_direct_db": staged_mean - direct_mean,
    }


def _with_epochs(cfg: TrainConfig, epochs: int, schedule_step_epochs: int) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        learning_rate=cfg.learning_rate,
        lr_decay=cfg.lr_decay,
        schedule_step_epochs=schedule_step_epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        precision=cfg.precision,
    )
