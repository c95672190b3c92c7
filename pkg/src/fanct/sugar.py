"""Unrolled split-regularization reconstruction network.

Each of K blocks performs three updates on a state (x, z, f):

  reconstruction  x <- x - a * At(A x - y) - b * (x - z - f)
  denoising       z <- Q*( shrink( Q(x - f), eps ) )
  error feedback  f <- f - eta * (x - z)

with per-block learnable scalars a, b, eta (and optionally eps) and a
learnable convolutional encoder-decoder (Q, Q*).  At can be the exact
projector transpose or, by default, the filtered-backprojection
surrogate.  With Q fixed to an orthonormal wavelet and the scalars held
at their analytic initialization, the blocks reproduce the iterative
split-Bregman solver exactly; training instead fits the parameters to
phantom data by Adam on mean squared reconstruction error.

Also provides the two-stage pipeline: reconstruct on a coarse grid,
upsample bilinearly, then refine on the fine grid against the same
measured sinogram.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .data import FormatError
from .geometry import FanBeamGeometry, with_image_grid
from .linops import (ComposedOperator, LinearOperator, TransformOperator,
                     TransposedOperator, operator_norm_sq)
from .projector import (FILTERS, FbpOperator, ProjectorOperator, fbp,
                        projector_norm_sq)
from .transforms import HaarTransform, SparsifyingTransform

__all__ = [
    "SugarConfig",
    "SugarParams",
    "SugarState",
    "TrainConfig",
    "TrainingFailure",
    "ConvLayer",
    "EncoderDecoder",
    "init_sugar_params",
    "rm_update",
    "dm_update",
    "em_update",
    "sugar_forward",
    "train_sugar",
    "two_stage_recon",
    "upsample",
    "downsample_mean",
    "save_params",
    "load_params",
]

logger = logging.getLogger(__name__)

TRANSFORM_KINDS = ("learned", "haar", "identity")
ADJOINT_MODES = ("fbp", "exact")
PRECISIONS = ("double", "single")


@dataclass(frozen=True)
class SugarConfig:
    """Architecture and analytic-initialization settings for the network.

    transform       "learned" uses the conv encoder-decoder for the
                    denoising update; "haar"/"identity" use the fixed
                    analytic transform pair instead.
    adjoint_mode    "fbp" applies filtered backprojection to the data
                    residual (default); "exact" uses the true transpose.
    lambda1         coupling weight entering the a, b initialization
                    through L = ||A||^2 + lambda1.
    use_threshold   insert soft shrinkage (on the latent features for
                    "learned", on coefficients otherwise).
    learn_threshold whether the shrinkage threshold is trained.
    shared_weights  one encoder-decoder reused by all blocks instead of
                    per-block weights.
    """

    n_blocks: int = 5
    transform: str = "learned"
    adjoint_mode: str = "fbp"
    filter_name: str = "ramp"
    lambda1: float = 1000.0
    n_scales: int = 2
    channels: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    shared_weights: bool = False
    use_threshold: bool = False
    learn_threshold: bool = False
    threshold_init: float = 0.0
    haar_levels: int = 2

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.transform not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.transform!r}, "
                             f"expected one of {TRANSFORM_KINDS}")
        if self.adjoint_mode not in ADJOINT_MODES:
            raise ValueError(f"unknown adjoint_mode {self.adjoint_mode!r}, "
                             f"expected one of {ADJOINT_MODES}")
        if self.filter_name not in FILTERS:
            raise ValueError(f"unknown filter {self.filter_name!r}, "
                             f"expected one of {FILTERS}")
        if not self.lambda1 > 0:
            raise ValueError("lambda1 must be positive")
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != self.n_scales:
            raise ValueError(f"channels {self.channels} must list one width "
                             f"per scale ({self.n_scales})")
        if any(c < 1 for c in self.channels):
            raise ValueError("channel widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")
        if self.threshold_init < 0:
            raise ValueError("threshold_init must be nonnegative")
        if self.haar_levels < 1:
            raise ValueError("haar_levels must be >= 1")
        if self.learn_threshold and not self.use_threshold:
            raise ValueError("learn_threshold requires use_threshold")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SugarConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


@dataclass
class ConvLayer:
    """One convolution with optional per-channel affine and ReLU."""

    weight: np.ndarray
    bias: np.ndarray
    scale: np.ndarray | None
    shift: np.ndarray | None
    relu: bool


@dataclass
class EncoderDecoder:
    """Conv encoder-decoder with pooling, per-scale skips, and a latent
    shrinkage slot.  ``plan`` is the executable layer sequence; entries
    are ("conv", i), ("pool",), ("unpool",), ("push",), ("pop",),
    ("shrink",)."""

    layers: list[ConvLayer]
    plan: tuple[tuple, ...]

    @property
    def downsampling_factor(self) -> int:
        return 2 ** sum(1 for step in self.plan if step[0] == "pool")


@dataclass
class BlockParams:
    """Learnable scalars of one block; arrays are 0-d so in-place
    optimizer updates are visible through every reference."""

    a: np.ndarray
    b: np.ndarray
    eta: np.ndarray
    threshold: np.ndarray


@dataclass
class SugarParams:
    """Full trainable state: per-block scalars plus encoder-decoders
    (one per block, or a single shared one)."""

    config: SugarConfig
    blocks: list[BlockParams]
    nets: list[EncoderDecoder] = field(default_factory=list)

    def net_for_block(self, k: int) -> EncoderDecoder | None:
        if not self.nets:
            return None
        return self.nets[0] if self.config.shared_weights else self.nets[k]

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Flat ordered name->array view of every parameter.

        The ordering is the serialization contract: block scalars first,
        then encoder-decoder layers in plan order.
        """
        out: dict[str, np.ndarray] = {}
        for k, blk in enumerate(self.blocks):
            out[f"block{k}/a"] = blk.a
            out[f"block{k}/b"] = blk.b
            out[f"block{k}/eta"] = blk.eta
            out[f"block{k}/threshold"] = blk.threshold
        for j, net in enumerate(self.nets):
            for i, layer in enumerate(net.layers):
                out[f"net{j}/conv{i}/weight"] = layer.weight
                out[f"net{j}/conv{i}/bias"] = layer.bias
                if layer.scale is not None:
                    out[f"net{j}/conv{i}/scale"] = layer.scale
                    out[f"net{j}/conv{i}/shift"] = layer.shift
        return out

    def is_trainable(self, name: str) -> bool:
        if name.endswith("/threshold"):
            return self.config.use_threshold and self.config.learn_threshold
        return True

    def validate(self) -> None:
        for name, arr in self.named_arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} contains non-finite values")
        for blk in self.blocks:
            if float(blk.threshold) < 0:
                raise ValueError("threshold must be nonnegative")


@dataclass
class SugarState:
    """Iterate triple threaded through the blocks."""

    x: np.ndarray
    z: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        self.f = np.asarray(self.f, dtype=np.float64)
        if not (self.x.shape == self.z.shape == self.f.shape):
            raise ValueError(f"state shapes differ: {self.x.shape}, "
                             f"{self.z.shape}, {self.f.shape}")


def _architecture(cfg: SugarConfig) -> tuple[tuple[tuple, ...], list[tuple[int, int, bool, bool]]]:
    """Layer plan and (in, out, affine, relu) specs for the encoder-decoder."""
    specs: list[tuple[int, int, bool, bool]] = []
    plan: list[tuple] = []
    ch = cfg.channels

    def conv(c_in: int, c_out: int, affine: bool = True, act: bool = True):
        plan.append(("conv", len(specs)))
        specs.append((c_in, c_out, affine, act))

    conv(1, ch[0])
    conv(ch[0], ch[0])
    for lvl in range(1, cfg.n_scales):
        plan.append(("push",))
        plan.append(("pool",))
        conv(ch[lvl - 1], ch[lvl])
        conv(ch[lvl], ch[lvl])
    plan.append(("shrink",))
    for lvl in range(cfg.n_scales - 1, 0, -1):
        conv(ch[lvl], ch[lvl])
        plan.append(("unpool",))
        conv(ch[lvl], ch[lvl - 1])
        plan.append(("pop",))
    conv(ch[0], ch[0])
    conv(ch[0], 1, affine=False, act=False)
    return tuple(plan), specs


def _init_encoder_decoder(cfg: SugarConfig, rng: np.random.Generator) -> EncoderDecoder:
    plan, specs = _architecture(cfg)
    k = cfg.kernel_size
    layers = []
    for c_in, c_out, affine, act in specs:
        fan_in = c_in * k * k
        std = np.sqrt((2.0 if act else 1.0) / fan_in)
        # small positive bias keeps all-zero input windows (masked image
        # regions, shrunk latents) off the ReLU kink, where the loss is
        # not differentiable
        layers.append(ConvLayer(
            weight=rng.standard_normal((c_out, c_in, k, k)) * std,
            bias=np.full(c_out, 0.01) if act else np.zeros(c_out),
            scale=np.ones(c_out) if affine else None,
            shift=np.zeros(c_out) if affine else None,
            relu=act,
        ))
    return EncoderDecoder(layers=layers, plan=plan)


def _fbp_system_norm(geom: FanBeamGeometry, filter_name: str) -> float:
    """Spectral norm of FBP(A(.)), the data-consistency operator of
    surrogate-adjoint blocks.  Power iteration with fixed seed; close to
    one since FBP approximately inverts the projector."""
    comp = ComposedOperator(FbpOperator(geom, filter_name),
                            ProjectorOperator(geom))
    return float(np.sqrt(operator_norm_sq(comp)))


def init_sugar_params(cfg: SugarConfig, geom: FanBeamGeometry,
                      seed: int = 0) -> SugarParams:
    """Analytic initialization from power-iteration norms of the update
    operators in use: with the exact adjoint a = 1/L and b = lambda1/L
    where L = ||A||^2 + lambda1; with the FBP surrogate the consistency
    operator is FBP(A(.)) with norm near one, so a = 1/(||FBP A|| + b).
    eta starts at 1, thresholds at their configured start, conv weights
    He-normal with a small positive bias."""
    big_l = projector_norm_sq(geom) + cfg.lambda1
    b0 = cfg.lambda1 / big_l
    if cfg.adjoint_mode == "fbp":
        a0 = 1.0 / (_fbp_system_norm(geom, cfg.filter_name) + b0)
    else:
        a0 = 1.0 / big_l
    rng = np.random.default_rng(seed)
    blocks = [BlockParams(a=np.asarray(a0),
                          b=np.asarray(b0),
                          eta=np.asarray(1.0),
                          threshold=np.asarray(float(cfg.threshold_init)))
              for _ in range(cfg.n_blocks)]
    nets: list[EncoderDecoder] = []
    if cfg.transform == "learned":
        n_nets = 1 if cfg.shared_weights else cfg.n_blocks
        nets = [_init_encoder_decoder(cfg, rng) for _ in range(n_nets)]
    return SugarParams(config=cfg, blocks=blocks, nets=nets)


# ---------------------------------------------------------------------------
# forward pass (tape-building; runs under no_grad for plain inference)

def _lift_layer(layer: ConvLayer, dtype) -> dict:
    lifted = {
        "weight": ad.Tensor(layer.weight.astype(dtype, copy=True)),
        "bias": ad.Tensor(layer.bias.astype(dtype, copy=True)),
        "scale": None,
        "shift": None,
        "relu": layer.relu,
    }
    if layer.scale is not None:
        lifted["scale"] = ad.Tensor(layer.scale.astype(dtype, copy=True))
        lifted["shift"] = ad.Tensor(layer.shift.astype(dtype, copy=True))
    return lifted


def _net_tensor(h: ad.Tensor, layers: list[dict], plan: tuple[tuple, ...],
                threshold: ad.Tensor | None) -> ad.Tensor:
    skips: list[ad.Tensor] = []
    for step in plan:
        kind = step[0]
        if kind == "conv":
            lay = layers[step[1]]
            h = ad.conv2d(h, lay["weight"], lay["bias"])
            if lay["scale"] is not None:
                h = ad.channel_affine(h, lay["scale"], lay["shift"])
            if lay["relu"]:
                h = ad.relu(h)
        elif kind == "pool":
            h = ad.avg_pool2(h)
        elif kind == "unpool":
            h = ad.upsample_nearest2(h)
        elif kind == "push":
            skips.append(h)
        elif kind == "pop":
            h = ad.add(h, skips.pop())
        elif kind == "shrink":
            if threshold is not None:
                h = ad.soft_shrink(h, threshold)
        else:
            raise ValueError(f"unknown plan step {step!r}")
    return h


def _rm_tensor(x: ad.Tensor, z: ad.Tensor, f: ad.Tensor, y: ad.Tensor,
               a: ad.Tensor, b: ad.Tensor, proj: LinearOperator,
               adj: LinearOperator) -> ad.Tensor:
    resid = ad.sub(ad.apply_linear(proj, x), y)
    corr = ad.apply_linear(adj, resid)
    return ad.sub(ad.sub(x, ad.mul(a, corr)),
                  ad.mul(b, ad.sub(ad.sub(x, z), f)))


def _dm_tensor(x: ad.Tensor, f: ad.Tensor, cfg_transform: str,
               net_layers: list[dict] | None, plan: tuple[tuple, ...] | None,
               threshold: ad.Tensor | None,
               haar_ops: tuple[LinearOperator, LinearOperator] | None) -> ad.Tensor:
    u = ad.sub(x, f)
    if cfg_transform == "learned":
        n = u.shape[0]
        h = ad.reshape(u, (1, n, n))
        h = _net_tensor(h, net_layers, plan, threshold)
        return ad.reshape(h, (n, n))
    if cfg_transform == "haar":
        q = ad.apply_linear(haar_ops[0], u)
        if threshold is not None:
            q = ad.soft_shrink(q, threshold)
        return ad.apply_linear(haar_ops[1], q)
    if threshold is not None:
        return ad.soft_shrink(u, threshold)
    return u


def _em_tensor(f: ad.Tensor, x: ad.Tensor, z: ad.Tensor,
               eta: ad.Tensor) -> ad.Tensor:
    return ad.sub(f, ad.mul(eta, ad.sub(x, z)))


class _ForwardOps:
    """Geometry-bound operators shared across samples and blocks."""

    def __init__(self, geom: FanBeamGeometry, cfg: SugarConfig):
        self.proj = ProjectorOperator(geom)
        if cfg.adjoint_mode == "fbp":
            self.adj: LinearOperator = FbpOperator(geom, cfg.filter_name)
        else:
            self.adj = TransposedOperator(self.proj)
        self.haar_ops = None
        if cfg.transform == "haar":
            fwd = TransformOperator(HaarTransform(levels=cfg.haar_levels),
                                    geom.image_n)
            self.haar_ops = (fwd, TransposedOperator(fwd))
        if cfg.transform == "learned":
            factor = 2 ** (cfg.n_scales - 1)
            if geom.image_n % factor:
                raise ValueError(
                    f"image size {geom.image_n} not divisible by the "
                    f"encoder-decoder downsampling factor {factor}")


def _lift_params(params: SugarParams, dtype) -> tuple[dict[str, ad.Tensor], list[list[dict]]]:
    """Copy parameters into leaf tensors of the requested dtype.

    Returns the flat name->Tensor map (for gradient readout) and the
    per-net layer structures used by the forward pass.
    """
    named: dict[str, ad.Tensor] = {}
    for k, blk in enumerate(params.blocks):
        named[f"block{k}/a"] = ad.Tensor(blk.a.astype(dtype, copy=True))
        named[f"block{k}/b"] = ad.Tensor(blk.b.astype(dtype, copy=True))
        named[f"block{k}/eta"] = ad.Tensor(blk.eta.astype(dtype, copy=True))
        named[f"block{k}/threshold"] = ad.Tensor(blk.threshold.astype(dtype, copy=True))
    nets: list[list[dict]] = []
    for j, net in enumerate(params.nets):
        layers = []
        for i, layer in enumerate(net.layers):
            lifted = _lift_layer(layer, dtype)
            named[f"net{j}/conv{i}/weight"] = lifted["weight"]
            named[f"net{j}/conv{i}/bias"] = lifted["bias"]
            if lifted["scale"] is not None:
                named[f"net{j}/conv{i}/scale"] = lifted["scale"]
                named[f"net{j}/conv{i}/shift"] = lifted["shift"]
            layers.append(lifted)
        nets.append(layers)
    return named, nets


def _forward_tape(y: np.ndarray, init: SugarState, params: SugarParams,
                  named: dict[str, ad.Tensor], net_layers: list[list[dict]],
                  ops: _ForwardOps, dtype) -> ad.Tensor:
    cfg = params.config
    plan = params.nets[0].plan if params.nets else None
    y_t = ad.Tensor(np.asarray(y, dtype=dtype))
    x = ad.Tensor(init.x.astype(dtype, copy=True))
    z = ad.Tensor(init.z.astype(dtype, copy=True))
    f = ad.Tensor(init.f.astype(dtype, copy=True))
    for k in range(cfg.n_blocks):
        a = named[f"block{k}/a"]
        b = named[f"block{k}/b"]
        eta = named[f"block{k}/eta"]
        thr = named[f"block{k}/threshold"] if cfg.use_threshold else None
        layers = None
        if net_layers:
            layers = net_layers[0] if cfg.shared_weights else net_layers[k]
        x = _rm_tensor(x, z, f, y_t, a, b, ops.proj, ops.adj)
        if k == cfg.n_blocks - 1:
            break  # final z, f are never consumed; x is the output
        z = _dm_tensor(x, f, cfg.transform, layers, plan, thr, ops.haar_ops)
        f = _em_tensor(f, x, z, eta)
    return x


def _default_state(y: np.ndarray, geom: FanBeamGeometry,
                   cfg: SugarConfig) -> SugarState:
    x0 = fbp(y, geom, cfg.filter_name)
    return SugarState(x=x0, z=x0.copy(), f=np.zeros_like(x0))


def sugar_forward(y: np.ndarray, geom: FanBeamGeometry, params: SugarParams,
                  init: SugarState | None = None) -> np.ndarray:
    """Run the K unrolled blocks on one sinogram and return the final x.

    ``init`` defaults to x = z = FBP(y), f = 0.  Deterministic: the same
    inputs and parameters give bit-identical outputs.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != geom.sinogram_shape:
        raise ValueError(f"sinogram shape {y.shape} does not match geometry "
                         f"{geom.sinogram_shape}")
    if init is None:
        init = _default_state(y, geom, params.config)
    if init.x.shape != (geom.image_n, geom.image_n):
        raise ValueError(f"init shape {init.x.shape} does not match image "
                         f"size {geom.image_n}")
    ops = _ForwardOps(geom, params.config)
    with ad.no_grad():
        named, net_layers = _lift_params(params, np.float64)
        out = _forward_tape(y, init, params, named, net_layers, ops, np.float64)
    return out.value


# ---------------------------------------------------------------------------
# single-update entry points (ndarray in / ndarray out)

def rm_update(state: SugarState, y: np.ndarray, geom: FanBeamGeometry,
              a: float, b: float, adjoint_mode: str = "fbp",
              filter_name: str = "ramp") -> np.ndarray:
    """One reconstruction update x - a*At(Ax - y) - b*(x - z - f)."""
    if adjoint_mode not in ADJOINT_MODES:
        raise ValueError(f"unknown adjoint_mode {adjoint_mode!r}, "
                         f"expected one of {ADJOINT_MODES}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != geom.sinogram_shape:
        raise ValueError(f"sinogram shape {y.shape} does not match geometry "
                         f"{geom.sinogram_shape}")
    if state.x.shape != (geom.image_n, geom.image_n):
        raise ValueError(f"state shape {state.x.shape} does not match image "
                         f"size {geom.image_n}")
    proj = ProjectorOperator(geom)
    adj: LinearOperator = (FbpOperator(geom, filter_name)
                           if adjoint_mode == "fbp" else TransposedOperator(proj))
    with ad.no_grad():
        out = _rm_tensor(ad.Tensor(state.x), ad.Tensor(state.z),
                         ad.Tensor(state.f), ad.Tensor(y),
                         ad.Tensor(np.asarray(float(a))),
                         ad.Tensor(np.asarray(float(b))), proj, adj)
    return out.value


def dm_update(x: np.ndarray, f: np.ndarray,
              q_params: EncoderDecoder | SparsifyingTransform | None,
              threshold: float = 0.0) -> np.ndarray:
    """One denoising update z = Q*(shrink(Q(x - f), threshold)).

    ``q_params`` selects the transform pair: an ``EncoderDecoder`` runs
    the learned path, a ``SparsifyingTransform`` the analytic path, and
    ``None`` means Q = identity (shrinkage only).
    """
    x = np.asarray(x, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if x.shape != f.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs f {f.shape}")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    n = x.shape[0]
    thr = ad.Tensor(np.asarray(float(threshold)))
    with ad.no_grad():
        xt, ft = ad.Tensor(x), ad.Tensor(f)
        if isinstance(q_params, EncoderDecoder):
            if n % q_params.downsampling_factor:
                raise ValueError(
                    f"image size {n} not divisible by the encoder-decoder "
                    f"downsampling factor {q_params.downsampling_factor}")
            layers = [_lift_layer(layer, np.float64) for layer in q_params.layers]
            out = _dm_tensor(xt, ft, "learned", layers, q_params.plan, thr, None)
        elif isinstance(q_params, SparsifyingTransform):
            op = TransformOperator(q_params, n)
            out = _dm_tensor(xt, ft, "haar", None, None, thr,
                             (op, TransposedOperator(op)))
        elif q_params is None:
            out = _dm_tensor(xt, ft, "identity", None, None, thr, None)
        else:
            raise TypeError(f"unsupported q_params type {type(q_params).__name__}")
    return out.value


def em_update(f: np.ndarray, x: np.ndarray, z: np.ndarray,
              eta: float) -> np.ndarray:
    """One feedback update f - eta * (x - z)."""
    f = np.asarray(f, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not (f.shape == x.shape == z.shape):
        raise ValueError(f"shape mismatch: f {f.shape}, x {x.shape}, z {z.shape}")
    with ad.no_grad():
        out = _em_tensor(ad.Tensor(f), ad.Tensor(x), ad.Tensor(z),
                         ad.Tensor(np.asarray(float(eta))))
    return out.value


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    """Adam settings: step schedule multiplies the rate by ``lr_decay``
    every ``schedule_step_epochs`` epochs; ``precision`` selects the
    forward/backward arithmetic (master weights stay double)."""

    epochs: int = 10
    learning_rate: float = 2.5e-4
    lr_decay: float = 0.8
    schedule_step_epochs: int = 5
    batch_size: int = 1
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.schedule_step_epochs < 1:
            raise ValueError("schedule_step_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}, "
                             f"expected one of {PRECISIONS}")


class TrainingFailure(RuntimeError):
    """Raised when the loss or parameters go non-finite; carries the
    per-epoch loss history accumulated so far."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


def train_sugar(dataset, geom: FanBeamGeometry, cfg: TrainConfig,
                init: SugarParams,
                x0_images: list[np.ndarray] | None = None
                ) -> tuple[SugarParams, list[float]]:
    """Fit the unrolled network to (sinogram, truth) pairs by Adam on MSE.

    ``init`` is not modified; a trained copy is returned together with
    the per-epoch mean loss history.  ``x0_images`` optionally overrides
    the FBP starting image per sample (used by the refinement stage,
    which starts from the upsampled coarse reconstruction).  Fixed seed
    means reproducible loss histories and parameter trajectories.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must not be empty")
    if x0_images is not None and len(x0_images) != len(dataset):
        raise ValueError(f"{len(x0_images)} starting images for "
                         f"{len(dataset)} samples")
    params = copy.deepcopy(init)
    params.validate()
    dtype = np.float64 if cfg.precision == "double" else np.float32
    ops = _ForwardOps(geom, params.config)

    n_img = geom.image_n
    ys, truths, inits = [], [], []
    for idx, (y, truth) in enumerate(dataset):
        y = np.asarray(y, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        if y.shape != geom.sinogram_shape:
            raise ValueError(f"sample {idx}: sinogram shape {y.shape} does "
                             f"not match geometry {geom.sinogram_shape}")
        if truth.shape != (n_img, n_img):
            raise ValueError(f"sample {idx}: truth shape {truth.shape} does "
                             f"not match image size {n_img}")
        if x0_images is None:
            state = _default_state(y, geom, params.config)
        else:
            state = SugarState(x=np.asarray(x0_images[idx]),
                               z=np.asarray(x0_images[idx]).copy(),
                               f=np.zeros((n_img, n_img)))
        ys.append(y.astype(dtype))
        truths.append(truth.astype(dtype))
        inits.append(state)

    master = params.named_arrays()
    trainable = [name for name in master if params.is_trainable(name)]
    adam_m = {name: np.zeros_like(master[name]) for name in trainable}
    adam_v = {name: np.zeros_like(master[name]) for name in trainable}
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    step = 0

    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** (epoch // cfg.schedule_step_epochs)
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            named, net_layers = _lift_params(params, dtype)
            for idx in batch:
                out = _forward_tape(ys[idx], inits[idx], params, named,
                                    net_layers, ops, dtype)
                loss = ad.mse(out, truths[idx])
                loss.backward()
                losses.append(float(loss.value))
            if not np.all(np.isfinite(losses[-len(batch):])):
                raise TrainingFailure(
                    f"non-finite loss in epoch {epoch}", history)
            step += 1
            bc1 = 1.0 - beta1 ** step
            bc2 = 1.0 - beta2 ** step
            for name in trainable:
                t = named[name]
                g = np.zeros_like(master[name]) if t.grad is None else \
                    np.asarray(t.grad, dtype=np.float64) / len(batch)
                adam_m[name] = beta1 * adam_m[name] + (1 - beta1) * g
                adam_v[name] = beta2 * adam_v[name] + (1 - beta2) * g * g
                upd = lr * (adam_m[name] / bc1) / (np.sqrt(adam_v[name] / bc2)
                                                   + eps_adam)
                np.subtract(master[name], upd, out=master[name])
            for blk in params.blocks:
                np.maximum(blk.threshold, 0.0, out=blk.threshold)
        epoch_loss = float(np.mean(losses))
        history.append(epoch_loss)
        for name, arr in master.items():
            if not np.all(np.isfinite(arr)):
                raise TrainingFailure(
                    f"non-finite parameter {name} after epoch {epoch}", history)
        logger.info("epoch %d/%d: lr %.3e, mean loss %.6e",
                    epoch + 1, cfg.epochs, lr, epoch_loss)
    return params, history


# ---------------------------------------------------------------------------
# resampling and the two-stage pipeline

def upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling by an integer factor (1 is identity).

    Sample positions treat pixels as cells: output center (i + 0.5)/f - 0.5
    in input coordinates, clamped at the borders.  Linear ramps are
    reproduced exactly away from the clamped edge band.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {x.shape}")
    if int(factor) != factor or factor < 1:
        raise ValueError("factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return x.copy()
    n_r, n_c = x.shape
    if n_r < 2 or n_c < 2:
        return np.full((n_r * factor, n_c * factor), float(x.flat[0]))

    def axis_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
        src = (np.arange(n * factor) + 0.5) / factor - 0.5
        src = np.clip(src, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(src).astype(np.int64), n - 2)
        return i0, src - i0

    r0, wr = axis_weights(n_r)
    c0, wc = axis_weights(n_c)
    rows = x[:, c0] * (1.0 - wc) + x[:, c0 + 1] * wc
    return rows[r0, :] * (1.0 - wr)[:, None] + rows[r0 + 1, :] * wr[:, None]


def downsample_mean(x: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling by an integer factor."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {x.shape}")
    if int(factor) != factor or factor < 1:
        raise ValueError("factor must be a positive integer")
    factor = int(factor)
    n_r, n_c = x.shape
    if n_r % factor or n_c % factor:
        raise ValueError(f"shape {x.shape} not divisible by factor {factor}")
    return x.reshape(n_r // factor, factor, n_c // factor, factor).mean(axis=(1, 3))


def two_stage_recon(y: np.ndarray, geom: FanBeamGeometry,
                    le_params: SugarParams, hr_params: SugarParams,
                    le_n: int, return_intermediate: bool = False):
    """Coarse-then-fine reconstruction against one measured sinogram.

    Stage 1 reconstructs on an ``le_n`` grid (same physical field of
    view), the result is upsampled bilinearly, and stage 2 runs the
    fine-grid network initialized at the upsampled image with data
    consistency against the original ``y``.  With
    ``return_intermediate`` the coarse and upsampled images are returned
    alongside the final one.
    """
    if le_n > geom.image_n or geom.image_n % le_n:
        raise ValueError(f"coarse size {le_n} must divide image size "
                         f"{geom.image_n}")
    le_geom = with_image_grid(geom, le_n)
    x_le = sugar_forward(y, le_geom, le_params)
    x_up = upsample(x_le, geom.image_n // le_n)
    init = SugarState(x=x_up, z=x_up.copy(), f=np.zeros_like(x_up))
    x_hr = sugar_forward(y, geom, hr_params, init=init)
    if return_intermediate:
        return x_hr, x_up, x_le
    return x_hr


# ---------------------------------------------------------------------------
# parameter serialization

_MAGIC = b"SUGR"
_FORMAT_VERSION = 1


def save_params(path, params: SugarParams) -> None:
    """Write parameters to a versioned binary file.

    Layout: magic "SUGR", u32 format version, u32 block count, u32
    manifest length, JSON manifest (config plus ordered array names and
    shapes), then the arrays concatenated as little-endian float64.
    """
    params.validate()
    named = params.named_arrays()
    manifest = {
        "config": params.config.to_dict(),
        "arrays": [[name, list(arr.shape)] for name, arr in named.items()],
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _MAGIC, _FORMAT_VERSION,
                             params.config.n_blocks, len(blob)))
        fh.write(blob)
        for arr in named.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _build_structure(cfg: SugarConfig) -> SugarParams:
    """Zero-valued parameter containers matching the config's shapes."""
    blocks = [BlockParams(a=np.zeros(()), b=np.zeros(()), eta=np.zeros(()),
                          threshold=np.zeros(()))
              for _ in range(cfg.n_blocks)]
    nets: list[EncoderDecoder] = []
    if cfg.transform == "learned":
        plan, specs = _architecture(cfg)
        n_nets = 1 if cfg.shared_weights else cfg.n_blocks
        k = cfg.kernel_size
        for _ in range(n_nets):
            layers = [ConvLayer(weight=np.zeros((c_out, c_in, k, k)),
                                bias=np.zeros(c_out),
                                scale=np.zeros(c_out) if affine else None,
                                shift=np.zeros(c_out) if affine else None,
                                relu=act)
                      for c_in, c_out, affine, act in specs]
            nets.append(EncoderDecoder(layers=layers, plan=plan))
    return SugarParams(config=cfg, blocks=blocks, nets=nets)


def load_params(path) -> SugarParams:
    """Read parameters written by ``save_params``; raises FormatError on
    any structural mismatch."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.calcsize("<4sIII")
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header")
    magic, version, n_blocks, blob_len = struct.unpack("<4sIII", raw[:head])
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if len(raw) < head + blob_len:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[head:head + blob_len].decode("utf-8"))
        cfg = SugarConfig.from_dict(manifest["config"])
        listed = [(str(name), tuple(int(s) for s in shape))
                  for name, shape in manifest["arrays"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt manifest ({exc})") from exc
    if cfg.n_blocks != n_blocks:
        raise FormatError(f"{path}: header block count {n_blocks} does not "
                          f"match config {cfg.n_blocks}")
    params = _build_structure(cfg)
    named = params.named_arrays()
    if [name for name, _ in listed] != list(named):
        raise FormatError(f"{path}: manifest arrays do not match the "
                          f"config's parameter layout")
    offset = head + blob_len
    for name, shape in listed:
        arr = named[name]
        if shape != arr.shape:
            raise FormatError(f"{path}: array {name} has shape {shape}, "
                              f"expected {arr.shape}")
        nbytes = arr.size * 8
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated payload at {name}")
        arr[...] = np.frombuffer(raw[offset:offset + nbytes],
                                 dtype="<f8").reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    params.validate()
    return params
