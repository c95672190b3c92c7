"""Phantoms, noise models, image metrics, and file formats.

Phantom coordinates live on the symmetric unit square: pixel centers at
``x_j = (j - (n-1)/2) * (2/n)`` so even-sized grids are exactly
mirror-symmetric.  Binary image and sinogram files carry an 8-byte magic,
a version word, and a little-endian float64 payload, with a JSON sidecar
recording dimensions, pixel size, acquisition geometry, and a checksum.

Public functions
----------------
shepp_logan            : classic 10-ellipse head phantom, scaled to [0, 1]
random_ellipse_phantom : seeded piecewise-constant training phantom
add_gaussian_noise     : additive white noise on line integrals
add_poisson_noise      : photon-counting noise via Beer's law
psnr, ssim             : reference-based image quality metrics
save_image / load_image, save_sinogram / load_sinogram, save_png
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import FanBeamGeometry

__all__ = [
    "shepp_logan",
    "random_ellipse_phantom",
    "add_gaussian_noise",
    "add_poisson_noise",
    "psnr",
    "ssim",
    "FormatError",
    "save_image",
    "load_image",
    "save_sinogram",
    "load_sinogram",
    "save_png",
]

# (value, half_axis_x, half_axis_y, center_x, center_y, angle_deg)
_SHEPP_LOGAN_ELLIPSES = (
    (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
)


def _unit_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates on [-1, 1], x along columns, y up along rows."""
    c = (np.arange(n) - (n - 1) / 2.0) * (2.0 / n)
    x = c[None, :]
    y = (-c)[:, None]
    return np.broadcast_to(x, (n, n)), np.broadcast_to(y, (n, n))


def _add_ellipse(img: np.ndarray, x: np.ndarray, y: np.ndarray,
                 value: float, ax: float, ay: float,
                 cx: float, cy: float, angle_deg: float) -> None:
    phi = math.radians(angle_deg)
    xr = (x - cx) * math.cos(phi) + (y - cy) * math.sin(phi)
    yr = -(x - cx) * math.sin(phi) + (y - cy) * math.cos(phi)
    img[(xr / ax) ** 2 + (yr / ay) ** 2 <= 1.0] += value


def shepp_logan(n: int) -> np.ndarray:
    """Classic 10-ellipse head phantom on an ``n`` x ``n`` grid, range [0, 1].

    Intensities are additive over overlapping ellipses, clipped to be
    nonnegative and rescaled so the maximum is one.
    """
    if n < 2:
        raise ValueError("grid size must be at least 2")
    x, y = _unit_grid(n)
    img = np.zeros((n, n), dtype=np.float64)
    for value, ax, ay, cx, cy, ang in _SHEPP_LOGAN_ELLIPSES:
        _add_ellipse(img, x, y, value, ax, ay, cx, cy, ang)
    img = np.clip(img, 0.0, None)
    img /= img.max()
    return img


def random_ellipse_phantom(n: int, seed: int, max_ellipses: int = 7) -> np.ndarray:
    """Seeded piecewise-constant phantom of 3 to ``max_ellipses`` ellipses.

    The first ellipse is a guaranteed positive base structure; later
    ellipses may add or subtract intensity.  Half-axes span 0.08 to 0.35
    of the unit field of view and centers stay within radius 0.6, so the
    support always lies inside the scanned circle.  The result is clipped
    to [0, 1].
    """
    if n < 2:
        raise ValueError("grid size must be at least 2")
    rng = np.random.default_rng(seed)
    x, y = _unit_grid(n)
    img = np.zeros((n, n), dtype=np.float64)
    k = int(rng.integers(3, max_ellipses + 1))
    for e in range(k):
        if e == 0:
            value = float(rng.uniform(0.4, 1.0))
            ax = float(rng.uniform(0.18, 0.35))
            ay = float(rng.uniform(0.18, 0.35))
        else:
            value = float(rng.uniform(-0.4, 0.8))
            ax = float(rng.uniform(0.08, 0.35))
            ay = float(rng.uniform(0.08, 0.35))
        r = float(rng.uniform(0.0, 0.6))
        th = float(rng.uniform(0.0, 2.0 * math.pi))
        ang = float(rng.uniform(0.0, 180.0))
        _add_ellipse(img, x, y, value, ax, ay, r * math.cos(th), r * math.sin(th), ang)
    return np.clip(img, 0.0, 1.0)


def add_gaussian_noise(sino: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Additive white Gaussian noise of standard deviation ``level``."""
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    rng = np.random.default_rng(seed)
    sino = np.asarray(sino, dtype=np.float64)
    return sino + level * rng.standard_normal(sino.shape)


def add_poisson_noise(sino: np.ndarray, incident_counts: float,
                      seed: int) -> tuple[np.ndarray, dict]:
    """Photon-counting noise on line integrals.

    Expected counts per ray are ``incident_counts * exp(-sino)``; a
    Poisson draw is converted back to line integrals.  Zero draws cannot
    be log-transformed, so they are clamped to one count; the returned
    info dict reports how many rays were clamped.
    """
    if incident_counts <= 0:
        raise ValueError("incident photon count must be positive")
    rng = np.random.default_rng(seed)
    sino = np.asarray(sino, dtype=np.float64)
    expected = incident_counts * np.exp(-sino)
    counts = rng.poisson(expected).astype(np.float64)
    n_clamped = int(np.count_nonzero(counts < 1.0))
    counts = np.maximum(counts, 1.0)
    noisy = np.log(incident_counts) - np.log(counts)
    return noisy, {"n_clamped": n_clamped, "incident_counts": float(incident_counts)}


# ---- metrics ----------------------------------------------------------------

PSNR_CAP_DB = 300.0


def psnr(x: np.ndarray, ref: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB, peak taken from the reference.

    Identical arrays return the cap value ``PSNR_CAP_DB`` instead of
    infinity so reports stay finite.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    peak = float(ref.max())
    if peak <= 0.0:
        raise ValueError("reference image has no positive values")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def ssim(x: np.ndarray, ref: np.ndarray) -> float:
    """Mean structural similarity with an 11-tap Gaussian window (sigma 1.5).

    Uses population (not sample) statistics, the K1=0.01 / K2=0.03
    stabilizers, the reference dynamic range, and discards a 5-pixel
    border where the window is truncated.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if min(x.shape) < 11:
        raise ValueError("image too small for the 11x11 window")
    dr = float(ref.max() - ref.min())
    if dr <= 0.0:
        raise ValueError("reference image has zero dynamic range")

    def blur(a: np.ndarray) -> np.ndarray:
        return ndimage.gaussian_filter(a, sigma=1.5, mode="nearest", truncate=3.5)

    c1 = (0.01 * dr) ** 2
    c2 = (0.03 * dr) ** 2
    mu_x = blur(x)
    mu_r = blur(ref)
    xx = blur(x * x) - mu_x * mu_x
    rr = blur(ref * ref) - mu_r * mu_r
    xr = blur(x * ref) - mu_x * mu_r
    num = (2.0 * mu_x * mu_r + c1) * (2.0 * xr + c2)
    den = (mu_x ** 2 + mu_r ** 2 + c1) * (xx + rr + c2)
    smap = num / den
    pad = 5
    return float(smap[pad:-pad, pad:-pad].mean())


# ---- file formats -----------------------------------------------------------

class FormatError(Exception):
    """Raised when a file fails magic, dimension, or checksum validation."""


_MAGIC_IMAGE = b"FCTIMG\x00\x00"
_MAGIC_SINO = b"FCTSIN\x00\x00"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI4x")


def _write_payload(path: Path, magic: bytes, values: np.ndarray) -> str:
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, _FORMAT_VERSION))
        fh.write(payload)
    return hashlib.sha256(payload).hexdigest()


def _read_payload(path: Path, magic: bytes, shape: tuple[int, ...],
                  checksum: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got_magic, version = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: bad magic {got_magic!r}")
    if version != _FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER.size:]
    expected = 8 * int(np.prod(shape))
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, "
                          f"sidecar dims imply {expected}")
    if hashlib.sha256(payload).hexdigest() != checksum:
        raise FormatError(f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_image(path: str | Path, values: np.ndarray, pixel_size_mm: float,
               meta: dict | None = None) -> None:
    """Write a 2-D image with its JSON sidecar (dims, pixel size, checksum)."""
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected a 2-D image")
    digest = _write_payload(path, _MAGIC_IMAGE, values)
    sidecar = {
        "kind": "image",
        "version": _FORMAT_VERSION,
        "shape": list(values.shape),
        "pixel_size_mm": float(pixel_size_mm),
        "sha256": digest,
        "meta": meta or {},
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_image(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read an image written by :func:`save_image`; returns (values, sidecar)."""
    path = Path(path)
    try:
        sidecar = json.loads(_sidecar_path(path).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing sidecar {_sidecar_path(path)}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt sidecar") from exc
    if sidecar.get("kind") != "image":
        raise FormatError(f"{path}: sidecar kind {sidecar.get('kind')!r} is not image")
    values = _read_payload(path, _MAGIC_IMAGE, tuple(sidecar["shape"]),
                           sidecar["sha256"])
    return values, sidecar


def save_sinogram(path: str | Path, values: np.ndarray, geom: FanBeamGeometry,
                  meta: dict | None = None) -> None:
    """Write a sinogram with its geometry in the JSON sidecar."""
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != geom.sinogram_shape:
        raise ValueError(f"sinogram shape {values.shape} does not match geometry "
                         f"{geom.sinogram_shape}")
    digest = _write_payload(path, _MAGIC_SINO, values)
    sidecar = {
        "kind": "sinogram",
        "version": _FORMAT_VERSION,
        "shape": list(values.shape),
        "geometry": geom.to_dict(),
        "sha256": digest,
        "meta": meta or {},
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_sinogram(path: str | Path) -> tuple[np.ndarray, FanBeamGeometry, dict]:
    """Read a sinogram written by :func:`save_sinogram`."""
    path = Path(path)
    try:
        sidecar = json.loads(_sidecar_path(path).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: missing sidecar {_sidecar_path(path)}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt sidecar") from exc
    if sidecar.get("kind") != "sinogram":
        raise FormatError(f"{path}: sidecar kind {sidecar.get('kind')!r} is not sinogram")
    values = _read_payload(path, _MAGIC_SINO, tuple(sidecar["shape"]),
                           sidecar["sha256"])
    geom = FanBeamGeometry.from_dict(sidecar["geometry"])
    return values, geom, sidecar


def save_png(path: str | Path, values: np.ndarray,
             window_center: float | None = None,
             window_width: float | None = None) -> None:
    """Export an 8-bit grayscale PNG with optional window center/width.

    Without a window the full value range is mapped to [0, 255].
    """
    from PIL import Image as PILImage

    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("expected a 2-D image")
    if window_center is None and window_width is None:
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            hi = lo + 1.0
    else:
        if window_center is None or window_width is None:
            raise ValueError("window center and width must be given together")
        if window_width <= 0:
            raise ValueError("window width must be positive")
        lo = window_center - window_width / 2.0
        hi = window_center + window_width / 2.0
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    img8 = (scaled * 255.0).round().astype(np.uint8)
    PILImage.fromarray(img8, mode="L").save(Path(path), format="PNG")
