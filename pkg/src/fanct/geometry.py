"""Fan-beam acquisition geometry with a curved (equiangular) detector.

The scanner model is a point source rotating on a circle of radius
``source_to_isocenter_mm`` around the origin, with a curved detector at
``source_to_detector_mm`` from the source.  Detector cells are spaced
uniformly in fan angle; the fan angle of a ray is measured from the
central ray (source toward isocenter), positive counterclockwise.

Image conventions used throughout the package: square ``image_n`` x
``image_n`` grid centered on the isocenter, pixel centers at
``x_j = (j - (n-1)/2) * pixel_size_mm`` for column ``j`` (x grows with
column index) and ``y_i = ((n-1)/2 - i) * pixel_size_mm`` for row ``i``
(row 0 is the top of the image, y grows upward).

Public functions
----------------
make_clinical_geometry : full-size scanner description
make_desk_geometry    : reduced geometry for desk-scale experiments
subsample_views        : keep an evenly strided subset of views
uniform_view_angles    : evenly spaced rotation angles for a given arc
with_image_grid        : same scanner, different reconstruction grid
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger(__name__)

# Full-size scan parameters (curved-detector clinical scanner).
CLINICAL_SOURCE_TO_DETECTOR_MM = 1085.6
CLINICAL_SOURCE_TO_ISOCENTER_MM = 595.0
CLINICAL_N_DETECTORS = 736
CLINICAL_DETECTOR_PITCH_MM = 1.2858
CLINICAL_DETECTOR_OFFSET_RAD = 0.0013
CLINICAL_N_VIEWS = 946
CLINICAL_ARC_DEG = 151.875
CLINICAL_IMAGE_N = 512
CLINICAL_PIXEL_SIZE_MM = 0.9

# Field of view preserved by the desk-scale geometries (512 * 0.9 mm).
FOV_MM = CLINICAL_IMAGE_N * CLINICAL_PIXEL_SIZE_MM


@dataclass(frozen=True)
class FanBeamGeometry:
    """Complete description of one fan-beam acquisition.

    ``view_angles_rad`` is stored as a tuple so instances are hashable
    and can key operator caches.
    """

    source_to_detector_mm: float
    source_to_isocenter_mm: float
    n_detectors: int
    detector_pitch_mm: float
    detector_angular_offset_rad: float
    view_angles_rad: tuple[float, ...]
    image_n: int
    pixel_size_mm: float

    def __post_init__(self) -> None:
        if self.source_to_detector_mm <= 0 or self.source_to_isocenter_mm <= 0:
            raise ValueError("source distances must be positive")
        if self.source_to_isocenter_mm >= self.source_to_detector_mm:
            raise ValueError("isocenter must lie between source and detector")
        if self.n_detectors < 1:
            raise ValueError("need at least one detector cell")
        if self.detector_pitch_mm <= 0:
            raise ValueError("detector pitch must be positive")
        if len(self.view_angles_rad) < 1:
            raise ValueError("need at least one view")
        angles = np.asarray(self.view_angles_rad, dtype=np.float64)
        if not np.all(np.isfinite(angles)):
            raise ValueError("view angles must be finite")
        if angles.size > 1 and not np.all(np.diff(angles) > 0):
            raise ValueError("view angles must be strictly increasing")
        if self.image_n < 2:
            raise ValueError("image must be at least 2x2")
        if self.pixel_size_mm <= 0:
            raise ValueError("pixel size must be positive")
        # Source circle must stay outside the reconstructed field of view.
        if self.source_to_isocenter_mm <= self.fov_radius_mm / math.sqrt(2.0):
            raise ValueError("source circle intersects the image grid")

    # ---- derived quantities ------------------------------------------------

    @property
    def n_views(self) -> int:
        return len(self.view_angles_rad)

    @property
    def fan_angle_spacing_rad(self) -> float:
        """Angular spacing between adjacent detector cells, seen from the source."""
        return self.detector_pitch_mm / self.source_to_detector_mm

    @property
    def fan_angles_rad(self) -> np.ndarray:
        """Fan angle of every detector cell center, shape ``(n_detectors,)``."""
        d = np.arange(self.n_detectors, dtype=np.float64)
        centered = d - (self.n_detectors - 1) / 2.0
        return self.detector_angular_offset_rad + centered * self.fan_angle_spacing_rad

    @property
    def half_fan_angle_rad(self) -> float:
        """Half opening angle of the detector arc (offset ignored)."""
        return self.n_detectors * self.fan_angle_spacing_rad / 2.0

    @property
    def view_angles(self) -> np.ndarray:
        return np.asarray(self.view_angles_rad, dtype=np.float64)

    @property
    def view_spacing_rad(self) -> float:
        """Rotation step between consecutive views (uniform sampling assumed)."""
        if self.n_views < 2:
            return 2.0 * math.pi
        return float(self.view_angles_rad[1] - self.view_angles_rad[0])

    @property
    def fov_mm(self) -> float:
        return self.image_n * self.pixel_size_mm

    @property
    def fov_radius_mm(self) -> float:
        return self.fov_mm / 2.0

    def covers_fov(self) -> bool:
        """True when the fan is wide enough to see the inscribed field-of-view circle."""
        needed = math.asin(min(1.0, self.fov_radius_mm / self.source_to_isocenter_mm))
        return self.half_fan_angle_rad >= needed

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_detectors)

    # ---- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "source_to_detector_mm": self.source_to_detector_mm,
            "source_to_isocenter_mm": self.source_to_isocenter_mm,
            "n_detectors": self.n_detectors,
            "detector_pitch_mm": self.detector_pitch_mm,
            "detector_angular_offset_rad": self.detector_angular_offset_rad,
            "view_angles_rad": list(self.view_angles_rad),
            "image_n": self.image_n,
            "pixel_size_mm": self.pixel_size_mm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FanBeamGeometry":
        return cls(
            source_to_detector_mm=float(d["source_to_detector_mm"]),
            source_to_isocenter_mm=float(d["source_to_isocenter_mm"]),
            n_detectors=int(d["n_detectors"]),
            detector_pitch_mm=float(d["detector_pitch_mm"]),
            detector_angular_offset_rad=float(d["detector_angular_offset_rad"]),
            view_angles_rad=tuple(float(a) for a in d["view_angles_rad"]),
            image_n=int(d["image_n"]),
            pixel_size_mm=float(d["pixel_size_mm"]),
        )


def uniform_view_angles(n_views: int, arc_deg: float, start_deg: float = 0.0) -> tuple[float, ...]:
    """Evenly spaced rotation angles in radians.

    For a full 360 degree turn the end point duplicates the start, so the
    spacing is ``arc / n_views`` with the end point excluded.  For a partial
    arc both end points are measured and the spacing is ``arc / (n_views-1)``,
    which makes the span of a short scan exactly ``arc_deg``.
    """
    if n_views < 1:
        raise ValueError("n_views must be positive")
    if not 0.0 < arc_deg <= 360.0:
        raise ValueError("arc_deg must lie in (0, 360]")
    start = math.radians(start_deg)
    if n_views == 1:
        return (start,)
    full_turn = abs(arc_deg - 360.0) < 1e-12
    denom = n_views if full_turn else n_views - 1
    step = math.radians(arc_deg) / denom
    return tuple(start + k * step for k in range(n_views))


def make_clinical_geometry(image_n: int = CLINICAL_IMAGE_N,
                           pixel_size_mm: float = CLINICAL_PIXEL_SIZE_MM) -> FanBeamGeometry:
    """Full-size short-scan geometry: 946 views over 151.875 degrees."""
    return FanBeamGeometry(
        source_to_detector_mm=CLINICAL_SOURCE_TO_DETECTOR_MM,
        source_to_isocenter_mm=CLINICAL_SOURCE_TO_ISOCENTER_MM,
        n_detectors=CLINICAL_N_DETECTORS,
        detector_pitch_mm=CLINICAL_DETECTOR_PITCH_MM,
        detector_angular_offset_rad=CLINICAL_DETECTOR_OFFSET_RAD,
        view_angles_rad=uniform_view_angles(CLINICAL_N_VIEWS, CLINICAL_ARC_DEG),
        image_n=image_n,
        pixel_size_mm=pixel_size_mm,
    )


def make_desk_geometry(image_n: int,
                       n_views: int = 36,
                       arc_deg: float = CLINICAL_ARC_DEG) -> FanBeamGeometry:
    """Reduced geometry for desk-scale runs.

    Keeps the full-size source distances (hence their ratio) and the
    460.8 mm field of view; scales the pixel size and detector count with
    ``image_n``.  Two detector cells per image pixel keep the angular
    sampling fine enough for quantitative filtered backprojection, and
    the detector arc is sized 12% wider than the field-of-view circle so
    every view covers the inscribed circle of the image.

    Parameters
    ----------
    image_n : reconstruction grid size (e.g. 64 or 128).
    n_views : number of projections.
    arc_deg : angular span of the scan in degrees.
    """
    n_detectors = 2 * image_n
    needed = 2.0 * math.asin((FOV_MM / 2.0) / CLINICAL_SOURCE_TO_ISOCENTER_MM)
    fan_arc = 1.12 * needed
    pitch = fan_arc * CLINICAL_SOURCE_TO_DETECTOR_MM / n_detectors
    return FanBeamGeometry(
        source_to_detector_mm=CLINICAL_SOURCE_TO_DETECTOR_MM,
        source_to_isocenter_mm=CLINICAL_SOURCE_TO_ISOCENTER_MM,
        n_detectors=n_detectors,
        detector_pitch_mm=pitch,
        detector_angular_offset_rad=0.0,
        view_angles_rad=uniform_view_angles(n_views, arc_deg),
        image_n=image_n,
        pixel_size_mm=FOV_MM / image_n,
    )


def subsample_views(geom: FanBeamGeometry, keep: int) -> FanBeamGeometry:
    """Keep ``keep`` views starting at index 0 with a uniform integer stride.

    The stride is ``floor(n_views / keep)``; the kept indices are
    ``0, s, 2s, ..., (keep-1)*s``.  Raises ``ValueError`` when ``keep``
    exceeds the available views.
    """
    if keep < 1:
        raise ValueError("keep must be positive")
    if keep > geom.n_views:
        raise ValueError(f"cannot keep {keep} of {geom.n_views} views")
    stride = geom.n_views // keep
    idx = [k * stride for k in range(keep)]
    logger.info("subsampling views: keeping %d of %d, stride %d, last index %d",
                keep, geom.n_views, stride, idx[-1])
    angles = tuple(geom.view_angles_rad[i] for i in idx)
    return replace(geom, view_angles_rad=angles)


def view_subsample_indices(n_views: int, keep: int) -> np.ndarray:
    """Indices selected by :func:`subsample_views`, for slicing sinograms."""
    if keep < 1 or keep > n_views:
        raise ValueError(f"cannot keep {keep} of {n_views} views")
    stride = n_views // keep
    return np.arange(keep) * stride


def with_image_grid(geom: FanBeamGeometry, image_n: int) -> FanBeamGeometry:
    """Same scanner and views, different reconstruction grid.

    The pixel size is rescaled so the physical field of view is unchanged;
    used to pair a low-resolution stage with a high-resolution stage.
    """
    new_pixel = geom.pixel_size_mm * geom.image_n / image_n
    return replace(geom, image_n=image_n, pixel_size_mm=new_pixel)
