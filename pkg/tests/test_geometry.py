"""Geometry construction, view subsampling, and validation contracts."""

import math

import numpy as np
import pytest

from fanct.geometry import (
    FanBeamGeometry,
    make_clinical_geometry,
    make_desk_geometry,
    subsample_views,
    uniform_view_angles,
    with_image_grid,
)


class TestClinicalGeometry:
    def test_distances(self):
        g = make_clinical_geometry()
        assert g.source_to_detector_mm == 1085.6
        assert g.source_to_isocenter_mm == 595.0

    def test_detector_array(self):
        g = make_clinical_geometry()
        assert g.n_detectors == 736
        assert g.detector_pitch_mm == 1.2858
        assert g.detector_angular_offset_rad == 0.0013

    def test_view_count_and_span(self):
        g = make_clinical_geometry()
        assert len(g.view_angles_rad) == 946
        span = g.view_angles_rad[-1] - g.view_angles_rad[0]
        assert abs(span - math.radians(151.875)) < 1e-9

    def test_image_grid(self):
        g = make_clinical_geometry()
        assert g.image_n == 512
        assert g.pixel_size_mm == 0.9


class TestUniformViewAngles:
    def test_partial_arc_spans_exactly(self):
        angles = uniform_view_angles(36, 151.875)
        assert abs((angles[-1] - angles[0]) - math.radians(151.875)) < 1e-12

    def test_full_turn_excludes_endpoint(self):
        angles = uniform_view_angles(360, 360.0)
        assert len(angles) == 360
        # last angle one step short of 2*pi
        assert abs(angles[-1] - (2 * math.pi - 2 * math.pi / 360)) < 1e-12

    def test_single_view(self):
        assert uniform_view_angles(1, 90.0) == (0.0,)

    @pytest.mark.parametrize("n,arc", [(0, 90.0), (5, 0.0), (5, 361.0), (5, -10.0)])
    def test_invalid_arguments(self, n, arc):
        with pytest.raises(ValueError):
            uniform_view_angles(n, arc)


class TestSubsampleViews:
    def test_count_and_first_angle(self):
        g = make_clinical_geometry()
        s = subsample_views(g, 36)
        assert len(s.view_angles_rad) == 36
        assert s.view_angles_rad[0] == g.view_angles_rad[0]

    def test_identity_when_keeping_all(self):
        g = make_desk_geometry(32, n_views=8)
        assert subsample_views(g, 8).view_angles_rad == g.view_angles_rad

    def test_stride_indices(self):
        g = make_desk_geometry(32, n_views=8)
        s = subsample_views(g, 4)
        expected = tuple(g.view_angles_rad[i] for i in (0, 2, 4, 6))
        assert s.view_angles_rad == expected

    def test_subset_property(self):
        g = make_clinical_geometry()
        s = subsample_views(g, 100)
        assert len(s.view_angles_rad) == 100
        assert set(s.view_angles_rad) <= set(g.view_angles_rad)
        assert list(s.view_angles_rad) == sorted(s.view_angles_rad)

    def test_other_fields_unchanged(self):
        g = make_clinical_geometry()
        s = subsample_views(g, 36)
        assert s.n_detectors == g.n_detectors
        assert s.image_n == g.image_n
        assert s.detector_pitch_mm == g.detector_pitch_mm

    @pytest.mark.parametrize("keep", [0, -1, 947])
    def test_keep_out_of_range(self, keep):
        with pytest.raises(ValueError):
            subsample_views(make_clinical_geometry(), keep)


class TestDeskGeometry:
    def test_view_span(self):
        g = make_desk_geometry(128, n_views=36, arc_deg=151.875)
        assert len(g.view_angles_rad) == 36
        span = g.view_angles_rad[-1] - g.view_angles_rad[0]
        assert abs(span - math.radians(151.875)) < 1e-12

    def test_full_scan_variant(self):
        g = make_desk_geometry(64, n_views=360, arc_deg=360.0)
        assert len(g.view_angles_rad) == 360
        assert g.image_n == 64

    def test_fan_covers_field_of_view(self):
        g = make_desk_geometry(128, n_views=36, arc_deg=151.875)
        r_fov = 64 * g.pixel_size_mm
        needed_half_angle = math.asin(r_fov / g.source_to_isocenter_mm)
        half_fan = (g.n_detectors / 2) * g.detector_pitch_mm / g.source_to_detector_mm
        assert half_fan >= needed_half_angle

    def test_distance_ratio_matches_full_size(self):
        g = make_desk_geometry(64)
        full = make_clinical_geometry()
        assert g.source_to_detector_mm / g.source_to_isocenter_mm == pytest.approx(
            full.source_to_detector_mm / full.source_to_isocenter_mm)

    @pytest.mark.parametrize("kwargs", [
        {"image_n": 1},
        {"image_n": 64, "n_views": 0},
        {"image_n": 64, "n_views": 36, "arc_deg": 0.0},
        {"image_n": 64, "n_views": 36, "arc_deg": 400.0},
    ])
    def test_invalid_arguments(self, kwargs):
        with pytest.raises(ValueError):
            make_desk_geometry(**kwargs)


class TestWithImageGrid:
    def test_preserves_field_of_view(self):
        g = make_desk_geometry(128, n_views=36)
        h = with_image_grid(g, 64)
        assert h.image_n == 64
        assert h.image_n * h.pixel_size_mm == pytest.approx(g.image_n * g.pixel_size_mm)

    def test_views_and_detectors_unchanged(self):
        g = make_desk_geometry(128, n_views=36)
        h = with_image_grid(g, 64)
        assert h.view_angles_rad == g.view_angles_rad
        assert h.n_detectors == g.n_detectors


class TestValidation:
    def _fields(self):
        g = make_desk_geometry(32, n_views=4)
        return {
            "source_to_detector_mm": g.source_to_detector_mm,
            "source_to_isocenter_mm": g.source_to_isocenter_mm,
            "n_detectors": g.n_detectors,
            "detector_pitch_mm": g.detector_pitch_mm,
            "detector_angular_offset_rad": g.detector_angular_offset_rad,
            "view_angles_rad": g.view_angles_rad,
            "image_n": g.image_n,
            "pixel_size_mm": g.pixel_size_mm,
        }

    def test_detector_behind_source_rejected(self):
        fields = self._fields()
        fields["source_to_detector_mm"] = fields["source_to_isocenter_mm"] - 1.0
        with pytest.raises(ValueError):
            FanBeamGeometry(**fields)

    def test_decreasing_angles_rejected(self):
        fields = self._fields()
        fields["view_angles_rad"] = (0.2, 0.1)
        with pytest.raises(ValueError):
            FanBeamGeometry(**fields)

    def test_nonfinite_angle_rejected(self):
        fields = self._fields()
        fields["view_angles_rad"] = (0.0, float("nan"))
        with pytest.raises(ValueError):
            FanBeamGeometry(**fields)

    @pytest.mark.parametrize("key,value", [
        ("n_detectors", 0),
        ("image_n", 1),
        ("detector_pitch_mm", 0.0),
        ("pixel_size_mm", -1.0),
    ])
    def test_positive_count_invariants(self, key, value):
        fields = self._fields()
        fields[key] = value
        with pytest.raises(ValueError):
            FanBeamGeometry(**fields)

    def test_immutable(self):
        g = make_desk_geometry(32, n_views=4)
        with pytest.raises(Exception):
            g.image_n = 64

    def test_sinogram_shape(self):
        g = make_desk_geometry(32, n_views=4)
        assert g.sinogram_shape == (4, g.n_detectors)
