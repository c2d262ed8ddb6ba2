import math

import numpy as np
import pytest

from defectometer.core import BBox, DefectClass, GrayImage
from defectometer.geometry import (
    DegenerateFit,
    EllipseFit,
    NoForeground,
    PatchTooSmall,
    analyze_defect,
    diameter_of,
    fit_ellipse,
    segment_defect,
)
from defectometer.synth import DefectSpec, Morphology, SceneSpec, generate_scene
from oracles import ellipse_points


class TestFitEllipse:
    def test_circle_recovered(self):
        pts = ellipse_points(10, 10, 7, 7, 0.0)
        e = fit_ellipse(pts)
        assert abs(e.a - 7) < 1e-6 and abs(e.b - 7) < 1e-6
        assert abs(e.cx - 10) < 1e-6 and abs(e.cy - 10) < 1e-6

    def test_axis_aligned_recovered(self):
        e = fit_ellipse(ellipse_points(0, 0, 10, 5, 0.0))
        assert abs(e.a - 10) < 1e-6 and abs(e.b - 5) < 1e-6
        assert min(e.theta, math.pi - e.theta) < 1e-6

    def test_rotated_recovered(self):
        e = fit_ellipse(ellipse_points(0, 0, 10, 5, math.pi / 4))
        assert abs(e.theta - math.pi / 4) < 1e-6

    def test_randomized_exact_recovery(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            a = rng.uniform(4, 50)
            b = rng.uniform(2, a)
            theta = rng.uniform(0, math.pi)
            cx, cy = rng.uniform(-1000, 1000, size=2)
            e = fit_ellipse(ellipse_points(cx, cy, a, b, theta, n=40))
            assert abs(e.a - a) / a < 1e-6
            assert abs(e.b - b) / b < 1e-6
            assert abs(e.cx - cx) <= 1e-6 * max(1, abs(cx))
            assert abs(e.cy - cy) <= 1e-6 * max(1, abs(cy))
            if (a - b) / a > 1e-3:
                dt = abs(e.theta - theta) % math.pi
                assert min(dt, math.pi - dt) < 1e-6

    def test_translation_invariance(self):
        pts = ellipse_points(0, 0, 12, 8, 0.7)
        base = fit_ellipse(pts)
        moved = fit_ellipse(pts + np.array([123.0, -456.0]))
        assert abs(moved.a - base.a) < 1e-6
        assert abs(moved.b - base.b) < 1e-6
        assert abs(moved.theta - base.theta) < 1e-6
        assert abs(moved.cx - base.cx - 123) < 1e-6
        assert abs(moved.cy - base.cy + 456) < 1e-6

    def test_rotation_equivariance(self):
        pts = ellipse_points(0, 0, 12, 8, 0.3)
        base = fit_ellipse(pts)
        phi = 0.9
        rot = np.array([[math.cos(phi), -math.sin(phi)],
                        [math.sin(phi), math.cos(phi)]])
        rotated = fit_ellipse(pts @ rot.T)
        assert abs(rotated.a - base.a) < 1e-6
        assert abs(rotated.b - base.b) < 1e-6
        dt = abs(rotated.theta - (base.theta + phi)) % math.pi
        assert min(dt, math.pi - dt) < 1e-6

    def test_too_few_points(self):
        with pytest.raises(DegenerateFit):
            fit_ellipse(np.array([[0, 0], [1, 1], [2, 2], [3, 3]]))

    def test_collinear_points(self):
        xs = np.linspace(0, 10, 20)
        with pytest.raises(DegenerateFit):
            fit_ellipse(np.column_stack([xs, 2 * xs + 1]))


class TestDiameterRule:
    def test_loop_uses_major_axis(self):
        e = EllipseFit(0, 0, 10, 5, 0.0)
        assert diameter_of(e, DefectClass.LOOP_100, 0.5) == pytest.approx(10.0)
        assert diameter_of(e, DefectClass.LOOP_111, None) == pytest.approx(20.0)

    def test_black_dot_uses_geometric_mean(self):
        e = EllipseFit(0, 0, 4, 1, 0.0)
        assert diameter_of(e, DefectClass.BLACK_DOT, 1.0) == pytest.approx(4.0)

    def test_rules_agree_on_circles(self):
        e = EllipseFit(0, 0, 6, 6, 0.0)
        values = {diameter_of(e, cls, 1.0) for cls in DefectClass}
        assert values == {12.0}


def scene_patch(morphology, a, b, theta=0.0, depth=0.5, size=None):
    size = size or int(math.ceil(4 * a + 16))
    c = size / 2
    spec = SceneSpec(width=size, height=size, background_level=0.8,
                     defects=(DefectSpec(morphology, c, c, a, b, theta, depth),))
    img, labels, geoms = generate_scene(spec)
    return img, labels[0], geoms[0]


class TestSegmentDefect:
    def test_disk_area(self):
        img, _, _ = scene_patch(Morphology.SOLID_DOT, 10, 10, size=40)
        mask = segment_defect(img)
        assert abs(int(mask.sum()) - math.pi * 100) <= 0.10 * math.pi * 100

    def test_constant_patch(self):
        with pytest.raises(NoForeground):
            segment_defect(GrayImage(np.full((32, 32), 0.5)))

    def test_blank_noise_patch(self):
        rng = np.random.default_rng(0)
        px = np.clip(0.8 + rng.normal(0, 0.01, size=(40, 40)), 0, 1)
        try:
            mask = segment_defect(GrayImage(px))
            # Any accidental mask must not claim a defect-sized area.
            assert mask.sum() < 0.5 * px.size
        except NoForeground:
            pass

    def test_ring_outer_extent(self):
        img, _, _ = scene_patch(Morphology.SINGLE_RING, 20, 20, size=64)
        mask = segment_defect(img)
        ys, xs = np.nonzero(mask)
        assert abs((xs.max() - xs.min() + 1) - 40) <= 2
        assert abs((ys.max() - ys.min() + 1) - 40) <= 2

    def test_patch_too_small(self):
        with pytest.raises(PatchTooSmall):
            segment_defect(GrayImage(np.zeros((4, 4))))

    @pytest.mark.parametrize("morphology,a,b", [
        (Morphology.SOLID_DOT, 8, 8),
        (Morphology.SOLID_ELLIPSE, 14, 8),
        (Morphology.SINGLE_RING, 18, 14),
        (Morphology.DOUBLE_RING, 22, 18),
    ])
    def test_inversion_invariance(self, morphology, a, b):
        img, _, _ = scene_patch(morphology, a, b, theta=0.4)
        inverted = GrayImage(1.0 - img.pixels)
        assert np.array_equal(segment_defect(img), segment_defect(inverted))


class TestAnalyzeDefect:
    def test_solid_ellipse_diameter(self):
        spec = SceneSpec(width=96, height=96, nm_per_pixel=0.5,
                         background_level=0.75, blur_sigma=0.8,
                         noise_sigma=0.02, rng_seed=5,
                         defects=(DefectSpec(Morphology.SOLID_ELLIPSE,
                                             48, 48, 12, 6, 0.3, 0.45),))
        img, labels, _ = generate_scene(spec)
        geom = analyze_defect(img, labels[0].bbox, DefectClass.LOOP_100)
        assert geom is not None
        assert abs(geom.diameter_nm - 12.0) <= 1.0

    def test_dot_diameter(self):
        spec = SceneSpec(width=48, height=48, nm_per_pixel=1.0,
                         background_level=0.75, blur_sigma=0.8,
                         noise_sigma=0.02, rng_seed=6,
                         defects=(DefectSpec(Morphology.SOLID_DOT,
                                             24, 24, 4, 4, 0.0, 0.5),))
        img, labels, _ = generate_scene(spec)
        geom = analyze_defect(img, labels[0].bbox, DefectClass.BLACK_DOT)
        assert geom is not None
        assert abs(geom.diameter_nm - 8.0) <= 1.0

    def test_blank_box_is_unfittable(self):
        img = GrayImage(np.full((100, 100), 0.75))
        assert analyze_defect(img, BBox(30, 30, 60, 60),
                              DefectClass.LOOP_111) is None

    def test_area_consistent_with_ellipse(self):
        spec = SceneSpec(width=96, height=96, nm_per_pixel=0.5,
                         background_level=0.75,
                         defects=(DefectSpec(Morphology.SOLID_ELLIPSE,
                                             48, 48, 14, 9, 1.0, 0.4),))
        img, labels, _ = generate_scene(spec)
        geom = analyze_defect(img, labels[0].bbox, DefectClass.LOOP_100)
        assert geom is not None
        expected = math.pi * geom.ellipse.a * geom.ellipse.b * 0.5 ** 2
        assert abs(geom.area_nm2 - expected) <= 1e-9 * expected

    def test_center_mapped_to_image_coordinates(self):
        spec = SceneSpec(width=200, height=160, nm_per_pixel=0.5,
                         background_level=0.75, blur_sigma=0.5,
                         defects=(DefectSpec(Morphology.SOLID_ELLIPSE,
                                             150, 40, 12, 8, 0.2, 0.4),))
        img, labels, _ = generate_scene(spec)
        geom = analyze_defect(img, labels[0].bbox, DefectClass.LOOP_100)
        assert geom is not None
        assert abs(geom.ellipse.cx - 150) < 1.5
        assert abs(geom.ellipse.cy - 40) < 1.5
