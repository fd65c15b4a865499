"""Analytic tactile rendering, gradients, noise and perturbation sampling."""

from __future__ import annotations

import math

import numpy as np
import pytest

from peghole.reconstruction import integrate_gradients
from peghole.se2 import Pose2
from peghole.shapes import Circle, CrossSection, RoundedRect, get_preset
from peghole.tactile import (
    AssumptionViolation,
    GradientGrid,
    ScalarGrid,
    SensorModel,
    add_noise,
    contact_indicator,
    gradients_from_height,
    perturbation_grid,
    random_perturbation,
    render_hole_contact,
    render_peg_contact,
)

SENSOR = SensorModel()
SHARP = SensorModel(gel_sigma_mm=0.0)


class TestSensorModel:
    def test_pitch(self):
        dx, dy = SENSOR.pitch_mm
        assert dx == pytest.approx(18.6 / 320)
        assert dy == pytest.approx(14.3 / 240)

    def test_pixel_centers_symmetric(self):
        xs, ys = SENSOR.pixel_centers()
        assert xs.shape == (240, 320)
        assert xs.mean() == pytest.approx(0, abs=1e-12)
        assert ys.mean() == pytest.approx(0, abs=1e-12)

    @pytest.mark.parametrize("kw", [{"width_px": 0}, {"press_depth_mm": 0}, {"gel_sigma_mm": -1}, {"area_mm": (0, 1)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SensorModel(**kw)

    def test_grids_reject_nonfinite(self):
        with pytest.raises(ValueError):
            ScalarGrid(np.array([[np.nan]]), (1, 1))


class TestPegRendering:
    def test_indicator_without_blur(self):
        obs = render_peg_contact(CrossSection(Circle(2)), Pose2(), SHARP, noise_sigma=0)
        xs, ys = SHARP.pixel_centers()
        inside = np.hypot(xs, ys) < 2
        assert np.array_equal(obs.height.values, np.where(inside, SHARP.press_depth_mm, 0.0))

    def test_area_with_blur(self):
        obs = render_peg_contact(CrossSection(Circle(3)), Pose2(), SENSOR, noise_sigma=0)
        dx, dy = SENSOR.pitch_mm
        area = np.count_nonzero(obs.height.values > SENSOR.press_depth_mm / 2) * dx * dy
        assert abs(area - math.pi * 9) / (math.pi * 9) < 0.02

    def test_one_pixel_shift(self):
        dx, _ = SENSOR.pitch_mm
        shape = CrossSection(RoundedRect(5, 2, 0.5))
        a = render_peg_contact(shape, Pose2(), SENSOR, noise_sigma=0).height.values
        b = render_peg_contact(shape, Pose2(0, dx, 0), SENSOR, noise_sigma=0).height.values
        assert np.allclose(b[:, 1:], a[:, :-1], atol=1e-12)

    def test_off_sensor_rejected(self):
        with pytest.raises(AssumptionViolation):
            render_peg_contact(CrossSection(Circle(2)), Pose2(0, 9.5, 0), SENSOR)

    def test_blur_preserves_mass(self):
        shape = CrossSection(Circle(2.5))
        sharp = render_peg_contact(shape, Pose2(), SHARP, noise_sigma=0).height.values.sum()
        soft = render_peg_contact(shape, Pose2(), SENSOR, noise_sigma=0).height.values.sum()
        assert abs(soft - sharp) / sharp < 0.005


class TestHoleRendering:
    def test_center_and_far(self):
        obs = render_hole_contact(CrossSection(Circle(2)), Pose2(), SENSOR, noise_sigma=0)
        h = obs.height.values
        assert h[119:121, 159:161].max() < 1e-6
        assert h[5, 5] == pytest.approx(SENSOR.press_depth_mm)

    def test_complement(self):
        shape = CrossSection(Circle(2))
        peg = render_peg_contact(shape, Pose2(0, 1, 0), SHARP, noise_sigma=0).height.values > 0
        hole = render_hole_contact(shape, Pose2(0, 1, 0), SHARP, noise_sigma=0).height.values > 0
        assert peg.sum() + hole.sum() == peg.size
        assert not np.any(peg & hole)

    @pytest.mark.parametrize("name", ["lightning", "usbc"])
    def test_opening_area(self, name):
        outline = get_preset(name).hole.outline
        mask = contact_indicator(CrossSection(outline), Pose2(), SENSOR)
        dx, dy = SENSOR.pitch_mm
        assert abs(mask.sum() * dx * dy - outline.area) / outline.area < 0.02

    def test_sides(self):
        shape = CrossSection(Circle(1))
        assert render_hole_contact(shape, Pose2(), SENSOR, seed=0).side == "hole"
        assert render_peg_contact(shape, Pose2(), SENSOR, seed=0).side == "peg"


class TestGradients:
    def test_constant(self):
        g = gradients_from_height(ScalarGrid(np.full((6, 7), 3.0), (0.1, 0.2)))
        assert not g.gx.any() and not g.gy.any()

    def test_ramp(self):
        xx = np.arange(7) * 0.1
        g = gradients_from_height(ScalarGrid(np.tile(xx, (6, 1)), (0.1, 0.2)))
        assert np.allclose(g.gx, 1.0)
        assert np.allclose(g.gy, 0.0)

    def test_quadratic_central_exact(self):
        dx = 0.25
        x = np.arange(9) * dx
        g = gradients_from_height(ScalarGrid(np.tile(x**2, (5, 1)), (dx, 1.0)))
        assert np.allclose(g.gx[:, 1:-1], 2 * x[1:-1], atol=1e-12)

    def test_too_small(self):
        with pytest.raises(ValueError):
            gradients_from_height(ScalarGrid(np.zeros((2, 5)), (1, 1)))

    def test_roundtrip_through_poisson(self):
        obs = render_peg_contact(get_preset("usbc").peg, Pose2(0.3, 0.5, -0.5), SENSOR, noise_sigma=0)
        f = integrate_gradients(obs.gradients).values
        h = obs.height.values
        rmse = np.sqrt(np.mean(((f - f.mean()) - (h - h.mean())) ** 2))
        assert rmse <= 0.01 * SENSOR.press_depth_mm


class TestNoise:
    G = GradientGrid(np.zeros((240, 320)), np.zeros((240, 320)), (1.0, 1.0))

    def test_zero_sigma_identity(self):
        assert add_noise(self.G, 0.0, 1) is self.G

    def test_same_seed(self):
        a, b = add_noise(self.G, 0.02, 5), add_noise(self.G, 0.02, 5)
        assert np.array_equal(a.gx, b.gx) and np.array_equal(a.gy, b.gy)

    def test_std(self):
        g = add_noise(self.G, 0.02, 9)
        assert abs(g.gx.std() - 0.02) / 0.02 < 0.03
        assert abs(g.gy.std() - 0.02) / 0.02 < 0.03

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            add_noise(self.G, -0.1, 0)


class TestPerturbations:
    def test_grid(self):
        grid = perturbation_grid()
        assert len(grid) == 512
        assert all(p.tx != 0 and p.ty != 0 for p in grid)
        assert (grid[0].tx, grid[0].ty, grid[0].theta_deg) == (-4.0, -4.0, 0.0)
        assert len({(p.tx, p.ty, round(p.theta_deg % 360, 6)) for p in grid}) == 512

    def test_random_ranges(self):
        for s in range(500):
            p = random_perturbation(s)
            assert abs(p.tx) <= 4 and abs(p.ty) <= 4

    def test_random_deterministic(self):
        assert random_perturbation(42) == random_perturbation(42)

    def test_random_mean(self):
        xs = [random_perturbation(s).tx for s in range(10_000)]
        assert abs(np.mean(xs)) < 0.15
