import numpy as np
import pytest

from risloc.geometry import (
    AnglePair,
    ArrayLayout,
    DegenerateGeometryError,
    Pose,
    direction_unit_vector,
    local_direction,
    local_direction_batch,
    local_direction_jacobian,
    steering_vector,
    steering_vector_angle_gradient,
    steering_vector_batch,
    unit_cell_pattern,
    unit_cell_pattern_batch,
)

WAVELENGTH = 0.0107068735


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


class TestArrayLayout:
    def test_element_count_and_shape(self):
        layout = ArrayLayout(8, 2, WAVELENGTH / 2)
        q = layout.element_positions()
        assert layout.n_elements == 16
        assert q.shape == (16, 3)

    def test_planar_and_centered(self):
        layout = ArrayLayout(5, 3, 0.01)
        q = layout.element_positions()
        assert np.all(q[:, 2] == 0.0)
        assert np.allclose(q.mean(axis=0), 0.0)

    def test_centered_grid_rows(self):
        # row index (n_x - 1) * N_y + n_y with coordinates
        # (n_x - 1) d - (N_x - 1) d / 2 on each axis
        d = WAVELENGTH / 2
        layout = ArrayLayout(2, 2, d)
        q = layout.element_positions()
        expected = np.array(
            [[-d / 2, -d / 2, 0], [-d / 2, d / 2, 0], [d / 2, -d / 2, 0], [d / 2, d / 2, 0]]
        )
        assert np.allclose(q, expected)

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            ArrayLayout(0, 2, 0.01)
        with pytest.raises(ValueError):
            ArrayLayout(2, 2, 0.0)


class TestPose:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Pose(np.zeros(3), np.eye(3) * 1.1)

    def test_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Pose(np.zeros(3), flip)

    def test_immutable(self):
        pose = Pose(np.zeros(3), np.eye(3))
        with pytest.raises(ValueError):
            pose.position[0] = 1.0


class TestAnglePair:
    def test_range_validation(self):
        with pytest.raises(ValueError):
            AnglePair(-0.1, 0.0)
        with pytest.raises(ValueError):
            AnglePair(0.5, -np.pi)
        AnglePair(np.pi, np.pi)


class TestLocalDirection:
    def test_boresight(self):
        angles, rng = local_direction(Pose(np.zeros(3), np.eye(3)), [0, 0, 5])
        assert angles.elevation == pytest.approx(0.0)
        assert np.isfinite(angles.azimuth)
        assert rng == pytest.approx(5.0)

    def test_in_plane_target(self):
        angles, rng = local_direction(Pose(np.zeros(3), np.eye(3)), [3, 4, 0])
        assert angles.elevation == pytest.approx(np.pi / 2)
        assert angles.azimuth == pytest.approx(np.arctan2(4, 3))
        assert rng == pytest.approx(5.0)

    def test_table1_bs_to_ris_range(self):
        # BS (60,15,2) to the surface at (0,15,3)
        _, rng = local_direction(Pose([60.0, 15.0, 2.0], np.eye(3)), [0.0, 15.0, 3.0])
        assert rng == pytest.approx(np.sqrt(60.0**2 + 1.0), rel=1e-12)
        assert rng == pytest.approx(60.00833275, abs=1e-6)

    def test_coincident_positions_raise(self):
        with pytest.raises(DegenerateGeometryError):
            local_direction(Pose(np.ones(3), np.eye(3)), np.ones(3))

    def test_rotation_preserves_range(self):
        rng_gen = np.random.default_rng(3)
        target = rng_gen.normal(size=3)
        p = rng_gen.normal(size=3)
        for _ in range(5):
            o = random_rotation(rng_gen)
            _, r = local_direction(Pose(p, o), target)
            assert r == pytest.approx(np.linalg.norm(target - p), rel=1e-12)

    def test_roundtrip_direction(self):
        # rebuilding u from the angles and scaling by range recovers O (t - p)
        rng_gen = np.random.default_rng(4)
        for _ in range(10):
            p = rng_gen.normal(size=3)
            t = rng_gen.normal(size=3) + np.array([4.0, 0, 0])
            o = random_rotation(rng_gen)
            angles, r = local_direction(Pose(p, o), t)
            recovered = r * direction_unit_vector(angles)
            assert np.allclose(recovered, o @ (t - p), atol=1e-10)

    def test_batch_matches_scalar(self):
        rng_gen = np.random.default_rng(5)
        pose = Pose(rng_gen.normal(size=3), random_rotation(rng_gen))
        targets = rng_gen.normal(size=(7, 3)) * 5.0
        el, az, r = local_direction_batch(pose, targets)
        for i, t in enumerate(targets):
            angles, rr = local_direction(pose, t)
            assert el[i] == pytest.approx(angles.elevation)
            assert az[i] == pytest.approx(angles.azimuth)
            assert r[i] == pytest.approx(rr)


class TestSteeringVector:
    def test_boresight_all_ones(self):
        layout = ArrayLayout(4, 4, WAVELENGTH / 2)
        a = steering_vector(layout, AnglePair(0.0, 0.0), WAVELENGTH)
        assert np.allclose(a, 1.0)

    def test_single_element(self):
        a = steering_vector(ArrayLayout(1, 1, WAVELENGTH / 2), AnglePair(0.7, 0.3), WAVELENGTH)
        assert np.allclose(a, [1.0])

    def test_two_element_endfire(self):
        # u = e_x, positions -lambda/4 and +lambda/4 along x
        layout = ArrayLayout(2, 1, WAVELENGTH / 2)
        a = steering_vector(layout, AnglePair(np.pi / 2, 0.0), WAVELENGTH)
        assert np.allclose(a, [np.exp(-1j * np.pi / 2), np.exp(1j * np.pi / 2)])
        assert np.allclose(a, [-1j, 1j])

    def test_unit_modulus_and_norm(self):
        layout = ArrayLayout(6, 3, WAVELENGTH / 2)
        a = steering_vector(layout, AnglePair(1.1, -2.0), WAVELENGTH)
        assert np.allclose(np.abs(a), 1.0)
        assert a.conj() @ a == pytest.approx(layout.n_elements)

    def test_batch_matches_scalar(self):
        layout = ArrayLayout(3, 4, WAVELENGTH / 2)
        el = np.array([0.2, 1.0, 2.4])
        az = np.array([-1.0, 0.0, 3.0])
        batch = steering_vector_batch(layout, el, az, WAVELENGTH)
        for i in range(3):
            a = steering_vector(layout, AnglePair(el[i], az[i]), WAVELENGTH)
            assert np.allclose(batch[i], a)

    def test_angle_gradient_matches_finite_differences(self):
        layout = ArrayLayout(5, 2, WAVELENGTH / 2)
        angles = AnglePair(0.9, 0.4)
        grad = steering_vector_angle_gradient(layout, angles, WAVELENGTH)
        h = 1e-6
        fd_el = (
            steering_vector(layout, AnglePair(angles.elevation + h, angles.azimuth), WAVELENGTH)
            - steering_vector(layout, AnglePair(angles.elevation - h, angles.azimuth), WAVELENGTH)
        ) / (2 * h)
        fd_az = (
            steering_vector(layout, AnglePair(angles.elevation, angles.azimuth + h), WAVELENGTH)
            - steering_vector(layout, AnglePair(angles.elevation, angles.azimuth - h), WAVELENGTH)
        ) / (2 * h)
        assert np.allclose(grad[0], fd_el, atol=1e-5 * np.abs(fd_el).max())
        assert np.allclose(grad[1], fd_az, atol=1e-5 * max(np.abs(fd_az).max(), 1e-3))


class TestDirectionJacobian:
    def test_matches_finite_differences(self):
        rng_gen = np.random.default_rng(8)
        for _ in range(10):
            pose = Pose(rng_gen.normal(size=3), random_rotation(rng_gen))
            target = pose.position + rng_gen.normal(size=3) * 8.0
            try:
                jac = local_direction_jacobian(pose, target)
            except DegenerateGeometryError:
                continue
            h = 1e-6
            fd = np.zeros((2, 3))
            for d in range(3):
                step = np.zeros(3)
                step[d] = h
                ap, _ = local_direction(pose, target + step)
                am, _ = local_direction(pose, target - step)
                daz = ap.azimuth - am.azimuth
                if daz > np.pi:
                    daz -= 2 * np.pi
                if daz < -np.pi:
                    daz += 2 * np.pi
                fd[0, d] = (ap.elevation - am.elevation) / (2 * h)
                fd[1, d] = daz / (2 * h)
            assert np.allclose(jac, fd, rtol=1e-5, atol=1e-7)


class TestUnitCellPattern:
    def test_boresight_unity(self):
        assert unit_cell_pattern(AnglePair(0.0, 0.0), 0.57) == 1.0

    def test_edge_and_backlobe_zero(self):
        assert unit_cell_pattern(AnglePair(np.pi / 2, 0.0), 0.57) == pytest.approx(0.0, abs=1e-12)
        assert unit_cell_pattern(AnglePair(3 * np.pi / 4, 0.0), 0.57) == 0.0

    def test_table1_exponent_value(self):
        # cos(pi/3)^0.57 = 0.5^0.57
        got = unit_cell_pattern(AnglePair(np.pi / 3, 1.0), 0.57)
        assert got == pytest.approx(0.5**0.57, rel=1e-12)
        assert got == pytest.approx(0.67360, abs=5e-5)

    def test_batch_matches_scalar(self):
        el = np.array([0.0, 0.3, np.pi / 2, 2.0])
        vals = unit_cell_pattern_batch(el, 0.57)
        for e, v in zip(el, vals):
            assert v == pytest.approx(unit_cell_pattern(AnglePair(float(e), 0.0), 0.57))

    def test_rejects_nonpositive_exponent(self):
        with pytest.raises(ValueError):
            unit_cell_pattern(AnglePair(0.1, 0.0), 0.0)
