import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from srblab import spatial
from srblab.errors import InvalidInputError, LogBranchError, SingularHeadingError


def random_rotation(rng):
    return spatial.exp_so3(rng.normal(size=3))


def twist_matrix(xi):
    m = np.zeros((4, 4))
    m[:3, :3] = spatial.skew(xi[:3])
    m[:3, 3] = xi[3:]
    return m


class TestFrameFrom:
    def test_identity(self):
        t = spatial.frame_from(np.eye(3), np.zeros(3))
        assert np.allclose(t.matrix(), np.eye(4))

    def test_pure_translation(self):
        t = spatial.frame_from(np.eye(3), [1.0, 2.0, 3.0])
        assert np.allclose(t.translation, [1.0, 2.0, 3.0])
        assert np.allclose(t.rotation, np.eye(3))

    def test_matches_homogeneous_assembly(self):
        # oracle: direct 4x4 matrix construction
        r = spatial.rot_y(np.pi / 2)
        p = np.array([0.0, 1.0, 0.0])
        expected = np.eye(4)
        expected[:3, :3] = r
        expected[:3, 3] = p
        t = spatial.frame_from(r, p)
        assert np.allclose(t.matrix(), expected)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidInputError):
            spatial.frame_from(np.eye(3) * 1.01, np.zeros(3))

    def test_compose_inverse(self):
        rng = np.random.default_rng(0)
        t1 = spatial.frame_from(random_rotation(rng), rng.normal(size=3))
        t2 = spatial.frame_from(random_rotation(rng), rng.normal(size=3))
        m = t1.compose(t2).matrix()
        assert np.allclose(m, t1.matrix() @ t2.matrix())
        assert np.allclose(t1.compose(t1.inverse()).matrix(), np.eye(4), atol=1e-12)


class TestExpSe3:
    def test_zero_twist(self):
        t = spatial.exp_se3(np.zeros(6))
        assert np.allclose(t.matrix(), np.eye(4))

    def test_pure_rotation(self):
        t = spatial.exp_se3([0.0, np.pi / 2, 0.0, 0.0, 0.0, 0.0])
        assert np.allclose(t.rotation, spatial.rot_y(np.pi / 2), atol=1e-12)
        assert np.allclose(t.translation, 0.0, atol=1e-12)

    def test_pure_translation(self):
        t = spatial.exp_se3([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        assert np.allclose(t.translation, [1.0, 0.0, 0.0])
        assert np.allclose(t.rotation, np.eye(3))

    def test_matches_matrix_exponential_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            xi = rng.normal(size=6)
            expected = expm(twist_matrix(xi))
            got = spatial.exp_se3(xi).matrix()
            assert np.allclose(got, expected, atol=1e-10)

    def test_small_angle_series(self):
        xi = np.array([1e-10, -2e-10, 1e-10, 0.3, -0.2, 0.5])
        expected = expm(twist_matrix(xi))
        assert np.allclose(spatial.exp_se3(xi).matrix(), expected, atol=1e-14)


class TestLogSe3:
    def test_identity(self):
        assert np.allclose(spatial.log_se3(RigidIdentity()), 0.0)

    def test_round_trip_random(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            xi = rng.normal(size=6)
            xi[:3] *= 0.9 / max(np.linalg.norm(xi[:3]), 1e-12)
            back = spatial.log_se3(spatial.exp_se3(xi))
            assert np.max(np.abs(back - xi)) < 1e-9

    def test_matches_log_series_oracle(self):
        # oracle: truncated matrix-log series on a small rotation
        t = spatial.frame_from(spatial.rot_y(0.3), [0.1, 0.0, 0.0])
        x = t.matrix() - np.eye(4)
        series = np.zeros((4, 4))
        term = np.eye(4)
        for k in range(1, 30):
            term = term @ x
            series += ((-1) ** (k + 1)) * term / k
        xi = spatial.log_se3(t)
        assert np.allclose(spatial.skew(xi[:3]), series[:3, :3], atol=1e-12)
        assert np.allclose(xi[3:], series[:3, 3], atol=1e-12)

    def test_near_pi_branch_error(self):
        t = spatial.frame_from(spatial.rot_x(np.pi), np.zeros(3))
        with pytest.raises(LogBranchError):
            spatial.log_se3(t)

    def test_large_angle_accuracy(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            xi = np.concatenate([3.05 * axis, rng.normal(size=3)])
            back = spatial.log_se3(spatial.exp_se3(xi))
            assert np.max(np.abs(back - xi)) < 1e-9


def RigidIdentity():
    return spatial.RigidTransform.identity()


class TestAdjoint:
    def test_identity(self):
        assert np.allclose(spatial.adjoint(np.eye(3), np.zeros(3)), np.eye(6))

    def test_zero_translation_block_diagonal(self):
        r = spatial.rot_y(np.pi / 2)
        ad = spatial.adjoint(r, np.zeros(3))
        assert np.allclose(ad[:3, :3], r)
        assert np.allclose(ad[3:, 3:], r)
        assert np.allclose(ad[3:, :3], 0.0)

    def test_conjugation_oracle(self):
        # Ad(T) xi must equal the twist of T exp(s xi) T^-1
        rng = np.random.default_rng(4)
        for _ in range(20):
            r = random_rotation(rng)
            p = rng.normal(size=3)
            t = spatial.frame_from(r, p)
            xi = rng.normal(size=6) * 0.3
            conj = t.matrix() @ twist_matrix(xi) @ t.inverse().matrix()
            expected = np.concatenate([spatial.vee(conj[:3, :3]), conj[:3, 3]])
            assert np.allclose(spatial.adjoint(r, p) @ xi, expected, atol=1e-10)

    def test_composition(self):
        rng = np.random.default_rng(5)
        t1 = spatial.frame_from(random_rotation(rng), rng.normal(size=3))
        t2 = spatial.frame_from(random_rotation(rng), rng.normal(size=3))
        ad12 = spatial.adjoint(*_rt(t1.compose(t2)))
        product = spatial.adjoint(*_rt(t1)) @ spatial.adjoint(*_rt(t2))
        assert np.max(np.abs(ad12 - product)) < 1e-9


def _rt(t):
    return t.rotation, t.translation


class TestProjY:
    def test_flat(self):
        assert np.allclose(spatial.proj_y([1.0, 2.0, 3.0]), [1.0, 0.0, 3.0])
        assert np.allclose(spatial.proj_y([0.0, 5.0, 0.0]), [0.0, 0.0, 0.0])

    def test_heightfield_lookup(self):
        class Bump:
            def height(self, x, z):
                return 0.4 if (x, z) == (1.0, 3.0) else 0.0

        assert np.allclose(spatial.proj_y([1.0, 2.0, 3.0], Bump()), [1.0, 0.4, 3.0])


class TestYawOnly:
    def test_identity(self):
        assert np.allclose(spatial.yaw_only(np.eye(3)), np.eye(3))

    def test_pure_yaw_unchanged(self):
        r = spatial.rot_y(0.8)
        assert np.allclose(spatial.yaw_only(r), r, atol=1e-12)

    def test_strips_tilt(self):
        r = spatial.rot_y(0.7) @ spatial.rot_x(0.3)
        assert np.max(np.abs(spatial.yaw_only(r) - spatial.rot_y(0.7))) < 1e-9

    def test_singular(self):
        # z-axis pointing straight up
        r = spatial.rot_x(-np.pi / 2)
        with pytest.raises(SingularHeadingError):
            spatial.yaw_only(r)

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            r = random_rotation(rng)
            try:
                y = spatial.yaw_only(r)
            except SingularHeadingError:
                continue
            assert np.allclose(spatial.yaw_only(y), y, atol=1e-12)


class TestRotDistance:
    def test_same(self):
        r = spatial.rot_z(1.1)
        assert spatial.rot_distance(r, r) == pytest.approx(0.0, abs=1e-7)

    def test_quarter_turn(self):
        assert spatial.rot_distance(np.eye(3), spatial.rot_y(np.pi / 2)) == pytest.approx(
            np.pi / 2
        )

    def test_quaternion_angle_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            r1, r2 = random_rotation(rng), random_rotation(rng)
            q = spatial.quat_from_matrix(r1.T @ r2)
            expected = 2.0 * np.arccos(np.clip(abs(q[0]), -1.0, 1.0))
            assert spatial.rot_distance(r1, r2) == pytest.approx(expected, abs=1e-8)

    def test_symmetric(self):
        rng = np.random.default_rng(8)
        r1, r2 = random_rotation(rng), random_rotation(rng)
        assert spatial.rot_distance(r1, r2) == pytest.approx(
            spatial.rot_distance(r2, r1), abs=1e-12
        )

    def test_triangle_inequality(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a, b, c = (random_rotation(rng) for _ in range(3))
            assert spatial.rot_distance(a, c) <= (
                spatial.rot_distance(a, b) + spatial.rot_distance(b, c) + 1e-9
            )


@st.composite
def bounded_twists(draw):
    omega = np.array([draw(st.floats(-1.5, 1.5)) for _ in range(3)])
    n = np.linalg.norm(omega)
    if n > np.pi - 0.1:
        omega *= (np.pi - 0.1) / n
    v = np.array([draw(st.floats(-3.0, 3.0)) for _ in range(3)])
    return np.concatenate([omega, v])


@given(bounded_twists())
@settings(max_examples=200, deadline=None)
def test_exp_log_round_trip_property(xi):
    back = spatial.log_se3(spatial.exp_se3(xi))
    assert np.max(np.abs(back - xi)) < 1e-9


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_quaternion_round_trip(seed):
    rng = np.random.default_rng(seed)
    r = random_rotation(rng)
    q = spatial.quat_from_matrix(r)
    assert q[0] >= 0.0
    assert np.allclose(spatial.matrix_from_quat(q), r, atol=1e-10)


def test_wrap_angle():
    assert spatial.wrap_angle(np.pi) == pytest.approx(np.pi)
    assert spatial.wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert spatial.wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert spatial.wrap_angle(0.3) == pytest.approx(0.3)


def test_slerp_endpoints_and_midpoint():
    r1 = spatial.rot_y(0.2)
    r2 = spatial.rot_y(1.0)
    assert np.allclose(spatial.slerp(r1, r2, 0.0), r1)
    assert np.allclose(spatial.slerp(r1, r2, 1.0), r2, atol=1e-12)
    assert np.allclose(spatial.slerp(r1, r2, 0.5), spatial.rot_y(0.6), atol=1e-12)


def test_left_jacobian_maps_rate_to_angular_velocity():
    # finite-difference oracle: omega = d/dt exp(phi(t)) with phi(t) = phi + t dphi
    rng = np.random.default_rng(10)
    for _ in range(20):
        phi = rng.normal(size=3)
        dphi = rng.normal(size=3)
        h = 1e-6
        r0 = spatial.exp_so3(phi - h * dphi)
        r1 = spatial.exp_so3(phi + h * dphi)
        omega_fd = spatial.vee((r1 - r0) @ spatial.exp_so3(phi).T) / (2 * h)
        omega = spatial.so3_left_jacobian(phi) @ dphi
        assert np.allclose(omega, omega_fd, atol=1e-5)
        assert np.allclose(
            spatial.so3_left_jacobian_inv(phi) @ spatial.so3_left_jacobian(phi),
            np.eye(3),
            atol=1e-9,
        )
