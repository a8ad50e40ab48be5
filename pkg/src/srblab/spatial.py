"""SE(3)/SO(3) math used throughout the package.

Conventions, fixed repo-wide:
  - global vertical axis is +y; gravity acts along -y
  - 6-vectors (twists, wrenches, generalized velocities) are ordered
    (angular, linear)
  - twists are body-frame spatial velocities: [qdot] = T^-1 dT/dt
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, LogBranchError, SingularHeadingError

_EPS_ORTHO = 1e-6
# below this angle the closed-form sin/cos coefficient ratios lose precision
# to cancellation, so series expansions take over
_EPS_ANGLE = 1e-4


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of skew: extract the 3-vector from a skew-symmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _check_rotation(rotation: np.ndarray, tol: float = _EPS_ORTHO) -> np.ndarray:
    rotation = np.asarray(rotation, dtype=float)
    if rotation.shape != (3, 3):
        raise InvalidInputError(f"rotation must be 3x3, got {rotation.shape}")
    if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > tol:
        raise InvalidInputError("rotation matrix is not orthonormal")
    if np.linalg.det(rotation) < 0.0:
        raise InvalidInputError("rotation matrix has negative determinant")
    return rotation


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): 3x3 rotation plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


def frame_from(rotation: np.ndarray, position: np.ndarray) -> RigidTransform:
    """Build a rigid transform from an orthonormal rotation and a position."""
    rotation = _check_rotation(rotation)
    position = np.asarray(position, dtype=float).reshape(3)
    return RigidTransform(rotation, position.copy())


def _sinc_coeffs(theta: float):
    """(sin t/t, (1-cos t)/t^2, (t-sin t)/t^3) with series fallback near zero."""
    if theta < _EPS_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
        c = (theta - np.sin(theta)) / (theta ** 3)
    return a, b, c


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.sqrt(omega @ omega))
    k = skew(omega)
    a, b, _ = _sinc_coeffs(theta)
    m = a * k + b * (k @ k)
    m[0, 0] += 1.0
    m[1, 1] += 1.0
    m[2, 2] += 1.0
    return m


def log_so3(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (principal branch, angle < pi)."""
    r = np.asarray(rotation, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    s = vee(r - r.T) / 2.0  # equals sin(theta) * axis
    theta = float(np.arctan2(np.linalg.norm(s), cos_theta))
    if theta >= np.pi - 1e-6:
        raise LogBranchError(f"rotation angle {theta:.9f} too close to pi")
    if theta < _EPS_ANGLE:
        return s * (1.0 + theta * theta / 6.0)
    if theta > 3.0:
        # near pi the sine-based form loses precision; recover the axis from
        # the symmetric part instead
        theta = float(np.arccos(cos_theta))
        outer = (r + r.T) / 2.0 - cos_theta * np.eye(3)
        axis2 = np.diag(outer) / (1.0 - cos_theta)
        i = int(np.argmax(axis2))
        axis = outer[:, i] / ((1.0 - cos_theta) * np.sqrt(max(axis2[i], 0.0)))
        axis /= np.linalg.norm(axis)
        if np.dot(axis, s) < 0.0:
            axis = -axis
        return theta * axis
    return (theta / np.sin(theta)) * s


def _v_matrix(omega: np.ndarray) -> np.ndarray:
    theta = float(np.sqrt(omega @ omega))
    k = skew(omega)
    _, b, c = _sinc_coeffs(theta)
    m = b * k + c * (k @ k)
    m[0, 0] += 1.0
    m[1, 1] += 1.0
    m[2, 2] += 1.0
    return m


def _v_matrix_inv(omega: np.ndarray) -> np.ndarray:
    theta = float(np.sqrt(omega @ omega))
    k = skew(omega)
    if theta < _EPS_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        d = (1.0 / (theta * theta)) - (1.0 + np.cos(theta)) / (
            2.0 * theta * np.sin(theta)
        )
    m = -0.5 * k + d * (k @ k)
    m[0, 0] += 1.0
    m[1, 1] += 1.0
    m[2, 2] += 1.0
    return m


def exp_se3(xi: np.ndarray) -> RigidTransform:
    """Exponential map se(3) -> SE(3); xi = (angular, linear)."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise InvalidInputError("twist has non-finite entries")
    omega, v = xi[:3], xi[3:]
    return RigidTransform(exp_so3(omega), _v_matrix(omega) @ v)


def log_se3(transform: RigidTransform) -> np.ndarray:
    """Logarithm SE(3) -> se(3), principal branch (rotation angle < pi)."""
    omega = log_so3(transform.rotation)
    v = _v_matrix_inv(omega) @ transform.translation
    return np.concatenate([omega, v])


def adjoint(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """6x6 adjoint [[R, 0], [skew(p) R, R]] mapping twists between frames."""
    rotation = _check_rotation(rotation)
    translation = np.asarray(translation, dtype=float).reshape(3)
    ad = np.zeros((6, 6))
    ad[:3, :3] = rotation
    ad[3:, :3] = skew(translation) @ rotation
    ad[3:, 3:] = rotation
    return ad


def proj_y(point: np.ndarray, terrain=None) -> np.ndarray:
    """Project a global point vertically onto the ground or terrain surface.

    `terrain` is any object with a `height(x, z)` method; None means flat
    ground at y = 0.
    """
    point = np.asarray(point, dtype=float)
    y = 0.0 if terrain is None else terrain.height(point[0], point[2])
    return np.array([point[0], y, point[2]])


def heading_angle(rotation: np.ndarray) -> float:
    """Yaw of the horizontally projected body z-axis, in radians."""
    zx = rotation[0, 2]
    zz = rotation[2, 2]
    if zx * zx + zz * zz < _EPS_ORTHO * _EPS_ORTHO:
        raise SingularHeadingError("body z-axis is vertical; heading undefined")
    return float(np.arctan2(zx, zz))


def yaw_only(rotation: np.ndarray) -> np.ndarray:
    """Rotation about global vertical whose z-axis is the projected heading."""
    return rot_y(heading_angle(rotation))


def rot_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Minimum rotation angle between two rotation matrices, in [0, pi]."""
    cos_theta = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos_theta, -1.0, 1.0)))


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = float(np.mod(-angle + np.pi, 2.0 * np.pi))
    return -(wrapped - np.pi)


def quat_from_matrix(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with nonnegative scalar part."""
    r = rotation
    t = np.trace(r)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    q /= np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    return q


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def slerp(r1: np.ndarray, r2: np.ndarray, u: float) -> np.ndarray:
    """Spherical interpolation between rotations, u in [0, 1]."""
    return r1 @ exp_so3(u * log_so3(r1.T @ r2))


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation taking unit vector a onto unit vector b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # antiparallel: rotate by pi about any axis perpendicular to a
        perp = np.zeros(3)
        perp[int(np.argmin(np.abs(a)))] = 1.0
        perp -= a * np.dot(a, perp)
        perp /= np.linalg.norm(perp)
        return exp_so3(np.pi * perp)
    angle = np.arctan2(s, c)
    return exp_so3(axis / s * angle)


def so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3): maps rotation-vector rates to angular velocity."""
    # identical series structure to the translation block of exp_se3
    return _v_matrix(np.asarray(omega, dtype=float))


def so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of SO(3)."""
    return _v_matrix_inv(np.asarray(omega, dtype=float))
