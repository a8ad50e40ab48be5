"""SRB simulation: desired accelerations, QP contact step, foot machine.

The equation of motion is written in the body frame so the inertia matrix
is constant:

    M qdd + b = J_f^T F_e + J_c^T B lambda
    M = diag(inertia, mass I),  b = (w x I w, m w x v) - gravity wrench

Integration is semi-implicit in the velocities with a trapezoidal position
update, and the rotation advances through the exponential map. The linear
state is integrated in the global frame: with zero applied wrench the
global momentum is then conserved exactly, and constant gravity reproduces
the ballistic parabola to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import qp, spatial, srb
from .errors import InvalidInputError, OutOfBoundsError, SimulationError

TWO_PI = 2.0 * np.pi
SWING = "swing"
CONTACT = "contact"


def _cross3(a, b):
    """Cross product of two 3-vectors without np.cross overhead."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


class Terrain:
    """Flat ground of unbounded extent at a constant height."""

    def __init__(self, ground_height: float = 0.0):
        self.ground_height = float(ground_height)

    def height(self, x: float, z: float) -> float:
        return self.ground_height

    def normal(self, x: float, z: float) -> np.ndarray:
        return np.array([0.0, 1.0, 0.0])


class Heightfield(Terrain):
    """Bilinear heightfield over a rectangular extent.

    Queries outside the extent raise OutOfBoundsError.
    """

    def __init__(self, grid: np.ndarray, x_range, z_range):
        self.grid = np.asarray(grid, dtype=float)
        if self.grid.ndim != 2 or min(self.grid.shape) < 2:
            raise InvalidInputError("heightfield grid must be at least 2x2")
        self.x0, self.x1 = map(float, x_range)
        self.z0, self.z1 = map(float, z_range)
        self.nx, self.nz = self.grid.shape
        self.dx = (self.x1 - self.x0) / (self.nx - 1)
        self.dz = (self.z1 - self.z0) / (self.nz - 1)

    def _cell(self, x, z):
        if not (self.x0 <= x <= self.x1 and self.z0 <= z <= self.z1):
            raise OutOfBoundsError(
                f"({x:.3f}, {z:.3f}) outside terrain "
                f"[{self.x0}, {self.x1}] x [{self.z0}, {self.z1}]"
            )
        fx = (x - self.x0) / self.dx
        fz = (z - self.z0) / self.dz
        ix = min(int(fx), self.nx - 2)
        iz = min(int(fz), self.nz - 2)
        return ix, iz, fx - ix, fz - iz

    def height(self, x: float, z: float) -> float:
        ix, iz, u, v = self._cell(x, z)
        g = self.grid
        return float(
            (1 - u) * (1 - v) * g[ix, iz]
            + u * (1 - v) * g[ix + 1, iz]
            + (1 - u) * v * g[ix, iz + 1]
            + u * v * g[ix + 1, iz + 1]
        )

    def normal(self, x: float, z: float) -> np.ndarray:
        ix, iz, u, v = self._cell(x, z)
        g = self.grid
        dhdx = ((1 - v) * (g[ix + 1, iz] - g[ix, iz]) + v * (g[ix + 1, iz + 1] - g[ix, iz + 1])) / self.dx
        dhdz = ((1 - u) * (g[ix, iz + 1] - g[ix, iz]) + u * (g[ix + 1, iz + 1] - g[ix + 1, iz])) / self.dz
        n = np.array([-dhdx, 1.0, -dhdz])
        return n / np.linalg.norm(n)


def slope_heightfield(angle_rad: float, extent: float = 40.0, n: int = 81) -> Heightfield:
    """Constant slope rising along +z, level at z <= 0."""
    zs = np.linspace(-extent, extent, n)
    grid = np.tile(np.maximum(zs, 0.0) * np.tan(angle_rad), (n, 1))
    return Heightfield(grid, (-extent, extent), (-extent, extent))


@dataclass
class LQRGains:
    """Closed-form double-integrator LQR gains for Q = diag(10^alpha, 0), R = 1."""

    alpha: float
    k: np.ndarray  # [position gain, velocity gain]

    def discrete_map(self, dt: float) -> np.ndarray:
        """Exact closed-loop transition matrix over one step of length dt.

        The closed loop xdd = -kp x - kd xd with these gains is always at
        damping ratio 1/sqrt(2); its matrix exponential has the closed form
        e^(-s t) (cos(s t) I + sin(s t)/s (A + s I)) with s = sqrt(kp / 2).
        A direct Euler step is unstable at 60 Hz for alpha = 8, so the
        filter advances by this exact map instead.
        """
        kp, kd = self.k
        s = np.sqrt(kp / 2.0)
        a_cl = np.array([[0.0, 1.0], [-kp, -kd]])
        decay = np.exp(-s * dt)
        return decay * (
            np.cos(s * dt) * np.eye(2)
            + np.sin(s * dt) / s * (a_cl + s * np.eye(2))
        )


def lqr_gains(alpha: float) -> LQRGains:
    """K = [10^(alpha/2), sqrt(2 * 10^(alpha/2))], the CARE solution."""
    kp = 10.0 ** (alpha / 2.0)
    return LQRGains(alpha=float(alpha), k=np.array([kp, np.sqrt(2.0 * kp)]))


def lqr_filter_step(value, velocity, target, gains: LQRGains, dt: float, phi=None):
    """Advance one particle toward (target, 0) under the LQR feedback law."""
    if dt <= 0.0:
        raise InvalidInputError("dt must be positive")
    if phi is None:
        phi = gains.discrete_map(dt)
    e0 = value - target
    e1 = velocity
    return (
        target + phi[0, 0] * e0 + phi[0, 1] * e1,
        phi[1, 0] * e0 + phi[1, 1] * e1,
    )


@dataclass
class FootState:
    mode: str  # SWING or CONTACT
    pos: np.ndarray  # global; y holds the terrain height
    yaw: float  # global rotation about vertical
    particle_val: np.ndarray  # (3,) LQR particles: x, z, yaw-relative-to-heading
    particle_vel: np.ndarray

    def copy(self) -> "FootState":
        return FootState(
            self.mode,
            self.pos.copy(),
            self.yaw,
            self.particle_val.copy(),
            self.particle_vel.copy(),
        )


@dataclass
class SRBState:
    rot: np.ndarray  # (3, 3) COM orientation, global
    pos: np.ndarray  # (3,) COM position, global
    qdot: np.ndarray  # (6,) body-frame (angular, linear)
    feet: list  # [FootState, FootState]
    psi: float  # wrapped motion phase in [0, 2pi)
    cycle: int  # completed reference cycles, for unwrapped tracking
    phase_rate: float  # current d psi / dt
    time: float = 0.0

    def transform(self) -> spatial.RigidTransform:
        return spatial.RigidTransform(self.rot, self.pos)

    def copy(self) -> "SRBState":
        return SRBState(
            self.rot.copy(),
            self.pos.copy(),
            self.qdot.copy(),
            [f.copy() for f in self.feet],
            self.psi,
            self.cycle,
            self.phase_rate,
            self.time,
        )


@dataclass
class SimParams:
    dt: float = 1.0 / 60.0
    pd_gain_pos: float = 120.0
    pd_gain_vel: float = 35.0
    w_lambda: float = 0.001
    friction_mu: float = 0.8
    cone_edges: int = 4
    lqr_alpha: float = 8.0
    stride_beta: float = 0.4
    stride_literal_form: bool = False  # use (1 + beta dv vbar) exactly as typeset
    late_contact_threshold: float = 0.05  # m, COM too high at touch-down
    early_contact_threshold: float = 0.10  # m, COM too low before touch-down
    contact_window: float = 0.10  # s, how close to touch-down the checks apply
    gravity: float = 9.8
    max_qp_iter: int = 200


def desired_velocity(ref_qdot: np.ndarray, action_v: np.ndarray) -> np.ndarray:
    """qdot_d = reference generalized velocity plus the policy's offset."""
    return ref_qdot + action_v


def desired_acceleration(
    transform: spatial.RigidTransform,
    ref_transform: spatial.RigidTransform,
    qdot: np.ndarray,
    qdot_d: np.ndarray,
    gain_pos: float = 120.0,
    gain_vel: float = 35.0,
) -> np.ndarray:
    """qdd_d = a log(T^-1 T_ref) + b (qdot_d - qdot)."""
    err = spatial.log_se3(transform.inverse().compose(ref_transform))
    return gain_pos * err + gain_vel * (qdot_d - qdot)


def stride_phase_factor(
    delta_v: float, average_speed: float, beta: float, literal_form: bool = False
) -> float:
    """Speed-tracking multiplier on the reference phase rate.

    The normalized form 1 + beta dv / vbar is the default; the literal
    (dimensionally odd) product form is available behind a flag. Standing
    references (vbar = 0) disable the adjustment.
    """
    if average_speed <= 0.0 or beta == 0.0:
        return 1.0
    if literal_form:
        return 1.0 + beta * delta_v * average_speed
    return 1.0 + beta * delta_v / average_speed


def contact_phase_multiplier(
    com_height: float,
    motion: srb.ReferenceSRBMotion,
    psi: float,
    late_threshold: float = 0.05,
    early_threshold: float = 0.10,
    window: float = 0.10,
    ref_height: float | None = None,
) -> float:
    """Touch-down timing multiplier: 0.5 for late contact, 2.0 for early.

    Near a scheduled touch-down (within `window` seconds at the reference
    rate), a COM still more than `late_threshold` above the reference height
    halves the phase rate; before touch-down, a COM more than
    `early_threshold` below doubles it.
    """
    if ref_height is None:
        ref_height = srb.sample_reference(motion, psi).height
    rate = motion.phase_rate
    for foot in range(len(motion.contact_intervals)):
        in_contact = motion.contact_flag(psi, foot)
        if in_contact:
            # time since this stance began
            since = min(
                np.mod(psi - td, TWO_PI) for td, _ in motion.contact_intervals[foot]
            ) / rate
            if since <= window and com_height - ref_height > late_threshold:
                return 0.5
        else:
            until = motion.next_touch_down(psi, foot) / rate
            if until <= window and ref_height - com_height > early_threshold:
                return 2.0
    return 1.0


def desired_landing_position(
    state: SRBState,
    action_s: np.ndarray,
    motion: srb.ReferenceSRBMotion,
    psi: float,
    terrain: Terrain | None = None,
    foot: int = 0,
) -> np.ndarray:
    """Global, terrain-projected landing target for a swing foot.

    Zero action lands on the reference: the foot offset cancels the COM and
    heading difference by construction.
    """
    heading = spatial.yaw_only(state.rot)
    offset = srb.foot_offset(motion, psi, foot)
    a3 = np.array([action_s[0], 0.0, action_s[1]])
    return spatial.proj_y(state.pos + heading @ (a3 + offset), terrain)


def update_foot_states(
    state: SRBState,
    action: np.ndarray,
    motion: srb.ReferenceSRBMotion,
    dt: float,
    terrain: Terrain | None,
    gains: LQRGains,
    psi_new: float,
    phi=None,
    contact_override=None,
    landing_override=None,
    ref_sample: srb.RefSample | None = None,
) -> list:
    """Advance the per-foot machines to the new phase.

    Swing feet LQR-filter toward the desired landing pose; contact feet are
    frozen. Swing-to-contact copies the final particle values as the fixed
    contact pose; contact-to-swing re-seeds the particles from it. Actions
    for contact feet are ignored.
    """
    heading_yaw = spatial.heading_angle(state.rot)
    heading = spatial.rot_y(heading_yaw)
    ref = ref_sample
    new_feet = []
    for j, foot in enumerate(state.feet):
        if contact_override is not None:
            want_contact = bool(contact_override[j])
        else:
            want_contact = motion.contact_flag(psi_new, j)
        f = foot.copy()
        if foot.mode == CONTACT and want_contact:
            new_feet.append(f)
            continue
        if foot.mode == SWING and want_contact:
            # touch down: the last swing pose becomes the fixed contact pose
            x, z = f.particle_val[0], f.particle_val[1]
            y = 0.0 if terrain is None else terrain.height(x, z)
            f.mode = CONTACT
            f.pos = np.array([x, y, z])
            f.yaw = spatial.wrap_angle(heading_yaw + f.particle_val[2])
            f.particle_vel[:] = 0.0
            new_feet.append(f)
            continue
        if foot.mode == CONTACT and not want_contact:
            # lift off: re-seed the particles from the frozen pose
            f.mode = SWING
            f.particle_val = np.array(
                [f.pos[0], f.pos[2], spatial.wrap_angle(f.yaw - heading_yaw)]
            )
            f.particle_vel = np.zeros(3)

        # swing: filter toward the landing target
        if landing_override is not None and landing_override[j] is not None:
            target_pos, target_yaw_global = landing_override[j]
        else:
            if ref is None:
                ref = srb.sample_reference(motion, psi_new, state.cycle)
            a_s = action[2 * j : 2 * j + 2]
            ref_heading = spatial.yaw_only(ref.transform.rotation)
            offset = ref_heading.T @ (
                ref.foot_pos[j] - spatial.proj_y(ref.transform.translation)
            )
            a3 = np.array([a_s[0], 0.0, a_s[1]])
            target_pos = spatial.proj_y(state.pos + heading @ (a3 + offset), terrain)
            target_yaw_global = ref.foot_yaw_global(j)
        target_theta_raw = target_yaw_global - heading_yaw
        # keep the angle target on the branch nearest the particle
        target_theta = f.particle_val[2] + spatial.wrap_angle(
            target_theta_raw - f.particle_val[2]
        )
        targets = (target_pos[0], target_pos[2], target_theta)
        for i in range(3):
            f.particle_val[i], f.particle_vel[i] = lqr_filter_step(
                f.particle_val[i], f.particle_vel[i], targets[i], gains, dt, phi
            )
        x, z = f.particle_val[0], f.particle_val[1]
        y = 0.0 if terrain is None else terrain.height(x, z)
        f.pos = np.array([x, y, z])
        f.yaw = spatial.wrap_angle(heading_yaw + f.particle_val[2])
        new_feet.append(f)
    return new_feet


@dataclass
class StepInfo:
    """Diagnostics from one simulation step."""

    qdd: np.ndarray
    lam: np.ndarray
    contact_force: np.ndarray  # total global ground-reaction force
    qdd_desired: np.ndarray
    qp_iterations: int
    phase_factor_stride: float
    phase_factor_contact: float


class Simulator:
    """One simulation stream for an SRB character tracking a reference."""

    def __init__(
        self,
        character: srb.SRBCharacter,
        motion: srb.ReferenceSRBMotion,
        terrain: Terrain | None = None,
        params: SimParams | None = None,
    ):
        self.character = character
        self.motion = motion
        self.terrain = terrain
        self.params = params or SimParams()
        self.gains = lqr_gains(self.params.lqr_alpha)
        self._phi = self.gains.discrete_map(self.params.dt)
        if np.linalg.cond(character.m_matrix) > 1e12:
            raise InvalidInputError("character inertia is numerically singular")
        self._flat_basis = qp.friction_basis(
            np.array([0.0, 1.0, 0.0]), self.params.friction_mu, self.params.cone_edges
        )
        self._sample_cache = None  # (psi, cycle, RefSample) of the last step
        self._warm = None  # (lambda dimension, active bound set) of last solve
        self._warm_cache = {}
        self._problem_cache = {}  # per lambda-dimension reusable QPProblem

    def initial_state(self, psi: float = 0.0, cycle: int = 0) -> SRBState:
        """State matching the reference exactly at the given phase."""
        ref = srb.sample_reference(self.motion, psi, cycle)
        heading_yaw = spatial.heading_angle(ref.transform.rotation)
        feet = []
        for j in range(2):
            yaw_global = ref.foot_yaw_global(j)
            pos = ref.foot_pos[j].copy()
            if self.terrain is not None:
                pos[1] = self.terrain.height(pos[0], pos[2])
            mode = CONTACT if ref.contact[j] else SWING
            feet.append(
                FootState(
                    mode=mode,
                    pos=pos,
                    yaw=spatial.wrap_angle(yaw_global),
                    particle_val=np.array(
                        [pos[0], pos[2], spatial.wrap_angle(yaw_global - heading_yaw)]
                    ),
                    particle_vel=np.zeros(3),
                )
            )
        return SRBState(
            rot=ref.transform.rotation.copy(),
            pos=ref.transform.translation.copy(),
            qdot=ref.qdot.copy(),
            feet=feet,
            psi=float(np.mod(psi, TWO_PI)),
            cycle=cycle,
            phase_rate=self.motion.phase_rate,
            time=0.0,
        )

    def contact_points(self, state: SRBState):
        """Global contact points and friction bases of the planted feet."""
        points = []
        bases = []
        for foot in state.feet:
            if foot.mode != CONTACT:
                continue
            r_yaw = spatial.rot_y(foot.yaw)
            for off in (self.character.foot_heel, self.character.foot_toe):
                p = foot.pos + r_yaw @ off
                if self.terrain is None:
                    p = np.array([p[0], 0.0, p[2]])
                    bases.append(self._flat_basis)
                else:
                    p = np.array([p[0], self.terrain.height(p[0], p[2]), p[2]])
                    bases.append(
                        qp.friction_basis(
                            self.terrain.normal(p[0], p[2]),
                            self.params.friction_mu,
                            self.params.cone_edges,
                        )
                    )
                points.append(p)
        return points, bases

    def _point_jacobian(self, state: SRBState, point: np.ndarray) -> np.ndarray:
        """3x6 Jacobian of a body-fixed point vs the body twist."""
        j = np.zeros((3, 6))
        self._fill_point_jacobian(j, state.rot, state.pos, point)
        return j

    @staticmethod
    def _fill_point_jacobian(block, rot, pos, point):
        r_body = rot.T @ (point - pos)
        block[:, :3] = -rot @ spatial.skew(r_body)
        block[:, 3:] = rot

    def _assemble(self, j_c, b_mat, bias, j_f, f_e, qdd_d) -> qp.QPProblem:
        """Assemble the step QP, reusing buffers for each contact layout."""
        n_lam = b_mat.shape[1]
        problem = self._problem_cache.get(n_lam)
        if problem is None:
            problem = qp.assemble_srb_qp(
                self.character.m_matrix, bias, j_c, b_mat,
                j_f, f_e, qdd_d, self.params.w_lambda, check=False,
            )
            self._problem_cache[n_lam] = problem
            return problem
        problem.gradient[:6] = -2.0 * qdd_d
        if n_lam:
            problem.eq_matrix[:, 6:] = -(j_c.T @ b_mat)
        rhs = -bias
        if f_e is not None and j_f is not None:
            rhs = rhs + j_f.T @ f_e
        problem.eq_rhs[:] = rhs
        return problem

    def step(
        self,
        state: SRBState,
        action: np.ndarray,
        ext_force=None,
        ref_sample: srb.RefSample | None = None,
        base_phase_rate: float | None = None,
        contact_override=None,
        landing_override=None,
        return_info: bool = False,
    ):
        """Advance one simulation step of length params.dt.

        `ext_force` is None or a (point, force) pair in global coordinates.
        The remaining optional arguments let controller blending inject its
        own reference sample, phase rate and contact schedule.
        """
        p = self.params
        dt = p.dt
        char = self.character
        action = np.asarray(action, dtype=float)

        injected_ref = ref_sample is not None
        if ref_sample is None:
            cached = self._sample_cache
            if (
                cached is not None
                and cached[0] == state.psi
                and cached[1] == state.cycle
            ):
                ref_sample = cached[2]
            else:
                ref_sample = srb.sample_reference(self.motion, state.psi, state.cycle)

        # desired acceleration from the action and the reference
        qdot_d = desired_velocity(ref_sample.qdot, action[4:])
        qdd_d = desired_acceleration(
            state.transform(),
            ref_sample.transform,
            state.qdot,
            qdot_d,
            p.pd_gain_pos,
            p.pd_gain_vel,
        )

        # dynamics bias: gyroscopic + Coriolis - gravity, in body frame
        omega = state.qdot[:3]
        v_body = state.qdot[3:]
        bias = np.empty(6)
        bias[:3] = _cross3(omega, char.inertia @ omega)
        bias[3:] = char.mass * _cross3(omega, v_body) + char.mass * p.gravity * state.rot[1, :]

        points, bases = self.contact_points(state)
        n_c = len(points)
        if n_c:
            j_c = np.zeros((3 * n_c, 6))
            for i, point in enumerate(points):
                self._fill_point_jacobian(
                    j_c[3 * i : 3 * i + 3], state.rot, state.pos, point
                )
            b_mat = qp.friction_matrix(bases)
        else:
            j_c = np.zeros((0, 6))
            b_mat = np.zeros((0, 0))

        if ext_force is not None:
            f_point, f_vec = ext_force
            j_f = self._point_jacobian(state, np.asarray(f_point, dtype=float))
            f_e = np.asarray(f_vec, dtype=float)
        else:
            j_f, f_e = None, None

        problem = self._assemble(j_c, b_mat, bias, j_f, f_e, qdd_d)
        warm = None
        if self._warm is not None and self._warm[0] == b_mat.shape[1]:
            warm = self._warm[1]
        try:
            sol = qp.solve_qp(
                problem,
                max_iter=p.max_qp_iter,
                warm_start=warm,
                warm_cache=self._warm_cache,
            )
        except Exception as exc:  # carry diagnostics per the step contract
            raise SimulationError(
                f"QP failed at t={state.time:.3f} psi={state.psi:.3f}: {exc}"
            ) from exc
        self._warm = (b_mat.shape[1], sol.active_bounds)
        qdd = sol.x[:6]
        lam = sol.x[6:]

        # integrate: angular semi-implicit, linear trapezoidal in global frame
        omega_new = omega + dt * qdd[:3]
        a_global = state.rot @ (qdd[3:] + _cross3(omega, v_body))
        pdot = state.rot @ v_body
        pdot_new = pdot + dt * a_global
        pos_new = state.pos + dt * pdot + 0.5 * dt * dt * a_global
        rot_new = state.rot @ spatial.exp_so3(dt * omega_new)
        qdot_new = np.empty(6)
        qdot_new[:3] = omega_new
        qdot_new[3:] = rot_new.T @ pdot_new

        # phase rate: stride and contact-timing adjustments
        base_rate = (
            self.motion.phase_rate if base_phase_rate is None else base_phase_rate
        )
        ref_pdot = ref_sample.transform.rotation @ ref_sample.qdot[3:]
        delta_v = float(np.linalg.norm((pos_new - state.pos) / dt - ref_pdot))
        stride = stride_phase_factor(
            delta_v, self.motion.average_speed, p.stride_beta, p.stride_literal_form
        )
        ground = 0.0 if self.terrain is None else self.terrain.height(
            state.pos[0], state.pos[2]
        )
        timing = contact_phase_multiplier(
            state.pos[1] - ground,
            self.motion,
            state.psi,
            p.late_contact_threshold,
            p.early_contact_threshold,
            p.contact_window,
            ref_height=ref_sample.height,
        )
        rate = base_rate * stride * timing
        psi_total = state.psi + rate * dt
        cycle_new = state.cycle + int(psi_total // TWO_PI)
        psi_new = float(np.mod(psi_total, TWO_PI))

        new_state = SRBState(
            rot=rot_new,
            pos=pos_new,
            qdot=qdot_new,
            feet=state.feet,
            psi=psi_new,
            cycle=cycle_new,
            phase_rate=rate,
            time=state.time + dt,
        )
        ref_new = None
        if not injected_ref and contact_override is None:
            ref_new = srb.sample_reference(self.motion, psi_new, cycle_new)
            self._sample_cache = (psi_new, cycle_new, ref_new)
        new_state.feet = update_foot_states(
            new_state,
            action,
            self.motion,
            dt,
            self.terrain,
            self.gains,
            psi_new,
            phi=self._phi,
            contact_override=contact_override,
            landing_override=landing_override,
            ref_sample=ref_new,
        )

        if return_info:
            total_force = (
                b_mat @ lam if n_c else np.zeros(3 * max(n_c, 1))
            )
            force = total_force.reshape(-1, 3).sum(axis=0) if n_c else np.zeros(3)
            info = StepInfo(
                qdd=qdd,
                lam=lam,
                contact_force=force,
                qdd_desired=qdd_d,
                qp_iterations=sol.iterations,
                phase_factor_stride=stride,
                phase_factor_contact=timing,
            )
            return new_state, info
        return new_state
