"""Reinforcement-learning environment around the SRB simulator.

Observations (21 entries, or 22 with facing control):
  [0]      COM height above the terrain (projected SRB frame)
  [1:5]    COM orientation in the heading frame, unit quaternion (w >= 0)
  [5:11]   generalized velocity in heading-frame axes (angular, linear)
  [11:15]  left foot: planar offset from the projected frame origin (x, z)
           and heading-relative yaw as (cos, sin)
  [15:19]  right foot, same layout
  [19:21]  motion phase (sin psi, cos psi)
  [21]     facing-direction error, only in interactive mode

Actions (10 entries): desired landing offsets for the left and right foot
(x, z in the heading frame) followed by the desired relative generalized
velocity (angular, linear) in the body frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sim, spatial, srb

OBS_DIM = 21
ACT_DIM = 10


@dataclass
class RewardWeights:
    alive: float = 1.0  # r^s
    w_survive: float = 5.0  # w^s
    w_mimic: float = 0.1  # w^m
    w_posture: float = 5.0  # w^p
    w_end_effector: float = 0.4  # w^e
    w_delta_pos: float = 1.0  # w^p1
    w_delta_rot: float = 5.0  # w^p2
    w_pos: float = 5.0  # w^p3
    w_rot: float = 5.0  # w^p4


def default_action_bounds() -> np.ndarray:
    """Symmetric clamp bounds: 0.5 m foot offsets, 3 rad/s and 2 m/s."""
    return np.array([0.5] * 4 + [3.0] * 3 + [2.0] * 3)


def observe(
    state: sim.SRBState,
    terrain: sim.Terrain | None = None,
    facing_error: float | None = None,
) -> np.ndarray:
    """Observation vector in the projected / forward-facing SRB frames."""
    heading_yaw = spatial.heading_angle(state.rot)
    heading = spatial.rot_y(heading_yaw)
    ground = 0.0 if terrain is None else terrain.height(state.pos[0], state.pos[2])

    rel_rot = heading.T @ state.rot
    quat = spatial.quat_from_matrix(rel_rot)
    omega_ff = heading.T @ (state.rot @ state.qdot[:3])
    vel_ff = heading.T @ (state.rot @ state.qdot[3:])

    origin = np.array([state.pos[0], ground, state.pos[2]])
    out = np.empty(OBS_DIM if facing_error is None else OBS_DIM + 1)
    out[0] = state.pos[1] - ground
    out[1:5] = quat
    out[5:8] = omega_ff
    out[8:11] = vel_ff
    for j, foot in enumerate(state.feet):
        d = heading.T @ (foot.pos - origin)
        phi = spatial.wrap_angle(foot.yaw - heading_yaw)
        base = 11 + 4 * j
        out[base] = d[0]
        out[base + 1] = d[2]
        out[base + 2] = np.cos(phi)
        out[base + 3] = np.sin(phi)
    out[19] = np.sin(state.psi)
    out[20] = np.cos(state.psi)
    if facing_error is not None:
        out[21] = facing_error
    return out


def _projected_delta(rot_y, p0, p1):
    return rot_y.T @ (p1 - p0)


def posture_reward(
    prev_state: sim.SRBState,
    state: sim.SRBState,
    prev_ref: srb.RefSample,
    ref: srb.RefSample,
    weights: RewardWeights,
    terrain: sim.Terrain | None = None,
) -> float:
    """Posture error: step deltas plus absolute height and lean differences.

    All terms are expressed in the projected frame of the respective
    character, so the position terms compare heights and the rotation terms
    compare lean, not heading.
    """
    heading = spatial.yaw_only(prev_state.rot)
    ref_heading = spatial.yaw_only(prev_ref.transform.rotation)

    dp_sim = _projected_delta(heading, prev_state.pos, state.pos)
    dp_ref = _projected_delta(
        ref_heading, prev_ref.transform.translation, ref.transform.translation
    )
    delta_pos_err = float(np.linalg.norm(dp_sim - dp_ref))

    dr_sim = heading.T @ (state.rot @ prev_state.rot.T) @ heading
    dr_ref = ref_heading.T @ (
        ref.transform.rotation @ prev_ref.transform.rotation.T
    ) @ ref_heading
    delta_rot_err = spatial.rot_distance(dr_sim, dr_ref)

    ground = 0.0 if terrain is None else terrain.height(state.pos[0], state.pos[2])
    pos_err = abs((state.pos[1] - ground) - ref.height)

    lean_sim = spatial.yaw_only(state.rot).T @ state.rot
    lean_ref = spatial.yaw_only(ref.transform.rotation).T @ ref.transform.rotation
    rot_err = spatial.rot_distance(lean_sim, lean_ref)

    return (
        weights.w_delta_pos * delta_pos_err
        + weights.w_delta_rot * delta_rot_err
        + weights.w_pos * pos_err
        + weights.w_rot * rot_err
    )


def foot_contact_points(state: sim.SRBState, character: srb.SRBCharacter, foot: int):
    """Heel and toe positions of one foot from its pose."""
    f = state.feet[foot]
    r_yaw = spatial.rot_y(f.yaw)
    return (
        f.pos + r_yaw @ character.foot_heel,
        f.pos + r_yaw @ character.foot_toe,
    )


def end_effector_reward(
    state: sim.SRBState,
    ref: srb.RefSample,
    character: srb.SRBCharacter,
) -> float:
    """Squared contact-point error in the respective SRB frames.

    Only feet in contact in the reference contribute; swing feet are
    excluded.
    """
    total = 0.0
    rot_t = state.rot.T
    ref_rot_t = ref.transform.rotation.T
    for j in range(len(state.feet)):
        if not ref.contact[j]:
            continue
        sim_points = foot_contact_points(state, character, j)
        for k in range(2):
            c_local = rot_t @ (sim_points[k] - state.pos)
            ref_local = ref_rot_t @ (ref.contacts[j, k] - ref.transform.translation)
            diff = c_local - ref_local
            total += float(diff @ diff)
    return total


def reward(
    prev_state: sim.SRBState,
    state: sim.SRBState,
    prev_ref: srb.RefSample,
    ref: srb.RefSample,
    character: srb.SRBCharacter,
    weights: RewardWeights,
    terrain: sim.Terrain | None = None,
    alive: bool = True,
):
    """Tracking reward: survival bonus minus the weighted mimic error."""
    r_p = posture_reward(prev_state, state, prev_ref, ref, weights, terrain)
    r_e = end_effector_reward(state, ref, character)
    mimic = weights.w_posture * r_p + weights.w_end_effector * r_e
    alive_term = weights.alive if alive else 0.0
    r = weights.w_survive * alive_term - weights.w_mimic * mimic
    return r, r_p, r_e


def interactive_reward(r: float, delta_y: float, w_c: float) -> float:
    """Facing-direction reward shaping, applied verbatim:

    r^c = exp(-r) * exp(-w_c (cos(delta_y) - 1)).
    """
    return float(np.exp(-r) * np.exp(-w_c * (np.cos(delta_y) - 1.0)))


def check_termination(
    state: sim.SRBState,
    ref: srb.RefSample,
    episode_time: float,
    terrain: sim.Terrain | None = None,
    time_limit: float = 3.0,
):
    """(terminated, truncated, reason) for the episode kill conditions.

    Failure: COM height outside (min(0.7 ref_height, 0.2), 2.0) or body
    vertical axis tilted more than 70 degrees. Truncation: episode past the
    time limit.
    """
    ground = 0.0 if terrain is None else terrain.height(state.pos[0], state.pos[2])
    height = state.pos[1] - ground
    low = min(0.7 * ref.height, 0.2)
    if height <= low:
        return True, False, f"height {height:.3f} <= {low:.3f}"
    if height >= 2.0:
        return True, False, f"height {height:.3f} >= 2.0"
    tilt = np.arccos(np.clip(state.rot[1, 1], -1.0, 1.0))
    if tilt > np.deg2rad(70.0):
        return True, False, f"tilt {np.degrees(tilt):.1f} deg > 70"
    if episode_time > time_limit:
        return False, True, "time limit"
    return False, False, None


class TrackingEnv:
    """Episodic motion-tracking environment on the SRB simulator."""

    def __init__(
        self,
        character: srb.SRBCharacter,
        motion: srb.ReferenceSRBMotion,
        terrain: sim.Terrain | None = None,
        sim_params: sim.SimParams | None = None,
        weights: RewardWeights | None = None,
        action_bounds: np.ndarray | None = None,
        time_limit: float = 3.0,
        seed: int = 0,
        facing_stream=None,  # (time, heading) command source for 22-dim obs
        facing_weight: float = 1.0,
        ext_force_fn=None,  # callable(state) -> None | (point, force)
    ):
        self.character = character
        self.motion = motion
        self.terrain = terrain
        self.simulator = sim.Simulator(character, motion, terrain, sim_params)
        self.weights = weights or RewardWeights()
        self.bounds = (
            default_action_bounds() if action_bounds is None else action_bounds
        )
        self.time_limit = time_limit
        self.rng = np.random.default_rng(seed)
        self.facing_stream = facing_stream
        self.facing_weight = facing_weight
        self.ext_force_fn = ext_force_fn
        self.state: sim.SRBState | None = None
        self.episode_time = 0.0
        self._prev_ref: srb.RefSample | None = None

    @property
    def obs_dim(self) -> int:
        return OBS_DIM + (1 if self.facing_stream is not None else 0)

    @property
    def act_dim(self) -> int:
        return ACT_DIM

    def _facing_error(self, state):
        if self.facing_stream is None:
            return None
        desired = self.facing_stream(state.time)
        return spatial.wrap_angle(desired - spatial.heading_angle(state.rot))

    def clamp(self, action: np.ndarray) -> np.ndarray:
        return np.clip(action, -self.bounds, self.bounds)

    def reset(self, phase: float | None = None) -> np.ndarray:
        """Reference-state initialization at a (by default random) phase."""
        if phase is None:
            phase = float(self.rng.uniform(0.0, 2.0 * np.pi))
        self.state = self.simulator.initial_state(phase)
        self.episode_time = 0.0
        self._prev_ref = srb.sample_reference(
            self.motion, self.state.psi, self.state.cycle
        )
        return observe(self.state, self.terrain, self._facing_error(self.state))

    def step(self, action: np.ndarray):
        """Returns (obs, reward, terminated, truncated, info)."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        action = self.clamp(np.asarray(action, dtype=float))
        prev_state = self.state
        prev_ref = self._prev_ref
        ext = self.ext_force_fn(prev_state) if self.ext_force_fn else None
        state = self.simulator.step(prev_state, action, ext_force=ext)
        ref = srb.sample_reference(self.motion, state.psi, state.cycle)
        self.state = state
        self._prev_ref = ref
        self.episode_time += self.simulator.params.dt

        terminated, truncated, reason = check_termination(
            state, ref, self.episode_time, self.terrain, self.time_limit
        )
        r, r_p, r_e = reward(
            prev_state,
            state,
            prev_ref,
            ref,
            self.character,
            self.weights,
            self.terrain,
            alive=not terminated,
        )
        facing = self._facing_error(state)
        if facing is not None:
            r = interactive_reward(r, facing, self.facing_weight)
        obs = observe(state, self.terrain, facing)
        info = {"r_p": r_p, "r_e": r_e, "reason": reason, "time": self.episode_time}
        return obs, r, terminated, truncated, info
