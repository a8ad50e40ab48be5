"""SRB character definition and phase-indexed reference motions.

A reference SRB motion stores one gait cycle sampled uniformly over the
phase interval [0, 2pi). Motions that translate carry a per-cycle offset
translation so trackers can follow them for any number of cycles: the
sample at cycle c is the canonical sample shifted by c times the offset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import spatial
from .errors import InvalidInputError, ParseError

TWO_PI = 2.0 * np.pi


@dataclass
class SRBCharacter:
    """Box-shaped rigid body with two feet carrying four contact points."""

    mass: float
    inertia: np.ndarray  # 3x3 body-frame, about the COM
    foot_heel: np.ndarray  # heel offset in the foot frame, meters
    foot_toe: np.ndarray
    n_feet: int = 2

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.inertia_inv = np.linalg.inv(self.inertia)
        self.m_matrix = np.zeros((6, 6))
        self.m_matrix[:3, :3] = self.inertia
        self.m_matrix[3:, 3:] = self.mass * np.eye(3)

    @property
    def n_contact_points(self) -> int:
        return 2 * self.n_feet


def box_inertia(mass: float, extents) -> np.ndarray:
    """Inertia of a solid box about its center; extents are (x, y, z) sizes."""
    w, h, d = extents
    return (
        mass
        / 12.0
        * np.diag([h * h + d * d, w * w + d * d, w * w + h * h])
    )


def build_srb_character(
    mass: float = 60.0,
    box_extents=(0.3, 0.6, 0.2),
    inertia=None,
    foot_heel=(0.0, 0.0, -0.06),
    foot_toe=(0.0, 0.0, 0.12),
) -> SRBCharacter:
    """Build the SRB character; inertia defaults to the box formula."""
    if mass <= 0.0:
        raise InvalidInputError(f"mass must be positive, got {mass}")
    if inertia is None:
        if min(box_extents) <= 0.0:
            raise InvalidInputError(f"box extents must be positive: {box_extents}")
        inertia = box_inertia(mass, box_extents)
    inertia = np.asarray(inertia, dtype=float)
    if np.max(np.abs(inertia - inertia.T)) > 1e-9 or np.any(
        np.linalg.eigvalsh(inertia) <= 0.0
    ):
        raise InvalidInputError("inertia must be symmetric positive definite")
    heel = np.asarray(foot_heel, dtype=float)
    toe = np.asarray(foot_toe, dtype=float)
    if np.allclose(heel, toe):
        raise InvalidInputError("heel and toe offsets must be distinct")
    return SRBCharacter(mass=float(mass), inertia=inertia, foot_heel=heel, foot_toe=toe)


@dataclass
class RefSample:
    """Reference quantities interpolated at one phase value."""

    psi: float
    transform: spatial.RigidTransform
    qdot: np.ndarray  # body-frame (angular, linear)
    foot_pos: np.ndarray  # (2, 3) global
    foot_yaw: np.ndarray  # (2,) yaw relative to the motion heading
    contacts: np.ndarray  # (2, 2, 3) global contact points, [foot][heel, toe]
    contact: np.ndarray  # (2,) bool, from the contact intervals
    height: float

    def heading(self) -> np.ndarray:
        return spatial.yaw_only(self.transform.rotation)

    def foot_yaw_global(self, foot: int) -> float:
        return spatial.heading_angle(self.transform.rotation) + float(
            self.foot_yaw[foot]
        )


@dataclass
class ReferenceSRBMotion:
    """Phase-indexed SRB reference: COM frames, velocities, feet, contacts."""

    cycle_duration: float
    sample_rate: float
    psi: np.ndarray  # (n,) uniform grid on [0, 2pi)
    rot: np.ndarray  # (n, 3, 3)
    pos: np.ndarray  # (n, 3)
    qdot: np.ndarray  # (n, 6) body frame
    foot_pos: np.ndarray  # (n, 2, 3)
    foot_yaw: np.ndarray  # (n, 2) relative to heading
    contacts: np.ndarray  # (n, 2, 2, 3)
    contact_intervals: list  # per foot: list of (touch_down, lift_off) phases
    average_speed: float
    cycle_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def n_samples(self) -> int:
        return self.psi.shape[0]

    @property
    def phase_rate(self) -> float:
        """Reference phase velocity d psi/dt in rad/s."""
        return TWO_PI / self.cycle_duration

    def contact_flag(self, psi: float, foot: int) -> bool:
        """Contact state from the intervals; half-open [touch_down, lift_off)."""
        p = float(np.mod(psi, TWO_PI))
        for td, lo in self.contact_intervals[foot]:
            if td <= lo:
                if td <= p < lo:
                    return True
            elif p >= td or p < lo:  # interval wraps through 2pi
                return True
        return False

    def next_touch_down(self, psi: float, foot: int) -> float:
        """Phase distance (>= 0) from psi to the foot's next touch-down."""
        p = float(np.mod(psi, TWO_PI))
        dists = [np.mod(td - p, TWO_PI) for td, _ in self.contact_intervals[foot]]
        return float(min(dists)) if dists else np.inf

    def next_lift_off(self, psi: float, foot: int) -> float:
        p = float(np.mod(psi, TWO_PI))
        dists = [np.mod(lo - p, TWO_PI) for _, lo in self.contact_intervals[foot]]
        return float(min(dists)) if dists else np.inf

    def validate(self):
        n = self.n_samples
        if n < 2:
            raise InvalidInputError("reference motion needs at least 2 samples")
        spacing = np.diff(self.psi)
        if np.max(np.abs(spacing - TWO_PI / n)) > 1e-9:
            raise InvalidInputError("phase grid is not uniform")
        if self.average_speed < 0.0:
            raise InvalidInputError("average speed must be nonnegative")
        for foot, intervals in enumerate(self.contact_intervals):
            marks = np.zeros(n, dtype=bool)
            for k in range(n):
                marks[k] = self.contact_flag(self.psi[k], foot)
            # contact points must stay put while the foot is planted,
            # including across the cycle seam (next cycle shifts by the
            # cycle offset)
            for k in range(n):
                k1 = (k + 1) % n
                if not (marks[k] and marks[k1]):
                    continue
                nxt = self.contacts[k1, foot] + (self.cycle_offset if k1 == 0 else 0.0)
                drift = np.max(np.abs(nxt - self.contacts[k, foot]))
                if drift > 1e-6:
                    raise InvalidInputError(
                        f"foot {foot} contact points move {drift:.2e} m "
                        "during stance"
                    )
        return self


def sample_reference(
    motion: ReferenceSRBMotion, psi: float, cycle: int = 0
) -> RefSample:
    """Interpolate the reference at phase psi (wrapped into [0, 2pi)).

    Positions and velocities interpolate linearly, orientations spherically.
    `cycle` shifts positions by that many cycle offsets for unwrapped
    tracking of translating motions.
    """
    n = motion.n_samples
    if n == 0:
        raise InvalidInputError("empty reference motion")
    p = psi % TWO_PI
    u = p * n / TWO_PI
    k0 = int(u)
    w = u - k0
    k0 %= n
    k1 = k0 + 1
    if k1 == n:
        k1 = 0

    shift = cycle * motion.cycle_offset if cycle else None

    if w < 1e-12:
        rot = motion.rot[k0]
        pos = motion.pos[k0]
        qdot = motion.qdot[k0].copy()
        foot_pos = motion.foot_pos[k0]
        foot_yaw = motion.foot_yaw[k0].copy()
        contacts = motion.contacts[k0]
        if shift is None:
            pos = pos.copy()
            foot_pos = foot_pos.copy()
            contacts = contacts.copy()
    else:
        r0, r1 = motion.rot[k0], motion.rot[k1]
        rot = r0 if np.array_equal(r0, r1) else spatial.slerp(r0, r1, w)
        wrap_shift = motion.cycle_offset if k1 == 0 else 0.0
        v = 1.0 - w
        pos = v * motion.pos[k0] + w * (motion.pos[k1] + wrap_shift)
        qdot = v * motion.qdot[k0] + w * motion.qdot[k1]
        foot_pos = v * motion.foot_pos[k0] + w * (motion.foot_pos[k1] + wrap_shift)
        dyaw = [
            spatial.wrap_angle(motion.foot_yaw[k1, j] - motion.foot_yaw[k0, j])
            for j in range(motion.foot_yaw.shape[1])
        ]
        foot_yaw = motion.foot_yaw[k0] + w * np.asarray(dyaw)
        contacts = v * motion.contacts[k0] + w * (motion.contacts[k1] + wrap_shift)
    if shift is not None:
        pos = pos + shift
        foot_pos = foot_pos + shift
        contacts = contacts + shift

    contact = np.array(
        [motion.contact_flag(p, j) for j in range(motion.foot_pos.shape[1])]
    )
    return RefSample(
        psi=p,
        transform=spatial.RigidTransform(rot, pos),
        qdot=qdot,
        foot_pos=foot_pos,
        foot_yaw=foot_yaw,
        contacts=contacts,
        contact=contact,
        height=float(pos[1]),
    )


def foot_offset(motion: ReferenceSRBMotion, psi: float, foot: int) -> np.ndarray:
    """Reference foot position relative to the heading frame over the COM.

    o = (heading rotation)^-1 (foot position - COM projected to the ground);
    adding this to an action keeps zero-action landings on the reference.
    """
    ref = sample_reference(motion, psi)
    heading = ref.heading()
    return heading.T @ (ref.foot_pos[foot] - spatial.proj_y(ref.transform.translation))


def _smoothstep(u: float) -> float:
    """Quintic smoothstep: C2, zero end velocities."""
    u = min(max(u, 0.0), 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def synth_reference(
    kind: str,
    speed: float | None = None,
    cycle_duration: float = 1.2,
    duty_factor: float | None = None,
    com_height: float = 0.95,
    bob_amplitude: float = 0.02,
    step_width: float = 0.2,
    sample_rate: float = 60.0,
    heel_offset: float = -0.06,
    toe_offset: float = 0.12,
) -> ReferenceSRBMotion:
    """Generate a kinematically consistent synthetic gait cycle.

    Kinds: 'in_place_step' (speed forced to 0), 'walk' (default duty 0.6,
    requires at least one foot planted at all times) and 'run' (duty 0.35,
    flight phases allowed). The COM advances at constant speed along +z with
    a sinusoidal height bob; velocities are exact analytic derivatives.
    """
    if kind == "in_place_step":
        speed = 0.0
        duty = duty_factor if duty_factor is not None else 0.6
    elif kind == "walk":
        speed = 1.0 if speed is None else speed
        duty = duty_factor if duty_factor is not None else 0.6
        if duty < 0.5:
            raise InvalidInputError(
                f"walk duty factor {duty} < 0.5 leaves both feet in the air"
            )
    elif kind == "run":
        speed = 2.5 if speed is None else speed
        duty = duty_factor if duty_factor is not None else 0.35
    else:
        raise InvalidInputError(f"unknown reference kind {kind!r}")
    if cycle_duration <= 0.0 or not 0.05 <= duty <= 0.95:
        raise InvalidInputError("cycle duration or duty factor out of range")

    n = int(round(sample_rate * cycle_duration))
    stride = speed * cycle_duration
    omega_bob = 2.0 * TWO_PI / cycle_duration  # two steps per cycle

    psi = TWO_PI * np.arange(n) / n
    t = cycle_duration * np.arange(n) / n

    pos = np.zeros((n, 3))
    pos[:, 1] = com_height - bob_amplitude * np.cos(omega_bob * t)
    pos[:, 2] = speed * t
    rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    qdot = np.zeros((n, 6))
    qdot[:, 4] = bob_amplitude * omega_bob * np.sin(omega_bob * t)
    qdot[:, 5] = speed

    # foot schedule in cycle-normalized time u: left plants at u=0,
    # right at u=0.5, each for `duty`
    lateral = np.array([step_width / 2.0, -step_width / 2.0])
    phase_off = np.array([0.0, 0.5])

    foot_pos = np.zeros((n, 2, 3))
    foot_yaw = np.zeros((n, 2))
    contacts = np.zeros((n, 2, 2, 3))
    for k in range(n):
        u_cycle = k / n
        for j in range(2):
            u = np.mod(u_cycle - phase_off[j], 1.0)
            # foothold placed under the COM at mid-stance; r = -1 when the
            # ongoing stance or swing began in the previous cycle, so feet
            # stay continuous across the cycle seam once the per-cycle
            # offset is applied
            hold = phase_off[j] + duty / 2.0
            r = 0.0 if u_cycle >= phase_off[j] else -1.0
            if u < duty:
                z = stride * (hold + r)
            else:
                s = _smoothstep((u - duty) / (1.0 - duty))
                z = stride * (hold + r + s)
            foot_pos[k, j] = [lateral[j], 0.0, z]
            contacts[k, j, 0] = foot_pos[k, j] + [0.0, 0.0, heel_offset]
            contacts[k, j, 1] = foot_pos[k, j] + [0.0, 0.0, toe_offset]

    intervals = []
    for j in range(2):
        td = TWO_PI * phase_off[j]
        lo = np.mod(td + TWO_PI * duty, TWO_PI)
        intervals.append([(float(td), float(lo))])

    motion = ReferenceSRBMotion(
        cycle_duration=float(cycle_duration),
        sample_rate=float(sample_rate),
        psi=psi,
        rot=rot,
        pos=pos,
        qdot=qdot,
        foot_pos=foot_pos,
        foot_yaw=foot_yaw,
        contacts=contacts,
        contact_intervals=intervals,
        average_speed=float(speed),
        cycle_offset=np.array([0.0, 0.0, stride]),
    )
    return motion.validate()


def save_reference_motion(motion: ReferenceSRBMotion, path):
    """Write a reference motion as JSON (schema documented in the README)."""
    samples = []
    for k in range(motion.n_samples):
        feet = []
        for j in range(motion.foot_pos.shape[1]):
            feet.append(
                {
                    "pos": motion.foot_pos[k, j].tolist(),
                    "yaw": float(motion.foot_yaw[k, j]),
                    "contacts": motion.contacts[k, j].tolist(),
                }
            )
        samples.append(
            {
                "psi": float(motion.psi[k]),
                "T": motion.rot[k].reshape(9).tolist() + motion.pos[k].tolist(),
                "qdot": motion.qdot[k].tolist(),
                "feet": feet,
            }
        )
    doc = {
        "cycle_duration": motion.cycle_duration,
        "sample_rate": motion.sample_rate,
        "samples": samples,
        "contact_intervals": [
            [[float(td), float(lo)] for td, lo in per_foot]
            for per_foot in motion.contact_intervals
        ],
        "average_speed": motion.average_speed,
        "cycle_offset": motion.cycle_offset.tolist(),
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ParseError(f"missing field '{where}{key}'")
    return doc[key]


def load_reference_motion(path) -> ReferenceSRBMotion:
    """Load a reference motion JSON; load(save(m)) reproduces m."""
    with open(path) as f:
        doc = json.load(f)
    cycle_duration = _require(doc, "cycle_duration", "")
    sample_rate = _require(doc, "sample_rate", "")
    samples = _require(doc, "samples", "")
    intervals_doc = _require(doc, "contact_intervals", "")
    average_speed = _require(doc, "average_speed", "")
    if not samples:
        raise ParseError("field 'samples' is empty")

    n = len(samples)
    n_feet = len(_require(samples[0], "feet", "samples[0]."))
    psi = np.zeros(n)
    rot = np.zeros((n, 3, 3))
    pos = np.zeros((n, 3))
    qdot = np.zeros((n, 6))
    foot_pos = np.zeros((n, n_feet, 3))
    foot_yaw = np.zeros((n, n_feet))
    contacts = np.zeros((n, n_feet, 2, 3))
    for k, s in enumerate(samples):
        where = f"samples[{k}]."
        psi[k] = _require(s, "psi", where)
        t_flat = np.asarray(_require(s, "T", where), dtype=float)
        if t_flat.shape != (12,):
            raise ParseError(f"field '{where}T' must hold 12 floats")
        rot[k] = t_flat[:9].reshape(3, 3)
        pos[k] = t_flat[9:]
        qdot[k] = np.asarray(_require(s, "qdot", where), dtype=float)
        for j, foot in enumerate(_require(s, "feet", where)):
            fw = f"{where}feet[{j}]."
            foot_pos[k, j] = np.asarray(_require(foot, "pos", fw), dtype=float)
            foot_yaw[k, j] = _require(foot, "yaw", fw)
            contacts[k, j] = np.asarray(_require(foot, "contacts", fw), dtype=float)

    motion = ReferenceSRBMotion(
        cycle_duration=float(cycle_duration),
        sample_rate=float(sample_rate),
        psi=psi,
        rot=rot,
        pos=pos,
        qdot=qdot,
        foot_pos=foot_pos,
        foot_yaw=foot_yaw,
        contacts=contacts,
        contact_intervals=[
            [(float(td), float(lo)) for td, lo in per_foot]
            for per_foot in intervals_doc
        ],
        average_speed=float(average_speed),
        cycle_offset=np.asarray(doc.get("cycle_offset", [0.0, 0.0, 0.0]), dtype=float),
    )
    return motion.validate()
