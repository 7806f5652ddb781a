"""Five-joint assembly arm: closed-form kinematics and trajectory generation.

Chain layout (zero pose fully extended along the base z axis):

    base --Rz(th1)--> lift d1 --Ry(th2)--> link a2 --Ry(th3)--> link a3
         --Ry(th4)--> tool offset d5 --Rz(th5)--> end

th1 yaws about the base z axis, th2..th4 pitch about parallel axes forming
a planar three-link subchain, and th5 rolls about the tool axis.  Link
lengths are 1, 1.5, 1.5 and 1 module side lengths.

Forward kinematics is implemented in closed form; the test suite checks it
against a numeric product of the elementary transforms.  Inverse
kinematics enumerates every branch (shoulder half-turn times elbow sign)
and is validated by forward/inverse round trips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class KinematicsError(Exception):
    pass


class LimitViolationError(KinematicsError):
    def __init__(self, joint: int, value: float, t: float | None = None):
        self.joint = joint
        self.value = value
        self.t = t
        where = f" at t={t:.4f}s" if t is not None else ""
        super().__init__(f"joint {joint + 1} value {value:.4f} rad out of limits{where}")


class NonOrthonormalPoseError(KinematicsError):
    pass


class UnreachableSampleError(KinematicsError):
    pass


class BranchDiscontinuityError(KinematicsError):
    pass


@dataclass(frozen=True)
class ArmGeometry:
    """Link lengths in units of the module side length L."""

    L: float = 1.0
    joint_limits: tuple[tuple[float, float], ...] = field(
        default=((-math.pi, math.pi),) * 5
    )

    @property
    def d1(self) -> float:
        return 1.0 * self.L

    @property
    def a2(self) -> float:
        return 1.5 * self.L

    @property
    def a3(self) -> float:
        return 1.5 * self.L

    @property
    def d5(self) -> float:
        return 1.0 * self.L

    @property
    def max_reach(self) -> float:
        return self.d1 + self.a2 + self.a3 + self.d5


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def check_limits(q, geo: ArmGeometry, t: float | None = None) -> None:
    for i, (lo, hi) in enumerate(geo.joint_limits):
        if not lo - 1e-12 <= q[i] <= hi + 1e-12:
            raise LimitViolationError(i, float(q[i]), t)


def forward_kinematics(q, geo: ArmGeometry = ArmGeometry()) -> np.ndarray:
    """End-effector pose as a 4x4 homogeneous transform (closed form)."""
    check_limits(q, geo)
    th1, th2, th3, th4, th5 = (float(v) for v in q)
    c1, s1 = math.cos(th1), math.sin(th1)
    c5, s5 = math.cos(th5), math.sin(th5)
    phi = th2 + th3 + th4
    cp, sp = math.cos(phi), math.sin(phi)
    radial = (
        geo.a2 * math.sin(th2)
        + geo.a3 * math.sin(th2 + th3)
        + geo.d5 * sp
    )
    height = (
        geo.d1
        + geo.a2 * math.cos(th2)
        + geo.a3 * math.cos(th2 + th3)
        + geo.d5 * cp
    )
    pose = np.array([
        [c1 * cp * c5 - s1 * s5, -c1 * cp * s5 - s1 * c5, c1 * sp, c1 * radial],
        [s1 * cp * c5 + c1 * s5, -s1 * cp * s5 + c1 * c5, s1 * sp, s1 * radial],
        [-sp * c5, sp * s5, cp, height],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return pose


def elementary_transforms(q, geo: ArmGeometry = ArmGeometry()) -> list[np.ndarray]:
    """The chain as individual 4x4 factors (used as an independent check)."""

    def rz(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])

    def ry(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, 0, s, 0], [0, 1, 0, 0], [-s, 0, c, 0], [0, 0, 0, 1.0]])

    def tz(d):
        m = np.eye(4)
        m[2, 3] = d
        return m

    th1, th2, th3, th4, th5 = (float(v) for v in q)
    return [rz(th1), tz(geo.d1), ry(th2), tz(geo.a2), ry(th3), tz(geo.a3),
            ry(th4), tz(geo.d5), rz(th5)]


def check_pose(pose: np.ndarray, tol: float = 1e-6) -> None:
    pose = np.asarray(pose, dtype=float)
    if pose.shape != (4, 4):
        raise NonOrthonormalPoseError(f"pose must be 4x4, got {pose.shape}")
    r = pose[:3, :3]
    if not np.allclose(r.T @ r, np.eye(3), atol=tol):
        raise NonOrthonormalPoseError("rotation block is not orthonormal")
    if np.linalg.det(r) < 0:
        raise NonOrthonormalPoseError("rotation block has negative determinant")
    if not np.allclose(pose[3], [0, 0, 0, 1], atol=tol):
        raise NonOrthonormalPoseError("bottom row must be (0, 0, 0, 1)")


def inverse_kinematics(
    pose: np.ndarray,
    geo: ArmGeometry = ArmGeometry(),
    tol: float | None = None,
) -> list[np.ndarray]:
    """All joint vectors reproducing `pose`, empty when unreachable.

    Up to four branches: the shoulder half-turn ambiguity times the elbow
    sign.  Every returned solution satisfies the forward model to within
    `tol` (default 1e-6 * L) per matrix entry.
    """
    check_pose(pose)
    if tol is None:
        tol = 1e-6 * geo.L
    p = pose[:3, 3]
    r13, r23, r33 = pose[0, 2], pose[1, 2], pose[2, 2]
    wrist = p - geo.d5 * pose[:3, 2]
    wx, wy, wz = float(wrist[0]), float(wrist[1]), float(wrist[2])

    if math.hypot(wx, wy) > 1e-9:
        base = math.atan2(wy, wx)
        th1_candidates = [base, wrap_angle(base + math.pi)]
    elif math.hypot(float(r13), float(r23)) > 1e-9:
        # Wrist on the base axis; recover the yaw from the tool direction.
        base = math.atan2(float(r23), float(r13))
        th1_candidates = [base, wrap_angle(base + math.pi)]
    else:
        th1_candidates = [0.0]  # full gimbal: yaw is absorbed by the roll

    solutions: list[np.ndarray] = []
    for th1 in th1_candidates:
        c1, s1 = math.cos(th1), math.sin(th1)
        rho = c1 * wx + s1 * wy
        zeta = wz - geo.d1
        d = (rho * rho + zeta * zeta - geo.a2**2 - geo.a3**2) / (2 * geo.a2 * geo.a3)
        if abs(d) > 1.0 + 1e-9:
            continue
        d = max(-1.0, min(1.0, d))
        for th3 in (math.acos(d), -math.acos(d)):
            th2 = math.atan2(rho, zeta) - math.atan2(
                geo.a3 * math.sin(th3), geo.a2 + geo.a3 * math.cos(th3)
            )
            sp = c1 * float(r13) + s1 * float(r23)
            cp = float(r33)
            phi = math.atan2(sp, cp)
            th4 = wrap_angle(phi - th2 - th3)
            if abs(sp) > 1e-9:
                th5 = math.atan2(pose[2, 1] / sp, -pose[2, 0] / sp)
            elif cp > 0:  # phi = 0: rotation is Rz(th1 + th5)
                th5 = wrap_angle(math.atan2(pose[1, 0], pose[0, 0]) - th1)
            else:  # phi = pi: rotation is Rz(th1) Ry(pi) Rz(th5)
                th5 = wrap_angle(th1 - math.atan2(-pose[1, 0], pose[1, 1]))
            q = np.array([wrap_angle(th1), wrap_angle(th2), th3, th4, th5])
            try:
                check_limits(q, geo)
            except LimitViolationError:
                continue
            if np.max(np.abs(forward_kinematics(q, geo) - pose)) < tol:
                if not any(np.max(np.abs(q - s)) < 1e-9 for s in solutions):
                    solutions.append(q)
    solutions.sort(key=lambda s: tuple(s))
    return solutions


def joint_distance(qa, qb) -> float:
    """Max-norm joint displacement with angle wrapping."""
    return max(abs(wrap_angle(float(a) - float(b))) for a, b in zip(qa, qb))


def is_singular_yaw_exchange(q_prev, q, tol: float) -> bool:
    """True when two joint vectors differ only by the gimbal self-motion.

    With the wrist on the base axis and the tool vertical, yaw and roll
    trade off without moving the end effector (theta1 + theta5 constant
    for an upright tool, theta1 - theta5 for an inverted one).  Such jumps
    between consecutive samples keep the Cartesian path continuous.
    """
    for a, b in zip(q_prev[1:4], q[1:4]):
        if abs(wrap_angle(float(a) - float(b))) >= tol:
            return False
    phi = float(q[1] + q[2] + q[3])
    sign = 1.0 if math.cos(phi) >= 0 else -1.0
    combo_prev = float(q_prev[0]) + sign * float(q_prev[4])
    combo = float(q[0]) + sign * float(q[4])
    return abs(wrap_angle(combo - combo_prev)) < tol


def select_branch(solutions, current) -> np.ndarray:
    """The solution nearest `current`; ties break lexicographically."""
    if not solutions:
        raise KinematicsError("no solutions to select from")
    return min(solutions, key=lambda q: (joint_distance(q, current), tuple(q)))


@dataclass(frozen=True)
class QuinticSegment:
    """theta(t) = sum alpha_k t^k for t in [0, T]."""

    coeffs: tuple[float, ...]  # alpha0 .. alpha5
    duration: float

    def position(self, t: float) -> float:
        acc = 0.0
        for a in reversed(self.coeffs):
            acc = acc * t + a
        return acc

    def velocity(self, t: float) -> float:
        acc = 0.0
        for k in range(5, 0, -1):
            acc = acc * t + k * self.coeffs[k]
        return acc

    def acceleration(self, t: float) -> float:
        acc = 0.0
        for k in range(5, 1, -1):
            acc = acc * t + k * (k - 1) * self.coeffs[k]
        return acc


def quintic_coeffs(
    theta0: float, vel0: float, acc0: float,
    theta_t: float, vel_t: float, acc_t: float,
    duration: float,
) -> QuinticSegment:
    """Unique quintic matching position, velocity and acceleration endpoints."""
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    t = duration
    a0, a1, a2 = theta0, vel0, acc0 / 2.0
    # Remaining three coefficients from the endpoint constraints.
    m = np.array([
        [t**3, t**4, t**5],
        [3 * t**2, 4 * t**3, 5 * t**4],
        [6 * t, 12 * t**2, 20 * t**3],
    ])
    b = np.array([
        theta_t - (a0 + a1 * t + a2 * t * t),
        vel_t - (a1 + 2 * a2 * t),
        acc_t - 2 * a2,
    ])
    a3, a4, a5 = np.linalg.solve(m, b)
    return QuinticSegment((a0, a1, a2, float(a3), float(a4), float(a5)), duration)


def joint_trajectory(
    q0,
    q1,
    duration: float = 2.0,
    dt: float = 0.02,
    geo: ArmGeometry = ArmGeometry(),
) -> list[tuple[float, np.ndarray, np.ndarray]]:
    """Rest-to-rest per-joint quintic sweep sampled every dt seconds.

    Returns (t, joints, joint velocities) triples with exact endpoints.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not 0 < dt <= duration:
        raise ValueError("dt must be in (0, duration]")
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    segments = [
        quintic_coeffs(float(a), 0, 0, float(b), 0, 0, duration)
        for a, b in zip(q0, q1)
    ]
    steps = max(1, int(round(duration / dt)))
    samples = []
    for i in range(steps + 1):
        t = duration * i / steps
        q = np.array([seg.position(t) for seg in segments])
        v = np.array([seg.velocity(t) for seg in segments])
        if i == 0:
            q, v = q0.copy(), np.zeros_like(q0)
        elif i == steps:
            q, v = q1.copy(), np.zeros_like(q1)
        for j in range(len(q)):
            lo, hi = geo.joint_limits[j]
            if not lo - 1e-12 <= q[j] <= hi + 1e-12:
                raise LimitViolationError(j, float(q[j]), t)
        samples.append((t, q, v))
    return samples


def _rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix."""
    cos_angle = (np.trace(r) - 1.0) / 2.0
    cos_angle = max(-1.0, min(1.0, cos_angle))
    angle = math.acos(cos_angle)
    if angle < 1e-12:
        return np.zeros(3)
    if angle > math.pi - 1e-6:
        # Near pi: extract the axis from the symmetric part.
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        # Fix signs using the largest component.
        k = int(np.argmax(axis))
        if axis[k] < 1e-12:
            return np.zeros(3)
        signs = np.ones(3)
        for i in range(3):
            if i != k:
                signs[i] = 1.0 if m[k, i] >= 0 else -1.0
        axis = axis * signs * np.sign(axis[k])
        return angle * axis / np.linalg.norm(axis)
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return angle * axis / (2.0 * math.sin(angle))


def _rotation_exp(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    if angle < 1e-12:
        return np.eye(3)
    axis = w / angle
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def interpolate_pose(pose0: np.ndarray, pose1: np.ndarray, s: float) -> np.ndarray:
    """Straight-line translation and shortest-rotation blend at parameter s."""
    out = np.eye(4)
    out[:3, 3] = (1 - s) * pose0[:3, 3] + s * pose1[:3, 3]
    r0 = pose0[:3, :3]
    w = _rotation_log(r0.T @ pose1[:3, :3])
    out[:3, :3] = r0 @ _rotation_exp(s * w)
    return out


def cartesian_line_trajectory(
    pose0: np.ndarray,
    pose1: np.ndarray,
    duration: float = 2.0,
    dt: float = 0.02,
    current=None,
    geo: ArmGeometry = ArmGeometry(),
    max_joint_step: float = 0.2,
) -> list[tuple[float, np.ndarray]]:
    """Track a straight Cartesian segment with quintic time scaling.

    Each sample is solved by inverse kinematics and chained through
    select_branch from the previous sample.  If a sample is unreachable
    the segment is retried once at half dt before failing.
    """
    if duration <= 0 or not 0 < dt <= duration:
        raise ValueError("invalid duration or dt")
    check_pose(pose0)
    check_pose(pose1)
    if current is None:
        seeds = inverse_kinematics(pose0, geo)
        if not seeds:
            raise UnreachableSampleError("segment start pose is unreachable")
        current = seeds[0]

    def solve(retrying: bool) -> list[tuple[float, np.ndarray]]:
        scale = quintic_coeffs(0.0, 0, 0, 1.0, 0, 0, duration)
        steps = max(1, int(round(duration / (dt / 2 if retrying else dt))))
        samples = []
        q_prev = np.asarray(current, dtype=float)
        for i in range(steps + 1):
            t = duration * i / steps
            s = min(1.0, max(0.0, scale.position(t)))
            pose_t = interpolate_pose(pose0, pose1, s)
            branches = inverse_kinematics(pose_t, geo)
            if not branches:
                raise UnreachableSampleError(
                    f"unreachable pose at t={t:.4f}s (s={s:.4f})"
                )
            q = select_branch(branches, q_prev)
            if i > 0 and joint_distance(q, q_prev) >= max_joint_step \
                    and not is_singular_yaw_exchange(q_prev, q, max_joint_step):
                raise BranchDiscontinuityError(
                    f"joint jump {joint_distance(q, q_prev):.4f} rad at t={t:.4f}s"
                )
            samples.append((t, q))
            q_prev = q
        return samples

    try:
        return solve(retrying=False)
    except UnreachableSampleError:
        return solve(retrying=True)


def trajectory_to_csv(samples) -> str:
    """CSV dump of joint samples: t, th1..th5 (radians, seconds)."""
    lines = ["t,th1,th2,th3,th4,th5"]
    for entry in samples:
        t, q = entry[0], entry[1]
        lines.append(f"{t}," + ",".join(f"{float(v)}" for v in q))
    return "\n".join(lines) + "\n"
