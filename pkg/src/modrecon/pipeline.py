"""End-to-end pipeline: module sequence planning, per-move arm routing,
trajectory generation, and replayable trace export.

For every handling action the arm base first walks (A* over the surface
map) to an exposed interface from which the whole motion is inverse-
kinematics reachable, then the end effector docks onto an exposed grip
face of the mover, extracts it, carries it past the base hover point, and
inserts it at the anchor's destination face.  The gripped face keeps a
fixed world orientation during the carry (placement preserves module
orientation), so every Cartesian segment runs at constant tool attitude.

Simplifications, by design: the walking arm occupies a single interface
vertex; only waypoint-level clearances are checked; base hops are emitted
as discrete frames with stowed joints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .a3c import NoPlanFoundError, PolicyValueNet, plan as policy_plan
from .encoding import bounding_box_for
from .kinematics import (
    ArmGeometry,
    cartesian_line_trajectory,
    forward_kinematics,
    inverse_kinematics,
    joint_trajectory,
    select_branch,
)
from .lattice import (
    Action,
    Configuration,
    Vec3,
    apply_action,
    config_from_dict,
    config_to_dict,
    configs_equal,
    exposed_faces,
    mismatch_count,
    validate,
)
from .routing import ApproachPlan, SurfacePath, approach_waypoints, astar, interface_pose
from .search import bfs_plan, greedy_mismatch_plan
from .surface import SurfaceGraph, build_map, decode_interface, interface_id, update_map

FORMAT_VERSION = 1
STOW_JOINTS = (0.0, 0.0, 0.0, 0.0, 0.0)


class PipelineError(Exception):
    pass


class UnreachablePickError(PipelineError):
    """No (base, grip face) pair was arm-reachable for a handling step."""


class ContinuityError(PipelineError):
    pass


@dataclass(frozen=True)
class PipelineOptions:
    clearance: float = 0.5
    segment_time: float = 2.0
    dt: float = 0.02
    walk_hop_time: float = 0.5
    planner: str = "auto"  # auto | policy | bfs | greedy
    max_steps: int = 64
    initial_base: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class PhaseTrajectory:
    name: str
    samples: tuple[tuple[float, tuple[float, ...]], ...]  # (t, joints)
    carried: bool  # True while the mover rides on the end effector


@dataclass(frozen=True)
class HandlingStep:
    action: Action
    arm_walk: SurfacePath
    pick: ApproachPlan
    place: ApproachPlan
    phases: tuple[PhaseTrajectory, ...]
    base_interface: int
    grip_interface: int
    place_interface: int


@dataclass(frozen=True)
class ReconfigurationPlan:
    steps: tuple[HandlingStep, ...]
    planner: str
    used_fallback: bool
    start: Configuration
    target: Configuration


@dataclass
class Trace:
    header: dict
    frames: list[dict] = field(default_factory=list)

    def __eq__(self, other):
        return isinstance(other, Trace) and self.header == other.header \
            and self.frames == other.frames


def _canonical_frame(z_axis: np.ndarray) -> np.ndarray:
    """Deterministic rotation matrix with the given z column."""
    z = z_axis / np.linalg.norm(z_axis)
    trial = np.array([1.0, 0.0, 0.0])
    if abs(float(np.dot(trial, z))) > 0.9:
        trial = np.array([0.0, 1.0, 0.0])
    x = trial - np.dot(trial, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def _base_transform(config: Configuration, base_iface: int) -> np.ndarray:
    """World-from-base homogeneous transform for an arm docked at an interface."""
    pose = interface_pose(config, base_iface)
    t = np.eye(4)
    t[:3, :3] = _canonical_frame(np.array(pose.normal, dtype=float))
    t[:3, 3] = np.array(pose.center)
    return t


def _to_base(world_from_base: np.ndarray, position: np.ndarray,
             rotation: np.ndarray) -> np.ndarray:
    pose = np.eye(4)
    pose[:3, :3] = rotation
    pose[:3, 3] = position
    return np.linalg.inv(world_from_base) @ pose


def _bfs_distances(graph: SurfaceGraph, source: int) -> dict[int, int]:
    adjacency = graph.adjacency()
    dist = {source: 0}
    frontier = [source]
    while frontier:
        nxt = []
        for node in frontier:
            for nbr in adjacency[node]:
                if nbr not in dist:
                    dist[nbr] = dist[node] + 1
                    nxt.append(nbr)
        frontier = nxt
    return dist


def _action_sequence(start: Configuration, target: Configuration,
                     options: PipelineOptions,
                     net: PolicyValueNet | None) -> tuple[list[Action], str, bool]:
    n = len(start.ids())
    mode = options.planner
    if mode == "auto":
        if net is not None:
            mode = "policy"
        elif n <= 6:
            mode = "bfs"
        else:
            mode = "greedy"
    if mode == "policy":
        if net is None:
            raise PipelineError("policy planner requested without a network")
        result = policy_plan(net, start, target, max_steps=options.max_steps)
        return list(result.actions), "policy", result.used_fallback
    if mode == "bfs":
        box = bounding_box_for([start, target], margin=2)
        actions = bfs_plan(start, target, max_depth=options.max_steps, box=box)
        if actions is None:
            raise NoPlanFoundError(mismatch_count(start, target))
        return actions, "bfs", True
    if mode == "greedy":
        actions = greedy_mismatch_plan(start, target, max_steps=options.max_steps)
        if actions is None:
            raise NoPlanFoundError(mismatch_count(start, target))
        return actions, "greedy", True
    raise PipelineError(f"unknown planner {options.planner!r}")


def _track_polyline(points, rotation, q_start, total_time, dt,
                    geo: ArmGeometry, world_from_base: np.ndarray):
    """Chain Cartesian segments through the waypoints at fixed attitude.

    Returns (samples, q_end) with samples as (t, joints) and t in [0, T].
    """
    pts = [np.asarray(p, dtype=float) for p in points]
    lengths = [float(np.linalg.norm(b - a)) for a, b in zip(pts, pts[1:])]
    total_len = sum(lengths)
    samples: list[tuple[float, tuple[float, ...]]] = []
    q_prev = np.asarray(q_start, dtype=float)
    t_offset = 0.0
    for (a, b), seg_len in zip(zip(pts, pts[1:]), lengths):
        if seg_len < 1e-12:
            continue
        share = seg_len / total_len if total_len > 0 else 1.0 / max(len(lengths), 1)
        seg_time = max(2 * dt, total_time * share)
        pose0 = _to_base(world_from_base, a, rotation)
        pose1 = _to_base(world_from_base, b, rotation)
        seg = cartesian_line_trajectory(pose0, pose1, seg_time, dt,
                                        current=q_prev, geo=geo)
        for t, q in seg:
            if samples and t <= 1e-12:
                continue  # shared boundary sample
            samples.append((t_offset + t, tuple(float(v) for v in q)))
        q_prev = seg[-1][1]
        t_offset += seg_time
    if not samples:
        samples = [(0.0, tuple(float(v) for v in q_prev))]
    return samples, q_prev


def _joint_phase(q0, q1, total_time, dt, geo) -> tuple[list, np.ndarray]:
    segs = joint_trajectory(np.asarray(q0, dtype=float), np.asarray(q1, dtype=float),
                            total_time, dt, geo)
    samples = [(t, tuple(float(v) for v in q)) for t, q, _ in segs]
    return samples, np.asarray(q1, dtype=float)


def _certify(poses, rotation, world_from_base, geo) -> list | None:
    """IK-solve every pose; returns per-pose solutions or None if any fails."""
    out = []
    for p in poses:
        sols = inverse_kinematics(_to_base(world_from_base, np.asarray(p, float),
                                           rotation), geo)
        if not sols:
            return None
        out.append(sols)
    return out


def _build_step(
    config: Configuration,
    graph: SurfaceGraph,
    action: Action,
    base_from: int,
    options: PipelineOptions,
    geo: ArmGeometry,
) -> HandlingStep:
    by_id = config.by_id()
    mover = by_id[action.mover]
    anchor_mod = by_id[action.anchor]
    n_place = anchor_mod.direction(action.face)
    dest: Vec3 = tuple(p + d for p, d in zip(anchor_mod.pos, n_place))
    place_iface = interface_id(action.anchor, action.face)
    occupied_after = {m.pos for m in config.modules if m.id != action.mover}
    occupied_after.add(dest)

    grip_candidates = []
    for face in sorted(exposed_faces(config, action.mover)):
        n_g = mover.direction(face)
        if tuple(-v for v in n_g) == tuple(n_place):
            continue  # the end would be sandwiched between module and anchor
        retract_cell = tuple(d + g for d, g in zip(dest, n_g))
        if retract_cell in occupied_after:
            continue  # grip face must stay exposed after placement
        grip_candidates.append((face, n_g))
    if not grip_candidates:
        raise UnreachablePickError(
            f"no grippable face on module {action.mover} for action {action}"
        )

    distances = _bfs_distances(graph, base_from)
    base_candidates = sorted(
        (dist, num) for num, dist in distances.items()
        if decode_interface(num)[0] != action.mover
    )

    clearance = options.clearance
    for _, base_iface in base_candidates:
        b_pose = interface_pose(config, base_iface)
        b_cell = tuple(int(round(c + 0.5 * n)) for c, n in
                       zip(b_pose.center, b_pose.normal))
        if b_cell == dest:
            continue  # placement would cover the base dock
        world_from_base = _base_transform(config, base_iface)
        for face, n_g in grip_candidates:
            grip_iface = interface_id(action.mover, face)
            g_pose = interface_pose(config, grip_iface)
            pick = approach_waypoints(g_pose, b_pose, clearance)
            place = approach_waypoints(b_pose, interface_pose(config, place_iface),
                                       clearance)
            rotation = _canonical_frame(-np.array(n_g, dtype=float))
            offset = 0.5 * np.array(n_place, dtype=float) + 0.5 * np.array(n_g, float)
            g_center = np.array(g_pose.center)
            seat = np.array(dest, dtype=float) + 0.5 * np.array(n_g, dtype=float)
            carry_in = [np.asarray(p) + offset for p in place.waypoints]
            check_poses = (
                [np.asarray(p) for p in pick.waypoints]
                + [g_center]
                + carry_in
                + [seat, seat + clearance * np.array(n_g, dtype=float)]
            )
            if _certify(check_poses, rotation, world_from_base, geo) is None:
                continue

            walk = astar(graph, base_from, base_iface, config)
            dt = options.dt
            seg_t = options.segment_time
            phases: list[PhaseTrajectory] = []
            reach_pts = list(reversed([np.asarray(p) for p in pick.waypoints]))
            reach_pts.append(g_center)
            first_pose = _to_base(world_from_base, reach_pts[0], rotation)
            first_sols = inverse_kinematics(first_pose, geo)
            q_entry = select_branch(first_sols, np.array(STOW_JOINTS))
            samples, q = _joint_phase(STOW_JOINTS, q_entry, seg_t, dt, geo)
            phases.append(PhaseTrajectory("deploy", tuple(samples), False))
            samples, q = _track_polyline(reach_pts, rotation, q, seg_t, dt, geo,
                                         world_from_base)
            phases.append(PhaseTrajectory("reach", tuple(samples), False))
            samples, q = _track_polyline(
                [g_center, np.asarray(pick.waypoints[0])], rotation, q,
                seg_t * 0.5, dt, geo, world_from_base)
            phases.append(PhaseTrajectory("extract", tuple(samples), True))
            carry_out = [np.asarray(p) for p in pick.waypoints]
            samples, q = _track_polyline(carry_out, rotation, q, seg_t, dt, geo,
                                         world_from_base)
            phases.append(PhaseTrajectory("carry_out", tuple(samples), True))
            samples, q = _track_polyline(
                [carry_out[-1], carry_in[0]], rotation, q, seg_t * 0.5, dt, geo,
                world_from_base)
            phases.append(PhaseTrajectory("adjust", tuple(samples), True))
            samples, q = _track_polyline(carry_in, rotation, q, seg_t, dt, geo,
                                         world_from_base)
            phases.append(PhaseTrajectory("carry_in", tuple(samples), True))
            samples, q = _track_polyline(
                [carry_in[-1], seat], rotation, q, seg_t * 0.5, dt, geo,
                world_from_base)
            phases.append(PhaseTrajectory("insert", tuple(samples), True))
            samples, q = _track_polyline(
                [seat, seat + clearance * np.array(n_g, dtype=float)],
                rotation, q, seg_t * 0.5, dt, geo, world_from_base)
            phases.append(PhaseTrajectory("retract", tuple(samples), False))
            samples, q = _joint_phase(q, STOW_JOINTS, seg_t, dt, geo)
            phases.append(PhaseTrajectory("stow", tuple(samples), False))

            return HandlingStep(
                action=action,
                arm_walk=walk,
                pick=pick,
                place=place,
                phases=tuple(phases),
                base_interface=base_iface,
                grip_interface=grip_iface,
                place_interface=place_iface,
            )
    raise UnreachablePickError(
        f"no reachable (base, grip) pair for action {action}"
    )


def plan_reconfiguration(
    start: Configuration,
    target: Configuration,
    options: PipelineOptions = PipelineOptions(),
    net: PolicyValueNet | None = None,
    geo: ArmGeometry = ArmGeometry(),
) -> ReconfigurationPlan:
    """Compose sequence planning with per-move arm routing and trajectories."""
    for name, config in (("start", start), ("target", target)):
        result = validate(config)
        if not result.ok:
            raise PipelineError(f"invalid {name} configuration: {result.violation}")
    if start.ids() != target.ids():
        raise PipelineError("start and target must share the same module ids")

    actions, planner, used_fallback = _action_sequence(start, target, options, net)
    graph = build_map(start)
    if options.initial_base is not None:
        base = options.initial_base
        if base not in graph.vertices:
            raise PipelineError(f"initial base {base} is not an exposed interface")
    else:
        base = min(graph.vertices)
    graph = graph.with_fixed_end(base)

    config = start
    steps: list[HandlingStep] = []
    for action in actions:
        step = _build_step(config, graph, action, base, options, geo)
        steps.append(step)
        base = step.base_interface
        graph = graph.with_fixed_end(base)  # the arm walks before the move
        graph = update_map(graph, config, action)
        config = apply_action(config, action)
        if base not in graph.vertices:
            raise PipelineError("base interface vanished after the move")
    if not configs_equal(config, target):
        raise PipelineError("planned actions do not reach the target")
    return ReconfigurationPlan(tuple(steps), planner, used_fallback, start, target)


def _module_entry(m, pos=None, attached=True) -> dict:
    p = list(m.pos) if pos is None else [float(v) for v in pos]
    return {
        "id": m.id,
        "pos": p,
        "orient": list(m.orient),
        "attached": bool(attached),
    }


def execute_plan(
    start: Configuration,
    plan: ReconfigurationPlan,
    options: PipelineOptions = PipelineOptions(),
    geo: ArmGeometry = ArmGeometry(),
) -> Trace:
    """Kinematic replay of a reconfiguration plan into a trace."""
    header = {
        "format_version": FORMAT_VERSION,
        "version": __version__,
        "planner": plan.planner,
        "used_fallback": plan.used_fallback,
        "seed": options.seed,
        "start": config_to_dict(plan.start),
        "target": config_to_dict(plan.target),
        "dt": options.dt,
        "clearance": options.clearance,
    }
    trace = Trace(header=header)
    config = start
    t_global = 0.0

    def emit(t, phase, step_index, joints, base_iface, render_config,
             carried_id=None, carried_pos=None, carried_orient=None):
        nonlocal t_global
        modules = []
        attached = []
        for m in render_config.modules:
            if m.id == carried_id:
                modules.append({
                    "id": m.id,
                    "pos": [float(v) for v in carried_pos],
                    "orient": list(carried_orient),
                    "attached": False,
                })
            else:
                modules.append(_module_entry(m))
                attached.append(m)
        lattice = Configuration(tuple(attached), render_config.anchor_id)
        check = validate(lattice)
        if not check.ok:
            raise PipelineError(
                f"invalid intermediate configuration at t={t}: {check.violation}"
            )
        if trace.frames and t <= trace.frames[-1]["t"]:
            raise PipelineError("timestamps must be strictly increasing")
        trace.frames.append({
            "t": round(float(t), 9),
            "phase": phase,
            "step": step_index,
            "base_interface": base_iface,
            "joints": [float(v) for v in joints],
            "modules": modules,
        })
        t_global = t

    if plan.steps:
        base = plan.steps[0].arm_walk.nodes[0]
    elif options.initial_base is not None:
        base = options.initial_base
    else:
        base = min(build_map(start).vertices)
    emit(0.0, "initial", -1, STOW_JOINTS, base, config)

    for step_index, step in enumerate(plan.steps):
        mover = config.by_id()[step.action.mover]
        grip_module, grip_face = decode_interface(step.grip_interface)
        if grip_module != step.action.mover:
            raise PipelineError("grip interface does not belong to the mover")
        n_g = np.array(mover.direction(grip_face), dtype=float)
        world_from_base = _base_transform(config, step.base_interface)
        config_after = apply_action(config, step.action)

        for hop in step.arm_walk.nodes[1:]:
            emit(t_global + options.walk_hop_time, "walk", step_index,
                 STOW_JOINTS, hop, config)
        base = step.base_interface

        prev_end = None
        seen_carry = False
        for phase in step.phases:
            t0 = t_global
            seen_carry = seen_carry or phase.carried
            render_config = config_after if (seen_carry and not phase.carried) \
                else config
            for t_local, joints in phase.samples:
                q = np.array(joints)
                pose_world = world_from_base @ forward_kinematics(q, geo)
                end_pos = pose_world[:3, 3]
                if prev_end is not None and t_local <= 1e-12:
                    gap = float(np.linalg.norm(end_pos - prev_end))
                    if gap > 1e-6:
                        raise ContinuityError(
                            f"gap {gap:.2e} entering phase {phase.name}"
                        )
                if t_local <= 1e-12 and trace.frames:
                    prev_end = end_pos
                    continue  # boundary sample, already represented
                carried_pos = carried_orient = carried_id = None
                if phase.carried:
                    carried_id = step.action.mover
                    carried_pos = end_pos - 0.5 * n_g
                    carried_orient = mover.orient
                emit(t0 + t_local, phase.name, step_index, joints, base,
                     render_config, carried_id, carried_pos, carried_orient)
                prev_end = end_pos
        config = config_after
        emit(t_global + options.dt, "docked", step_index, STOW_JOINTS, base, config)

    if plan.steps and not configs_equal(config, plan.target):
        raise PipelineError("execution did not reach the target configuration")
    return trace


# ---------------------------------------------------------------------------
# Trace and scene export
# ---------------------------------------------------------------------------


def export_trace(trace: Trace, path) -> None:
    """JSON lines: header first, then one frame per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(trace.header, sort_keys=True, separators=(",", ":")))
        fh.write("\n")
        for frame in trace.frames:
            fh.write(json.dumps(frame, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def load_trace(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty trace file")
    return Trace(header=json.loads(lines[0]),
                 frames=[json.loads(line) for line in lines[1:]])


_CUBE_CORNERS = [
    (-0.5, -0.5, -0.5), (0.5, -0.5, -0.5), (0.5, 0.5, -0.5), (-0.5, 0.5, -0.5),
    (-0.5, -0.5, 0.5), (0.5, -0.5, 0.5), (0.5, 0.5, 0.5), (-0.5, 0.5, 0.5),
]
_CUBE_FACES = [
    (1, 2, 3, 4), (5, 8, 7, 6), (1, 5, 6, 2), (2, 6, 7, 3),
    (3, 7, 8, 4), (4, 8, 5, 1),
]


def export_scene(config: Configuration, path, mesh_path=None) -> None:
    """Scene JSON plus an optional OBJ mesh (one unit cube per module)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"format_version": FORMAT_VERSION,
                   "scene": config_to_dict(config)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if mesh_path is not None:
        lines = ["# modrecon scene mesh"]
        for m in config.modules:
            for cx, cy, cz in _CUBE_CORNERS:
                lines.append(
                    f"v {m.pos[0] + cx} {m.pos[1] + cy} {m.pos[2] + cz}"
                )
        for i, _ in enumerate(config.modules):
            base = i * 8
            for f in _CUBE_FACES:
                lines.append("f " + " ".join(str(base + v) for v in f))
        with open(mesh_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
