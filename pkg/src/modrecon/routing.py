"""Arm route planning: A* over the surface graph and local approach paths.

Interface-to-interface walks use A* with a Manhattan heuristic over
interface centers.  A center is the middle of the empty cell an interface
faces into, so one traversal step displaces a center by at most 2 lattice
units; the heuristic is scaled by 0.5 inside the search to keep it
admissible, which makes returned costs exactly optimal.

Local pick/place motion follows the clearance waypoints P1 and P2: retract
from the source interface along its normal, transfer on an arc-like
polyline, then dock along the target interface normal.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .lattice import Configuration
from .surface import SurfaceGraph, decode_interface


class RoutingError(Exception):
    pass


class UnreachableGoalError(RoutingError):
    pass


class UnknownInterfaceError(RoutingError):
    pass


@dataclass(frozen=True)
class SurfacePath:
    nodes: tuple[int, ...]
    cost: int


@dataclass(frozen=True)
class InterfacePose:
    """Physical face center and outward unit normal, in lattice units."""

    center: tuple[float, float, float]
    normal: tuple[int, int, int]


@dataclass(frozen=True)
class ApproachPlan:
    """Clearance waypoints for one docking motion (retract, transfer, dock)."""

    p1: tuple[float, float, float]
    p2: tuple[float, float, float]
    waypoints: tuple[tuple[float, float, float], ...]  # P1 ... P2 inclusive
    dock_position: tuple[float, float, float]
    dock_direction: tuple[float, float, float]  # approach along -target normal
    clearance: float


def interface_center(config: Configuration, num: int) -> tuple[int, int, int]:
    """Center of the cell an interface faces into (walk-space coordinates)."""
    module_id, face = decode_interface(num)
    try:
        module = config.by_id()[module_id]
    except KeyError:
        raise UnknownInterfaceError(f"interface {num}: unknown module {module_id}")
    d = module.direction(face)
    return (module.pos[0] + d[0], module.pos[1] + d[1], module.pos[2] + d[2])


def interface_pose(config: Configuration, num: int) -> InterfacePose:
    """Face-plane center and outward normal of an interface."""
    module_id, face = decode_interface(num)
    try:
        module = config.by_id()[module_id]
    except KeyError:
        raise UnknownInterfaceError(f"interface {num}: unknown module {module_id}")
    d = module.direction(face)
    c = (module.pos[0] + 0.5 * d[0], module.pos[1] + 0.5 * d[1], module.pos[2] + 0.5 * d[2])
    return InterfacePose(center=c, normal=d)


def manhattan_h(num: int, goal: int, config: Configuration) -> int:
    """Manhattan distance between interface centers, in lattice units."""
    a = interface_center(config, num)
    b = interface_center(config, goal)
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) + abs(a[2] - b[2])


def astar(
    graph: SurfaceGraph,
    start: int,
    goal: int,
    config: Configuration,
    heuristic_scale: float = 0.5,
) -> SurfacePath:
    """Shortest interface walk by A*; f = g + scale * manhattan_h.

    The default scale of 0.5 bounds the heuristic by the true cost (a step
    moves a center by at most 2 units), so results match Dijkstra exactly.
    Ties are broken toward the smaller interface number.
    """
    for v in (start, goal):
        if v not in graph.vertices:
            raise UnknownInterfaceError(f"interface {v} is not in the surface graph")
    adjacency = graph.adjacency()
    best_g: dict[int, int] = {start: 0}
    open_heap: list[tuple[float, int, int]] = [
        (heuristic_scale * manhattan_h(start, goal, config), start, 0)
    ]
    parent: dict[int, int] = {}
    closed: set[int] = set()
    while open_heap:
        _, node, g = heapq.heappop(open_heap)
        if node in closed:
            continue
        closed.add(node)
        if node == goal:
            path = [node]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return SurfacePath(tuple(path), cost=len(path) - 1)
        for nbr in adjacency[node]:
            ng = g + 1
            if ng < best_g.get(nbr, math.inf):
                best_g[nbr] = ng
                parent[nbr] = node
                f = ng + heuristic_scale * manhattan_h(nbr, goal, config)
                heapq.heappush(open_heap, (f, nbr, ng))
    raise UnreachableGoalError(f"no surface path from {start} to {goal}")


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise RoutingError("degenerate direction")
    return v / n


def _perpendicular(n: np.ndarray) -> np.ndarray:
    """A deterministic unit vector perpendicular to n."""
    trial = np.array([1.0, 0.0, 0.0])
    if abs(float(np.dot(trial, n))) > 0.9:
        trial = np.array([0.0, 1.0, 0.0])
    return _unit(trial - np.dot(trial, n) * n)


def _plane_point(normals: list[np.ndarray], offsets: list[float],
                 anchor: np.ndarray) -> np.ndarray:
    """Point nearest `anchor` satisfying dot(n_i, x) = offset_i for each i."""
    a = np.stack(normals)
    b = np.array(offsets) - a @ anchor
    correction = a.T @ np.linalg.solve(a @ a.T, b)
    return anchor + correction


def _slerp(n1: np.ndarray, n2: np.ndarray, t: float) -> np.ndarray:
    dot = float(np.clip(np.dot(n1, n2), -1.0, 1.0))
    angle = math.acos(dot)
    if angle < 1e-9:
        return n1
    if angle > math.pi - 1e-9:
        axis = _perpendicular(n1)
        # Rotate n1 by t*pi in the plane spanned by n1 and a fixed perpendicular.
        return math.cos(t * math.pi) * n1 + math.sin(t * math.pi) * axis
    return (math.sin((1 - t) * angle) * n1 + math.sin(t * angle) * n2) / math.sin(angle)


def _as_tuple(p: np.ndarray) -> tuple[float, float, float]:
    return (float(p[0]), float(p[1]), float(p[2]))


def _dedupe(points: list[np.ndarray]) -> list[np.ndarray]:
    out = [points[0]]
    for p in points[1:]:
        if np.linalg.norm(p - out[-1]) > 1e-9:
            out.append(p)
    return out


def approach_waypoints(
    source: InterfacePose,
    target: InterfacePose,
    clearance: float = 0.5,
) -> ApproachPlan:
    """Waypoints for moving between two interfaces at a safety clearance.

    P1/P2 sit one clearance above the source/target face centers.  The
    transfer between them sweeps the normal by the shorter rotation:
    straight for coplanar faces, around the shared edge for a convex
    corner, through the offset corner point for a concave corner, and a
    blended arc for any other geometry.  Eight via points are emitted per
    90 degrees of sweep (minimum three points overall).
    """
    if clearance <= 0:
        raise ValueError(f"clearance must be positive, got {clearance}")
    f1 = np.array(source.center, dtype=float)
    f2 = np.array(target.center, dtype=float)
    n1 = np.array(source.normal, dtype=float)
    n2 = np.array(target.normal, dtype=float)
    if np.linalg.norm(f2 - f1) < 1e-12:
        raise RoutingError("coincident interface centers")
    p1 = f1 + clearance * n1
    p2 = f2 + clearance * n2

    dot = float(np.clip(np.dot(n1, n2), -1.0, 1.0))
    sweep = math.acos(dot)
    count = max(3, int(math.ceil(sweep / (math.pi / 2) * 8)) + 1)

    if sweep < 1e-9:
        samples = [p1 + t * (p2 - p1) for t in np.linspace(0.0, 1.0, count)]
    elif abs(dot) < 1e-9 and float(np.dot(f2 - f1, n1)) < -1e-9:
        # Convex corner: run along the source face plane, arc around the
        # shared edge, run along the target face plane.
        pivot = _plane_point([n1, n2], [float(np.dot(n1, f1)), float(np.dot(n2, f2))],
                             0.5 * (p1 + p2))
        a = pivot + clearance * n1
        b = pivot + clearance * n2
        arc = [
            pivot + clearance * _slerp(n1, n2, t)
            for t in np.linspace(0.0, 1.0, count)
        ]
        samples = _dedupe([p1, a] + arc + [b, p2])
    elif abs(dot) < 1e-9 and float(np.dot(f2 - f1, n1)) > 1e-9:
        # Concave corner: the offset planes meet at an interior corner point.
        corner = _plane_point(
            [n1, n2],
            [float(np.dot(n1, f1)) + clearance, float(np.dot(n2, f2)) + clearance],
            0.5 * (p1 + p2),
        )
        samples = _dedupe([p1, corner, p2])
    else:
        # General geometry: blend translation with the normal sweep.
        samples = [
            f1 + t * (f2 - f1) + clearance * _slerp(n1, n2, t)
            for t in np.linspace(0.0, 1.0, count)
        ]
        samples = _dedupe(samples)
    if len(samples) < 3:
        samples = _dedupe([samples[0], 0.5 * (samples[0] + samples[-1]), samples[-1]])
        if len(samples) < 3:
            samples = [samples[0]] * 2 + [samples[-1]]

    return ApproachPlan(
        p1=_as_tuple(p1),
        p2=_as_tuple(p2),
        waypoints=tuple(_as_tuple(p) for p in samples),
        dock_position=target.center,
        dock_direction=_as_tuple(-n2),
        clearance=clearance,
    )


def waypoints_to_csv(plans: dict[str, ApproachPlan]) -> str:
    """CSV dump of approach waypoints: phase, x, y, z."""
    lines = ["phase,x,y,z"]
    for phase, plan in plans.items():
        for x, y, z in plan.waypoints:
            lines.append(f"{phase},{x},{y},{z}")
        dx, dy, dz = plan.dock_position
        lines.append(f"{phase}_dock,{dx},{dy},{dz}")
    return "\n".join(lines) + "\n"


def point_cube_distance(point, cell_center) -> float:
    """Distance from a point to the unit cube centered on a lattice cell."""
    d = 0.0
    for p, c in zip(point, cell_center):
        gap = max(abs(p - c) - 0.5, 0.0)
        d += gap * gap
    return math.sqrt(d)
