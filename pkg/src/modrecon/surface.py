"""Surface map: the graph of exposed module interfaces the arm walks on.

Interfaces are numbered ``num = module_id * 6 + face``.  Vertices are the
exposed interfaces of a configuration; unit-weight edges connect interface
pairs traversable in one arm step:

  (a) two exposed faces of one module sharing a cube edge, provided the
      diagonal cell over that edge is empty (a pinched corner is not
      directly traversable; the walk reroutes over the pinching module),
  (b) exposed coplanar faces of two face-adjacent modules,
  (c) facing faces of two lattice-diagonal modules across a shared empty
      cell (a concave corner).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .lattice import (
    Action,
    Configuration,
    DIRECTIONS,
    Vec3,
    apply_action,
)


def interface_id(module_id: int, face: int) -> int:
    """Encode (module, face) as module_id * 6 + face, face in 1..6."""
    if not 1 <= face <= 6:
        raise ValueError(f"face must be in 1..6, got {face}")
    return module_id * 6 + face


def decode_interface(num: int) -> tuple[int, int]:
    """Inverse of interface_id."""
    return (num - 1) // 6, (num - 1) % 6 + 1


@dataclass(frozen=True)
class SurfaceGraph:
    """Unit-weight undirected graph over exposed interfaces."""

    vertices: frozenset[int]
    edges: frozenset[tuple[int, int]]  # normalized u < v
    fixed_end: int | None = None

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {v: [] for v in self.vertices}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        for nbrs in adj.values():
            nbrs.sort()
        return adj

    def with_fixed_end(self, num: int | None) -> "SurfaceGraph":
        if num is not None and num not in self.vertices:
            raise ValueError(f"fixed end {num} is not an exposed interface")
        return replace(self, fixed_end=num)


def _edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def _vadd(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _module_surface(
    config: Configuration,
    module_ids,
    occupied: dict[Vec3, int],
    rule_same_module: bool,
    rule_coplanar: bool,
    rule_concave: bool,
) -> tuple[set[int], set[tuple[int, int]]]:
    """Vertices of the given modules and all edges touching at least one."""
    by_id = config.by_id()
    exposed_dirs: dict[int, dict[Vec3, int]] = {}

    def dirs_of(mid: int) -> dict[Vec3, int]:
        if mid not in exposed_dirs:
            m = by_id[mid]
            exposed_dirs[mid] = {
                d: face
                for face in range(1, 7)
                for d in (m.direction(face),)
                if _vadd(m.pos, d) not in occupied
            }
        return exposed_dirs[mid]

    vertices: set[int] = set()
    edges: set[tuple[int, int]] = set()
    for mid in module_ids:
        m = by_id[mid]
        mine = dirs_of(mid)
        for d, face in mine.items():
            vertices.add(interface_id(mid, face))
        if rule_same_module:
            items = list(mine.items())
            for i, (d1, f1) in enumerate(items):
                for d2, f2 in items[i + 1:]:
                    dot = d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2]
                    if dot != 0:
                        continue  # only perpendicular faces share a cube edge
                    diag = (m.pos[0] + d1[0] + d2[0], m.pos[1] + d1[1] + d2[1],
                            m.pos[2] + d1[2] + d2[2])
                    if diag in occupied:
                        continue  # corner pinched; traverse via the diagonal module
                    edges.add(_edge(interface_id(mid, f1), interface_id(mid, f2)))
        for axis_dir in DIRECTIONS.values():
            ncell = _vadd(m.pos, axis_dir)
            if rule_coplanar and ncell in occupied:
                other = occupied[ncell]
                theirs = dirs_of(other)
                for d, face in mine.items():
                    dot = d[0] * axis_dir[0] + d[1] * axis_dir[1] + d[2] * axis_dir[2]
                    if dot == 0 and d in theirs:
                        edges.add(_edge(interface_id(mid, face),
                                        interface_id(other, theirs[d])))
            if rule_concave and ncell not in occupied:
                # ncell is a shared empty cell; look for diagonal partners.
                for d2 in DIRECTIONS.values():
                    dot = d2[0] * axis_dir[0] + d2[1] * axis_dir[1] + d2[2] * axis_dir[2]
                    if dot != 0:
                        continue
                    diag = _vadd(ncell, d2)
                    if diag in occupied:
                        other = occupied[diag]
                        toward = (-d2[0], -d2[1], -d2[2])
                        theirs = dirs_of(other)
                        if axis_dir in mine and toward in theirs:
                            edges.add(_edge(interface_id(mid, mine[axis_dir]),
                                            interface_id(other, theirs[toward])))
    return vertices, edges


def build_map(
    config: Configuration,
    fixed_end: int | None = None,
    rule_same_module: bool = True,
    rule_coplanar: bool = True,
    rule_concave: bool = True,
) -> SurfaceGraph:
    """Build the full surface graph of a configuration."""
    occupied = {m.pos: m.id for m in config.modules}
    vertices, edges = _module_surface(
        config, [m.id for m in config.modules], occupied,
        rule_same_module, rule_coplanar, rule_concave,
    )
    graph = SurfaceGraph(frozenset(vertices), frozenset(edges))
    return graph.with_fixed_end(fixed_end)


def update_map(
    graph: SurfaceGraph,
    config_before: Configuration,
    action: Action,
    rule_same_module: bool = True,
    rule_coplanar: bool = True,
    rule_concave: bool = True,
) -> SurfaceGraph:
    """Incrementally update a surface graph across one handling action.

    Equivalent to a fresh build on the post-action configuration: only
    interfaces of modules near the vacated and filled cells are recomputed.
    """
    config_after = apply_action(config_before, action)
    old_pos = config_before.by_id()[action.mover].pos
    new_pos = config_after.by_id()[action.mover].pos

    def near(p: Vec3) -> bool:
        return any(
            max(abs(p[0] - c[0]), abs(p[1] - c[1]), abs(p[2] - c[2])) <= 2
            for c in (old_pos, new_pos)
        )

    affected = {m.id for m in config_before.modules if near(m.pos)}
    affected |= {m.id for m in config_after.modules if near(m.pos)}
    affected.add(action.mover)

    keep_vertices = {
        v for v in graph.vertices if decode_interface(v)[0] not in affected
    }
    keep_edges = {
        e for e in graph.edges
        if decode_interface(e[0])[0] not in affected
        and decode_interface(e[1])[0] not in affected
    }
    occupied = {m.pos: m.id for m in config_after.modules}
    new_vertices, new_edges = _module_surface(
        config_after, sorted(affected), occupied,
        rule_same_module, rule_coplanar, rule_concave,
    )
    updated = SurfaceGraph(
        frozenset(keep_vertices | new_vertices),
        frozenset(keep_edges | new_edges),
    )
    return updated.with_fixed_end(graph.fixed_end)


def dump_graph(graph: SurfaceGraph) -> str:
    """Text dump: vertex header plus one 'u v 1' line per edge."""
    lines = ["vertices " + " ".join(str(v) for v in sorted(graph.vertices))]
    for u, v in sorted(graph.edges):
        lines.append(f"{u} {v} 1")
    return "\n".join(lines) + "\n"
