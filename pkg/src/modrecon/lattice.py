"""Lattice state model for modular spacecraft and the legal action space.

A configuration is a set of unit-cube modules on an integer lattice.  Each
module carries an orientation given as a face-to-direction map: body faces
1..6 are assigned world axis directions, with faces (1,3), (2,4) and (5,6)
forming opposite pairs.  Module handling actions detach one module and
re-attach it on a face of another module, subject to connectivity rules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Iterable

FORMAT_VERSION = 1

# World axis directions, keyed by the strings used in config files.
DIRECTIONS: dict[str, tuple[int, int, int]] = {
    "+x": (1, 0, 0),
    "-x": (-1, 0, 0),
    "+y": (0, 1, 0),
    "-y": (0, -1, 0),
    "+z": (0, 0, 1),
    "-z": (0, 0, -1),
}

OPPOSITE_DIRECTION = {
    "+x": "-x", "-x": "+x",
    "+y": "-y", "-y": "+y",
    "+z": "-z", "-z": "+z",
}

# Face pairs that sit on opposite sides of the cube body.
OPPOSITE_FACES = ((1, 3), (2, 4), (5, 6))

#: Orientation with face 1 on +x, face 2 on +y, face 5 on +z.
IDENTITY_ORIENT: tuple[str, ...] = ("+x", "+y", "-x", "-y", "+z", "-z")

Vec3 = tuple[int, int, int]


class LatticeError(Exception):
    """Base class for lattice model errors."""


class UnknownModuleError(LatticeError):
    pass


class InfeasibleActionError(LatticeError):
    """Raised by apply_action when the action violates a feasibility rule."""


class IdSetMismatchError(LatticeError):
    pass


def _vadd(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _vsub(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@dataclass(frozen=True)
class ModulePose:
    """One module: identifier, lattice cell, face orientation and function tag."""

    id: int
    pos: Vec3
    orient: tuple[str, ...] = IDENTITY_ORIENT
    function: str = ""

    def direction(self, face: int) -> Vec3:
        """World direction of a body face (1..6)."""
        if not 1 <= face <= 6:
            raise ValueError(f"face must be in 1..6, got {face}")
        return DIRECTIONS[self.orient[face - 1]]

    def face_for_direction(self, direction: Vec3) -> int:
        """Body face whose outward world direction equals `direction`."""
        for face in range(1, 7):
            if DIRECTIONS[self.orient[face - 1]] == direction:
                return face
        raise ValueError(f"no face points along {direction}")


@dataclass(frozen=True)
class Configuration:
    """A connected set of modules with a fixed reference (anchor) module."""

    modules: tuple[ModulePose, ...]
    anchor_id: int

    def by_id(self) -> dict[int, ModulePose]:
        return {m.id: m for m in self.modules}

    def cells(self) -> dict[Vec3, ModulePose]:
        return {m.pos: m for m in self.modules}

    def module(self, module_id: int) -> ModulePose:
        for m in self.modules:
            if m.id == module_id:
                return m
        raise UnknownModuleError(f"module id {module_id} not in configuration")

    @property
    def anchor(self) -> ModulePose:
        return self.module(self.anchor_id)

    def ids(self) -> frozenset[int]:
        return frozenset(m.id for m in self.modules)


@dataclass(frozen=True)
class Action:
    """Move module `mover` onto face `face` of module `anchor`.

    `new_orient` is the mover's face orientation after placement.
    """

    mover: int
    anchor: int
    face: int
    new_orient: tuple[str, ...]

    def sort_key(self) -> tuple[int, int, int]:
        return (self.mover, self.anchor, self.face)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violation: str | None = None
    module_ids: tuple[int, ...] = ()


def orient_is_valid(orient: tuple[str, ...]) -> bool:
    """True iff orient is a proper rotation of the identity face assignment."""
    if len(orient) != 6:
        return False
    if set(orient) != set(DIRECTIONS):
        return False
    for a, b in OPPOSITE_FACES:
        if orient[a - 1] != OPPOSITE_DIRECTION[orient[b - 1]]:
            return False
    # Determinant of the matrix with columns dir(face1), dir(face2), dir(face5).
    c1 = DIRECTIONS[orient[0]]
    c2 = DIRECTIONS[orient[1]]
    c3 = DIRECTIONS[orient[4]]
    det = (
        c1[0] * (c2[1] * c3[2] - c2[2] * c3[1])
        - c2[0] * (c1[1] * c3[2] - c1[2] * c3[1])
        + c3[0] * (c1[1] * c2[2] - c1[2] * c2[1])
    )
    return det == 1


def all_proper_orients() -> tuple[tuple[str, ...], ...]:
    """The 24 orientation-preserving cube symmetries as face maps."""
    dirs = list(DIRECTIONS)
    found = []
    for d1 in dirs:
        for d2 in dirs:
            for d5 in dirs:
                orient = (
                    d1, d2,
                    OPPOSITE_DIRECTION[d1], OPPOSITE_DIRECTION[d2],
                    d5, OPPOSITE_DIRECTION[d5],
                )
                if orient_is_valid(orient):
                    found.append(orient)
    return tuple(found)


def _adjacency(cells: Iterable[Vec3]) -> dict[Vec3, list[Vec3]]:
    cell_set = set(cells)
    adj: dict[Vec3, list[Vec3]] = {c: [] for c in cell_set}
    for c in cell_set:
        for d in DIRECTIONS.values():
            n = _vadd(c, d)
            if n in cell_set:
                adj[c].append(n)
    return adj


def _cells_connected(cells: set[Vec3]) -> bool:
    if not cells:
        return False
    start = next(iter(cells))
    seen = {start}
    stack = [start]
    while stack:
        c = stack.pop()
        for d in DIRECTIONS.values():
            n = _vadd(c, d)
            if n in cells and n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) == len(cells)


def is_connected(config: Configuration) -> bool:
    """True iff the face-adjacency graph over modules is one component."""
    return _cells_connected({m.pos for m in config.modules})


def validate(config: Configuration) -> ValidationResult:
    """Check every configuration invariant; report the first violation."""
    if not config.modules:
        return ValidationResult(False, "empty configuration")
    ids = [m.id for m in config.modules]
    if len(set(ids)) != len(ids):
        dupes = tuple(sorted({i for i in ids if ids.count(i) > 1}))
        return ValidationResult(False, "duplicate module id", dupes)
    if config.anchor_id not in ids:
        return ValidationResult(False, "anchor id not present", (config.anchor_id,))
    for m in config.modules:
        if not orient_is_valid(m.orient):
            return ValidationResult(False, "invalid orientation", (m.id,))
    seen_cells: dict[Vec3, int] = {}
    for m in config.modules:
        if m.pos in seen_cells:
            return ValidationResult(False, "overlapping modules", (seen_cells[m.pos], m.id))
        seen_cells[m.pos] = m.id
    if not is_connected(config):
        return ValidationResult(False, "configuration not connected", tuple(sorted(ids)))
    return ValidationResult(True)


def _articulation_cells(cells: set[Vec3]) -> set[Vec3]:
    """Articulation vertices of the cell adjacency graph (iterative lowlink)."""
    adj = _adjacency(cells)
    index: dict[Vec3, int] = {}
    low: dict[Vec3, int] = {}
    result: set[Vec3] = set()
    counter = 0
    for root in cells:
        if root in index:
            continue
        root_children = 0
        stack: list[tuple[Vec3, Vec3 | None, int]] = [(root, None, 0)]
        while stack:
            node, parent, i = stack.pop()
            if i == 0:
                index[node] = low[node] = counter
                counter += 1
            if i < len(adj[node]):
                stack.append((node, parent, i + 1))
                nxt = adj[node][i]
                if nxt == parent:
                    continue
                if nxt in index:
                    low[node] = min(low[node], index[nxt])
                else:
                    stack.append((nxt, node, 0))
            else:
                if parent is not None:
                    low[parent] = min(low[parent], low[node])
                    if parent == root:
                        root_children += 1
                    elif low[node] >= index[parent]:
                        result.add(parent)
        if root_children > 1:
            result.add(root)
    return result


def removable_modules(config: Configuration) -> frozenset[int]:
    """Ids whose removal keeps the rest connected, excluding the anchor."""
    cells = {m.pos for m in config.modules}
    if len(cells) <= 1:
        return frozenset()
    cut = _articulation_cells(cells)
    return frozenset(
        m.id for m in config.modules
        if m.id != config.anchor_id and m.pos not in cut
    )


def exposed_faces(config: Configuration, module_id: int) -> frozenset[int]:
    """Faces of a module whose outward direction points at an empty cell."""
    module = config.module(module_id)
    occupied = {m.pos for m in config.modules}
    return frozenset(
        face for face in range(1, 7)
        if _vadd(module.pos, module.direction(face)) not in occupied
    )


OrientPolicy = Callable[[ModulePose, ModulePose, int], tuple[str, ...]]


def preserve_orientation(mover: ModulePose, anchor: ModulePose, face: int) -> tuple[str, ...]:
    """Default placement rule: the mover keeps its world-frame orientation."""
    return mover.orient


def enumerate_actions(
    config: Configuration,
    orient_policy: OrientPolicy = preserve_orientation,
) -> list[Action]:
    """All feasible (mover, anchor, face) actions, sorted deterministically.

    Feasibility: the mover is removable (non-articulation, not the anchor
    module), the destination cell is empty once the mover is detached, the
    result is connected, and the result differs from the input.
    """
    movers = removable_modules(config)
    if not movers:
        return []
    occupied = {m.pos for m in config.modules}
    by_id = config.by_id()
    actions: list[Action] = []
    for mover_id in sorted(movers):
        mover = by_id[mover_id]
        for anchor_mod in config.modules:
            if anchor_mod.id == mover_id:
                continue
            for face in range(1, 7):
                dest = _vadd(anchor_mod.pos, anchor_mod.direction(face))
                if dest in occupied and dest != mover.pos:
                    continue
                new_orient = orient_policy(mover, anchor_mod, face)
                if dest == mover.pos and new_orient == mover.orient:
                    continue  # would recreate the same configuration
                # Destination is adjacent to the anchor, which stays, so the
                # result is connected whenever the remainder is (mover removable).
                actions.append(Action(mover_id, anchor_mod.id, face, new_orient))
    actions.sort(key=Action.sort_key)
    return actions


def _check_action(config: Configuration, action: Action) -> ModulePose:
    """Validate one action's feasibility; returns the mover pose."""
    by_id = config.by_id()
    if action.mover not in by_id:
        raise InfeasibleActionError(f"unknown mover {action.mover}")
    if action.anchor not in by_id:
        raise InfeasibleActionError(f"unknown anchor {action.anchor}")
    if action.mover == action.anchor:
        raise InfeasibleActionError("mover equals anchor")
    if action.mover == config.anchor_id:
        raise InfeasibleActionError("the reference module cannot move")
    if not 1 <= action.face <= 6:
        raise InfeasibleActionError(f"face {action.face} out of range")
    if not orient_is_valid(action.new_orient):
        raise InfeasibleActionError("invalid target orientation")
    if action.mover not in removable_modules(config):
        raise InfeasibleActionError(
            f"module {action.mover} is an articulation module"
        )
    mover = by_id[action.mover]
    anchor_mod = by_id[action.anchor]
    dest = _vadd(anchor_mod.pos, anchor_mod.direction(action.face))
    occupied = {m.pos for m in config.modules}
    if dest in occupied and dest != mover.pos:
        raise InfeasibleActionError(f"destination cell {dest} occupied")
    if dest == mover.pos and action.new_orient == mover.orient:
        raise InfeasibleActionError("action recreates the same configuration")
    return mover


def apply_action(config: Configuration, action: Action) -> Configuration:
    """Apply a feasible action, returning a new configuration.

    The input is never mutated; only the mover's pose changes.
    """
    mover = _check_action(config, action)
    anchor_mod = config.module(action.anchor)
    dest = _vadd(anchor_mod.pos, anchor_mod.direction(action.face))
    new_mover = replace(mover, pos=dest, orient=tuple(action.new_orient))
    modules = tuple(new_mover if m.id == action.mover else m for m in config.modules)
    return Configuration(modules, config.anchor_id)


def mismatch_count(config: Configuration, target: Configuration) -> int:
    """Number of modules whose anchor-relative pose differs from the target."""
    if config.ids() != target.ids():
        raise IdSetMismatchError(
            f"module id sets differ: {sorted(config.ids())} vs {sorted(target.ids())}"
        )
    a0 = config.anchor.pos
    b0 = target.anchor.pos
    target_by_id = target.by_id()
    count = 0
    for m in config.modules:
        t = target_by_id[m.id]
        if _vsub(m.pos, a0) != _vsub(t.pos, b0) or m.orient != t.orient:
            count += 1
    return count


def configs_equal(a: Configuration, b: Configuration) -> bool:
    """Equality up to translation via the anchor frame."""
    try:
        return mismatch_count(a, b) == 0
    except IdSetMismatchError:
        return False


def canonical_key(config: Configuration) -> tuple:
    """Hashable anchor-relative key, used for search and deduplication."""
    a0 = config.anchor.pos
    return tuple(sorted((m.id, _vsub(m.pos, a0), m.orient) for m in config.modules))


# ---------------------------------------------------------------------------
# Configuration file format (shared by every module and the CLI)
# ---------------------------------------------------------------------------


def config_to_dict(config: Configuration) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "anchor_id": config.anchor_id,
        "modules": [
            {
                "id": m.id,
                "pos": list(m.pos),
                "orient": list(m.orient),
                "function": m.function,
            }
            for m in config.modules
        ],
    }


def config_from_dict(data: dict) -> Configuration:
    try:
        modules = tuple(
            ModulePose(
                id=int(entry["id"]),
                pos=tuple(int(v) for v in entry["pos"]),
                orient=tuple(entry.get("orient", IDENTITY_ORIENT)),
                function=str(entry.get("function", "")),
            )
            for entry in data["modules"]
        )
        return Configuration(modules=modules, anchor_id=int(data["anchor_id"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed configuration data: {exc}") from exc


def save_configuration(config: Configuration, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_configuration(path) -> Configuration:
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))
