"""Shared fixtures and oracle helpers for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from modrecon.lattice import (
    Action,
    Configuration,
    ModulePose,
    apply_action,
    enumerate_actions,
    is_connected,
    preserve_orientation,
    validate,
)


def make_config(cells, anchor_id=0, orients=None, functions=None) -> Configuration:
    """Configuration from a list of cells; ids follow list order."""
    modules = []
    for i, pos in enumerate(cells):
        kwargs = {}
        if orients is not None:
            kwargs["orient"] = orients[i]
        if functions is not None:
            kwargs["function"] = functions[i]
        modules.append(ModulePose(i, tuple(pos), **kwargs))
    return Configuration(tuple(modules), anchor_id)


def line_config(n: int) -> Configuration:
    return make_config([(i, 0, 0) for i in range(n)])


def square_config() -> Configuration:
    return make_config([(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)])


def brute_force_actions(config: Configuration) -> list[Action]:
    """Exhaustive (mover, anchor, face) filter, checked from first principles.

    Independent of enumerate_actions: tries every triple, rebuilds the
    candidate configuration, and keeps it only if the intermediate state
    (mover detached) and the result are both valid and the result differs.
    """
    found = []
    for mover in config.modules:
        if mover.id == config.anchor_id:
            continue
        rest = tuple(m for m in config.modules if m.id != mover.id)
        if not rest:
            continue
        if not is_connected(Configuration(rest, config.anchor_id)):
            continue
        for anchor in config.modules:
            if anchor.id == mover.id:
                continue
            for face in range(1, 7):
                d = anchor.direction(face)
                dest = (anchor.pos[0] + d[0], anchor.pos[1] + d[1], anchor.pos[2] + d[2])
                new_orient = preserve_orientation(mover, anchor, face)
                candidate = Configuration(
                    rest + (ModulePose(mover.id, dest, new_orient, mover.function),),
                    config.anchor_id,
                )
                if not validate(candidate).ok:
                    continue
                if dest == mover.pos and new_orient == mover.orient:
                    continue
                found.append(Action(mover.id, anchor.id, face, new_orient))
    found.sort(key=Action.sort_key)
    return found


def enumerate_polycubes(max_cells: int):
    """All fixed polycubes up to `max_cells`, canonicalized up to translation."""
    def canon(cells: frozenset) -> frozenset:
        mx = min(c[0] for c in cells)
        my = min(c[1] for c in cells)
        mz = min(c[2] for c in cells)
        return frozenset((x - mx, y - my, z - mz) for x, y, z in cells)

    current = {canon(frozenset([(0, 0, 0)]))}
    yield from current
    for _ in range(max_cells - 1):
        nxt = set()
        for shape in current:
            for (x, y, z), (dx, dy, dz) in itertools.product(
                shape, [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                        (0, 0, 1), (0, 0, -1)]
            ):
                cell = (x + dx, y + dy, z + dz)
                if cell not in shape:
                    nxt.add(canon(shape | {cell}))
        current = nxt
        yield from current


def random_connected_config(rng: np.random.Generator, n_modules: int,
                            anchor_id: int = 0) -> Configuration:
    """Random connected configuration grown cell by cell."""
    cells = [(0, 0, 0)]
    occupied = {(0, 0, 0)}
    dirs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    while len(cells) < n_modules:
        base = cells[int(rng.integers(len(cells)))]
        d = dirs[int(rng.integers(6))]
        cell = (base[0] + d[0], base[1] + d[1], base[2] + d[2])
        if cell not in occupied:
            occupied.add(cell)
            cells.append(cell)
    return make_config(cells, anchor_id)


def random_feasible_action(rng: np.random.Generator, config: Configuration):
    actions = enumerate_actions(config)
    if not actions:
        return None
    return actions[int(rng.integers(len(actions)))]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
