"""Policy input encoding and the canonical action index space.

States are rendered as channel stacks over a fixed bounding box, translated
so each configuration's anchor module lands on the same box cell.  Actions
are indexed globally as (mover slot, anchor slot, face) so the policy head
has a fixed width and legality is handled by masking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Action, Configuration, Vec3


class OutOfBoxError(Exception):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Fixed encoding volume; `anchor_cell` is where anchors are placed."""

    shape: Vec3
    anchor_cell: Vec3

    def locate(self, pos: Vec3, anchor_pos: Vec3) -> Vec3:
        cell = tuple(p - a + c for p, a, c in zip(pos, anchor_pos, self.anchor_cell))
        for v, s in zip(cell, self.shape):
            if not 0 <= v < s:
                raise OutOfBoxError(f"cell {cell} outside box {self.shape}")
        return cell

    def contains(self, pos: Vec3, anchor_pos: Vec3) -> bool:
        try:
            self.locate(pos, anchor_pos)
            return True
        except OutOfBoxError:
            return False


def bounding_box_for(configs, margin: int = 2) -> BoundingBox:
    """Smallest box covering every configuration (anchor-relative) plus margin."""
    los = [np.zeros(3, dtype=int)]
    his = [np.zeros(3, dtype=int)]
    for config in configs:
        anchor = np.array(config.anchor.pos)
        rel = np.array([m.pos for m in config.modules]) - anchor
        los.append(rel.min(axis=0))
        his.append(rel.max(axis=0))
    lo = np.minimum.reduce(los) - margin
    hi = np.maximum.reduce(his) + margin
    shape = tuple(int(v) for v in hi - lo + 1)
    anchor_cell = tuple(int(v) for v in -lo)
    return BoundingBox(shape=shape, anchor_cell=anchor_cell)


def function_tags(config: Configuration) -> tuple[str, ...]:
    return tuple(sorted({m.function for m in config.modules}))


def encode_state(
    config: Configuration,
    target: Configuration,
    box: BoundingBox,
) -> np.ndarray:
    """Channels: current occupancy, target occupancy, match mask, one per tag.

    The match channel marks cells where the same module sits with the same
    orientation in both the current and target configurations (anchor
    relative).  Function-tag channels mark current cells of tagged modules.
    """
    tags = function_tags(target)
    channels = 3 + len(tags)
    grid = np.zeros((channels,) + tuple(box.shape))
    tag_index = {t: 3 + i for i, t in enumerate(tags)}

    current_cells: dict[Vec3, tuple[int, tuple[str, ...]]] = {}
    for m in config.modules:
        cell = box.locate(m.pos, config.anchor.pos)
        grid[0][cell] = 1.0
        current_cells[cell] = (m.id, m.orient)
        idx = tag_index.get(m.function)
        if idx is not None:
            grid[idx][cell] = 1.0
    for m in target.modules:
        cell = box.locate(m.pos, target.anchor.pos)
        grid[1][cell] = 1.0
        if current_cells.get(cell) == (m.id, m.orient):
            grid[2][cell] = 1.0
    return grid


@dataclass(frozen=True)
class ActionIndexer:
    """Bijection between actions over a fixed id set and flat indices."""

    module_ids: tuple[int, ...]  # sorted

    @classmethod
    def for_configuration(cls, config: Configuration) -> "ActionIndexer":
        return cls(tuple(sorted(config.ids())))

    @property
    def size(self) -> int:
        n = len(self.module_ids)
        return n * n * 6

    def index(self, action: Action) -> int:
        n = len(self.module_ids)
        mover_slot = self.module_ids.index(action.mover)
        anchor_slot = self.module_ids.index(action.anchor)
        return (mover_slot * n + anchor_slot) * 6 + (action.face - 1)

    def decompose(self, index: int) -> tuple[int, int, int]:
        """(mover id, anchor id, face) of a flat index."""
        n = len(self.module_ids)
        face = index % 6 + 1
        rest = index // 6
        mover_slot, anchor_slot = divmod(rest, n)
        return self.module_ids[mover_slot], self.module_ids[anchor_slot], face
