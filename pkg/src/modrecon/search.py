"""Uninformed planners: exact BFS for small instances, greedy descent for
larger ones.  Both serve as fallbacks for the learned policy and as test
oracles for plan optimality."""

from __future__ import annotations

from collections import deque

from .encoding import BoundingBox
from .lattice import (
    Action,
    Configuration,
    apply_action,
    canonical_key,
    enumerate_actions,
    mismatch_count,
)


def _legal_actions(config: Configuration, box: BoundingBox | None) -> list[Action]:
    actions = enumerate_actions(config)
    if box is None:
        return actions
    anchor_pos = config.anchor.pos
    by_id = config.by_id()
    kept = []
    for a in actions:
        anchor_mod = by_id[a.anchor]
        dest = tuple(p + d for p, d in zip(anchor_mod.pos, anchor_mod.direction(a.face)))
        if box.contains(dest, anchor_pos):
            kept.append(a)
    return kept


def bfs_plan(
    start: Configuration,
    target: Configuration,
    max_depth: int = 12,
    box: BoundingBox | None = None,
    max_states: int = 2_000_000,
) -> list[Action] | None:
    """Shortest action sequence from start to target, or None.

    States are deduplicated up to anchor translation.  Intended for small
    instances (roughly six modules or fewer); the state cap guards runaway
    searches.
    """
    if mismatch_count(start, target) == 0:
        return []
    goal_key = canonical_key(target)
    seen = {canonical_key(start)}
    queue = deque([(start, [])])
    while queue:
        config, path = queue.popleft()
        if len(path) >= max_depth:
            continue
        for action in _legal_actions(config, box):
            nxt = apply_action(config, action)
            key = canonical_key(nxt)
            if key in seen:
                continue
            if key == goal_key:
                return path + [action]
            if len(seen) >= max_states:
                return None
            seen.add(key)
            queue.append((nxt, path + [action]))
    return None


def greedy_mismatch_plan(
    start: Configuration,
    target: Configuration,
    max_steps: int = 256,
) -> list[Action] | None:
    """Strictly mismatch-decreasing hill descent; None when it stalls.

    Each step applies the feasibility-checked action with the lowest
    resulting mismatch, provided it strictly improves.  Deterministic.
    """
    config = start
    plan: list[Action] = []
    current = mismatch_count(config, target)
    while current > 0:
        if len(plan) >= max_steps:
            return None
        best: tuple[int, tuple, Action] | None = None
        for action in enumerate_actions(config):
            nxt = apply_action(config, action)
            score = mismatch_count(nxt, target)
            key = (score, action.sort_key())
            if best is None or key < (best[0], best[1]):
                best = (score, action.sort_key(), action)
        if best is None or best[0] >= current:
            return None
        plan.append(best[2])
        config = apply_action(config, best[2])
        current = best[0]
    return plan
