"""Expert demonstration data: random walks away from a target, reversed.

Walking away from the target configuration and inverting the recorded
sequence yields feasible trajectories that terminate at the target, which
serve as expert (state, action) pairs for imitation learning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lattice import (
    Action,
    Configuration,
    LatticeError,
    apply_action,
    config_from_dict,
    config_to_dict,
    enumerate_actions,
)

FORMAT_VERSION = 1


class DeadEndError(LatticeError):
    """A walk state had no legal action."""


class IrreversibleTransitionError(LatticeError):
    """A recorded transition could not be undone (orientation policy bug)."""


@dataclass(frozen=True)
class Transition:
    state: Configuration
    action: Action
    next_state: Configuration


@dataclass(frozen=True)
class Trajectory:
    """A chained action sequence from `start` to `goal`."""

    transitions: tuple[Transition, ...]
    start: Configuration
    goal: Configuration

    def __len__(self) -> int:
        return len(self.transitions)

    def actions(self) -> tuple[Action, ...]:
        return tuple(t.action for t in self.transitions)

    def states(self) -> tuple[Configuration, ...]:
        """All visited configurations, start first, goal last."""
        if not self.transitions:
            return (self.start,)
        return (self.transitions[0].state,) + tuple(t.next_state for t in self.transitions)

    def check_chain(self) -> None:
        if self.transitions:
            if self.transitions[0].state != self.start:
                raise ValueError("trajectory does not begin at start")
            if self.transitions[-1].next_state != self.goal:
                raise ValueError("trajectory does not end at goal")
            for prev, nxt in zip(self.transitions, self.transitions[1:]):
                if prev.next_state != nxt.state:
                    raise ValueError("trajectory transitions do not chain")
        elif self.start != self.goal:
            raise ValueError("empty trajectory with start != goal")


def random_walk(target: Configuration, f: int, seed) -> Trajectory:
    """Walk `f` uniformly sampled feasible steps away from `target`.

    `seed` may be an int, a SeedSequence or an existing Generator; the walk
    is deterministic for a given seed.
    """
    if f < 1:
        raise ValueError(f"step count f must be >= 1, got {f}")
    rng = np.random.default_rng(seed)
    state = target
    transitions = []
    for _ in range(f):
        actions = enumerate_actions(state)
        if not actions:
            raise DeadEndError("no legal action available during walk")
        action = actions[int(rng.integers(len(actions)))]
        nxt = apply_action(state, action)
        transitions.append(Transition(state, action, nxt))
        state = nxt
    return Trajectory(tuple(transitions), start=target, goal=state)


def _undo_action(transition: Transition) -> Action:
    """The canonical action returning the mover to its previous cell."""
    before = transition.state.by_id()[transition.action.mover]
    candidates = []
    for m in transition.next_state.modules:
        if m.id == transition.action.mover:
            continue
        delta = tuple(b - a for b, a in zip(before.pos, m.pos))
        if sum(abs(d) for d in delta) == 1:
            candidates.append((m.id, m.face_for_direction(delta)))
    if not candidates:
        raise IrreversibleTransitionError(
            f"no anchor adjacent to the vacated cell {before.pos}"
        )
    anchor_id, face = min(candidates)
    return Action(transition.action.mover, anchor_id, face, before.orient)


def reverse_trajectory(traj: Trajectory) -> Trajectory:
    """Invert a walk into an expert trajectory ending at the walk's origin.

    Output transition t undoes input transition (n-1-t); anchors for the
    reverse moves are chosen canonically (smallest id, then face).
    """
    traj.check_chain()
    transitions = []
    for t in reversed(traj.transitions):
        undo = _undo_action(t)
        try:
            recovered = apply_action(t.next_state, undo)
        except LatticeError as exc:
            raise IrreversibleTransitionError(str(exc)) from exc
        if recovered != t.state:
            raise IrreversibleTransitionError(
                "undo action did not restore the previous configuration"
            )
        transitions.append(Transition(t.next_state, undo, t.state))
    return Trajectory(tuple(transitions), start=traj.goal, goal=traj.start)


def generate_dataset(
    target: Configuration,
    count: int,
    f_range: tuple[int, int] = (1, 24),
    seed=0,
) -> list[Trajectory]:
    """`count` reversed random walks with walk lengths drawn from f_range."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    lo, hi = f_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid f_range {f_range}")
    trajectories = []
    for child in np.random.SeedSequence(seed).spawn(count):
        rng = np.random.default_rng(child)
        f = int(rng.integers(lo, hi + 1))
        walk = random_walk(target, f, rng)
        trajectories.append(reverse_trajectory(walk))
    return trajectories


# ---------------------------------------------------------------------------
# Dataset file format: JSON lines, one trajectory per line
# ---------------------------------------------------------------------------


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "start": config_to_dict(traj.start),
        "goal": config_to_dict(traj.goal),
        "actions": [
            {
                "mover": a.mover,
                "anchor": a.anchor,
                "face": a.face,
                "new_orient": list(a.new_orient),
            }
            for a in traj.actions()
        ],
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    start = config_from_dict(data["start"])
    goal = config_from_dict(data["goal"])
    state = start
    transitions = []
    for entry in data["actions"]:
        action = Action(
            mover=int(entry["mover"]),
            anchor=int(entry["anchor"]),
            face=int(entry["face"]),
            new_orient=tuple(entry["new_orient"]),
        )
        nxt = apply_action(state, action)
        transitions.append(Transition(state, action, nxt))
        state = nxt
    traj = Trajectory(tuple(transitions), start=start, goal=goal)
    traj.check_chain()
    return traj


def save_dataset(trajectories, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(json.dumps(trajectory_to_dict(traj), sort_keys=True,
                                separators=(",", ":")))
            fh.write("\n")


def load_dataset(path) -> list[Trajectory]:
    trajectories = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trajectories.append(trajectory_from_dict(json.loads(line)))
    return trajectories
