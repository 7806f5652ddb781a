import numpy as np
import pytest

from modrecon.expert import (
    Trajectory,
    generate_dataset,
    load_dataset,
    random_walk,
    reverse_trajectory,
    save_dataset,
    trajectory_from_dict,
    trajectory_to_dict,
)
from modrecon.lattice import apply_action, enumerate_actions, validate

from conftest import line_config, make_config, square_config


class TestRandomWalk:
    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            random_walk(line_config(2), 0, seed=0)

    def test_single_step_is_an_enumerated_successor(self):
        target = line_config(2)
        successors = {
            tuple(sorted(m.pos for m in apply_action(target, a).modules))
            for a in enumerate_actions(target)
        }
        walk = random_walk(target, 1, seed=7)
        walk.check_chain()
        end_cells = tuple(sorted(m.pos for m in walk.goal.modules))
        assert end_cells in successors
        assert len(successors) == 5

    def test_same_seed_same_trajectory(self):
        target = square_config()
        a = random_walk(target, 10, seed=42)
        b = random_walk(target, 10, seed=42)
        assert a == b

    def test_walk_starts_at_target(self):
        target = square_config()
        walk = random_walk(target, 3, seed=0)
        assert walk.start == target
        assert walk.transitions[0].state == target

    def test_every_intermediate_state_valid(self):
        target = make_config([(i, 0, 0) for i in range(5)])
        walk = random_walk(target, 20, seed=3)
        for t in walk.transitions:
            assert validate(t.next_state).ok


class TestReverseTrajectory:
    def test_reverse_single_step_returns_module(self):
        target = line_config(2)
        walk = random_walk(target, 1, seed=5)
        rev = reverse_trajectory(walk)
        assert rev.start == walk.goal
        assert rev.goal == target
        assert len(rev) == 1
        assert apply_action(rev.start, rev.transitions[0].action) == target

    def test_double_reverse_is_identity_on_reversed_walks(self):
        # reverse() emits canonical undo actions, so it is an involution on
        # its own image; raw walks agree at the state level only.
        target = square_config()
        walk = random_walk(target, 8, seed=11)
        rev = reverse_trajectory(walk)
        assert reverse_trajectory(reverse_trajectory(rev)) == rev

    def test_double_reverse_preserves_states_of_raw_walks(self):
        target = square_config()
        walk = random_walk(target, 8, seed=12)
        back = reverse_trajectory(reverse_trajectory(walk))
        assert back.states() == walk.states()

    def test_thousand_reversals_end_at_target(self, rng):
        target = make_config(
            [(x, y, 0) for x in range(4) for y in range(4)]
        )
        assert len(target.modules) == 16
        for i in range(1000):
            f = int(rng.integers(1, 25))
            walk = random_walk(target, f, seed=int(rng.integers(2**32)))
            rev = reverse_trajectory(walk)
            rev.check_chain()
            assert rev.goal == target
            state = rev.start
            for t in rev.transitions:
                assert validate(t.state).ok
                state = apply_action(state, t.action)
            assert state == target


class TestGenerateDataset:
    def test_count_one_fixed_length(self):
        target = square_config()
        data = generate_dataset(target, 1, (1, 1), seed=0)
        assert len(data) == 1
        assert len(data[0]) == 1
        assert data[0].goal == target

    def test_every_final_state_is_target(self):
        target = square_config()
        data = generate_dataset(target, 100, (1, 8), seed=9)
        assert len(data) == 100
        for traj in data:
            traj.check_chain()
            assert traj.goal == target

    def test_fixed_f_gives_fixed_length(self):
        target = make_config([(i, 0, 0) for i in range(4)])
        data = generate_dataset(target, 10, (24, 24), seed=2)
        assert all(len(t) == 24 for t in data)

    def test_deterministic_byte_for_byte(self, tmp_path):
        target = square_config()
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(generate_dataset(target, 20, (1, 6), seed=31), p1)
        save_dataset(generate_dataset(target, 20, (1, 6), seed=31), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_invalid_args(self):
        target = square_config()
        with pytest.raises(ValueError):
            generate_dataset(target, 0, (1, 5), seed=0)
        with pytest.raises(ValueError):
            generate_dataset(target, 1, (0, 5), seed=0)
        with pytest.raises(ValueError):
            generate_dataset(target, 1, (5, 2), seed=0)


class TestDatasetSerialization:
    def test_trajectory_round_trip(self):
        target = square_config()
        traj = reverse_trajectory(random_walk(target, 5, seed=1))
        assert trajectory_from_dict(trajectory_to_dict(traj)) == traj

    def test_file_round_trip(self, tmp_path):
        target = square_config()
        data = generate_dataset(target, 5, (1, 4), seed=8)
        path = tmp_path / "data.jsonl"
        save_dataset(data, path)
        assert load_dataset(path) == data

    def test_states_reconstructable_by_replay(self):
        target = square_config()
        traj = reverse_trajectory(random_walk(target, 6, seed=4))
        rebuilt = trajectory_from_dict(trajectory_to_dict(traj))
        assert rebuilt.states() == traj.states()


def test_empty_trajectory_requires_start_equals_goal():
    config = square_config()
    Trajectory((), config, config).check_chain()
    with pytest.raises(ValueError):
        Trajectory((), config, line_config(4)).check_chain()
