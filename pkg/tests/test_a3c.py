import csv
import math

import numpy as np
import pytest

from modrecon.a3c import (
    EmptyLegalSetError,
    Hyperparameters,
    NoPlanFoundError,
    PolicyValueNet,
    ReconfigEnv,
    SharedNets,
    accumulate_gradients,
    apply_async_update,
    hard_sync_target,
    load_policy_checkpoint,
    masked_distribution,
    plan,
    policy_surrogate,
    pretrain_imitation,
    save_policy_checkpoint,
    sync_target,
    train,
    value_surrogate,
    worker_rollout,
)
from modrecon.encoding import bounding_box_for
from modrecon.expert import generate_dataset
from modrecon.lattice import apply_action, mismatch_count, validate
from modrecon.nn import flatten_params, set_from_flat

from conftest import line_config, make_config, square_config
from test_nn import central_difference, relative_error


def tiny_net(target, margin=1, seed=0, **kwargs):
    box = bounding_box_for([target], margin=margin)
    env = ReconfigEnv.create(target, box)
    kwargs.setdefault("conv_filters", 2)
    kwargs.setdefault("hidden", 8)
    net = PolicyValueNet(box, env.indexer, env.state_channels, seed=seed,
                         **kwargs)
    return net, env


class TestHyperparameters:
    def test_defaults_from_parameter_table(self):
        h = Hyperparameters()
        assert h.workers == 32
        assert h.gamma == 0.99
        assert h.batch_size == 64
        assert h.t_max == 24
        assert h.buffer_size == 480_000
        assert h.tau == 1e-3
        assert h.lr_actor == 1e-5
        assert h.lr_critic == 2e-5
        h.validate()

    def test_invalid_rejected(self):
        with pytest.raises(ValueError):
            Hyperparameters(gamma=0.0).validate()
        with pytest.raises(ValueError):
            Hyperparameters(tau=1.5).validate()
        with pytest.raises(ValueError):
            Hyperparameters(workers=0).validate()


class TestMaskedDistribution:
    def test_uniform_logits_five_legal(self):
        probs = masked_distribution(np.zeros(20), [2, 5, 7, 11, 13])
        legal = probs[[2, 5, 7, 11, 13]]
        assert np.allclose(legal, 0.2)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        illegal = np.delete(probs, [2, 5, 7, 11, 13])
        assert np.all(illegal == 0.0)

    def test_single_legal_action(self, rng):
        logits = rng.normal(size=10) * 5
        probs = masked_distribution(logits, [4])
        assert probs[4] == 1.0
        assert probs.sum() == 1.0

    def test_shift_invariance(self, rng):
        logits = rng.normal(size=12)
        legal = [0, 3, 9]
        a = masked_distribution(logits, legal)
        b = masked_distribution(logits + 123.4, legal)
        assert np.allclose(a, b, atol=1e-12)

    def test_empty_legal_set(self):
        with pytest.raises(EmptyLegalSetError):
            masked_distribution(np.zeros(5), [])


class TestPolicyForward:
    def test_zero_weights_zero_outputs(self):
        net, env = tiny_net(line_config(2))
        flat = net.get_all_flat()
        net.set_all_flat(np.zeros_like(flat))
        logits, value = net.forward_single(env.encode(line_config(2)))
        assert np.all(logits == 0.0)
        assert value == 0.0

    def test_deterministic(self):
        target = square_config()
        net, env = tiny_net(target)
        enc = env.encode(target)
        a = net.forward_single(enc)
        b = net.forward_single(enc)
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]

    def test_logit_width_is_action_space(self):
        target = square_config()
        net, env = tiny_net(target)
        logits, _ = net.forward_single(env.encode(target))
        assert logits.shape == (env.indexer.size,)


class TestRollout:
    def test_start_at_target_terminal_and_empty(self, rng):
        target = square_config()
        net, env = tiny_net(target)
        rollout, state = worker_rollout(net, env, target, 24, rng)
        assert rollout.terminal
        assert len(rollout) == 0
        assert state == target

    def test_at_most_t_max_steps(self, rng):
        target = square_config()
        start = line_config(4)
        box = bounding_box_for([target, start], margin=2)
        env = ReconfigEnv.create(target, box)
        net = PolicyValueNet(box, env.indexer, env.state_channels,
                             conv_filters=2, hidden=8)
        for t_max in (1, 3, 24):
            rollout, _ = worker_rollout(net, env, start, t_max, rng)
            assert len(rollout) <= t_max

    def test_every_transition_feasible(self, rng):
        target = square_config()
        start = line_config(4)
        box = bounding_box_for([target, start], margin=2)
        env = ReconfigEnv.create(target, box)
        net = PolicyValueNet(box, env.indexer, env.state_channels,
                             conv_filters=2, hidden=8)
        for _ in range(10):
            state = start
            rollout, final = worker_rollout(net, env, state, 24, rng)
            # Replay the actions implied by the rollout steps.
            for step in rollout.steps:
                legal = env.legal_actions(state)
                assert step.action_index in legal
                state = apply_action(state, legal[step.action_index])
                assert validate(state).ok
            assert state == final

    def test_reward_is_negative_mismatch_without_disc(self, rng):
        target = square_config()
        start = line_config(4)
        box = bounding_box_for([target, start], margin=2)
        env = ReconfigEnv.create(target, box)
        net = PolicyValueNet(box, env.indexer, env.state_channels,
                             conv_filters=2, hidden=8)
        rollout, _ = worker_rollout(net, env, start, 8, rng)
        state = start
        for step in rollout.steps:
            legal = env.legal_actions(state)
            state = apply_action(state, legal[step.action_index])
            assert step.reward == -mismatch_count(state, target)
            assert step.env_reward == step.reward


class TestAccumulateGradients:
    def _rollout(self, rng, t_max=5):
        target = square_config()
        start = line_config(4)
        box = bounding_box_for([target, start], margin=1)
        env = ReconfigEnv.create(target, box)
        net = PolicyValueNet(box, env.indexer, env.state_channels,
                             conv_filters=2, hidden=6, seed=7)
        rollout, _ = worker_rollout(net, env, start, t_max, rng)
        return net, rollout

    def test_single_transition_gamma_zero(self, rng):
        net, rollout = self._rollout(rng, t_max=1)
        # With gamma = 0 the return is just the immediate reward.
        batch = rollout.steps[0].encoding[None]
        _, value = net.forward(batch)
        d_theta, d_theta_v = accumulate_gradients(rollout, net, gamma=0.0)
        advantage = rollout.steps[0].reward - value[0]
        # Value gradient of (r - V)^2 is -2 * advantage * dV/dtheta_v: check
        # the head bias gradient, which equals the raw output gradient.
        assert d_theta_v[-1][0] == pytest.approx(-2.0 * advantage)

    def test_zero_advantage_zero_policy_gradient(self, rng):
        net, rollout = self._rollout(rng, t_max=3)
        # Force the critic to output exactly the returns by zeroing rewards.
        steps = tuple(
            type(s)(s.encoding, s.legal_indices, s.action_index, 0.0, 0.0,
                    s.mismatch_after)
            for s in rollout.steps
        )
        rollout = type(rollout)(steps, True, rollout.final_state, None)
        # Zero value head: V == 0 everywhere, returns all zero -> A == 0.
        for arr in net.value_head.params():
            arr[...] = 0.0
        d_theta, _ = accumulate_gradients(rollout, net, gamma=0.9,
                                          entropy_beta=0.0)
        assert all(np.allclose(g, 0.0, atol=1e-15) for g in d_theta)

    @pytest.mark.parametrize("entropy_beta", [0.0, 0.01])
    def test_policy_gradient_matches_finite_differences(self, rng, entropy_beta):
        for seed in range(5):
            local_rng = np.random.default_rng(seed + 1)
            net, rollout = self._rollout(local_rng, t_max=4)
            if not rollout.steps:
                continue
            bootstrap = 0.0 if rollout.terminal else \
                net.forward_single(rollout.final_encoding)[1]
            batch = np.stack([s.encoding for s in rollout.steps])
            _, values = net.forward(batch)
            returns = np.zeros(len(rollout.steps))
            running = bootstrap
            for i in range(len(rollout.steps) - 1, -1, -1):
                running = rollout.steps[i].reward + 0.95 * running
                returns[i] = running
            advantages = returns - values

            d_theta, _ = accumulate_gradients(rollout, net, gamma=0.95,
                                              entropy_beta=entropy_beta)
            analytic = flatten_params(d_theta).copy()

            arrays = net.theta_arrays()
            flat0 = flatten_params(arrays).copy()

            def surrogate(flat):
                set_from_flat(arrays, flat)
                return policy_surrogate(net, rollout, advantages, entropy_beta)

            numeric = central_difference(surrogate, flat0)
            set_from_flat(arrays, flat0)
            assert relative_error(analytic, numeric) < 1e-4

    def test_value_gradient_matches_finite_differences(self, rng):
        for seed in range(5):
            local_rng = np.random.default_rng(seed + 11)
            net, rollout = self._rollout(local_rng, t_max=4)
            if not rollout.steps:
                continue
            bootstrap = 0.0 if rollout.terminal else \
                net.forward_single(rollout.final_encoding)[1]
            returns = np.zeros(len(rollout.steps))
            running = bootstrap
            for i in range(len(rollout.steps) - 1, -1, -1):
                running = rollout.steps[i].reward + 0.9 * running
                returns[i] = running

            _, d_theta_v = accumulate_gradients(rollout, net, gamma=0.9)
            analytic = flatten_params(d_theta_v).copy()
            arrays = net.theta_v_arrays()
            flat0 = flatten_params(arrays).copy()

            def surrogate(flat):
                set_from_flat(arrays, flat)
                return value_surrogate(net, rollout, returns)

            numeric = central_difference(surrogate, flat0)
            set_from_flat(arrays, flat0)
            assert relative_error(analytic, numeric) < 1e-4

    def test_empty_rollout_rejected(self, rng):
        target = square_config()
        net, env = tiny_net(target)
        rollout, _ = worker_rollout(net, env, target, 4, rng)
        with pytest.raises(ValueError):
            accumulate_gradients(rollout, net, gamma=0.9)


class TestAsyncUpdate:
    def test_zero_gradients_no_change(self, rng):
        net, _ = tiny_net(square_config())
        shared = SharedNets.create(net)
        before = shared.net.get_all_flat().copy()
        d_theta = [np.zeros_like(a) for a in net.theta_arrays()]
        d_theta_v = [np.zeros_like(a) for a in net.theta_v_arrays()]
        apply_async_update(shared, d_theta, d_theta_v, 0.1, 0.2)
        assert np.array_equal(shared.net.get_all_flat(), before)

    def test_two_updates_commute_for_sgd(self, rng):
        def grads(seed):
            g_rng = np.random.default_rng(seed)
            net, _ = tiny_net(square_config())
            return ([g_rng.normal(size=a.shape) for a in net.theta_arrays()],
                    [g_rng.normal(size=a.shape) for a in net.theta_v_arrays()])

        g1, g1v = grads(1)
        g2, g2v = grads(2)

        def run(order):
            net, _ = tiny_net(square_config(), seed=5)
            shared = SharedNets.create(net)
            for g, gv in order:
                apply_async_update(shared, g, gv, 1e-3, 2e-3)
            return shared.net.get_all_flat()

        a = run([(g1, g1v), (g2, g2v)])
        b = run([(g2, g2v), (g1, g1v)])
        summed = run([([x + y for x, y in zip(g1, g2)],
                       [x + y for x, y in zip(g1v, g2v)])])
        assert np.allclose(a, b, atol=1e-12)
        assert np.allclose(a, summed, atol=1e-12)

    def test_trunk_receives_both_rates(self):
        net, _ = tiny_net(square_config(), seed=3)
        shared = SharedNets.create(net)
        before = [a.copy() for a in shared.net.trunk_arrays()]
        d_theta = [np.ones_like(a) for a in net.theta_arrays()]
        d_theta_v = [np.ones_like(a) for a in net.theta_v_arrays()]
        apply_async_update(shared, d_theta, d_theta_v, 0.25, 0.5)
        n_trunk = len(before)
        for prev, now in zip(before, shared.net.trunk_arrays()[:n_trunk]):
            assert np.allclose(prev - now, 0.75)


class TestSyncTarget:
    def test_tau_one_copies(self):
        net, _ = tiny_net(square_config(), seed=2)
        shared = SharedNets.create(net)
        shared.net.set_all_flat(shared.net.get_all_flat() + 1.0)
        sync_target(shared, tau=1.0)
        assert np.allclose(shared.target.get_all_flat(),
                           shared.net.get_all_flat())

    def test_tau_zero_unchanged(self):
        net, _ = tiny_net(square_config(), seed=2)
        shared = SharedNets.create(net)
        before = shared.target.get_all_flat().copy()
        shared.net.set_all_flat(shared.net.get_all_flat() + 1.0)
        sync_target(shared, tau=0.0)
        assert np.array_equal(shared.target.get_all_flat(), before)

    def test_soft_update_formula(self):
        net, _ = tiny_net(square_config(), seed=2)
        shared = SharedNets.create(net)
        t0 = shared.target.get_all_flat().copy()
        shared.net.set_all_flat(shared.net.get_all_flat() + 2.0)
        p = shared.net.get_all_flat().copy()
        sync_target(shared, tau=1e-3)
        expected = 1e-3 * p + (1 - 1e-3) * t0
        assert np.allclose(shared.target.get_all_flat(), expected, atol=1e-15)

    def test_hard_sync(self):
        net, _ = tiny_net(square_config(), seed=2)
        shared = SharedNets.create(net)
        shared.net.set_all_flat(shared.net.get_all_flat() - 3.0)
        hard_sync_target(shared)
        assert np.array_equal(shared.target.get_all_flat(),
                              shared.net.get_all_flat())


class TestPretrainImitation:
    def test_zero_epochs_unchanged(self):
        target = square_config()
        net, env = tiny_net(target, margin=3)
        dataset = generate_dataset(target, 3, (1, 3), seed=0)
        before = net.get_all_flat().copy()
        pretrain_imitation(net, env, dataset, epochs=0, lr=0.1)
        assert np.array_equal(net.get_all_flat(), before)

    def test_single_pair_overfits_to_argmax(self):
        target = square_config()
        net, env = tiny_net(target, margin=2, hidden=16)
        dataset = generate_dataset(target, 1, (1, 1), seed=3)
        transition = dataset[0].transitions[0]
        pretrain_imitation(net, env, dataset, epochs=300, lr=0.05)
        logits, _ = net.forward_single(env.encode(transition.state))
        legal = sorted(env.legal_actions(transition.state))
        probs = masked_distribution(logits, np.array(legal))
        assert int(np.argmax(probs)) == env.indexer.index(transition.action)

    def test_nll_decreases_monotonically_full_batch(self):
        target = square_config()
        net, env = tiny_net(target, margin=3)
        dataset = generate_dataset(target, 5, (1, 3), seed=1)
        history = []
        pretrain_imitation(net, env, dataset, epochs=40, lr=1e-3,
                           batch_size=None, metrics_out=history)
        nll = [h["nll"] for h in history]
        assert all(b <= a + 1e-10 for a, b in zip(nll, nll[1:]))
        assert nll[-1] < nll[0]


class TestPlan:
    def test_start_equals_target_empty_plan(self):
        target = square_config()
        net, _ = tiny_net(target)
        result = plan(net, target, target, max_steps=10)
        assert result.actions == ()
        assert result.reached and not result.used_fallback

    def test_returned_plan_replays_to_target(self):
        target = square_config()
        start = line_config(4)
        result = plan(None, start, target, max_steps=10)
        assert result.reached
        assert result.used_fallback  # BFS fallback used without a network
        state = start
        for action in result.actions:
            state = apply_action(state, action)
        assert mismatch_count(state, target) == 0

    def test_untrained_policy_falls_back(self):
        target = square_config()
        start = line_config(4)
        box = bounding_box_for([target, start], margin=2)
        env = ReconfigEnv.create(target, box)
        net = PolicyValueNet(box, env.indexer, env.state_channels,
                             conv_filters=2, hidden=8, seed=123)
        result = plan(net, start, target, max_steps=4, box=box)
        assert result.reached

    def test_no_plan_error_reports_best_mismatch(self):
        target = square_config()
        start = line_config(4)
        with pytest.raises(NoPlanFoundError) as err:
            plan(None, start, target, max_steps=10, allow_fallback=False)
        assert err.value.best_mismatch >= 0


class TestTrainLoop:
    def _setup(self):
        target = square_config()
        dataset = generate_dataset(target, 10, (1, 4), seed=2)
        starts = [t.start for t in dataset]
        return target, dataset, starts

    def test_single_worker_deterministic_metrics(self, tmp_path):
        target, dataset, starts = self._setup()
        hyper = Hyperparameters(workers=1, total_steps=150, t_max=8,
                                lr_actor=1e-3, lr_critic=2e-3,
                                disc_interval=64)

        def run(path):
            train(starts, target, hyper, seed=7, expert_trajectories=dataset,
                  pretrain_epochs=2, disc_pretrain_iters=2,
                  metrics_path=path)
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
            return [row[:-1] for row in rows]  # drop wall_ms

        assert run(tmp_path / "a.csv") == run(tmp_path / "b.csv")

    def test_training_runs_and_counts_steps(self, tmp_path):
        target, dataset, starts = self._setup()
        hyper = Hyperparameters(workers=2, total_steps=120, t_max=8,
                                lr_actor=1e-3, lr_critic=2e-3)
        result = train(starts, target, hyper, seed=1,
                       expert_trajectories=dataset, pretrain_epochs=1,
                       disc_pretrain_iters=1,
                       metrics_path=tmp_path / "m.csv")
        assert result.global_steps >= 120
        assert result.episodes > 0
        assert (tmp_path / "m.csv").exists()

    def test_budget_abort(self, tmp_path):
        target, dataset, starts = self._setup()
        hyper = Hyperparameters(workers=1, total_steps=10**7, t_max=8,
                                lr_actor=1e-3, lr_critic=2e-3)
        result = train(starts, target, hyper, seed=1,
                       expert_trajectories=dataset, pretrain_epochs=0,
                       disc_pretrain_iters=0, use_discriminator=False,
                       budget_seconds=0.5)
        assert result.aborted


class TestCheckpoint:
    def test_round_trip_with_discriminator(self, tmp_path):
        target = square_config()
        dataset = generate_dataset(target, 5, (1, 3), seed=2)
        hyper = Hyperparameters(workers=1, total_steps=40, t_max=6,
                                lr_actor=1e-3, lr_critic=2e-3)
        result = train([t.start for t in dataset], target, hyper, seed=3,
                       expert_trajectories=dataset, pretrain_epochs=1,
                       disc_pretrain_iters=2)
        path = tmp_path / "policy.ckpt"
        save_policy_checkpoint(result.shared, path, result.discriminator)
        shared, disc = load_policy_checkpoint(path)
        assert np.array_equal(shared.net.get_all_flat(),
                              result.shared.net.get_all_flat())
        assert np.array_equal(shared.target.get_all_flat(),
                              result.shared.target.get_all_flat())
        assert disc is not None
        assert np.array_equal(disc.net.get_flat(),
                              result.discriminator.net.get_flat())

    def test_round_trip_without_discriminator(self, tmp_path):
        net, _ = tiny_net(square_config(), seed=4)
        shared = SharedNets.create(net)
        path = tmp_path / "bare.ckpt"
        save_policy_checkpoint(shared, path, None)
        restored, disc = load_policy_checkpoint(path)
        assert disc is None
        assert np.array_equal(restored.net.get_all_flat(),
                              shared.net.get_all_flat())
