"""Masked actor-critic policy learning with asynchronous workers.

The policy/value network consumes the box encoding of (current, target)
configuration pairs, masks its softmax to the currently legal actions, and
is trained by workers that roll out private environment copies, accumulate
advantage gradients, and apply them to the shared parameters under a lock.
Behavior cloning on expert trajectories provides the warm start, and a
discriminator reward can be blended into the environment reward with a
weight that anneals to zero over training.
"""

from __future__ import annotations

import copy
import csv
import math
import queue
import threading
import time
from dataclasses import dataclass

import numpy as np

from .encoding import ActionIndexer, BoundingBox, encode_state, function_tags
from .expert import Trajectory
from .gail import (
    Discriminator,
    ReplayBuffer,
    imitation_reward_from_probability,
    update_discriminator,
)
from .lattice import (
    Action,
    Configuration,
    apply_action,
    canonical_key,
    mismatch_count,
)
from .nn import Conv3D, Dense, Tanh, flatten_params, load_checkpoint, save_checkpoint
from .search import _legal_actions, bfs_plan


class EmptyLegalSetError(Exception):
    """The current state has no legal action (terminal dead state)."""


class NoPlanFoundError(Exception):
    def __init__(self, best_mismatch: int):
        self.best_mismatch = best_mismatch
        super().__init__(f"no plan found (best mismatch {best_mismatch})")


@dataclass(frozen=True)
class Hyperparameters:
    """Training defaults; table values are for full-scale runs."""

    workers: int = 32
    gamma: float = 0.99
    batch_size: int = 64
    t_max: int = 24
    buffer_size: int = 480_000
    tau: float = 1e-3
    lr_actor: float = 1e-5
    lr_critic: float = 2e-5
    total_steps: int = 100_000
    target_sync_interval: int = 1_000
    entropy_beta: float = 0.01
    imitation_weight: float = 0.5  # annealed to zero over total_steps
    reward_clamp: float = 10.0
    hard_target_sync: bool = False  # soft update every step by default
    use_target_bootstrap: bool = True
    disc_lr: float = 1e-3
    disc_interval: int = 256

    def validate(self) -> None:
        positive = {
            "workers": self.workers, "batch_size": self.batch_size,
            "t_max": self.t_max, "buffer_size": self.buffer_size,
            "lr_actor": self.lr_actor, "lr_critic": self.lr_critic,
            "total_steps": self.total_steps,
            "target_sync_interval": self.target_sync_interval,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")


class PolicyValueNet:
    """Conv trunk with two dense layers and separate policy/value heads."""

    def __init__(
        self,
        box: BoundingBox,
        indexer: ActionIndexer,
        state_channels: int,
        conv_filters: int = 8,
        kernel: int = 3,
        hidden: int = 128,
        seed: int = 0,
    ):
        if min(box.shape) < kernel:
            raise ValueError(f"box {box.shape} smaller than conv kernel {kernel}")
        rng = np.random.default_rng(seed)
        self.box = box
        self.indexer = indexer
        self.state_channels = state_channels
        self.conv_filters = conv_filters
        self.kernel = kernel
        self.hidden = hidden
        self.conv = Conv3D(state_channels, conv_filters, kernel, rng)
        self._act0 = Tanh()
        conv_out = tuple(s - kernel + 1 for s in box.shape)
        flat_dim = conv_filters * int(np.prod(conv_out))
        self.fc1 = Dense(flat_dim, hidden, rng)
        self._act1 = Tanh()
        self.fc2 = Dense(hidden, hidden, rng)
        self._act2 = Tanh()
        # Near-zero heads: fresh policies start near uniform over the mask.
        self.policy_head = Dense(hidden, indexer.size, rng,
                                 scale=0.01 / np.sqrt(hidden))
        self.value_head = Dense(hidden, 1, rng, scale=0.01 / np.sqrt(hidden))
        self._conv_out_shape: tuple | None = None

    # -- parameter access ---------------------------------------------------

    def trunk_layers(self):
        return [self.conv, self.fc1, self.fc2]

    def trunk_arrays(self):
        out = []
        for layer in self.trunk_layers():
            out.extend(layer.params())
        return out

    def trunk_grads(self):
        out = []
        for layer in self.trunk_layers():
            out.extend(layer.grads())
        return out

    def theta_arrays(self):
        return self.trunk_arrays() + self.policy_head.params()

    def theta_v_arrays(self):
        return self.trunk_arrays() + self.value_head.params()

    def all_arrays(self):
        return self.trunk_arrays() + self.policy_head.params() + self.value_head.params()

    def all_grads(self):
        return self.trunk_grads() + self.policy_head.grads() + self.value_head.grads()

    def get_all_flat(self) -> np.ndarray:
        return flatten_params(self.all_arrays())

    def set_all_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for a in self.all_arrays():
            a[...] = flat[offset:offset + a.size].reshape(a.shape)
            offset += a.size

    def zero_grads(self) -> None:
        for g in self.all_grads():
            g[...] = 0.0

    def copy(self) -> "PolicyValueNet":
        return copy.deepcopy(self)

    # -- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch forward: encodings (B, C, X, Y, Z) -> (logits, values)."""
        h = self._act0.forward(self.conv.forward(x))
        self._conv_out_shape = h.shape
        h = self.fc1.forward(h.reshape(h.shape[0], -1))
        h = self._act1.forward(h)
        h = self._act2.forward(self.fc2.forward(h))
        logits = self.policy_head.forward(h)
        values = self.value_head.forward(h)[:, 0]
        return logits, values

    def forward_single(self, enc: np.ndarray) -> tuple[np.ndarray, float]:
        logits, values = self.forward(enc[None])
        return logits[0], float(values[0])

    def _backward_trunk(self, grad_hidden: np.ndarray) -> None:
        g = self.fc2.backward(self._act2.backward(grad_hidden))
        g = self.fc1.backward(self._act1.backward(g))
        g = g.reshape(self._conv_out_shape)
        self.conv.backward(self._act0.backward(g))

    def backward_policy(self, grad_logits: np.ndarray) -> None:
        self._backward_trunk(self.policy_head.backward(grad_logits))

    def backward_value(self, grad_values: np.ndarray) -> None:
        self._backward_trunk(self.value_head.backward(grad_values[:, None]))


def sync_target(shared: "SharedNets", tau: float) -> None:
    """Soft update: target <- tau * params + (1 - tau) * target."""
    for t, p in zip(shared.target.all_arrays(), shared.net.all_arrays()):
        t *= 1.0 - tau
        t += tau * p


def hard_sync_target(shared: "SharedNets") -> None:
    for t, p in zip(shared.target.all_arrays(), shared.net.all_arrays()):
        t[...] = p


@dataclass
class SharedNets:
    """Shared policy/value parameters plus their target-network copy."""

    net: PolicyValueNet
    target: PolicyValueNet

    @classmethod
    def create(cls, net: PolicyValueNet) -> "SharedNets":
        return cls(net=net, target=net.copy())


def masked_distribution(logits: np.ndarray, legal) -> np.ndarray:
    """Softmax restricted to legal indices; exact zeros elsewhere."""
    legal = np.asarray(sorted(set(int(i) for i in legal)), dtype=int)
    if legal.size == 0:
        raise EmptyLegalSetError("no legal actions to distribute over")
    z = logits[legal]
    z = z - z.max()
    e = np.exp(z)
    probs = np.zeros_like(logits)
    probs[legal] = e / e.sum()
    return probs


def masked_log_softmax_rows(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise masked log-softmax; -inf on illegal entries."""
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    logsum = np.log(np.exp(np.where(mask, shifted, -np.inf)).sum(axis=1, keepdims=True))
    return shifted - logsum


@dataclass
class ReconfigEnv:
    """Private environment copy: lattice dynamics plus reward shaping."""

    target: Configuration
    box: BoundingBox
    indexer: ActionIndexer

    @classmethod
    def create(cls, target: Configuration, box: BoundingBox) -> "ReconfigEnv":
        return cls(target=target, box=box,
                   indexer=ActionIndexer.for_configuration(target))

    @property
    def state_channels(self) -> int:
        return 3 + len(function_tags(self.target))

    def encode(self, config: Configuration) -> np.ndarray:
        return encode_state(config, self.target, self.box)

    def legal_actions(self, config: Configuration) -> dict[int, Action]:
        """Legal actions keyed by canonical index; box-bounded."""
        return {
            self.indexer.index(a): a
            for a in _legal_actions(config, self.box)
        }

    def env_reward(self, next_config: Configuration) -> float:
        return -float(mismatch_count(next_config, self.target))

    def is_goal(self, config: Configuration) -> bool:
        return mismatch_count(config, self.target) == 0


@dataclass(frozen=True)
class RolloutStep:
    encoding: np.ndarray
    legal_indices: np.ndarray
    action_index: int
    reward: float
    env_reward: float
    mismatch_after: int


@dataclass(frozen=True)
class Rollout:
    steps: tuple[RolloutStep, ...]
    terminal: bool
    final_state: Configuration
    final_encoding: np.ndarray | None  # None when terminal

    def __len__(self) -> int:
        return len(self.steps)

    def env_return(self) -> float:
        return sum(s.env_reward for s in self.steps)


def worker_rollout(
    net: PolicyValueNet,
    env: ReconfigEnv,
    start: Configuration,
    t_max: int,
    rng: np.random.Generator,
    disc: Discriminator | None = None,
    imitation_weight: float = 0.0,
    reward_clamp: float = 10.0,
) -> tuple[Rollout, Configuration]:
    """Sample at most t_max masked-policy transitions from `start`.

    Returns the rollout and the state to continue from (the final state).
    Rewards blend the discriminator term with the mismatch penalty.
    """
    if env.is_goal(start):
        return Rollout((), True, start, None), start
    steps: list[RolloutStep] = []
    state = start
    terminal = False
    for _ in range(t_max):
        legal = env.legal_actions(state)
        if not legal:
            terminal = True  # dead state: no legal action
            break
        enc = env.encode(state)
        logits, _ = net.forward_single(enc)
        legal_idx = np.array(sorted(legal), dtype=int)
        probs = masked_distribution(logits, legal_idx)
        action_index = int(rng.choice(len(probs), p=probs))
        action = legal[action_index]
        nxt = apply_action(state, action)
        env_r = env.env_reward(nxt)
        reward = env_r
        if disc is not None and imitation_weight > 0.0:
            one_hot = np.zeros(env.indexer.size)
            one_hot[action_index] = 1.0
            pair = np.concatenate([enc.reshape(-1), one_hot])
            d = float(disc.forward_encoded(pair)[0])
            imit_r = imitation_reward_from_probability(d, reward_clamp)
            reward = imitation_weight * imit_r + (1.0 - imitation_weight) * env_r
        mism = mismatch_count(nxt, env.target)
        steps.append(RolloutStep(enc, legal_idx, action_index, reward, env_r, mism))
        state = nxt
        if mism == 0:
            terminal = True
            break
    final_encoding = None if terminal else env.encode(state)
    return Rollout(tuple(steps), terminal, state, final_encoding), state


def accumulate_gradients(
    rollout: Rollout,
    net: PolicyValueNet,
    gamma: float,
    entropy_beta: float = 0.0,
    bootstrap_net: PolicyValueNet | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Advantage actor-critic gradients for one rollout.

    Returns (d_theta, d_theta_v) as array lists matching theta_arrays and
    theta_v_arrays.  The critic target is the n-step return bootstrapped
    from the (target) value network at the final non-terminal state.
    """
    if not rollout.steps:
        raise ValueError("rollout must be non-empty")
    if rollout.terminal or rollout.final_encoding is None:
        running = 0.0
    else:
        booter = bootstrap_net if bootstrap_net is not None else net
        _, running = booter.forward_single(rollout.final_encoding)
    returns = np.zeros(len(rollout.steps))
    for i in range(len(rollout.steps) - 1, -1, -1):
        running = rollout.steps[i].reward + gamma * running
        returns[i] = running

    batch = np.stack([s.encoding for s in rollout.steps])
    logits, values = net.forward(batch)
    advantages = returns - values

    grad_logits = np.zeros_like(logits)
    for i, step in enumerate(rollout.steps):
        probs = masked_distribution(logits[i], step.legal_indices)
        row = probs.copy()
        row[step.action_index] -= 1.0
        row *= advantages[i]
        if entropy_beta > 0.0:
            legal = step.legal_indices
            p = probs[legal]
            logp = np.log(np.maximum(p, 1e-300))
            entropy = -float(np.sum(p * logp))
            row[legal] += entropy_beta * p * (logp + entropy)
        grad_logits[i] = row

    net.zero_grads()
    net.backward_policy(grad_logits)
    d_theta = [g.copy() for g in net.trunk_grads() + net.policy_head.grads()]
    net.zero_grads()
    net.backward_value(-2.0 * advantages)
    d_theta_v = [g.copy() for g in net.trunk_grads() + net.value_head.grads()]
    net.zero_grads()
    for g in d_theta + d_theta_v:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    return d_theta, d_theta_v


def policy_surrogate(
    net: PolicyValueNet,
    rollout: Rollout,
    advantages: np.ndarray,
    entropy_beta: float = 0.0,
) -> float:
    """Sum of -log pi(a|s) * advantage - beta * entropy (advantages fixed)."""
    batch = np.stack([s.encoding for s in rollout.steps])
    logits, _ = net.forward(batch)
    total = 0.0
    for i, step in enumerate(rollout.steps):
        probs = masked_distribution(logits[i], step.legal_indices)
        total -= math.log(max(probs[step.action_index], 1e-300)) * advantages[i]
        if entropy_beta > 0.0:
            p = probs[step.legal_indices]
            logp = np.log(np.maximum(p, 1e-300))
            total -= entropy_beta * (-float(np.sum(p * logp)))
    return float(total)


def value_surrogate(net: PolicyValueNet, rollout: Rollout, returns: np.ndarray) -> float:
    """Sum of squared critic residuals (returns fixed)."""
    batch = np.stack([s.encoding for s in rollout.steps])
    _, values = net.forward(batch)
    return float(np.sum((returns - values) ** 2))


def apply_async_update(
    shared: SharedNets,
    d_theta: list[np.ndarray],
    d_theta_v: list[np.ndarray],
    lr_actor: float,
    lr_critic: float,
    lock: threading.Lock | None = None,
) -> None:
    """One SGD step on the shared parameters; atomic under `lock`.

    The trunk is shared: it receives the actor-rate policy gradient and the
    critic-rate value gradient, while each head sees only its own term.
    """
    theta_targets = shared.net.theta_arrays()
    value_targets = shared.net.theta_v_arrays()
    n_trunk = len(shared.net.trunk_arrays())
    if len(d_theta) != len(theta_targets) or len(d_theta_v) != len(value_targets):
        raise ValueError("gradient structure does not match the network")
    ctx = lock if lock is not None else threading.Lock()
    with ctx:
        for arr, g in zip(theta_targets, d_theta):
            arr -= lr_actor * g
        for arr, g in zip(value_targets[n_trunk:], d_theta_v[n_trunk:]):
            arr -= lr_critic * g
        for arr, g in zip(value_targets[:n_trunk], d_theta_v[:n_trunk]):
            arr -= lr_critic * g


def pretrain_imitation(
    net: PolicyValueNet,
    env: ReconfigEnv,
    trajectories: list[Trajectory],
    epochs: int,
    lr: float,
    gamma: float = 0.99,
    batch_size: int | None = None,
    seed: int = 0,
    metrics_out: list | None = None,
) -> PolicyValueNet:
    """Behavior-cloning warm start on expert trajectories.

    Minimizes the masked-policy negative log-likelihood of expert actions
    and fits the value head to discounted Monte-Carlo mismatch returns.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    samples = []
    for traj in trajectories:
        env_rewards = [env.env_reward(t.next_state) for t in traj.transitions]
        running = 0.0
        returns = [0.0] * len(env_rewards)
        for i in range(len(env_rewards) - 1, -1, -1):
            running = env_rewards[i] + gamma * running
            returns[i] = running
        for t, ret in zip(traj.transitions, returns):
            legal = env.legal_actions(t.state)
            idx = env.indexer.index(t.action)
            if idx not in legal:
                raise ValueError("expert action is not legal in its state")
            samples.append((env.encode(t.state),
                            np.array(sorted(legal), dtype=int), idx, ret))
    if not samples:
        raise ValueError("expert dataset is empty")

    encodings = np.stack([s[0] for s in samples])
    action_idx = np.array([s[2] for s in samples], dtype=int)
    mc_returns = np.array([s[3] for s in samples])
    mask = np.zeros((len(samples), net.indexer.size), dtype=bool)
    for row, s in enumerate(samples):
        mask[row, s[1]] = True

    rng = np.random.default_rng(seed)
    count = len(samples)
    for _ in range(epochs):
        order = rng.permutation(count) if batch_size else np.arange(count)
        step = batch_size or count
        epoch_nll = 0.0
        epoch_mse = 0.0
        for lo in range(0, count, step):
            rows = order[lo:lo + step]
            logits, values = net.forward(encodings[rows])
            logp = masked_log_softmax_rows(logits, mask[rows])
            picked = logp[np.arange(len(rows)), action_idx[rows]]
            nll = -float(np.mean(picked))
            residual = values - mc_returns[rows]
            mse = float(np.mean(residual ** 2))
            epoch_nll += nll * len(rows)
            epoch_mse += mse * len(rows)

            probs = np.exp(np.where(mask[rows], logp, -np.inf))
            grad_logits = probs.copy()
            grad_logits[np.arange(len(rows)), action_idx[rows]] -= 1.0
            grad_logits /= len(rows)
            net.zero_grads()
            net.backward_policy(grad_logits)
            net.backward_value(2.0 * residual / len(rows))
            for arr, g in zip(net.all_arrays(), net.all_grads()):
                arr -= lr * g
            net.zero_grads()
        if metrics_out is not None:
            metrics_out.append({"nll": epoch_nll / count, "value_mse": epoch_mse / count})
    return net


def imitation_nll(net: PolicyValueNet, env: ReconfigEnv,
                  trajectories: list[Trajectory]) -> float:
    """Mean masked NLL of expert actions under the current policy."""
    total = 0.0
    count = 0
    for traj in trajectories:
        for t in traj.transitions:
            legal = env.legal_actions(t.state)
            enc = env.encode(t.state)
            logits, _ = net.forward_single(enc)
            probs = masked_distribution(logits, np.array(sorted(legal), dtype=int))
            total -= math.log(max(probs[env.indexer.index(t.action)], 1e-300))
            count += 1
    return total / max(count, 1)


@dataclass
class TrainResult:
    shared: SharedNets
    discriminator: Discriminator | None
    episodes: int
    global_steps: int
    metrics_path: str | None
    aborted: bool = False


def _expert_pairs(env: ReconfigEnv, trajectories: list[Trajectory]) -> np.ndarray:
    rows = []
    for traj in trajectories:
        for t in traj.transitions:
            enc = env.encode(t.state)
            one_hot = np.zeros(env.indexer.size)
            one_hot[env.indexer.index(t.action)] = 1.0
            rows.append(np.concatenate([enc.reshape(-1), one_hot]))
    return np.stack(rows)


def train(
    start_states,
    target: Configuration,
    hyper: Hyperparameters,
    seed: int,
    expert_trajectories: list[Trajectory],
    box: BoundingBox | None = None,
    net: PolicyValueNet | None = None,
    pretrain_epochs: int = 20,
    pretrain_lr: float = 1e-2,
    disc_pretrain_iters: int = 20,
    use_discriminator: bool = True,
    metrics_path=None,
    budget_seconds: float | None = None,
    net_seed: int | None = None,
) -> TrainResult:
    """Full training loop: behavior cloning, discriminator pretraining,
    then asynchronous advantage actor-critic with blended rewards.

    `start_states` is a sequence of start configurations or a callable
    rng -> Configuration.  Single-worker runs are fully deterministic for
    a fixed seed (up to the wall-clock column of the metrics stream).
    """
    hyper.validate()
    from .encoding import bounding_box_for

    starts_list = None if callable(start_states) else list(start_states)
    if box is None:
        # Cover every expert state: walks can wander outside the hull of
        # the start and target configurations.
        pool = [target] + (starts_list or [])
        for traj in expert_trajectories:
            pool.extend(traj.states())
        box = bounding_box_for(pool, margin=2)
    env = ReconfigEnv.create(target, box)
    if net is None:
        net = PolicyValueNet(box, env.indexer, env.state_channels,
                             seed=seed if net_seed is None else net_seed)
    shared = SharedNets.create(net)

    def sample_start(rng: np.random.Generator) -> Configuration:
        if starts_list is not None:
            return starts_list[int(rng.integers(len(starts_list)))]
        return start_states(rng)

    t0 = time.monotonic()
    deadline = None if budget_seconds is None else t0 + budget_seconds

    # Phase 1: behavior cloning.
    pretrain_imitation(net, env, expert_trajectories, pretrain_epochs,
                       pretrain_lr, hyper.gamma, batch_size=hyper.batch_size,
                       seed=seed)
    hard_sync_target(shared)

    # Phase 2: adversarial warm-up of the discriminator.
    disc = None
    expert_pairs = None
    buffer = ReplayBuffer(hyper.buffer_size)
    if use_discriminator:
        disc = Discriminator.create(box, env.indexer, env.state_channels,
                                    seed=seed + 1)
        expert_pairs = _expert_pairs(env, expert_trajectories)
        warm_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        for _ in range(disc_pretrain_iters):
            rollout, _ = worker_rollout(net, env, sample_start(warm_rng),
                                        hyper.t_max, warm_rng)
            for step in rollout.steps:
                one_hot = np.zeros(env.indexer.size)
                one_hot[step.action_index] = 1.0
                buffer.add(np.concatenate([step.encoding.reshape(-1), one_hot]))
            if len(buffer) >= 2:
                eb = expert_pairs[warm_rng.integers(len(expert_pairs),
                                                    size=hyper.batch_size)]
                ib = buffer.sample(warm_rng, hyper.batch_size)
                disc = update_discriminator(disc, eb, ib, hyper.disc_lr)

    # Phase 3: asynchronous actor-critic.
    update_lock = threading.Lock()
    disc_lock = threading.Lock()
    counter_lock = threading.Lock()
    stop = threading.Event()
    state = {"T": 0, "episodes": 0, "disc": disc, "aborted": False}

    metrics_queue: queue.Queue = queue.Queue()
    writer_thread = None
    if metrics_path is not None:
        def writer():
            with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["global_step", "episode", "return", "final_mismatch",
                            "wall_ms"])
                while True:
                    row = metrics_queue.get()
                    if row is None:
                        return
                    w.writerow(row)
                    fh.flush()

        writer_thread = threading.Thread(target=writer, daemon=True)
        writer_thread.start()

    worker_seeds = np.random.SeedSequence(seed).spawn(hyper.workers + 1)[1:]

    def worker_loop(worker_index: int) -> None:
        rng = np.random.default_rng(worker_seeds[worker_index])
        local = shared.net.copy()
        local_target = shared.target.copy()
        while not stop.is_set():
            with counter_lock:
                if state["T"] >= hyper.total_steps:
                    break
            if deadline is not None and time.monotonic() > deadline:
                state["aborted"] = True
                stop.set()
                break
            with update_lock:
                local.set_all_flat(shared.net.get_all_flat())
                local_target.set_all_flat(shared.target.get_all_flat())
            with disc_lock:
                disc_snapshot = state["disc"].copy() if state["disc"] else None
            with counter_lock:
                progress = state["T"] / hyper.total_steps
            lam = hyper.imitation_weight * max(0.0, 1.0 - progress) \
                if disc_snapshot is not None else 0.0

            start = sample_start(rng)
            rollout, _ = worker_rollout(
                local, env, start, hyper.t_max, rng,
                disc=disc_snapshot, imitation_weight=lam,
                reward_clamp=hyper.reward_clamp,
            )
            if rollout.steps:
                d_theta, d_theta_v = accumulate_gradients(
                    rollout, local, hyper.gamma, hyper.entropy_beta,
                    bootstrap_net=local_target if hyper.use_target_bootstrap else local,
                )
                apply_async_update(shared, d_theta, d_theta_v,
                                   hyper.lr_actor, hyper.lr_critic, update_lock)
                with update_lock:
                    sync_target(shared, hyper.tau)

            with counter_lock:
                prev_t = state["T"]
                state["T"] += max(len(rollout), 1)
                new_t = state["T"]
                state["episodes"] += 1
                episode = state["episodes"]
            final_mismatch = mismatch_count(rollout.final_state, target)
            wall_ms = (time.monotonic() - t0) * 1000.0
            metrics_queue.put([new_t, episode, rollout.env_return(),
                               final_mismatch, f"{wall_ms:.1f}"])

            if disc_snapshot is not None and rollout.steps:
                with disc_lock:
                    for step in rollout.steps:
                        one_hot = np.zeros(env.indexer.size)
                        one_hot[step.action_index] = 1.0
                        buffer.add(np.concatenate([step.encoding.reshape(-1),
                                                   one_hot]))
                    boundary = prev_t // hyper.disc_interval != new_t // hyper.disc_interval
                    if boundary and len(buffer) >= 2:
                        eb = expert_pairs[rng.integers(len(expert_pairs),
                                                       size=hyper.batch_size)]
                        ib = buffer.sample(rng, hyper.batch_size)
                        state["disc"] = update_discriminator(
                            state["disc"], eb, ib, hyper.disc_lr)
            if hyper.hard_target_sync:
                boundary = prev_t // hyper.target_sync_interval != \
                    new_t // hyper.target_sync_interval
                if boundary:
                    with update_lock:
                        hard_sync_target(shared)

    if hyper.workers == 1:
        worker_loop(0)
    else:
        threads = [
            threading.Thread(target=worker_loop, args=(i,), daemon=True)
            for i in range(hyper.workers)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if writer_thread is not None:
        metrics_queue.put(None)
        writer_thread.join()

    return TrainResult(
        shared=shared,
        discriminator=state["disc"],
        episodes=state["episodes"],
        global_steps=state["T"],
        metrics_path=metrics_path,
        aborted=state["aborted"],
    )


@dataclass(frozen=True)
class PlanResult:
    actions: tuple[Action, ...]
    reached: bool
    used_fallback: bool
    best_mismatch: int

    def __iter__(self):
        return iter(self.actions)


def plan(
    net: PolicyValueNet | None,
    start: Configuration,
    target: Configuration,
    max_steps: int = 64,
    box: BoundingBox | None = None,
    allow_fallback: bool = True,
    fallback_max_depth: int = 12,
) -> PlanResult:
    """Greedy masked-argmax rollout; BFS fallback for small instances.

    Raises NoPlanFoundError (with the best mismatch seen) when neither the
    policy rollout nor the fallback reaches the target.
    """
    from .encoding import bounding_box_for

    if box is None:
        box = bounding_box_for([start, target], margin=2)
    env = ReconfigEnv.create(target, box)
    best_mismatch = mismatch_count(start, target)
    actions: list[Action] = []
    if net is not None:
        state = start
        visited = {canonical_key(state)}
        for _ in range(max_steps):
            if env.is_goal(state):
                return PlanResult(tuple(actions), True, False, 0)
            legal = env.legal_actions(state)
            if not legal:
                break
            logits, _ = net.forward_single(env.encode(state))
            probs = masked_distribution(logits, np.array(sorted(legal), dtype=int))
            action = legal[int(np.argmax(probs))]
            state = apply_action(state, action)
            actions.append(action)
            best_mismatch = min(best_mismatch, mismatch_count(state, target))
            key = canonical_key(state)
            if key in visited:
                break
            visited.add(key)
        if env.is_goal(state):
            return PlanResult(tuple(actions), True, False, 0)
    if allow_fallback and len(start.ids()) <= 6:
        fallback = bfs_plan(start, target, max_depth=fallback_max_depth, box=box)
        if fallback is not None:
            return PlanResult(tuple(fallback), True, True, 0)
    raise NoPlanFoundError(best_mismatch)


def save_policy_checkpoint(shared: SharedNets, path,
                           disc: Discriminator | None = None) -> None:
    net = shared.net
    meta = {
        "box_shape": list(net.box.shape),
        "box_anchor": list(net.box.anchor_cell),
        "module_ids": list(net.indexer.module_ids),
        "state_channels": net.state_channels,
        "conv_filters": net.conv_filters,
        "kernel": net.kernel,
        "hidden": net.hidden,
        "has_discriminator": disc is not None,
        "disc_hidden": list(disc.net.sizes[1:-1]) if disc else [],
    }
    sections = {
        "theta": net.theta_arrays(),
        "theta_v": net.value_head.params(),
        "theta_minus": shared.target.all_arrays(),
        "omega": disc.net.param_arrays() if disc else [],
    }
    save_checkpoint(path, sections, meta)


def load_policy_checkpoint(path) -> tuple[SharedNets, Discriminator | None]:
    sections, meta = load_checkpoint(path)
    box = BoundingBox(shape=tuple(meta["box_shape"]),
                      anchor_cell=tuple(meta["box_anchor"]))
    indexer = ActionIndexer(module_ids=tuple(meta["module_ids"]))
    net = PolicyValueNet(
        box, indexer, meta["state_channels"],
        conv_filters=meta["conv_filters"], kernel=meta["kernel"],
        hidden=meta["hidden"],
    )
    for arr, stored in zip(net.theta_arrays(), sections["theta"]):
        arr[...] = stored
    for arr, stored in zip(net.value_head.params(), sections["theta_v"]):
        arr[...] = stored
    shared = SharedNets.create(net)
    for arr, stored in zip(shared.target.all_arrays(), sections["theta_minus"]):
        arr[...] = stored
    disc = None
    if meta.get("has_discriminator"):
        disc = Discriminator.create(box, indexer, meta["state_channels"],
                                    hidden=tuple(meta["disc_hidden"]))
        for arr, stored in zip(disc.net.param_arrays(), sections["omega"]):
            arr[...] = stored
    return shared, disc
