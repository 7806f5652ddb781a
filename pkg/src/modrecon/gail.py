"""Adversarial imitation: a discriminator over (state, action) pairs.

The discriminator scores encoded state-action pairs as expert versus
imitator; its output defines the imitation reward -log(1 - D), clamped so
returns stay bounded.  Training alternates gradient steps on the standard
adversarial cross-entropy against expert and imitator batches.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .encoding import ActionIndexer, BoundingBox, encode_state
from .lattice import Action, Configuration
from .nn import MLP, load_checkpoint, save_checkpoint, sigmoid

REWARD_CLAMP = 10.0
_EPS = 1e-12


class EncodingMismatchError(Exception):
    pass


@dataclass
class Discriminator:
    """MLP scoring encoded pairs; output squashed to (0, 1)."""

    net: MLP
    box: BoundingBox
    indexer: ActionIndexer
    state_channels: int

    @classmethod
    def create(
        cls,
        box: BoundingBox,
        indexer: ActionIndexer,
        state_channels: int,
        hidden: tuple[int, int] = (64, 64),
        seed: int = 0,
    ) -> "Discriminator":
        in_dim = state_channels * int(np.prod(box.shape)) + indexer.size
        rng = np.random.default_rng(seed)
        net = MLP((in_dim,) + tuple(hidden) + (1,), rng)
        return cls(net=net, box=box, indexer=indexer, state_channels=state_channels)

    @property
    def input_dim(self) -> int:
        return self.net.sizes[0]

    def encode_pair(self, state: Configuration, action: Action,
                    target: Configuration) -> np.ndarray:
        enc = encode_state(state, target, self.box)
        if enc.shape[0] != self.state_channels:
            raise EncodingMismatchError(
                f"state has {enc.shape[0]} channels, expected {self.state_channels}"
            )
        one_hot = np.zeros(self.indexer.size)
        one_hot[self.indexer.index(action)] = 1.0
        return np.concatenate([enc.reshape(-1), one_hot])

    def forward_encoded(self, pairs: np.ndarray) -> np.ndarray:
        """Probabilities for a batch of encoded pairs, shape (B,)."""
        pairs = np.atleast_2d(pairs)
        if pairs.shape[1] != self.input_dim:
            raise EncodingMismatchError(
                f"encoded width {pairs.shape[1]} != discriminator input {self.input_dim}"
            )
        logits = self.net.forward(pairs)[:, 0]
        return sigmoid(logits)

    def copy(self) -> "Discriminator":
        return copy.deepcopy(self)


def discriminator_forward(
    disc: Discriminator,
    state: Configuration,
    action: Action,
    target: Configuration,
) -> float:
    """Probability that (state, action) came from the expert."""
    return float(disc.forward_encoded(disc.encode_pair(state, action, target))[0])


def discriminator_loss(
    disc: Discriminator,
    expert_batch: np.ndarray,
    imitator_batch: np.ndarray,
) -> float:
    """Adversarial cross-entropy: -E_exp[log D] - E_imit[log(1 - D)]."""
    d_expert = np.clip(disc.forward_encoded(expert_batch), _EPS, 1.0 - _EPS)
    d_imit = np.clip(disc.forward_encoded(imitator_batch), _EPS, 1.0 - _EPS)
    return float(-np.mean(np.log(d_expert)) - np.mean(np.log(1.0 - d_imit)))


def discriminator_loss_gradient(
    disc: Discriminator,
    expert_batch: np.ndarray,
    imitator_batch: np.ndarray,
) -> np.ndarray:
    """Flat gradient of discriminator_loss w.r.t. the network parameters."""
    expert_batch = np.atleast_2d(expert_batch)
    imitator_batch = np.atleast_2d(imitator_batch)
    disc.net.zero_grads()
    # d/dlogit of -log(sigmoid(z)) is sigmoid(z) - 1; of -log(1-sigmoid(z)) is sigmoid(z).
    logits_e = disc.net.forward(expert_batch)
    grad_e = (sigmoid(logits_e) - 1.0) / expert_batch.shape[0]
    disc.net.backward(grad_e)
    logits_i = disc.net.forward(imitator_batch)
    grad_i = sigmoid(logits_i) / imitator_batch.shape[0]
    disc.net.backward(grad_i)
    grad = disc.net.get_grad_flat().copy()
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite discriminator gradient")
    return grad


def update_discriminator(
    disc: Discriminator,
    expert_batch: np.ndarray,
    imitator_batch: np.ndarray,
    lr: float,
) -> Discriminator:
    """One gradient-descent step; returns a new discriminator."""
    if len(np.atleast_2d(expert_batch)) == 0 or len(np.atleast_2d(imitator_batch)) == 0:
        raise ValueError("batches must be non-empty")
    grad = discriminator_loss_gradient(disc, expert_batch, imitator_batch)
    updated = disc.copy()
    updated.net.set_flat(updated.net.get_flat() - lr * grad)
    return updated


def imitation_reward(
    disc: Discriminator,
    state: Configuration,
    action: Action,
    target: Configuration,
    clamp: float = REWARD_CLAMP,
) -> float:
    """-log(1 - D(s, a)), clamped; high for expert-like pairs."""
    d = discriminator_forward(disc, state, action, target)
    return imitation_reward_from_probability(d, clamp)


def imitation_reward_from_probability(d: float, clamp: float = REWARD_CLAMP) -> float:
    d = min(max(d, 0.0), 1.0 - _EPS)
    return min(-np.log1p(-d), clamp)


class ReplayBuffer:
    """Fixed-capacity ring buffer of encoded imitator pairs."""

    def __init__(self, capacity: int = 480_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._rows: list[np.ndarray] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._rows)

    def add(self, row: np.ndarray) -> None:
        if len(self._rows) < self.capacity:
            self._rows.append(row)
        else:
            self._rows[self._next] = row
            self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if not self._rows:
            raise ValueError("buffer is empty")
        idx = rng.integers(len(self._rows), size=size)
        return np.stack([self._rows[i] for i in idx])


def save_discriminator(disc: Discriminator, path) -> None:
    meta = {
        "hidden": list(disc.net.sizes[1:-1]),
        "input_dim": disc.input_dim,
        "box_shape": list(disc.box.shape),
        "box_anchor": list(disc.box.anchor_cell),
        "module_ids": list(disc.indexer.module_ids),
        "state_channels": disc.state_channels,
    }
    save_checkpoint(path, {"omega": disc.net.param_arrays()}, meta)


def load_discriminator(path) -> Discriminator:
    sections, meta = load_checkpoint(path)
    box = BoundingBox(shape=tuple(meta["box_shape"]),
                      anchor_cell=tuple(meta["box_anchor"]))
    indexer = ActionIndexer(module_ids=tuple(meta["module_ids"]))
    disc = Discriminator.create(
        box, indexer, meta["state_channels"], hidden=tuple(meta["hidden"]),
    )
    for target, source in zip(disc.net.param_arrays(), sections["omega"]):
        target[...] = source
    return disc
