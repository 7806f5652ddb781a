"""Small dense/3D-conv network core with explicit gradients.

Float64 numpy throughout, no autograd framework: every layer implements
its own backward pass, and all parameters are exposed as flat vectors so
they can be checkpointed, perturbed for finite-difference checks, and
updated atomically by concurrent workers.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"MRCK"
CHECKPOINT_VERSION = 1


class Dense:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 scale: float | None = None):
        if scale is None:
            scale = 1.0 / np.sqrt(in_dim)
        self.w = rng.normal(0.0, scale, size=(out_dim, in_dim))
        self.b = np.zeros(out_dim)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.gw += grad.T @ self._x
        self.gb += grad.sum(axis=0)
        return grad @ self.w

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]


class Conv3D:
    """Valid 3D convolution over inputs shaped (batch, channels, x, y, z)."""

    def __init__(self, in_channels: int, filters: int, kernel: int,
                 rng: np.random.Generator, scale: float | None = None):
        fan_in = in_channels * kernel ** 3
        if scale is None:
            scale = 1.0 / np.sqrt(fan_in)
        self.w = rng.normal(0.0, scale, size=(filters, in_channels,
                                              kernel, kernel, kernel))
        self.b = np.zeros(filters)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self.kernel = kernel
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        k = self.kernel
        bsz, _, sx, sy, sz = x.shape
        ox, oy, oz = sx - k + 1, sy - k + 1, sz - k + 1
        if min(ox, oy, oz) < 1:
            raise ValueError(f"input {x.shape[2:]} smaller than kernel {k}")
        out = np.zeros((bsz, self.w.shape[0], ox, oy, oz))
        for dx in range(k):
            for dy in range(k):
                for dz in range(k):
                    patch = x[:, :, dx:dx + ox, dy:dy + oy, dz:dz + oz]
                    out += np.einsum("fc,bcxyz->bfxyz", self.w[:, :, dx, dy, dz], patch)
        return out + self.b[None, :, None, None, None]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._x
        k = self.kernel
        ox, oy, oz = grad.shape[2:]
        gx = np.zeros_like(x)
        for dx in range(k):
            for dy in range(k):
                for dz in range(k):
                    patch = x[:, :, dx:dx + ox, dy:dy + oy, dz:dz + oz]
                    self.gw[:, :, dx, dy, dz] += np.einsum("bfxyz,bcxyz->fc", grad, patch)
                    gx[:, :, dx:dx + ox, dy:dy + oy, dz:dz + oz] += np.einsum(
                        "fc,bfxyz->bcxyz", self.w[:, :, dx, dy, dz], grad)
        self.gb += grad.sum(axis=(0, 2, 3, 4))
        return gx

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]


class Tanh:
    def __init__(self):
        self._y: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * (1.0 - self._y ** 2)

    def params(self):
        return []

    def grads(self):
        return []


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def flatten_params(arrays) -> np.ndarray:
    if not arrays:
        return np.zeros(0)
    return np.concatenate([a.reshape(-1) for a in arrays])


def set_from_flat(arrays, flat: np.ndarray) -> None:
    offset = 0
    for a in arrays:
        n = a.size
        a[...] = flat[offset:offset + n].reshape(a.shape)
        offset += n
    if offset != flat.size:
        raise ValueError(f"flat vector length {flat.size} != parameter count {offset}")


class LayerStack:
    """Shared plumbing for parameter access over a list of layers."""

    def __init__(self, layers):
        self.layers = layers

    def param_arrays(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def grad_arrays(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def get_flat(self) -> np.ndarray:
        return flatten_params(self.param_arrays())

    def set_flat(self, flat: np.ndarray) -> None:
        set_from_flat(self.param_arrays(), flat)

    def get_grad_flat(self) -> np.ndarray:
        return flatten_params(self.grad_arrays())

    def zero_grads(self) -> None:
        for g in self.grad_arrays():
            g[...] = 0.0

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.param_arrays())


class MLP(LayerStack):
    """Dense stack with tanh hidden activations and a linear output.

    The output layer starts near zero so fresh networks emit near-zero
    scores regardless of input scale.
    """

    def __init__(self, sizes, rng: np.random.Generator,
                 final_scale: float = 0.01):
        layers = []
        self.sizes = tuple(sizes)
        last = len(sizes) - 2
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            layers.append(Dense(a, b, rng,
                                scale=final_scale / np.sqrt(a) if i == last
                                else None))
            if i < last:
                layers.append(Tanh())
        super().__init__(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


# ---------------------------------------------------------------------------
# Checkpoints: JSON header line + little-endian float64 payload
# ---------------------------------------------------------------------------


def save_checkpoint(path, sections: dict[str, list[np.ndarray]],
                    meta: dict | None = None) -> None:
    """Write named parameter groups as flat little-endian vectors."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "byte_order": "little",
        "sections": [
            {"name": name, "shapes": [list(a.shape) for a in arrays]}
            for name, arrays in sections.items()
        ],
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for arrays in sections.values():
            fh.write(flatten_params(arrays).astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, list[np.ndarray]], dict]:
    """Read a checkpoint back into named lists of arrays."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['format_version']}")
        sections: dict[str, list[np.ndarray]] = {}
        for section in header["sections"]:
            arrays = []
            for shape in section["shapes"]:
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
                arrays.append(data.reshape(shape))
            sections[section["name"]] = arrays
        return sections, header.get("meta", {})
