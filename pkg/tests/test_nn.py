import numpy as np
import pytest

from modrecon.nn import (
    MLP,
    Conv3D,
    Dense,
    Tanh,
    flatten_params,
    load_checkpoint,
    save_checkpoint,
    set_from_flat,
    sigmoid,
)


def central_difference(f, flat, eps=1e-6):
    """Finite-difference gradient oracle."""
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        up[i] += eps
        down = flat.copy()
        down[i] -= eps
        grad[i] = (f(up) - f(down)) / (2 * eps)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


class TestDense:
    def test_forward_shape(self, rng):
        layer = Dense(4, 3, rng)
        out = layer.forward(rng.normal(size=(7, 4)))
        assert out.shape == (7, 3)

    def test_gradient_matches_finite_differences(self, rng):
        layer = Dense(5, 3, rng)
        x = rng.normal(size=(6, 5))
        coeff = rng.normal(size=(6, 3))

        def loss(flat):
            set_from_flat(layer.params(), flat)
            return float(np.sum(layer.forward(x) * coeff))

        flat0 = flatten_params(layer.params()).copy()
        layer.gw[...] = 0
        layer.gb[...] = 0
        set_from_flat(layer.params(), flat0)
        layer.forward(x)
        layer.backward(coeff)
        analytic = flatten_params(layer.grads()).copy()
        numeric = central_difference(loss, flat0)
        assert relative_error(analytic, numeric) < 1e-7

    def test_input_gradient(self, rng):
        layer = Dense(5, 3, rng)
        x = rng.normal(size=(2, 5))
        coeff = rng.normal(size=(2, 3))
        layer.forward(x)
        gx = layer.backward(coeff)

        def loss_x(flat):
            return float(np.sum(layer.forward(flat.reshape(2, 5)) * coeff))

        numeric = central_difference(loss_x, x.reshape(-1).copy())
        assert relative_error(gx.reshape(-1), numeric) < 1e-7


class TestConv3D:
    def test_forward_shape(self, rng):
        conv = Conv3D(2, 4, 3, rng)
        out = conv.forward(rng.normal(size=(2, 2, 5, 4, 3)))
        assert out.shape == (2, 4, 3, 2, 1)

    def test_too_small_input_rejected(self, rng):
        conv = Conv3D(1, 2, 3, rng)
        with pytest.raises(ValueError):
            conv.forward(rng.normal(size=(1, 1, 2, 3, 3)))

    def test_forward_matches_direct_convolution(self, rng):
        # Independent oracle: naive six-deep loop.
        conv = Conv3D(2, 3, 2, rng)
        x = rng.normal(size=(1, 2, 4, 3, 3))
        out = conv.forward(x)
        for f in range(3):
            for ox in range(3):
                for oy in range(2):
                    for oz in range(2):
                        acc = conv.b[f]
                        for c in range(2):
                            for dx in range(2):
                                for dy in range(2):
                                    for dz in range(2):
                                        acc += conv.w[f, c, dx, dy, dz] * \
                                            x[0, c, ox + dx, oy + dy, oz + dz]
                        assert abs(out[0, f, ox, oy, oz] - acc) < 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        conv = Conv3D(2, 3, 3, rng)
        x = rng.normal(size=(2, 2, 4, 4, 3))
        coeff = rng.normal(size=(2, 3, 2, 2, 1))

        def loss(flat):
            set_from_flat(conv.params(), flat)
            return float(np.sum(conv.forward(x) * coeff))

        flat0 = flatten_params(conv.params()).copy()
        conv.gw[...] = 0
        conv.gb[...] = 0
        set_from_flat(conv.params(), flat0)
        conv.forward(x)
        gx = conv.backward(coeff)
        analytic = flatten_params(conv.grads()).copy()
        numeric = central_difference(loss, flat0)
        assert relative_error(analytic, numeric) < 1e-7

        def loss_x(flat):
            return float(np.sum(conv.forward(flat.reshape(x.shape)) * coeff))

        numeric_x = central_difference(loss_x, x.reshape(-1).copy())
        assert relative_error(gx.reshape(-1), numeric_x) < 1e-7


class TestMLP:
    def test_gradient_through_stack(self, rng):
        mlp = MLP((4, 8, 8, 2), rng)
        x = rng.normal(size=(5, 4))
        coeff = rng.normal(size=(5, 2))

        def loss(flat):
            mlp.set_flat(flat)
            return float(np.sum(mlp.forward(x) * coeff))

        flat0 = mlp.get_flat().copy()
        mlp.zero_grads()
        mlp.set_flat(flat0)
        mlp.forward(x)
        mlp.backward(coeff)
        analytic = mlp.get_grad_flat().copy()
        numeric = central_difference(loss, flat0)
        assert relative_error(analytic, numeric) < 1e-7

    def test_flat_round_trip(self, rng):
        mlp = MLP((3, 5, 1), rng)
        flat = mlp.get_flat().copy()
        mlp.set_flat(np.zeros_like(flat))
        assert np.allclose(mlp.forward(np.ones((1, 3))), 0.0)
        mlp.set_flat(flat)
        assert np.array_equal(mlp.get_flat(), flat)

    def test_wrong_length_rejected(self, rng):
        mlp = MLP((3, 5, 1), rng)
        with pytest.raises(ValueError):
            mlp.set_flat(np.zeros(mlp.num_params + 1))


class TestSigmoid:
    def test_extremes_are_finite(self):
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        assert out[0] >= 0.0 and out[2] <= 1.0
        assert out[1] == 0.5

    def test_matches_reference(self, rng):
        x = rng.normal(size=100) * 5
        assert np.allclose(sigmoid(x), 1 / (1 + np.exp(-x)))


class TestTanhLayer:
    def test_backward(self, rng):
        layer = Tanh()
        x = rng.normal(size=(3, 4))
        coeff = rng.normal(size=(3, 4))
        layer.forward(x)
        gx = layer.backward(coeff)

        def loss(flat):
            return float(np.sum(np.tanh(flat.reshape(3, 4)) * coeff))

        numeric = central_difference(loss, x.reshape(-1).copy())
        assert relative_error(gx.reshape(-1), numeric) < 1e-7


class TestCheckpoints:
    def test_round_trip(self, tmp_path, rng):
        mlp = MLP((4, 6, 2), rng)
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, {"weights": mlp.param_arrays()}, {"note": "test"})
        sections, meta = load_checkpoint(path)
        assert meta == {"note": "test"}
        for original, restored in zip(mlp.param_arrays(), sections["weights"]):
            assert np.array_equal(original, restored)

    def test_little_endian_payload(self, tmp_path):
        arr = np.array([1.0, -2.5, 3.25])
        path = tmp_path / "le.bin"
        save_checkpoint(path, {"v": [arr]})
        raw = path.read_bytes()
        assert raw[-24:] == arr.astype("<f8").tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_empty_section_round_trip(self, tmp_path):
        path = tmp_path / "empty.bin"
        save_checkpoint(path, {"omega": []})
        sections, _ = load_checkpoint(path)
        assert sections["omega"] == []
