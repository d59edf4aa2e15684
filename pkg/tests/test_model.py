import math

import numpy as np
import pytest

from mmhash.errors import DimensionMismatch, FormatError, InvalidValue
from mmhash.model import (
    CoupledModel,
    EmbeddingNet,
    Layer,
    backward,
    forward,
    forward_batch,
    init_coupled,
    init_random,
    load_model,
    model_from_vector,
    params_to_vector,
    save_model,
)


def single_layer(weights, bias=None, beta=1.0):
    w = np.asarray(weights, dtype=float)
    b = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=float)
    return EmbeddingNet(layers=(Layer(w, b, beta=beta),))


class TestForward:
    def test_zero_net_maps_to_zero(self):
        net = single_layer(np.zeros((3, 4)))
        assert np.array_equal(forward(net, [5.0, -2.0, 0.1, 9.0]), np.zeros(3))

    def test_saturation_at_large_beta(self):
        net = single_layer(np.eye(2), beta=50.0)
        out = forward(net, [2.0, -2.0])
        assert np.abs(out - [1.0, -1.0]).max() < 1e-3

    def test_scalar_tanh(self):
        net = single_layer([[1.0]], beta=1.0)
        assert forward(net, [0.5])[0] == pytest.approx(math.tanh(0.5), abs=1e-12)
        assert forward(net, [0.5])[0] == pytest.approx(0.46212, abs=1e-5)

    def test_dimension_mismatch(self):
        net = single_layer(np.eye(3))
        with pytest.raises(DimensionMismatch):
            forward(net, [1.0, 2.0])

    @pytest.mark.parametrize("trial", range(10))
    def test_outputs_strictly_inside_unit_box(self, trial):
        rng = np.random.default_rng(trial)
        net = init_random((6, 4), beta=float(rng.uniform(0.5, 4.0)), seed=trial)
        out = forward(net, rng.standard_normal(6) * 100.0)
        assert np.all(np.abs(out) < 1.0)

    def test_beta_sharpens_outputs(self):
        x = np.array([0.3, -0.7, 1.2])
        w = np.eye(3)
        prev = np.zeros(3)
        for beta in (0.5, 1.0, 2.0, 8.0):
            out = np.abs(forward(single_layer(w, beta=beta), x))
            assert np.all(out >= prev)
            prev = out

    def test_two_layer_chaining(self):
        net = init_random((5, 7, 3), seed=0)
        out = forward(net, np.ones(5))
        assert out.shape == (3,)

    def test_hard_sign_sentinel(self):
        net = single_layer([[1.0], [-1.0]], beta=math.inf)
        assert np.array_equal(forward(net, [2.5]), [1.0, -1.0])


class TestBackward:
    def test_zero_upstream_gives_zero_gradient(self):
        net = init_random((4, 3), seed=1)
        grad = backward(net, np.ones(4), np.zeros(3))
        assert all(np.all(g == 0) for g in grad.weights)
        assert all(np.all(g == 0) for g in grad.biases)

    def test_single_layer_closed_form(self):
        # d(u . tanh(beta(Wx+b)))/dW_ij = u_i * beta * (1 - tanh^2(beta z_i)) * x_j
        rng = np.random.default_rng(5)
        w = rng.standard_normal((3, 4)) * 0.1
        b = rng.standard_normal(3) * 0.1
        beta = 0.7
        net = single_layer(w, b, beta=beta)
        x = rng.standard_normal(4) * 0.1
        u = rng.standard_normal(3)
        z = w @ x + b
        t = np.tanh(beta * z)
        expected_w = np.outer(u * beta * (1 - t * t), x)
        expected_b = u * beta * (1 - t * t)
        grad = backward(net, x, u)
        assert np.abs(grad.weights[0] - expected_w).max() < 1e-12
        assert np.abs(grad.biases[0] - expected_b).max() < 1e-12

    @pytest.mark.parametrize("dims", [(3, 2), (4, 3, 2), (5, 8, 4), (2, 2)])
    def test_matches_finite_differences(self, dims):
        rng = np.random.default_rng(sum(dims))
        net = init_random(dims, beta=1.3, seed=sum(dims))
        x = rng.standard_normal(dims[0])
        u = rng.standard_normal(dims[-1])
        grad = backward(net, x, u)

        step = 1e-6
        flat_model = CoupledModel(net_x=net, net_y=init_random(dims, seed=99))
        theta = params_to_vector(flat_model)
        n_x = net.n_params

        def value(vec):
            rebuilt = model_from_vector(vec, flat_model)
            return float(u @ forward(rebuilt.net_x, x))

        analytic = np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(grad.weights, grad.biases)]
        )
        for i in range(n_x):
            bumped = theta.copy()
            bumped[i] += step
            f_plus = value(bumped)
            bumped[i] -= 2 * step
            f_minus = value(bumped)
            fd = (f_plus - f_minus) / (2 * step)
            assert abs(analytic[i] - fd) / max(1.0, abs(analytic[i])) < 1e-5

    def test_upstream_length_checked(self):
        net = init_random((4, 3), seed=2)
        with pytest.raises(DimensionMismatch):
            backward(net, np.ones(4), np.ones(2))

    def test_hard_sign_not_differentiable(self):
        net = single_layer([[1.0]], beta=math.inf)
        with pytest.raises(InvalidValue):
            backward(net, [1.0], [1.0])


class TestInitRandom:
    def test_deterministic(self):
        a = init_random((4, 3), seed=123)
        b = init_random((4, 3), seed=123)
        assert np.array_equal(a.layers[0].weights, b.layers[0].weights)

    def test_seeds_differ(self):
        a = init_random((4, 3), seed=1)
        b = init_random((4, 3), seed=2)
        assert not np.array_equal(a.layers[0].weights, b.layers[0].weights)

    def test_bound_by_construction(self):
        net = init_random((4, 3), seed=0)
        assert np.all(np.abs(net.layers[0].weights) <= 0.5)

    def test_biases_zero(self):
        net = init_random((4, 3), seed=0)
        assert np.all(net.layers[0].bias == 0)

    def test_sample_mean_within_three_sigma(self):
        net = init_random((100, 16), seed=11)
        w = net.layers[0].weights
        bound = 1.0 / math.sqrt(100)
        sigma_mean = bound / math.sqrt(3.0 * w.size)
        assert abs(w.mean()) < 3 * sigma_mean

    def test_too_few_dims(self):
        with pytest.raises(InvalidValue):
            init_random((4,), seed=0)

    def test_nonpositive_width(self):
        with pytest.raises(InvalidValue):
            init_random((4, 0), seed=0)


class TestStructuralInvariants:
    def test_layer_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Layer(np.zeros((3, 2)), np.zeros(2))

    def test_beta_positive(self):
        with pytest.raises(InvalidValue):
            Layer(np.zeros((2, 2)), np.zeros(2), beta=0.0)
        with pytest.raises(InvalidValue):
            Layer(np.zeros((2, 2)), np.zeros(2), beta=-1.0)

    def test_chaining_checked(self):
        l1 = Layer(np.zeros((3, 4)), np.zeros(3))
        l2 = Layer(np.zeros((2, 5)), np.zeros(2))
        with pytest.raises(DimensionMismatch):
            EmbeddingNet(layers=(l1, l2))

    def test_coupled_width_agreement(self):
        with pytest.raises(DimensionMismatch):
            CoupledModel(net_x=init_random((4, 3), seed=0), net_y=init_random((4, 2), seed=0))

    def test_init_coupled_depths(self):
        m1 = init_coupled(5, 6, 4, n_layers=1, seed=0)
        assert len(m1.net_x.layers) == 1 and m1.m == 4
        m2 = init_coupled(5, 6, 4, n_layers=2, hidden=9, seed=0)
        assert [l.out_dim for l in m2.net_x.layers] == [9, 4]
        with pytest.raises(InvalidValue):
            init_coupled(5, 6, 4, n_layers=3, seed=0)


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        model = init_coupled(5, 7, 4, n_layers=2, hidden=6, beta=1.7, seed=9)
        path = tmp_path / "model.mmhm"
        save_model(path, model)
        loaded = load_model(path)
        assert np.array_equal(params_to_vector(model), params_to_vector(loaded))
        assert loaded.net_x.layers[0].beta == model.net_x.layers[0].beta
        path2 = tmp_path / "again.mmhm"
        save_model(path2, loaded)
        assert path.read_text() == path2.read_text()

    def test_hard_sign_sentinel_round_trips(self, tmp_path):
        net = single_layer(np.eye(3) / math.sqrt(1), beta=math.inf)
        # unit rows so the file also reloads as a baseline model
        model = CoupledModel(net_x=net, net_y=single_layer(np.eye(3), beta=math.inf))
        path = tmp_path / "hard.mmhm"
        save_model(path, model)
        loaded = load_model(path)
        assert math.isinf(loaded.net_x.layers[0].beta)

    def test_awkward_floats_round_trip(self, tmp_path):
        w = np.array([[1.0 / 3.0, -2.2250738585072014e-308], [1.7976931348623157e308 / 1e300, 0.1]])
        model = CoupledModel(
            net_x=single_layer(w), net_y=single_layer(np.full((2, 3), 0.123456789012345678))
        )
        path = tmp_path / "odd.mmhm"
        save_model(path, model)
        loaded = load_model(path)
        assert np.array_equal(params_to_vector(model), params_to_vector(loaded))

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda lines: ["BOGUS 1 1 2"] + lines[1:],
            lambda lines: lines[:1] + ["LAYER x y z"] + lines[2:],
            lambda lines: lines[:-1],
            lambda lines: lines[:2] + ["1.0 not_a_number"] + lines[3:],
            lambda lines: [],
        ],
    )
    def test_malformed_files_raise(self, tmp_path, mutate):
        model = init_coupled(2, 2, 2, seed=0)
        path = tmp_path / "model.mmhm"
        save_model(path, model)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(mutate(lines)) + "\n")
        with pytest.raises(FormatError):
            load_model(path)

    def test_vector_round_trip(self):
        model = init_coupled(3, 4, 2, n_layers=2, hidden=5, seed=3)
        vec = params_to_vector(model)
        rebuilt = model_from_vector(vec, model)
        assert np.array_equal(params_to_vector(rebuilt), vec)
        with pytest.raises(DimensionMismatch):
            model_from_vector(np.zeros(vec.size + 1), model)
