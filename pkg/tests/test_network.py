import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_jacobian, forward, layers_of
from pdecert.network import (Layer, Network, WeightFileError, affine_network, dumps, evaluate,
                             generate_fixture, jacobian, load_network, network_hash, pre_activations,
                             store_network, viscous_shock_network, zero_network)

FIXTURE_42 = "e3775e0ead58aea3b2a3db122cfceaddbe48f50d1609ec9a72d40b183b17e1e5"


def write(tmp_path, data, name="net.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data), encoding="utf-8")
    return p


def test_load_linear_file(tmp_path):
    p = write(tmp_path, {"arch": [1, 1], "activations": ["identity"], "layers": [{"W": [[2]], "b": [1]}]})
    net = load_network(p)
    assert evaluate(net, [0.5])[0] == 2.0
    assert jacobian(net, [0.3])[0, 0] == 2.0


def test_broken_chain_rejected(tmp_path):
    data = {"arch": [2, 16, 1], "activations": ["tanh", "identity"],
            "layers": [{"W": np.zeros((16, 2)).tolist(), "b": [0.0] * 16},
                       {"W": np.zeros((1, 8)).tolist(), "b": [0.0]}]}
    with pytest.raises(ValueError, match="dimension chain broken"):
        load_network(write(tmp_path, data))
    with pytest.raises(ValueError, match="dimension chain broken"):
        Network((Layer(np.zeros((16, 2)), np.zeros(16), "tanh"), Layer(np.zeros((1, 8)), np.zeros(1))))


@pytest.mark.parametrize("data, field", [
    ({"arch": [1, 1], "activations": ["identity"]}, "layers"),
    ({"arch": [1, 1], "activations": ["sigmoid"], "layers": [{"W": [[1]], "b": [0]}]}, "activations[0]"),
    ({"arch": [1, 1], "activations": ["identity"], "layers": [{"W": [["a"]], "b": [0]}]}, "layers[0].W"),
    ({"arch": [1, 1], "activations": ["identity"], "layers": [{"W": [[1]]}]}, "layers[0]"),
    ({"arch": [1], "activations": ["identity"], "layers": [{"W": [[1]], "b": [0]}]}, "arch"),
])
def test_malformed_file_names_field(tmp_path, data, field):
    with pytest.raises(WeightFileError, match=field.replace("[", r"\[").replace("]", r"\]")):
        load_network(write(tmp_path, data))


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(WeightFileError):
        load_network(p)


def test_invariants():
    with pytest.raises(ValueError, match="identity"):
        Network((Layer(np.ones((1, 1)), np.zeros(1), "tanh"),))
    with pytest.raises(ValueError, match="non-finite"):
        Network((Layer(np.array([[np.nan]]), np.zeros(1)),))
    net = generate_fixture(0, [2, 3, 1])
    assert net.layers[0].W.dtype == np.float64
    with pytest.raises(ValueError):
        net.layers[0].W[0, 0] = 1.0


def test_round_trip_bytes(tmp_path):
    net = generate_fixture(42, [2, 16, 16, 1], "tanh")
    p = tmp_path / "a.json"
    store_network(net, p)
    q = tmp_path / "b.json"
    store_network(load_network(p), q)
    assert p.read_bytes() == q.read_bytes() == dumps(net).encode()


def test_tanh_neuron():
    net = Network((Layer([[1.0]], [0.0], "tanh"), Layer([[1.0]], [0.0])))
    assert evaluate(net, [0.0])[0] == 0.0
    assert jacobian(net, [0.0])[0, 0] == 1.0


def test_fixture_matches_hand_rolled_forward():
    net = generate_fixture(42, [2, 16, 16, 1], "tanh")
    for x in ([0.0, 0.0], [0.3, -0.7], [1.0, 1.0]):
        assert evaluate(net, x)[0] == pytest.approx(forward(layers_of(net), x)[0], abs=1e-14)


def test_fixture_frozen_and_deterministic():
    a = generate_fixture(42, [2, 16, 16, 1], "tanh")
    b = generate_fixture(42, [2, 16, 16, 1], "tanh")
    assert dumps(a) == dumps(b)
    assert network_hash(a) == FIXTURE_42
    assert network_hash(generate_fixture(43, [2, 16, 16, 1], "tanh")) != FIXTURE_42
    scale = 1 / np.sqrt(2)
    assert np.all(np.abs(a.layers[0].W) <= scale)


def test_fixture_needs_two_sizes():
    with pytest.raises(ValueError):
        generate_fixture(0, [3])


def test_gradient_against_central_difference():
    net = generate_fixture(42, [2, 16, 16, 1], "tanh")
    X = np.random.default_rng(1).uniform(-1, 1, (100, 2))
    J = jacobian(net, X)
    worst = max(np.abs(J[k] - central_jacobian(lambda x: evaluate(net, x), X[k])).max() for k in range(100))
    assert worst < 1e-6


def test_relu_gradient_zero_at_kink_and_batch_shapes():
    net = Network((Layer([[1.0]], [0.0], "relu"), Layer([[3.0]], [0.0])))
    assert jacobian(net, [0.0])[0, 0] == 0.0
    assert jacobian(net, [0.5])[0, 0] == 3.0
    X = np.zeros((5, 1))
    assert evaluate(net, X).shape == (5, 1)
    assert jacobian(net, X).shape == (5, 1, 1)
    assert len(pre_activations(net, X)) == 2


def test_helpers():
    assert np.all(evaluate(zero_network(2, 3), [1.0, 2.0]) == 0)
    assert evaluate(affine_network([[1.0, 2.0]], [0.5]), [1.0, 1.0])[0] == 3.5
    shock = viscous_shock_network()
    assert evaluate(shock, [0.0, 0.3])[0] == 0.0
    assert evaluate(shock, [0.5, 0.0])[0] == pytest.approx(-1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), hidden=st.lists(st.integers(1, 6), min_size=0, max_size=3),
       act=st.sampled_from(["tanh", "relu"]))
def test_round_trip_property(tmp_path_factory, seed, hidden, act):
    net = generate_fixture(seed, [2, *hidden, 2], act)
    p = tmp_path_factory.mktemp("rt") / "n.json"
    store_network(net, p)
    back = load_network(p)
    for la, lb in zip(net.layers, back.layers):
        assert np.array_equal(la.W, lb.W) and np.array_equal(la.b, lb.b)
    x = np.array([0.3, -0.4])
    assert np.array_equal(evaluate(net, x), evaluate(back, x))
    assert evaluate(net, x) == pytest.approx(forward(layers_of(net), x), abs=1e-13)
