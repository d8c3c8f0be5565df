import numpy as np
import pytest

from corpus import sample_with_corners

from pdecert.crown import Box, crown_bounds, ibp
from pdecert.fdquality import exact_second_derivative
from pdecert.graph import GraphBuilder, eval_graph, fd_first, fd_second, network_graph
from pdecert.network import evaluate as forward, generate_fixture, jacobian
from pdecert.properties import SMIBParams, build_residual
from pdecert.taylor import directional_derivatives, taylor_companion


def test_residuals_get_a_companion():
    net = generate_fixture(1, [2, 8, 1], "tanh")
    g = build_residual(net, "burgers")
    comp = taylor_companion(g)
    assert comp is not None and comp.n_orig == 2
    # u_t, u_x (first differences, width 1) and u_xx (second difference, width 1): one (s, rho) pair each
    assert comp.graph.input_dim == 2 + 2 * 3
    assert g.companion is not None


def test_relu_and_plain_networks_are_left_alone():
    assert taylor_companion(build_residual(generate_fixture(1, [2, 8, 1], "relu"), "burgers")) is None
    assert taylor_companion(network_graph(generate_fixture(1, [2, 8, 1], "tanh"))) is None


def test_unmatched_weights_not_rewritten():
    net = generate_fixture(2, [1, 4, 1], "tanh")
    b = GraphBuilder(1)
    x = b.input()
    g = b.build(b.sum([b.call(net, b.shift(x, 0, 1e-3)), b.call(net, x)], [1.0, -1.0]))
    assert taylor_companion(g) is None


def test_directional_derivatives_match_jacobian_and_fd():
    net = generate_fixture(4, [2, 6, 6, 2], "tanh")
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (50, 2))
    for i in range(2):
        b = GraphBuilder(2)
        d1, d2 = directional_derivatives(b, net, b.input(), np.eye(2), np.zeros(2), i, 2)
        v = eval_graph(b.build([d1, d2]), X)
        assert np.allclose(v[:, :2], jacobian(net, X)[:, :, i], atol=1e-12)
        e = np.eye(2)[i] * 1e-6
        assert np.allclose(v[:, :2], (forward(net, X + e) - forward(net, X - e)) / 2e-6, atol=1e-7)
        h = 1e-4
        e = np.eye(2)[i] * h
        fd2 = (forward(net, X + e) - 2 * forward(net, X) + forward(net, X - e)) / h**2
        assert np.allclose(v[:, 2:], fd2, atol=1e-5)
        assert np.allclose(exact_second_derivative(net, X, i), v[:, 2:], atol=1e-13)


@pytest.mark.parametrize("order,h", [(1, 1e-6), (1, 1e-2), (2, 1e-3), (2, 0.1)])
def test_companion_bounds_sound_for_stencils(order, h):
    net = generate_fixture(9, [2, 8, 8, 1], "tanh")
    g0 = network_graph(net)
    g = fd_first(g0, 0, h) if order == 1 else fd_second(g0, 1, h)
    rng = np.random.default_rng(order)
    for r in (1e-3, 0.05, 0.5):
        c = rng.uniform(-0.5, 0.5, 2)
        box = Box(c - r, c + r)
        iv, _ = crown_bounds(g, box)
        v = eval_graph(g, sample_with_corners(box, 3000, rng))
        assert v.max() <= iv.hi[0] + 1e-9 and v.min() >= iv.lo[0] - 1e-9


def test_companion_much_tighter_on_smib_residual():
    g = build_residual(generate_fixture(3, [2, 16, 16, 2], "tanh"), "smib", params=SMIBParams())
    box = Box([0.0, 0.0], [0.3, 0.3])
    plain, _ = crown_bounds(g, box, companion=False)
    taylor, _ = crown_bounds(g, box)
    v = eval_graph(g, sample_with_corners(box, 5000, np.random.default_rng(0)))
    assert np.all(v <= taylor.hi + 1e-9) and np.all(v >= taylor.lo - 1e-9)
    assert np.all(taylor.hi - taylor.lo < 0.01 * (plain.hi - plain.lo))


def test_rounding_pad_scales_with_weights():
    net = generate_fixture(1, [2, 4, 1], "tanh")
    g = fd_first(network_graph(net), 0, 1e-6)
    comp = taylor_companion(g)
    box = Box([0, 0], [1, 1])
    lifted = comp.lifted_box(box, ibp(comp.pad_graph, box))
    s_lo, s_hi, pad_lo, pad_hi = lifted.lb[2], lifted.ub[2], lifted.lb[3], lifted.ub[3]
    assert (s_lo, s_hi) == (0.0, 1.0)
    assert pad_lo == -pad_hi and 1e-9 < pad_hi < 1e-6
