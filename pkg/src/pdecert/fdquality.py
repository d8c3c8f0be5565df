"""Accuracy of finite-difference derivatives of a network against exact ones."""

from __future__ import annotations

import numpy as np

from .graph import GraphBuilder, eval_graph, fd_first, fd_second, network_graph
from .network import Network, jacobian, pre_activations
from .taylor import directional_derivatives

DEFAULT_HS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-10, 1e-12)


def exact_second_derivative(net: Network, X, i: int) -> np.ndarray:
    """d^2 net / dx_i^2 at every row of X (tanh/identity networks only)."""
    b = GraphBuilder(net.input_dim)
    d2 = directional_derivatives(b, net, b.input(), np.eye(net.input_dim), np.zeros(net.input_dim), i, 2)[1]
    if d2 is None or isinstance(d2, np.ndarray):
        return np.zeros((np.atleast_2d(X).shape[0], net.output_dim))
    return eval_graph(b.build(d2), np.atleast_2d(X))


def _away_from_kinks(net: Network, stencil: list[np.ndarray], margin: float) -> np.ndarray:
    """Rows whose stencil points share one activation pattern with every
    hidden pre-activation farther than ``margin`` from zero.

    Layer by layer this means no pre-activation changes sign along the
    stencil segment, so no kink lies between the points.
    """
    keep = np.ones(stencil[0].shape[0], dtype=bool)
    zs = [pre_activations(net, Xs)[:-1] for Xs in stencil]
    for layer in range(len(zs[0])):
        ref = np.sign(zs[0][layer])
        for z in zs:
            keep &= np.all(np.abs(z[layer]) > margin, axis=1) & np.all(np.sign(z[layer]) == ref, axis=1)
    return keep


def fd_mse(net: Network, X, i: int, h: float, order: int = 1, kink_margin: float | None = None) -> tuple[float, int]:
    """Mean squared error of the finite-difference derivative along x_i.

    With ``kink_margin`` only points whose every stencil point has all hidden
    pre-activations farther than the margin from zero are scored. Returns
    (mse, number of points used).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    g = network_graph(net)
    if order == 1:
        fd = eval_graph(fd_first(g, i, h), X)
        exact = jacobian(net, X)[:, :, i]
        offsets = (0.0, h)
    elif order == 2:
        fd = eval_graph(fd_second(g, i, h), X)
        exact = exact_second_derivative(net, X, i)
        offsets = (-h, 0.0, h)
    else:
        raise ValueError("order must be 1 or 2")
    keep = np.ones(X.shape[0], dtype=bool)
    if kink_margin is not None:
        stencil = []
        for off in offsets:
            Xs = X.copy()
            Xs[:, i] += off
            stencil.append(Xs)
        keep = _away_from_kinks(net, stencil, kink_margin)
    if not keep.any():
        return float("nan"), 0
    err = fd[keep] - exact[keep]
    return float(np.mean(err * err)), int(keep.sum())


def fd_sweep(net: Network, i: int = 0, hs=DEFAULT_HS, n: int = 10_000, seed: int = 0, order: int = 1,
             domain=None, kink_margin: float | None = None) -> list[dict]:
    """MSE of the finite-difference derivative for each step in ``hs``.

    Points are drawn uniformly from ``domain`` (default [-1, 1]^d) with
    ``np.random.default_rng(seed)``; the same points are used for every h.
    """
    d = net.input_dim
    dom = np.asarray(domain if domain is not None else [[-1.0, 1.0]] * d, dtype=np.float64)
    rng = np.random.default_rng(seed)
    X = dom[:, 0] + (dom[:, 1] - dom[:, 0]) * rng.random((n, d))
    rows = []
    for h in hs:
        mse, used = fd_mse(net, X, i, float(h), order, kink_margin)
        rows.append({"h": float(h), "mse": mse, "n": used})
    return rows
