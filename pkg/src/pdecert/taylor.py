"""Taylor-form companion graphs for finite-difference stencils.

A forward difference (F(p + h e_i) - F(p)) / h of a smooth network F has
1/h-amplified relaxation error when bounded directly. Componentwise it
equals exactly

    dF(p) + (h/2) d2F(p + s h e_i)        for some s in [0, 1]

and a central second difference equals d2F(p + (2s - 1) h e_i), where dF
and d2F are directional derivatives along e_i. The companion graph replaces
each stencil by this expression, with every s lifted to an extra input
coordinate over [0, 1]. Bounding the companion over box x [0,1]^k therefore
bounds the stencil graph over box, without the 1/h blow-up.

Each stencil component also gets a slack input rho in [-pad, pad] that
absorbs floating-point rounding of the difference quotient; pad is set per
box from interval bounds on the network values in the stencil.

Only stencils of ``call`` nodes on tanh/identity networks are rewritten.
Stencils over relu networks (not differentiable) are left as they are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ComputeGraph, GraphBuilder, Node, Ref
from .network import Network

ROUNDING_FACTOR = 64.0
_EPS = np.finfo(np.float64).eps


@dataclass
class Companion:
    graph: ComputeGraph  # input (x, s_1, rho_1, s_2, rho_2, ...)
    n_orig: int
    pad_graph: ComputeGraph  # original nodes, outputs = the stencil calls
    pad_terms: list  # per rho: list of (pad_graph output slot, |weight|)

    def lifted_box(self, box, pad_interval):
        """Box for the companion graph given the original box and pad IBP bounds."""
        from .crown import Box

        mag = np.maximum(np.abs(pad_interval.lo), np.abs(pad_interval.hi))
        lb, ub = list(box.lb), list(box.ub)
        for terms in self.pad_terms:
            pad = ROUNDING_FACTOR * _EPS * sum(w * (mag[slot] + 1.0) for slot, w in terms)
            lb += [0.0, -pad]
            ub += [1.0, pad]
        return Box(lb, ub)


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(abs(a), abs(b))


def _differentiable(net: Network) -> bool:
    return all(layer.activation in ("tanh", "identity") for layer in net.layers)


def _match_stencil(g: ComputeGraph, k: int):
    """Recognise a difference-quotient sum node; None if it is something else."""
    node = g.nodes[k]
    if node.op != "sum":
        return None
    calls = [g.nodes[a] for a in node.args]
    if any(c.op != "call" for c in calls):
        return None
    net, R, c = calls[0].params["net"], calls[0].params["R"], calls[0].params["c"]
    if any(cl.params["net"] is not net or not np.array_equal(cl.params["R"], R)
           or not np.array_equal(cl.params["c"], c) for cl in calls):
        return None
    if not _differentiable(net):
        return None
    w = node.params["weights"]
    operands = [cl.args[0] for cl in calls]

    def shifted(op_id, base):
        sh = g.nodes[op_id]
        if sh.op != "shift" or sh.args[0] != base:
            return None
        return sh.params["index"], sh.params["h"]

    if len(calls) == 2:
        s = shifted(operands[0], operands[1])
        if s is None:
            return None
        i, h = s
        if _close(w[0], 1.0 / h) and _close(w[1], -1.0 / h):
            return "first", operands[1], i, h, net, R, c, calls
    if len(calls) == 3:
        s1, s2 = shifted(operands[0], operands[1]), shifted(operands[2], operands[1])
        if s1 is None or s2 is None or s1[0] != s2[0] or not _close(s1[1], -s2[1]):
            return None
        i, h = s1
        ww = 1.0 / (h * h)
        if _close(w[0], ww) and _close(w[1], -2.0 * ww) and _close(w[2], ww):
            return "second", operands[1], i, h, net, R, c, calls
    return None


# values are a Ref, a constant ndarray, or None for an exact zero


def _mul(b: GraphBuilder, x, y):
    if x is None or y is None:
        return None
    if isinstance(x, np.ndarray) and isinstance(y, np.ndarray):
        return x * y
    if isinstance(x, np.ndarray):
        x, y = y, x
    if isinstance(y, np.ndarray):
        return b.linear(x, np.diag(y))
    return b.product(x, y)


def _lin(b: GraphBuilder, x, W):
    if x is None:
        return None
    if isinstance(x, np.ndarray):
        return W @ x
    return b.linear(x, W)


def _axpy(b: GraphBuilder, x, y, a: float):
    """x + a*y."""
    if y is None:
        return x
    if x is None:
        return a * y if isinstance(y, np.ndarray) else b.sum([y], [a])
    if isinstance(x, np.ndarray) and isinstance(y, np.ndarray):
        return x + a * y
    if isinstance(x, np.ndarray):
        return b.sum([y, b.const(x)], [a, 1.0])
    if isinstance(y, np.ndarray):
        return b.sum([x, b.const(y)], [1.0, a])
    return b.sum([x, y], [1.0, a])


def directional_derivatives(b: GraphBuilder, net: Network, point: Ref, R, c, i: int, order: int):
    """First (and, for order 2, second) derivative of net(R p + c) along p_i.

    Returns (d1, d2) as Refs / ndarrays / None, each of the network's output width.
    """
    R = np.asarray(R, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    a = point
    da = R[:, i].copy()
    dda = None
    for k, layer in enumerate(net.layers):
        if k == 0:
            z = b.linear(a, layer.W @ R, layer.W @ c + layer.b)
        else:
            z = b.linear(a, layer.W, layer.b)
        dz = _lin(b, da, layer.W)
        ddz = _lin(b, dda, layer.W) if order > 1 else None
        if layer.activation == "identity":
            a, da, dda = z, dz, ddz
            continue
        a = b.act(z, "tanh")
        slope = b.sum([b.const(np.ones(z.width)), b.product(a, a)], [1.0, -1.0])  # 1 - tanh^2
        da = _mul(b, slope, dz)
        if order > 1:
            # tanh'' = -2 tanh (1 - tanh^2)
            dda = _axpy(b, _mul(b, slope, ddz), _mul(b, _mul(b, a, da), dz), -2.0)
    return da, dda


def _as_ref(b: GraphBuilder, v, width: int) -> Ref:
    if v is None:
        return b.const(np.zeros(width))
    if isinstance(v, np.ndarray):
        return b.const(v)
    return v


def taylor_companion(g: ComputeGraph) -> Companion | None:
    """Companion graph with every recognised stencil in Taylor form, or None."""
    matches = {k: m for k in range(len(g.nodes)) if (m := _match_stencil(g, k)) is not None}
    if not matches:
        return None
    d = g.input_dim
    k_lift = 2 * sum(g.nodes[k].width for k in matches)
    b = GraphBuilder(d + k_lift)
    x = b.select(b.input(), list(range(d)))
    mapping = {0: x.id}
    pad_calls: list[int] = []
    pad_terms = []
    lift = d
    for k, node in enumerate(g.nodes[1:], start=1):
        if k not in matches:
            b.nodes.append(Node(node.op, tuple(mapping[a] for a in node.args), node.width, node.params))
            mapping[k] = len(b.nodes) - 1
            continue
        kind, base, i, h, net, R, c, calls = matches[k]
        P = Ref(b, mapping[base], g.nodes[base].width)
        m = node.width
        slots = []
        for cl in calls:
            cid = node.args[calls.index(cl)]
            if cid not in pad_calls:
                pad_calls.append(cid)
            slots.append(cid)
        weights = node.params["weights"]
        e_i = np.zeros((P.width, 1))
        e_i[i, 0] = 1.0
        d1_at_p = directional_derivatives(b, net, P, R, c, i, 1)[0] if kind == "first" else None
        comps = []
        for j in range(m):
            s = b.coord(lift)
            rho = b.coord(lift + 1)
            if kind == "first":
                xi = P + b.linear(s, h * e_i)
            else:
                xi = P + b.linear(s, 2.0 * h * e_i, -h * e_i[:, 0])
            d2 = directional_derivatives(b, net, xi, R, c, i, 2)[1]
            d2_j = _as_ref(b, d2, m)[j]
            if kind == "first":
                d1_j = _as_ref(b, d1_at_p, m)[j]
                comps.append(b.sum([d1_j, d2_j, rho], [1.0, 0.5 * h, 1.0]))
            else:
                comps.append(b.sum([d2_j, rho], [1.0, 1.0]))
            pad_terms.append([(cid, j, abs(w)) for cid, w in zip(slots, weights)])
            lift += 2
        if m == 1:
            vec = comps[0]
        else:
            parts = []
            for j, cj in enumerate(comps):
                col = np.zeros((m, 1))
                col[j, 0] = 1.0
                parts.append(b.linear(cj, col))
            vec = b.sum(parts, [1.0] * m)
        mapping[k] = vec.id
    comp_graph = ComputeGraph(b.nodes, [mapping[o] for o in g.outputs], d + k_lift,
                              {"companion_of": g.meta.get("property", "graph")}, g.output_names)
    pad_graph = ComputeGraph(g.nodes, pad_calls, d)
    offsets = {}
    pos = 0
    for cid in pad_calls:
        offsets[cid] = pos
        pos += g.nodes[cid].width
    terms = [[(offsets[cid] + j, w) for cid, j, w in t] for t in pad_terms]
    return Companion(comp_graph, d, pad_graph, terms)
