"""Computation graphs for property functions of a network.

A graph is a DAG over a single vector input. Besides plain arithmetic it
holds ``call`` nodes (a whole network applied to an affine remap of its
operand) and ``shift`` nodes (the operand with one coordinate offset by h),
which is how finite-difference derivatives are expressed. Before evaluation
or bounding the graph is *lowered* to primitive ops:

    input, const, linear, act, sin, sech, sum, product

Every primitive is vectorised over a batch of points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .network import Network

HIGH_LEVEL_OPS = ("input", "const", "linear", "shift", "act", "sin", "sech", "sum", "product", "call")


@dataclass(frozen=True, eq=False)
class Node:
    op: str
    args: tuple[int, ...]
    width: int
    params: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Prim:
    """Lowered primitive; ``args`` index earlier primitives."""

    op: str
    args: tuple[int, ...]
    width: int
    params: dict = field(default_factory=dict)


class ComputeGraph:
    """Immutable DAG with node 0 as the input vector."""

    def __init__(self, nodes, outputs, input_dim: int, meta: dict | None = None, output_names=None):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.outputs: tuple[int, ...] = tuple(outputs)
        self.input_dim = int(input_dim)
        self.meta = dict(meta or {})
        if not self.nodes or self.nodes[0].op != "input" or self.nodes[0].width != input_dim:
            raise ValueError("node 0 must be the input node")
        for k, node in enumerate(self.nodes):
            if node.op not in HIGH_LEVEL_OPS:
                raise ValueError(f"node {k}: unknown op {node.op!r}")
            if node.op == "input" and k != 0:
                raise ValueError("only node 0 may be an input node")
            if any(a >= k or a < 0 for a in node.args):
                raise ValueError(f"node {k}: operands must precede the node")
            if node.op == "shift" and (node.params["h"] == 0 or not np.isfinite(node.params["h"])):
                raise ValueError(f"node {k}: shift offset must be finite and nonzero")
        for o in self.outputs:
            if not 0 <= o < len(self.nodes):
                raise ValueError(f"output {o} is not a node")
        self.output_dim = sum(self.nodes[o].width for o in self.outputs)
        names = list(output_names) if output_names is not None else [f"out{k}" for k in range(self.output_dim)]
        if len(names) != self.output_dim:
            raise ValueError("one name per scalar output required")
        self.output_names = tuple(names)

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        name = self.meta.get("property", "graph")
        return f"<ComputeGraph {name}: {len(self.nodes)} nodes, {self.input_dim}->{self.output_dim}>"

    def count(self, op: str) -> int:
        return sum(1 for n in self.nodes if n.op == op)

    def select_outputs(self, indices) -> ComputeGraph:
        """Sub-graph keeping only the given scalar outputs (by position)."""
        indices = [int(i) for i in indices]
        nodes = list(self.nodes)
        outs = []
        for i in indices:
            node_id, elem = self.output_slots[i]
            if nodes[node_id].width == 1:
                outs.append(node_id)
            else:
                W = np.zeros((1, nodes[node_id].width))
                W[0, elem] = 1.0
                nodes.append(Node("linear", (node_id,), 1, {"W": W, "b": np.zeros(1)}))
                outs.append(len(nodes) - 1)
        return ComputeGraph(nodes, outs, self.input_dim, self.meta, [self.output_names[i] for i in indices])

    @cached_property
    def output_slots(self) -> list[tuple[int, int]]:
        """(node id, element) for each scalar output."""
        slots = []
        for o in self.outputs:
            slots.extend((o, e) for e in range(self.nodes[o].width))
        return slots

    @cached_property
    def program(self) -> Program:
        return lower(self)

    @cached_property
    def companion(self):
        """Taylor-form companion used to tighten bounds of difference quotients (or None)."""
        from .taylor import taylor_companion

        return taylor_companion(self)

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("program", None)
        state.pop("companion", None)
        return state


# --- lowering ---------------------------------------------------------------


@dataclass(eq=False)
class Program:
    prims: list[Prim]
    outputs: list[int]  # prim ids, concatenated to form the output vector
    input_dim: int

    @cached_property
    def output_slots(self) -> list[tuple[int, int]]:
        slots = []
        for o in self.outputs:
            slots.extend((o, e) for e in range(self.prims[o].width))
        return slots

    @cached_property
    def consumers(self) -> list[list[int]]:
        cons = [[] for _ in self.prims]
        for k, p in enumerate(self.prims):
            for a in set(p.args):
                cons[a].append(k)
        return cons


class _Lowerer:
    def __init__(self, input_dim):
        self.prims = [Prim("input", (), input_dim)]

    def add(self, op, args, width, **params) -> int:
        self.prims.append(Prim(op, tuple(args), width, params))
        return len(self.prims) - 1

    def linear(self, arg: int, W, b) -> int:
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        inner = self.prims[arg]
        if inner.op == "linear":
            # fold affine chains so bounding sees one affine map
            return self.add("linear", inner.args, W.shape[0],
                            W=W @ inner.params["W"], b=W @ inner.params["b"] + b)
        return self.add("linear", (arg,), W.shape[0], W=W, b=b)

    def network(self, arg: int, net: Network, R, c) -> int:
        first = True
        cur = arg
        for layer in net.layers:
            if first:
                W = layer.W @ R
                b = layer.W @ c + layer.b
                first = False
            else:
                W, b = layer.W, layer.b
            cur = self.linear(cur, W, b)
            if layer.activation != "identity":
                cur = self.add("act", (cur,), layer.out_dim, kind=layer.activation)
        return cur


def lower(g: ComputeGraph) -> Program:
    lw = _Lowerer(g.input_dim)
    ids = [0]
    for node in g.nodes[1:]:
        a = [ids[i] for i in node.args]
        p = node.params
        if node.op == "const":
            ids.append(lw.add("const", (), node.width, value=np.asarray(p["value"], dtype=np.float64)))
        elif node.op == "linear":
            ids.append(lw.linear(a[0], p["W"], p["b"]))
        elif node.op == "shift":
            w = g.nodes[node.args[0]].width
            b = np.zeros(w)
            b[p["index"]] = p["h"]
            ids.append(lw.linear(a[0], np.eye(w), b))
        elif node.op == "call":
            ids.append(lw.network(a[0], p["net"], p["R"], p["c"]))
        elif node.op in ("act", "sin", "sech", "sum", "product"):
            ids.append(lw.add(node.op, a, node.width, **p))
        else:  # pragma: no cover - validated in ComputeGraph
            raise ValueError(node.op)
    return Program(lw.prims, [ids[o] for o in g.outputs], g.input_dim)


# --- evaluation -------------------------------------------------------------


def _forward(prog: Program, X: np.ndarray) -> list[np.ndarray]:
    n = X.shape[0]
    vals: list[np.ndarray] = []
    for p in prog.prims:
        op = p.op
        if op == "input":
            v = X
        elif op == "const":
            v = np.broadcast_to(p.params["value"], (n, p.width))
        elif op == "linear":
            v = vals[p.args[0]] @ p.params["W"].T + p.params["b"]
        elif op == "act":
            z = vals[p.args[0]]
            v = np.tanh(z) if p.params["kind"] == "tanh" else np.maximum(z, 0.0)
        elif op == "sin":
            v = p.params["a"] * np.sin(p.params["s"] * vals[p.args[0]])
        elif op == "sech":
            v = p.params["a"] / np.cosh(vals[p.args[0]])
        elif op == "sum":
            v = sum(w * vals[i] for w, i in zip(p.params["weights"], p.args))
        elif op == "product":
            v = vals[p.args[0]] * vals[p.args[1]]
        else:  # pragma: no cover
            raise ValueError(op)
        vals.append(v)
    return vals


def _as_batch(g: ComputeGraph, x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != g.input_dim:
        raise ValueError(f"expected points of dimension {g.input_dim}, got {X.shape[1]}")
    return X, single


def eval_graph(g: ComputeGraph, x) -> np.ndarray:
    """Evaluate all outputs at one point (d,) -> (m,) or a batch (n, d) -> (n, m)."""
    X, single = _as_batch(g, x)
    prog = g.program
    vals = _forward(prog, X)
    out = np.concatenate([np.asarray(vals[o]).reshape(X.shape[0], -1) for o in prog.outputs], axis=1)
    return out[0] if single else out


def _backward(prog: Program, vals, seed_slot: tuple[int, int], n: int) -> np.ndarray:
    adj: list[np.ndarray | None] = [None] * len(prog.prims)
    node, elem = seed_slot
    seed = np.zeros((n, prog.prims[node].width))
    seed[:, elem] = 1.0
    adj[node] = seed

    def acc(i, v):
        adj[i] = v if adj[i] is None else adj[i] + v

    for k in range(len(prog.prims) - 1, 0, -1):
        a = adj[k]
        if a is None:
            continue
        p = prog.prims[k]
        op = p.op
        if op == "const":
            continue
        x = vals[p.args[0]] if p.args else None
        if op == "linear":
            acc(p.args[0], a @ p.params["W"])
        elif op == "act":
            if p.params["kind"] == "tanh":
                d = 1.0 - vals[k] ** 2
            else:
                d = (x > 0.0).astype(np.float64)
            acc(p.args[0], a * d)
        elif op == "sin":
            s = p.params["s"]
            acc(p.args[0], a * (p.params["a"] * s * np.cos(s * x)))
        elif op == "sech":
            acc(p.args[0], a * (-vals[k] * np.tanh(x)))
        elif op == "sum":
            for w, i in zip(p.params["weights"], p.args):
                acc(i, w * a)
        elif op == "product":
            acc(p.args[0], a * vals[p.args[1]])
            acc(p.args[1], a * vals[p.args[0]])
    if adj[0] is None:
        return np.zeros((n, prog.input_dim))
    return adj[0]


def grad_output(g: ComputeGraph, X, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Values of output ``k`` and its input gradient for a batch: ((n,), (n, d))."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    prog = g.program
    vals = _forward(prog, X)
    node, elem = prog.output_slots[k]
    value = np.asarray(vals[node])[:, elem]
    return value, _backward(prog, vals, (node, elem), X.shape[0])


def grad_graph(g: ComputeGraph, x) -> np.ndarray:
    """Jacobian of the outputs: (m, d) at one point or (n, m, d) for a batch."""
    X, single = _as_batch(g, x)
    prog = g.program
    vals = _forward(prog, X)
    J = np.stack([_backward(prog, vals, slot, X.shape[0]) for slot in prog.output_slots], axis=1)
    return J[0] if single else J


# --- construction -----------------------------------------------------------


class Ref:
    """Handle to a node under construction; supports +, -, * and / by scalars."""

    __slots__ = ("b", "id", "width")

    def __init__(self, builder: GraphBuilder, node_id: int, width: int):
        self.b = builder
        self.id = node_id
        self.width = width

    def _lift(self, other) -> Ref:
        if isinstance(other, Ref):
            return other
        return self.b.const(np.full(self.width, float(other)))

    def __add__(self, other):
        return self.b.sum([self, self._lift(other)], [1.0, 1.0])

    __radd__ = __add__

    def __sub__(self, other):
        return self.b.sum([self, self._lift(other)], [1.0, -1.0])

    def __rsub__(self, other):
        return self.b.sum([self._lift(other), self], [1.0, -1.0])

    def __neg__(self):
        return self.b.sum([self], [-1.0])

    def __mul__(self, other):
        if isinstance(other, Ref):
            return self.b.product(self, other)
        return self.b.sum([self], [float(other)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Ref):
            raise TypeError("division is only supported by constants")
        return self.b.sum([self], [1.0 / float(other)])

    def __getitem__(self, i):
        return self.b.select(self, [i] if isinstance(i, int) else list(i))


class GraphBuilder:
    """Incremental construction of a ComputeGraph.

    Network calls are memoised on (network, operand, remap) so a shifted copy
    that several derivative stencils need is only added once.
    """

    def __init__(self, input_dim: int):
        self.input_dim = input_dim
        self.nodes: list[Node] = [Node("input", (), input_dim)]
        self._calls: dict = {}
        self._shifts: dict = {}

    def _add(self, op, args, width, **params) -> Ref:
        self.nodes.append(Node(op, tuple(a.id for a in args), width, params))
        return Ref(self, len(self.nodes) - 1, width)

    def input(self) -> Ref:
        return Ref(self, 0, self.input_dim)

    def coord(self, i: int) -> Ref:
        return self.select(self.input(), [i])

    def const(self, value) -> Ref:
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        return self._add("const", (), value.shape[0], value=value)

    def linear(self, x: Ref, W, b=None) -> Ref:
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        b = np.zeros(W.shape[0]) if b is None else np.atleast_1d(np.asarray(b, dtype=np.float64))
        if W.shape[1] != x.width:
            raise ValueError("linear map does not match operand width")
        return self._add("linear", (x,), W.shape[0], W=W, b=b)

    def select(self, x: Ref, indices) -> Ref:
        W = np.zeros((len(indices), x.width))
        W[np.arange(len(indices)), indices] = 1.0
        return self.linear(x, W)

    def shift(self, x: Ref, index: int, h: float) -> Ref:
        key = (x.id, index, float(h))
        if key not in self._shifts:
            self._shifts[key] = self._add("shift", (x,), x.width, index=int(index), h=float(h))
        return self._shifts[key]

    def call(self, net: Network, x: Ref, R=None, c=None) -> Ref:
        """``net(R @ x + c)``; R defaults to identity and c to zero."""
        R = np.eye(x.width) if R is None else np.atleast_2d(np.asarray(R, dtype=np.float64))
        c = np.zeros(R.shape[0]) if c is None else np.asarray(c, dtype=np.float64)
        if R.shape[0] != net.input_dim or R.shape[1] != x.width:
            raise ValueError("remap does not match network input")
        key = (id(net), x.id, R.tobytes(), c.tobytes())
        if key not in self._calls:
            self._calls[key] = self._add("call", (x,), net.output_dim, net=net, R=R, c=c)
        return self._calls[key]

    def act(self, x: Ref, kind: str) -> Ref:
        if kind not in ("tanh", "relu"):
            raise ValueError(f"unsupported activation {kind!r}")
        return self._add("act", (x,), x.width, kind=kind)

    def sin(self, x: Ref, a: float = 1.0, s: float = 1.0) -> Ref:
        return self._add("sin", (x,), x.width, a=float(a), s=float(s))

    def sech(self, x: Ref, a: float = 1.0) -> Ref:
        return self._add("sech", (x,), x.width, a=float(a))

    def sum(self, xs, weights) -> Ref:
        xs = list(xs)
        if len({x.width for x in xs}) != 1:
            raise ValueError("sum operands must share a width")
        return self._add("sum", xs, xs[0].width, weights=tuple(float(w) for w in weights))

    def product(self, x: Ref, y: Ref) -> Ref:
        if x.width != y.width:
            raise ValueError("product operands must share a width")
        return self._add("product", (x, y), x.width)

    def build(self, outputs, meta=None, output_names=None) -> ComputeGraph:
        outputs = [outputs] if isinstance(outputs, Ref) else list(outputs)
        return ComputeGraph(self.nodes, [o.id for o in outputs], self.input_dim, meta, output_names)


def network_graph(net: Network) -> ComputeGraph:
    """Graph whose outputs are the network outputs themselves."""
    b = GraphBuilder(net.input_dim)
    return b.build(b.call(net, b.input()), meta={"property": "network"})


# --- finite differences -----------------------------------------------------


def _copy_with_input(g: ComputeGraph, nodes: list[Node], new_input: int) -> list[int]:
    """Append copies of g's input-dependent nodes reading from ``new_input``.

    Returns the id map from g's nodes to their copies; nodes that do not
    depend on the input are shared.
    """
    depends = [False] * len(g.nodes)
    depends[0] = True
    mapping = [new_input] + [0] * (len(g.nodes) - 1)
    for k, node in enumerate(g.nodes[1:], start=1):
        depends[k] = any(depends[a] for a in node.args)
        if not depends[k]:
            mapping[k] = k
            continue
        nodes.append(Node(node.op, tuple(mapping[a] for a in node.args), node.width, node.params))
        mapping[k] = len(nodes) - 1
    return mapping


def _stencil(g: ComputeGraph, i: int, offsets, weights, label) -> ComputeGraph:
    if not 0 <= i < g.input_dim:
        raise ValueError(f"input index {i} out of range")
    nodes = list(g.nodes)
    copies = []
    for off in offsets:
        if off == 0.0:
            copies.append(list(range(len(g.nodes))))
            continue
        nodes.append(Node("shift", (0,), g.input_dim, {"index": i, "h": float(off)}))
        copies.append(_copy_with_input(g, nodes, len(nodes) - 1))
    outs = []
    for o in g.outputs:
        nodes.append(Node("sum", tuple(c[o] for c in copies), g.nodes[o].width, {"weights": tuple(weights)}))
        outs.append(len(nodes) - 1)
    meta = dict(g.meta)
    meta.setdefault("fd", []).append(label)
    return ComputeGraph(nodes, outs, g.input_dim, meta, [f"{label}({n})" for n in g.output_names])


def fd_first(g: ComputeGraph, i: int, h: float) -> ComputeGraph:
    """Forward difference (g(x + h e_i) - g(x)) / h of every output."""
    if h == 0 or not np.isfinite(h):
        raise ValueError("finite-difference step h must be finite and nonzero")
    return _stencil(g, i, [h, 0.0], [1.0 / h, -1.0 / h], f"d{i}[h={h:g}]")


def fd_second(g: ComputeGraph, i: int, h: float) -> ComputeGraph:
    """Central second difference (g(x+h) - 2 g(x) + g(x-h)) / h^2."""
    if h == 0 or not np.isfinite(h):
        raise ValueError("finite-difference step h must be finite and nonzero")
    w = 1.0 / (h * h)
    return _stencil(g, i, [h, 0.0, -h], [w, -2.0 * w, w], f"d{i}{i}[h={h:g}]")
