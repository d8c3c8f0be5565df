"""Property graphs for the Burgers, Schrodinger and SMIB benchmarks.

Network input layouts:

* burgers      -- inputs (x, t), x in [-1, 1], t in [0, 1]; one output u.
* schrodinger  -- inputs (x, t), x in [-5, 5], t in [0, pi/2]; outputs (Re u, Im u).
* smib         -- inputs (delta0, t), delta0 in [0, 1], t in [0, 2];
                  outputs (delta, delta_omega).

Initial-condition graphs take the spatial coordinate (or delta0) as their
only input, boundary graphs take t only, residual graphs take the full
network input. Every property graph is a *signed* quantity; verification
bounds its absolute value.
"""

from __future__ import annotations

import ast
import math
from dataclasses import asdict, dataclass

import numpy as np

from .graph import ComputeGraph, GraphBuilder, Ref
from .network import Network

BENCHMARKS = ("burgers", "schrodinger", "smib")
PROPERTIES = ("initial", "boundary", "residual")

BURGERS_VISCOSITY = 0.01 / math.pi

DOMAINS = {
    "burgers": [[-1.0, 1.0], [0.0, 1.0]],
    "schrodinger": [[-5.0, 5.0], [0.0, math.pi / 2]],
    "smib": [[0.0, 1.0], [0.0, 2.0]],
}
OUTPUTS = {"burgers": 1, "schrodinger": 2, "smib": 2}


@dataclass(frozen=True)
class SMIBParams:
    """Swing-equation constants (per unit). ``P`` is the mechanical power set point."""

    B12: float = 0.2
    V1: float = 1.0
    V2: float = 1.0
    d: float = 0.15
    m: float = 0.4
    P: float = 0.1
    domega0: float = 0.1

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("inertia m must be positive")

    @property
    def coupling(self) -> float:
        return self.V1 * self.V2 * self.B12

    def rhs(self, state: np.ndarray) -> np.ndarray:
        """Right-hand side f(delta, domega) for an array of states (..., 2)."""
        delta, omega = state[..., 0], state[..., 1]
        domega = (self.P - self.coupling * np.sin(delta) - self.d * omega) / self.m
        return np.stack([omega, domega], axis=-1)

    def to_dict(self) -> dict:
        return asdict(self)


def default_box(bench: str, prop: str) -> list[list[float]]:
    dom = DOMAINS[_check_bench(bench)]
    if prop == "initial":
        return [list(dom[0])]
    if prop == "boundary":
        return [list(dom[1])]
    if prop == "residual":
        return [list(r) for r in dom]
    raise ValueError(f"unknown property {prop!r}")


def _check_bench(bench: str) -> str:
    if bench not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {bench!r}; expected one of {BENCHMARKS}")
    return bench


def _check_net(net: Network, bench: str):
    if net.input_dim != 2:
        raise ValueError(f"{bench} networks take 2 inputs, got {net.input_dim}")
    if net.output_dim != OUTPUTS[bench]:
        raise ValueError(f"{bench} networks have {OUTPUTS[bench]} outputs, got {net.output_dim}")


class Field:
    """The network evaluated at a (possibly remapped) point, with memoised
    finite-difference derivatives along network input coordinates."""

    def __init__(self, b: GraphBuilder, net: Network, point: Ref, h1: float, h2: float):
        if h1 == 0 or h2 == 0:
            raise ValueError("finite-difference steps must be nonzero")
        self.b, self.net, self.point = b, net, point
        self.h1, self.h2 = float(h1), float(h2)
        self._memo: dict = {}

    def value(self) -> Ref:
        return self.b.call(self.net, self.point)

    def at(self, i: int, h: float) -> Ref:
        return self.b.call(self.net, self.b.shift(self.point, i, h))

    def d(self, i: int) -> Ref:
        key = ("d", i)
        if key not in self._memo:
            h = self.h1
            self._memo[key] = self.b.sum([self.at(i, h), self.value()], [1.0 / h, -1.0 / h])
        return self._memo[key]

    def dd(self, i: int) -> Ref:
        key = ("dd", i)
        if key not in self._memo:
            h = self.h2
            w = 1.0 / (h * h)
            self._memo[key] = self.b.sum(
                [self.at(i, h), self.value(), self.at(i, -h)], [w, -2.0 * w, w]
            )
        return self._memo[key]


def _pinned_point(b: GraphBuilder, free_to_net: dict[int, int], fixed: dict[int, float], net_dim: int) -> Ref:
    """Map the graph input onto a network input with some coordinates fixed."""
    W = np.zeros((net_dim, b.input_dim))
    c = np.zeros(net_dim)
    for g_i, n_i in free_to_net.items():
        W[n_i, g_i] = 1.0
    for n_i, v in fixed.items():
        c[n_i] = v
    return b.linear(b.input(), W, c)


def build_initial_property(net: Network, bench: str, params: SMIBParams | None = None) -> ComputeGraph:
    """u_theta(x, 0) - u0(x) over the spatial box (delta0 box for SMIB)."""
    _check_bench(bench)
    _check_net(net, bench)
    b = GraphBuilder(1)
    x = b.input()
    u = b.call(net, x, R=[[1.0], [0.0]])
    if bench == "burgers":
        # u(0, x) + sin(pi x) = 0
        outs, names = [u + b.sin(x, 1.0, math.pi)], ["u(x,0)+sin(pi x)"]
    elif bench == "schrodinger":
        outs = [u[0] - b.sech(x, 2.0), u[1]]
        names = ["Re u(x,0)-2sech(x)", "Im u(x,0)"]
    else:
        params = params or SMIBParams()
        outs = [u[0] - x, u[1] - params.domega0]
        names = ["delta(d0,0)-d0", "domega(d0,0)-domega0"]
    meta = {"benchmark": bench, "property": "initial", "box": default_box(bench, "initial")}
    return b.build(outs, meta=meta, output_names=names)


def build_boundary_property(net: Network, bench: str, h: float = 1e-6) -> ComputeGraph:
    """Boundary mismatch over t with space pinned to the boundary.

    Burgers: outputs u(-1, t) and u(1, t).
    Schrodinger: periodic value mismatch (Re, Im) followed by the periodic
    x-derivative mismatch (Re, Im), the latter as forward differences.
    """
    _check_bench(bench)
    if bench == "smib":
        raise ValueError("smib is an initial value problem and has no boundary condition")
    _check_net(net, bench)
    b = GraphBuilder(1)
    meta = {"benchmark": bench, "property": "boundary", "box": default_box(bench, "boundary"), "h": [h]}
    if bench == "burgers":
        left = b.call(net, _pinned_point(b, {0: 1}, {0: -1.0}, 2))
        right = b.call(net, _pinned_point(b, {0: 1}, {0: 1.0}, 2))
        return b.build([left, right], meta=meta, output_names=["u(-1,t)", "u(1,t)"])
    left = Field(b, net, _pinned_point(b, {0: 1}, {0: -5.0}, 2), h, h)
    right = Field(b, net, _pinned_point(b, {0: 1}, {0: 5.0}, 2), h, h)
    value = left.value() - right.value()
    deriv = left.d(0) - right.d(0)
    names = ["Re u(t,-5)-u(t,5)", "Im u(t,-5)-u(t,5)", "Re ux(-5,t)-ux(5,t)", "Im ux(-5,t)-ux(5,t)"]
    return b.build([value, deriv], meta=meta, output_names=names)


def build_residual(net: Network, bench: str, h1: float = 1e-6, h2: float = 1e-3,
                   params: SMIBParams | None = None) -> ComputeGraph:
    """PDE/ODE residual with finite-difference derivatives.

    First derivatives are forward differences with step ``h1``; second
    derivatives are central differences with step ``h2``. The unshifted
    network copy is shared by all stencils.
    """
    _check_bench(bench)
    _check_net(net, bench)
    if h1 == 0 or h2 == 0:
        raise ValueError("finite-difference steps must be nonzero")
    b = GraphBuilder(2)
    f = Field(b, net, b.input(), h1, h2)
    u = f.value()
    meta = {"benchmark": bench, "property": "residual", "box": default_box(bench, "residual"), "h": [h1, h2]}
    if bench == "burgers":
        res = f.d(1) + u * f.d(0) - BURGERS_VISCOSITY * f.dd(0)
        return b.build(res, meta=meta, output_names=["u_t+u*u_x-nu*u_xx"])
    if bench == "schrodinger":
        ur, ui = u[0], u[1]
        ut, uxx = f.d(1), f.dd(0)
        mod2 = ur * ur + ui * ui
        re = -ut[1] + 0.5 * uxx[0] + mod2 * ur
        im = ut[0] + 0.5 * uxx[1] + mod2 * ui
        return b.build([re, im], meta=meta, output_names=["Re F", "Im F"])
    if params is None:
        raise ValueError("smib residual needs SMIB parameters")
    p = params
    delta, omega = u[0], u[1]
    ut = f.d(1)
    r1 = ut[0] - omega
    # d(omega)/dt + (d/m) omega - (1/m)(P - V1 V2 B12 sin(delta))
    r2 = ut[1] + (p.d / p.m) * omega + b.sin(delta, p.coupling / p.m, 1.0) - p.P / p.m
    meta["smib_params"] = p.to_dict()
    return b.build([r1, r2], meta=meta, output_names=["ddelta/dt-domega", "domega/dt-f2"])


def build_property(net: Network, bench: str, prop: str, h1: float = 1e-6, h2: float = 1e-3,
                   params: SMIBParams | None = None) -> ComputeGraph:
    if prop == "initial":
        return build_initial_property(net, bench, params)
    if prop == "boundary":
        return build_boundary_property(net, bench, h1)
    if prop == "residual":
        if bench == "smib" and params is None:
            params = SMIBParams()
        return build_residual(net, bench, h1, h2, params)
    raise ValueError(f"unknown property {prop!r}")


# --- custom benchmarks ------------------------------------------------------

_FUNCS = ("sin", "cos", "sech", "tanh", "relu")


class _Compiler(ast.NodeVisitor):
    def __init__(self, b: GraphBuilder, field: Field, names: list[str], free: dict[str, int],
                 n_out: int, consts: dict[str, float]):
        self.b, self.field, self.names, self.free = b, field, names, free
        self.n_out, self.consts = n_out, consts

    def compile(self, text: str):
        tree = ast.parse(text, mode="eval")
        return self.visit(tree.body)

    def generic_visit(self, node):
        raise ValueError(f"unsupported syntax in expression: {ast.dump(node)}")

    def visit_Constant(self, node):
        if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        raise ValueError(f"unsupported constant {node.value!r}")

    def visit_Name(self, node):
        name = node.id
        if name in self.consts:
            return self.consts[name]
        if name in self.free:
            return self.b.coord(self.free[name])
        if name in self.names:
            raise ValueError(f"variable {name!r} is fixed in this condition; use its value")
        return self._field_term(name)

    def _field_term(self, name: str):
        head, _, der = name.partition("_")
        if head == "u":
            comp = 0
        elif head.startswith("u") and head[1:].isdigit():
            comp = int(head[1:])
        else:
            raise ValueError(f"unknown name {name!r}")
        if comp >= self.n_out:
            raise ValueError(f"{name!r}: network has only {self.n_out} outputs")
        if not der:
            base = self.field.value()
        elif len(der) == 1 and der in self.names:
            base = self.field.d(self.names.index(der))
        elif len(der) == 2 and der[0] == der[1] and der[0] in self.names:
            base = self.field.dd(self.names.index(der[0]))
        else:
            raise ValueError(f"unsupported derivative {name!r}")
        return base if self.n_out == 1 else base[comp]

    def visit_UnaryOp(self, node):
        v = self.visit(node.operand)
        if isinstance(node.op, ast.USub):
            return -v
        if isinstance(node.op, ast.UAdd):
            return v
        raise ValueError("unsupported unary operator")

    def visit_BinOp(self, node):
        left, right = self.visit(node.left), self.visit(node.right)
        op = node.op
        if isinstance(op, ast.Add):
            return left + right
        if isinstance(op, ast.Sub):
            return left - right
        if isinstance(op, ast.Mult):
            return left * right
        if isinstance(op, ast.Div):
            if isinstance(right, Ref):
                raise ValueError("division is only supported by constants")
            return left / right
        if isinstance(op, ast.Pow):
            if isinstance(right, Ref) or right != int(right) or right < 1:
                raise ValueError("only positive integer powers are supported")
            if not isinstance(left, Ref):
                return left ** right
            out = left
            for _ in range(int(right) - 1):
                out = out * left
            return out
        raise ValueError("unsupported binary operator")

    def visit_Call(self, node):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or len(node.args) != 1:
            raise ValueError(f"unsupported call; functions are {_FUNCS}")
        arg = self.visit(node.args[0])
        fn = node.func.id
        if not isinstance(arg, Ref):
            return float({"sin": math.sin, "cos": math.cos, "tanh": math.tanh,
                          "sech": lambda v: 1 / math.cosh(v), "relu": lambda v: max(v, 0.0)}[fn](arg))
        if fn == "sin":
            return self.b.sin(arg)
        if fn == "cos":
            return self.b.sin(arg + math.pi / 2)
        if fn == "sech":
            return self.b.sech(arg)
        return self.b.act(arg, fn)


def build_custom_property(net: Network, spec: dict, prop: str, h1: float = 1e-6, h2: float = 1e-3) -> ComputeGraph:
    """Property graph from a small expression language.

    ``spec`` holds ``inputs`` (network input names, e.g. ["x", "t"]) and, per
    property kind, a list of conditions ``{"fix": {name: value}, "exprs": [...]}``
    (``residual`` may be a bare list of expressions). Expressions use the
    free input names, ``u``/``u0``, ``u1``, ... for network outputs,
    ``u_x``/``u1_t`` for first and ``u_xx`` for second derivatives,
    ``+ - *``, division and integer powers of constants, ``pi``, and
    ``sin cos sech tanh relu``. Example Burgers residual::

        "u_t + u*u_x - 0.01/pi*u_xx"
    """
    names = list(spec["inputs"])
    if net.input_dim != len(names):
        raise ValueError("custom 'inputs' must name every network input")
    conds = spec.get(prop)
    if conds is None:
        raise ValueError(f"custom benchmark defines no {prop!r} condition")
    if prop == "residual" and isinstance(conds, list) and conds and isinstance(conds[0], str):
        conds = [{"fix": {}, "exprs": conds}]
    if isinstance(conds, dict):
        conds = [conds]
    free_names = [n for n in names if n not in conds[0].get("fix", {})]
    for cond in conds:
        if [n for n in names if n not in cond.get("fix", {})] != free_names:
            raise ValueError("all conditions of one property must leave the same inputs free")
    b = GraphBuilder(len(free_names))
    free = {n: i for i, n in enumerate(free_names)}
    outs, labels = [], []
    consts = {"pi": math.pi, "e": math.e}
    for cond in conds:
        fixed = {names.index(k): float(v) for k, v in cond.get("fix", {}).items()}
        point = _pinned_point(b, {free[n]: names.index(n) for n in free_names}, fixed, len(names))
        field = Field(b, net, point, h1, h2)
        comp = _Compiler(b, field, names, free, net.output_dim, consts)
        for text in cond["exprs"]:
            v = comp.compile(text)
            if not isinstance(v, Ref):
                v = b.const([v])
            if v.width != 1:
                raise ValueError(f"expression {text!r} must be scalar")
            outs.append(v)
            labels.append(text)
    box = spec.get("boxes", {}).get(prop)
    meta = {"benchmark": "custom", "property": prop, "h": [h1, h2]}
    if box is not None:
        meta["box"] = box
    return b.build(outs, meta=meta, output_names=labels)
