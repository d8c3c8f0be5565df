"""Sound output bounds for computation graphs over boxes.

Two propagators are provided: interval bound propagation (``ibp``) and a
CROWN-style backward linear bound propagation (``crown_bounds``). Both work
on the lowered program of a graph. CROWN back-substitutes affine
lower/upper bounds from a node down to the graph input, replacing every
nonlinearity by the linear relaxation returned by ``relax_node`` over its
pre-activation interval. Intermediate intervals are the elementwise best of
IBP and CROWN.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import ComputeGraph, Program

NONLINEAR = ("act", "sin", "sech", "product")
TANH_BISECT_ITERS = 50


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned input box [lb, ub]."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.array(self.lb, dtype=np.float64).reshape(-1)
        ub = np.array(self.ub, dtype=np.float64).reshape(-1)
        if lb.shape != ub.shape:
            raise ValueError("lb and ub differ in length")
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            raise ValueError("box bounds must be finite")
        if np.any(lb > ub):
            raise ValueError("box has lb > ub")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @classmethod
    def from_list(cls, ranges) -> Box:
        arr = np.asarray(ranges, dtype=np.float64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    def to_list(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.lb, self.ub)]

    @property
    def dim(self) -> int:
        return self.lb.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lb + self.ub)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.ub - self.lb)

    @property
    def radius(self) -> float:
        """Perturbation of the box, max_i (ub_i - lb_i) / 2."""
        return float(np.max(self.half_widths)) if self.dim else 0.0

    def contains(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lb - slack) and np.all(x <= self.ub + slack))

    def clip(self, X: np.ndarray) -> np.ndarray:
        return np.clip(X, self.lb, self.ub)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lb + (self.ub - self.lb) * rng.random((n, self.dim))


@dataclass(frozen=True, eq=False)
class Interval:
    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True, eq=False)
class LinearBounds:
    """Per-output affine bounds A_l x + b_l <= g(x) <= A_u x + b_u over a box."""

    A_l: np.ndarray
    b_l: np.ndarray
    A_u: np.ndarray
    b_u: np.ndarray

    def lower_at(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.A_l.T + self.b_l

    def upper_at(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.A_u.T + self.b_u


@dataclass(frozen=True, eq=False)
class Relaxation:
    """lw * x + lb <= f(x) <= uw * x + ub, elementwise."""

    lw: np.ndarray
    lb: np.ndarray
    uw: np.ndarray
    ub: np.ndarray


@dataclass(frozen=True, eq=False)
class McCormick:
    """Plane bounds for x * y: each plane is (coef_x, coef_y, const)."""

    lower: tuple
    upper: tuple


# --- scalar function helpers ------------------------------------------------


def _tanh_d(x):
    return 1.0 - np.tanh(x) ** 2


def _tanh_upper(l, u):
    """Upper line (slope, intercept) of tanh over [l, u], elementwise."""
    f_l, f_u = np.tanh(l), np.tanh(u)
    w = u - l
    safe_w = np.where(w > 0, w, 1.0)
    chord_k = (f_u - f_l) / safe_w
    chord_c = f_l - chord_k * l
    m = 0.5 * (l + u)
    tan_k = _tanh_d(m)
    tan_c = np.tanh(m) - tan_k * m

    slope = np.where(l >= 0, tan_k, chord_k)
    icpt = np.where(l >= 0, tan_c, chord_c)

    mixed = (l < 0) & (u > 0)
    if np.any(mixed):
        lm, um, flm = l[mixed], u[mixed], f_l[mixed]

        def phi(d):
            return np.tanh(d) + _tanh_d(d) * (lm - d) - flm

        use_chord = phi(um) < 0
        lo = np.zeros_like(um)
        hi = um.copy()
        for _ in range(TANH_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            ok = phi(mid) >= 0
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        # hi always satisfies phi >= 0, which keeps the tangent above tanh(l)
        k = _tanh_d(hi)
        c = np.tanh(hi) - k * hi
        slope[mixed] = np.where(use_chord, chord_k[mixed], k)
        icpt[mixed] = np.where(use_chord, chord_c[mixed], c)
    return slope, icpt


def _relax_tanh(l, u):
    uw, ub = _tanh_upper(l, u)
    # tanh is odd: a lower bound on [l, u] mirrors the upper bound on [-u, -l]
    lw, lb_neg = _tanh_upper(-u, -l)
    lb = -lb_neg
    tiny = (u - l) <= 1e-12
    if np.any(tiny):
        m = 0.5 * (l + u)[tiny]
        k = _tanh_d(m)
        c = np.tanh(m) - k * m
        slack = (u - l)[tiny] ** 2 + 1e-300
        uw[tiny], ub[tiny] = k, c + slack
        lw[tiny], lb[tiny] = k, c - slack
    return Relaxation(lw, lb, uw, ub)


def _relax_relu(l, u):
    zeros = np.zeros_like(l)
    ones = np.ones_like(l)
    active = l >= 0
    dead = u <= 0
    w = np.where(u - l > 0, u - l, 1.0)
    uw = np.where(active, ones, np.where(dead, zeros, u / w))
    ub = np.where(active | dead, zeros, -l * u / w)
    lam = np.where(np.abs(u) > np.abs(l), ones, zeros)
    lw = np.where(active, ones, np.where(dead, zeros, lam))
    return Relaxation(lw, zeros.copy(), uw, ub)


def _sin_crit(a, s, k, l, u):
    """Points in [l, u] where d/dx a*sin(s*x) == k."""
    if a == 0 or s == 0:
        return []
    c = k / (a * s)
    if abs(c) > 1:
        return []
    base = math.acos(c)
    zl, zu = sorted((s * l, s * u))
    pts = []
    for z0 in (base, -base):
        n0 = math.ceil((zl - z0) / (2 * math.pi))
        z = z0 + 2 * math.pi * n0
        while z <= zu:
            pts.append(z / s)
            z += 2 * math.pi
    return pts


def _sech_crit(a, k, l, u):
    if a == 0:
        return []
    q = -k / a  # sech(x) tanh(x) == q
    if abs(q) > 0.5:
        return []
    if q == 0:
        return [0.0] if l <= 0 <= u else []
    disc = math.sqrt(max(0.0, 1 - 4 * q * q))
    pts = []
    for s2 in ((1 + disc) / 2, (1 - disc) / 2):
        if s2 <= 0:
            continue
        x = math.copysign(math.acosh(min(1 / math.sqrt(s2), 1e300)), q)
        if l <= x <= u:
            pts.append(x)
    return pts


def _relax_by_offset(f, crit, l, u, slope_at):
    """Parallel-line relaxation: chord slope, intercepts touching f.

    For each element the slope is the chord slope (derivative for
    degenerate intervals) and the intercepts are the exact min/max of
    f(x) - k x over the endpoints and every interior critical point.
    """
    n = l.shape[0]
    lw = np.empty(n)
    lb = np.empty(n)
    ub = np.empty(n)
    for i in range(n):
        li, ui = float(l[i]), float(u[i])
        if ui - li > 1e-12:
            k = (f(ui) - f(li)) / (ui - li)
        else:
            k = slope_at(0.5 * (li + ui))
        cand = [li, ui] + crit(k, li, ui)
        vals = [f(x) - k * x for x in cand]
        scale = max(abs(f(x)) + abs(k * x) for x in cand)
        slack = 8 * np.finfo(float).eps * scale + 1e-300
        lw[i] = k
        lb[i] = min(vals) - slack
        ub[i] = max(vals) + slack
    return Relaxation(lw, lb, lw.copy(), ub)


def _relax_sin(l, u, a, s):
    if abs(s) * float(np.max(u - l, initial=0.0)) >= 2 * math.pi:
        wide = np.abs(s) * (u - l) >= 2 * math.pi
    else:
        wide = np.zeros(l.shape, dtype=bool)
    r = _relax_by_offset(
        lambda x: a * math.sin(s * x),
        lambda k, li, ui: _sin_crit(a, s, k, li, ui),
        l, u,
        lambda x: a * s * math.cos(s * x),
    )
    if np.any(wide):
        amp = abs(a)
        lw = np.where(wide, 0.0, r.lw)
        return Relaxation(lw, np.where(wide, -amp, r.lb), lw.copy(), np.where(wide, amp, r.ub))
    return r


def _relax_sech(l, u, a):
    return _relax_by_offset(
        lambda x: a / math.cosh(x),
        lambda k, li, ui: _sech_crit(a, k, li, ui),
        l, u,
        lambda x: -a * math.tanh(x) / math.cosh(x),
    )


def relax_node(kind: str, lo, hi, lo2=None, hi2=None, same_operand: bool = False, **params):
    """Linear relaxation of one nonlinear op over its operand interval(s).

    ``kind`` is one of tanh, relu, sin, sech, product. Unary kinds return a
    ``Relaxation``; ``product`` returns ``McCormick`` planes (or, when both
    operands are the same node, a tangent/chord pair for the square).
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    if kind == "tanh":
        return _relax_tanh(lo, hi)
    if kind == "relu":
        return _relax_relu(lo, hi)
    if kind == "sin":
        return _relax_sin(lo, hi, params.get("a", 1.0), params.get("s", 1.0))
    if kind == "sech":
        return _relax_sech(lo, hi, params.get("a", 1.0))
    if kind == "product":
        if same_operand:
            m = 0.5 * (lo + hi)
            # x^2 >= 2 m x - m^2 (tangent), x^2 <= (l + u) x - l u (chord)
            return Relaxation(2 * m, -m * m, lo + hi, -lo * hi)
        xl, xu = lo, hi
        yl = np.atleast_1d(np.asarray(lo2, dtype=np.float64))
        yu = np.atleast_1d(np.asarray(hi2, dtype=np.float64))
        lower = ((yl, xl, -xl * yl), (yu, xu, -xu * yu))
        upper = ((yu, xl, -xl * yu), (yl, xu, -xu * yl))
        return McCormick(lower, upper)
    raise ValueError(f"no relaxation for {kind!r}")


# --- interval propagation ---------------------------------------------------


def _sin_range(lo, hi, a, s):
    zl = np.minimum(s * lo, s * hi)
    zu = np.maximum(s * lo, s * hi)
    smin = np.minimum(np.sin(zl), np.sin(zu))
    smax = np.maximum(np.sin(zl), np.sin(zu))
    # does [zl, zu] contain pi/2 + 2 pi k (max) or -pi/2 + 2 pi k (min)?
    has_max = np.floor((zu - math.pi / 2) / (2 * math.pi)) >= np.ceil((zl - math.pi / 2) / (2 * math.pi))
    has_min = np.floor((zu + math.pi / 2) / (2 * math.pi)) >= np.ceil((zl + math.pi / 2) / (2 * math.pi))
    smax = np.where(has_max, 1.0, smax)
    smin = np.where(has_min, -1.0, smin)
    if a >= 0:
        return a * smin, a * smax
    return a * smax, a * smin


def _sech_range(lo, hi, a):
    near = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
    far = np.maximum(np.abs(lo), np.abs(hi))
    top, bot = 1.0 / np.cosh(near), 1.0 / np.cosh(far)
    if a >= 0:
        return a * bot, a * top
    return a * top, a * bot


def _ibp_step(p, los, his, box: Box):
    op = p.op
    if op == "input":
        return box.lb.copy(), box.ub.copy()
    if op == "const":
        v = np.asarray(p.params["value"], dtype=np.float64)
        return v.copy(), v.copy()
    lo = los[p.args[0]]
    hi = his[p.args[0]]
    if op == "linear":
        W = p.params["W"]
        c = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        mid = W @ c + p.params["b"]
        rad = np.abs(W) @ r
        return mid - rad, mid + rad
    if op == "act":
        if p.params["kind"] == "tanh":
            return np.tanh(lo), np.tanh(hi)
        return np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    if op == "sin":
        return _sin_range(lo, hi, p.params["a"], p.params["s"])
    if op == "sech":
        return _sech_range(lo, hi, p.params["a"])
    if op == "sum":
        out_lo = np.zeros(p.width)
        out_hi = np.zeros(p.width)
        for w, i in zip(p.params["weights"], p.args):
            if w >= 0:
                out_lo = out_lo + w * los[i]
                out_hi = out_hi + w * his[i]
            else:
                out_lo = out_lo + w * his[i]
                out_hi = out_hi + w * los[i]
        return out_lo, out_hi
    if op == "product":
        lo2, hi2 = los[p.args[1]], his[p.args[1]]
        corners = np.stack([lo * lo2, lo * hi2, hi * lo2, hi * hi2])
        return corners.min(axis=0), corners.max(axis=0)
    raise ValueError(op)  # pragma: no cover


def _check_box(g: ComputeGraph, box: Box) -> Box:
    if not isinstance(box, Box):
        box = Box.from_list(box)
    if box.dim != g.input_dim:
        raise ValueError(f"box has dimension {box.dim}, graph expects {g.input_dim}")
    return box


def _outputs(prog: Program, los, his) -> Interval:
    return Interval(np.concatenate([los[o] for o in prog.outputs]),
                    np.concatenate([his[o] for o in prog.outputs]))


def ibp(g: ComputeGraph, box) -> Interval:
    """Interval bound propagation of every output over ``box``."""
    box = _check_box(g, box)
    prog = g.program
    los, his = [], []
    for p in prog.prims:
        lo, hi = _ibp_step(p, los, his, box)
        los.append(lo)
        his.append(hi)
    return _outputs(prog, los, his)


# --- CROWN ------------------------------------------------------------------


class _Crown:
    def __init__(self, prog: Program, box: Box):
        self.prog = prog
        self.box = box
        self.los: list = []
        self.his: list = []
        self.relax: dict = {}

    def relaxation(self, j: int):
        if j not in self.relax:
            p = self.prog.prims[j]
            a = p.args
            if p.op == "act":
                r = relax_node(p.params["kind"], self.los[a[0]], self.his[a[0]])
            elif p.op == "sin":
                r = relax_node("sin", self.los[a[0]], self.his[a[0]], a=p.params["a"], s=p.params["s"])
            elif p.op == "sech":
                r = relax_node("sech", self.los[a[0]], self.his[a[0]], a=p.params["a"])
            else:
                r = relax_node("product", self.los[a[0]], self.his[a[0]],
                               self.los[a[1]], self.his[a[1]], same_operand=a[0] == a[1])
            self.relax[j] = r
        return self.relax[j]

    def backward(self, k: int):
        """Affine bounds of prim k in terms of the graph input.

        Returns (A_l, c_l, A_u, c_u) with rows indexed by the elements of k.
        """
        prims = self.prog.prims
        m = prims[k].width
        Al = {k: np.eye(m)}
        Au = {k: np.eye(m)}
        cl = np.zeros(m)
        cu = np.zeros(m)

        def acc(store, i, v):
            if i in store:
                store[i] = store[i] + v
            else:
                store[i] = v

        for j in range(k, 0, -1):
            if j not in Au:
                continue
            A_u = Au.pop(j)
            A_l = Al.pop(j)
            p = prims[j]
            op = p.op
            if op == "const":
                v = p.params["value"]
                cu = cu + A_u @ v
                cl = cl + A_l @ v
            elif op == "linear":
                W, b = p.params["W"], p.params["b"]
                acc(Au, p.args[0], A_u @ W)
                acc(Al, p.args[0], A_l @ W)
                cu = cu + A_u @ b
                cl = cl + A_l @ b
            elif op == "sum":
                for w, i in zip(p.params["weights"], p.args):
                    acc(Au, i, w * A_u)
                    acc(Al, i, w * A_l)
            elif op in ("act", "sin", "sech") or (op == "product" and p.args[0] == p.args[1]):
                r = self.relaxation(j)
                upos, uneg = np.maximum(A_u, 0.0), np.minimum(A_u, 0.0)
                lpos, lneg = np.maximum(A_l, 0.0), np.minimum(A_l, 0.0)
                acc(Au, p.args[0], upos * r.uw + uneg * r.lw)
                acc(Al, p.args[0], lpos * r.lw + lneg * r.uw)
                cu = cu + upos @ r.ub + uneg @ r.lb
                cl = cl + lpos @ r.lb + lneg @ r.ub
            elif op == "product":
                mc = self.relaxation(j)
                # averaged McCormick planes; both planes of a pair are valid
                lo_x = 0.5 * (mc.lower[0][0] + mc.lower[1][0])
                lo_y = 0.5 * (mc.lower[0][1] + mc.lower[1][1])
                lo_c = 0.5 * (mc.lower[0][2] + mc.lower[1][2])
                up_x = 0.5 * (mc.upper[0][0] + mc.upper[1][0])
                up_y = 0.5 * (mc.upper[0][1] + mc.upper[1][1])
                up_c = 0.5 * (mc.upper[0][2] + mc.upper[1][2])
                upos, uneg = np.maximum(A_u, 0.0), np.minimum(A_u, 0.0)
                lpos, lneg = np.maximum(A_l, 0.0), np.minimum(A_l, 0.0)
                acc(Au, p.args[0], upos * up_x + uneg * lo_x)
                acc(Au, p.args[1], upos * up_y + uneg * lo_y)
                acc(Al, p.args[0], lpos * lo_x + lneg * up_x)
                acc(Al, p.args[1], lpos * lo_y + lneg * up_y)
                cu = cu + upos @ up_c + uneg @ lo_c
                cl = cl + lpos @ lo_c + lneg @ up_c
            else:  # pragma: no cover
                raise ValueError(op)
        d = self.prog.input_dim
        return (Al.get(0, np.zeros((m, d))), cl, Au.get(0, np.zeros((m, d))), cu)

    def concretize(self, A_l, c_l, A_u, c_u):
        c = self.box.center
        r = self.box.half_widths
        lo = A_l @ c - np.abs(A_l) @ r + c_l
        hi = A_u @ c + np.abs(A_u) @ r + c_u
        return lo, hi

    def run(self, need: set[int]):
        for k, p in enumerate(self.prog.prims):
            lo, hi = _ibp_step(p, self.los, self.his, self.box)
            if k in need and not self._ibp_exact(k):
                clo, chi = self.concretize(*self.backward(k))
                lo = np.maximum(lo, clo)
                hi = np.minimum(hi, chi)
            self.los.append(lo)
            self.his.append(hi)

    def _ibp_exact(self, k: int) -> bool:
        p = self.prog.prims[k]
        if p.op in ("input", "const"):
            return True
        return p.op == "linear" and self.prog.prims[p.args[0]].op == "input"


def _needs_bounds(prog: Program) -> set[int]:
    need = set()
    for p in prog.prims:
        if p.op in NONLINEAR:
            need.update(p.args)
    return need


def _crown_core(g: ComputeGraph, box: Box):
    prog = g.program
    cr = _Crown(prog, box)
    cr.run(_needs_bounds(prog))
    rows = [cr.backward(o) for o in prog.outputs]
    A_l = np.concatenate([r[0] for r in rows])
    c_l = np.concatenate([r[1] for r in rows])
    A_u = np.concatenate([r[2] for r in rows])
    c_u = np.concatenate([r[3] for r in rows])
    lo, hi = cr.concretize(A_l, c_l, A_u, c_u)
    ib = _outputs(prog, cr.los, cr.his)
    return np.maximum(lo, ib.lo), np.minimum(hi, ib.hi), LinearBounds(A_l, c_l, A_u, c_u), cr


def crown_bounds(g: ComputeGraph, box, debug_path=None, companion: bool = True) -> tuple[Interval, LinearBounds]:
    """CROWN bounds of every output over ``box``.

    Returns the concretised output interval and the affine bounds in the
    graph input that produced it. The interval may be tighter than the
    affine bounds: it is intersected with IBP and, for graphs holding
    finite-difference stencils, with the bounds of the Taylor-form
    companion graph.
    """
    box = _check_box(g, box)
    lo, hi, lin, cr = _crown_core(g, box)
    comp = g.companion if companion else None
    if comp is not None:
        lifted = comp.lifted_box(box, ibp(comp.pad_graph, box))
        clo, chi, _, _ = _crown_core(comp.graph, lifted)
        lo = np.maximum(lo, clo)
        hi = np.minimum(hi, chi)
    if debug_path is not None:
        dump = [{"prim": k, "op": p.op, "lo": cr.los[k].tolist(), "hi": cr.his[k].tolist()}
                for k, p in enumerate(g.program.prims)]
        Path(debug_path).write_text(json.dumps(dump, indent=1), encoding="utf-8")
    return Interval(lo, hi), lin


def abs_bound(g: ComputeGraph, box) -> tuple[float, np.ndarray]:
    """Upper bound on max_k max_x |g_k(x)| over the box, and per-output bounds."""
    iv, _ = crown_bounds(g, box)
    per = np.maximum(iv.hi, -iv.lo)
    return float(per.max()), per
