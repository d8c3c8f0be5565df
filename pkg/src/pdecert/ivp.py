"""Certified error envelope for a network approximating an ODE solution.

With a Lipschitz constant C of the right-hand side, an initial mismatch
bound delta and a residual bound zeta(t), the approximation error obeys

    |u(t) - u_theta(t)| <= e^{Ct} delta + int_0^t e^{C(t-s)} zeta(s) ds.

The integral is evaluated with the trapezoidal rule. A classic RK4
integrator provides reference trajectories for checking the envelope on
the SMIB swing equation.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .bab import BabConfig, verify
from .crown import Box
from .network import Network, evaluate
from .properties import DOMAINS, SMIBParams, build_initial_property, build_residual

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class LipschitzSpec:
    C: float
    provenance: str = "analytic"  # analytic | config

    def __post_init__(self):
        if not self.C >= 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        if self.provenance not in ("analytic", "config"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


def spectral_norm_2x2(M) -> float:
    """Largest singular value of a 2x2 matrix in closed form."""
    M = np.asarray(M, dtype=np.float64)
    fro2 = float(np.sum(M * M))
    det = float(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
    disc = max(fro2 * fro2 - 4.0 * det * det, 0.0)
    return math.sqrt((fro2 + math.sqrt(disc)) / 2.0)


def smib_lipschitz(params: SMIBParams, delta_range=None) -> LipschitzSpec:
    """2-norm Lipschitz constant of the swing-equation right-hand side.

    The Jacobian is [[0, 1], [-(coupling/m) cos(delta), -d/m]]. Its norm is
    convex in the cos term, so the bound is attained at the largest |cos|:
    1 by default, or the max over ``delta_range`` when one is given.
    """
    if params.m <= 0:
        raise ValueError("inertia m must be positive")
    cmax = 1.0
    if delta_range is not None:
        lo, hi = map(float, delta_range)
        if hi - lo < 2 * math.pi:
            pts = [lo, hi] + [k * math.pi for k in range(math.ceil(lo / math.pi), math.floor(hi / math.pi) + 1)]
            cmax = max(abs(math.cos(p)) for p in pts)
    K = params.coupling / params.m
    J = [[0.0, 1.0], [-K * cmax, -params.d / params.m]]
    return LipschitzSpec(spectral_norm_2x2(J), "analytic")


@dataclass
class ZetaSchedule:
    """Piecewise-constant, right-continuous residual bound on [breaks[0], breaks[-1]].

    ``values`` are slice bounds in the max-norm over residual components;
    ``scale`` converts them to the norm used by the envelope.
    """

    breaks: np.ndarray
    values: np.ndarray
    scale: float = 1.0
    reports: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.breaks.ndim != 1 or self.breaks.size != self.values.size + 1:
            raise ValueError("need one more breakpoint than values")
        if np.any(np.diff(self.breaks) <= 0):
            raise ValueError("breakpoints must increase")
        if np.any(self.values < 0):
            raise ValueError("residual bounds must be nonnegative")

    def __call__(self, t, side: str = "right") -> np.ndarray:
        """Scaled bound at t. ``side='max'`` takes the larger slice at breakpoints."""
        t = np.asarray(t, dtype=np.float64)
        v = self.values * self.scale
        k = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, v.size - 1)
        out = v[k]
        if side == "max":
            kl = np.clip(np.searchsorted(self.breaks, t, side="left") - 1, 0, v.size - 1)
            out = np.maximum(out, v[kl])
        return out


@dataclass
class ErrorCurve:
    times: np.ndarray
    bound: np.ndarray
    empirical: np.ndarray | None = None  # (n_curves, n_times)
    labels: list = field(default_factory=list)

    def dominated(self, slack: float = 1e-9) -> bool:
        if self.empirical is None:
            return True
        return bool(np.all(self.empirical <= self.bound + slack))

    def write_csv(self, path) -> None:
        emp = np.atleast_2d(self.empirical) if self.empirical is not None else np.empty((0, self.times.size))
        labels = self.labels or [f"empirical_{k}" for k in range(emp.shape[0])]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "bound", *labels])
            for j, t in enumerate(self.times):
                w.writerow([repr(float(t)), repr(float(self.bound[j])), *(repr(float(e)) for e in emp[:, j])])


def error_envelope(delta: float, zeta, C: float, t_grid, quad_points: int | None = None) -> ErrorCurve:
    """e(t) = e^{Ct} delta + trapezoid of e^{C(t-s)} zeta(s) over [0, t].

    ``zeta`` is a nonnegative constant, a ZetaSchedule or a vectorised
    callable. The quadrature runs on ``t_grid``, refined by ``quad_points``
    equispaced points when given. Interior schedule breakpoints enter the
    grid twice, carrying the left and the right slice value, so every
    trapezoid sees a constant bound times a convex exponential and can only
    overestimate the integral.
    """
    if delta < 0 or C < 0:
        raise ValueError("delta and C must be nonnegative")
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be an increasing grid of at least 2 points")
    s = t if quad_points is None else np.union1d(t, np.linspace(t[0], t[-1], quad_points))
    if isinstance(zeta, ZetaSchedule):
        inner = zeta.breaks[1:-1]
        inner = inner[(inner > t[0]) & (inner < t[-1])]
        s = np.union1d(s, inner)
        pos = np.searchsorted(s, inner)
        s = np.insert(s, pos, inner)
        z = zeta(s)
        z[pos + np.arange(inner.size)] = zeta.scale * zeta.values[np.searchsorted(zeta.breaks, inner) - 1]
    elif callable(zeta):
        z = np.broadcast_to(np.asarray(zeta(s), dtype=np.float64), s.shape)
    else:
        z = np.full(s.shape, float(zeta))
    if np.any(z < 0):
        raise ValueError("zeta must be nonnegative")
    # e^{Ct} * int e^{-Cs} zeta(s) ds keeps the exponentials bounded by e^{C t_max}
    t0 = s[0]
    integral = cumulative_trapezoid(np.exp(-C * (s - t0)) * z, s, initial=0.0)
    growth = np.exp(C * (s - t0))
    bound = growth * delta + growth * integral
    first = np.r_[True, np.diff(s) > 0]
    keep = first & np.isin(s, t)
    return ErrorCurve(t.copy(), bound[keep])


def _slice_verify(args):
    g, box, cfg = args
    return verify(g, box, cfg)


def zeta_schedule(net: Network, params: SMIBParams, n_slices: int, config: BabConfig | None = None,
                  delta0_range=None, t_range=None, workers: int = 1, h1: float = 1e-6) -> ZetaSchedule:
    """Residual bounds of the SMIB network on ``n_slices`` equal time slices.

    Each slice is a separate branch-and-bound run; slices run in parallel
    when ``workers > 1``. The schedule is scaled by sqrt(2) so that it bounds
    the 2-norm of the two-component residual.
    """
    if n_slices < 1:
        raise ValueError("need at least one slice")
    cfg = config or BabConfig()
    d_lo, d_hi = delta0_range or DOMAINS["smib"][0]
    t_lo, t_hi = t_range or DOMAINS["smib"][1]
    g = build_residual(net, "smib", h1, 1e-3, params)
    breaks = np.linspace(t_lo, t_hi, n_slices + 1)
    jobs = [(g, Box([d_lo, breaks[k]], [d_hi, breaks[k + 1]]), cfg) for k in range(n_slices)]
    if workers > 1 and n_slices > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_slices)) as pool:
            reports = list(pool.map(_slice_verify, jobs))
    else:
        reports = [_slice_verify(j) for j in jobs]
    values = [r.certified_upper for r in reports]
    return ZetaSchedule(breaks, values, SQRT2, reports)


def initial_mismatch(net: Network, params: SMIBParams, config: BabConfig | None = None, delta0_range=None):
    """2-norm bound on the initial-state mismatch over the delta0 range, with its report."""
    g = build_initial_property(net, "smib", params)
    box = [list(delta0_range or DOMAINS["smib"][0])]
    rep = verify(g, box, config or BabConfig())
    return SQRT2 * rep.certified_upper, rep


def rk4(f, y0, t_grid, max_step: float = 1e-4) -> np.ndarray:
    """Classic fixed-step RK4; states at every grid time (shape (n_t, *y0.shape)).

    Each grid interval is split into equal steps no longer than ``max_step``.
    """
    t = np.asarray(t_grid, dtype=np.float64)
    y = np.array(y0, dtype=np.float64)
    out = np.empty((t.size,) + y.shape)
    out[0] = y
    for j in range(1, t.size):
        n = max(1, math.ceil((t[j] - t[j - 1]) / max_step - 1e-9))
        dt = (t[j] - t[j - 1]) / n
        for _ in range(n):
            k1 = f(y)
            k2 = f(y + 0.5 * dt * k1)
            k3 = f(y + 0.5 * dt * k2)
            k4 = f(y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j] = y
    return out


def empirical_error(model, params: SMIBParams, delta0s, t_grid, max_step: float = 1e-4) -> np.ndarray:
    """2-norm distance between RK4 reference trajectories and the model.

    ``model`` is a Network or any callable mapping (n, 2) inputs
    (delta0, t) to (n, 2) states. Returns shape (len(delta0s), len(t_grid)).
    """
    d0 = np.atleast_1d(np.asarray(delta0s, dtype=np.float64))
    t = np.asarray(t_grid, dtype=np.float64)
    y0 = np.stack([d0, np.full_like(d0, params.domega0)], axis=-1)
    ref = rk4(params.rhs, y0, t, max_step)  # (n_t, n_d, 2)
    X = np.stack(np.broadcast_arrays(d0[:, None], t[None, :]), axis=-1).reshape(-1, 2)
    approx = evaluate(model, X) if isinstance(model, Network) else np.asarray(model(X), dtype=np.float64)
    approx = approx.reshape(d0.size, t.size, 2)
    return np.linalg.norm(ref.transpose(1, 0, 2) - approx, axis=-1)
