"""Multi-start signed-gradient (FGSM) maximisation of |g| over a box."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crown import Box
from .graph import ComputeGraph, eval_graph, grad_output

DEFAULT_STEP = 1e-3
DEFAULT_ITERS = 500
DEFAULT_STARTS = 100
PATIENCE = 50
MIN_IMPROVEMENT = 1e-12


@dataclass
class AttackResult:
    value: float  # |g_output(witness)|, re-evaluated
    witness: np.ndarray
    sign: int
    iterations_used: int
    output: int = 0
    per_output: list = field(default_factory=list)  # best |g_k| per output

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "witness": self.witness.tolist(),
            "sign": self.sign,
            "iterations_used": self.iterations_used,
            "output": self.output,
            "per_output": list(self.per_output),
        }


def _int_root_ceil(n: int, d: int) -> int:
    k = max(1, int(round(n ** (1.0 / d))))
    while k ** d < n:
        k += 1
    while k > 1 and (k - 1) ** d >= n:
        k -= 1
    return k


def default_starts(box: Box, n: int) -> np.ndarray:
    """Grid of exactly ``n`` starting points spread over the box.

    A k-per-axis grid (k the smallest integer with k**d >= n, endpoints
    included) is thinned to n points at evenly spaced grid indices.
    """
    if n < 1:
        raise ValueError("need at least one starting point")
    d = box.dim
    k = _int_root_ceil(n, d)
    if k == 1:
        return np.repeat(box.center[None, :], n, axis=0)
    axes = [np.linspace(lo, hi, k) for lo, hi in zip(box.lb, box.ub)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    if grid.shape[0] == n:
        return grid
    idx = np.round(np.linspace(0, grid.shape[0] - 1, n)).astype(int)
    return grid[idx]


def fgsm_maximize(g: ComputeGraph, box: Box, sign: int, starts, l: float = DEFAULT_STEP,
                  iters: int = DEFAULT_ITERS, output: int = 0) -> AttackResult:
    """Signed-gradient ascent on ``sign * g_output`` from every start, clipped to the box.

    The best iterate over the whole run is kept (not the last one); the run
    stops early once the best objective has improved by less than 1e-12 for
    50 consecutive steps.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if l <= 0:
        raise ValueError("step l must be positive")
    X = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty start list")
    X = box.clip(X)
    best_obj = np.full(X.shape[0], -np.inf)
    best_X = X.copy()
    overall = -np.inf
    stale = 0
    used = 0
    for it in range(iters + 1):
        if it < iters:
            v, G = grad_output(g, X, output)
        else:
            v = eval_graph(g, X)[:, output]
        obj = sign * v
        better = obj > best_obj
        best_obj = np.where(better, obj, best_obj)
        best_X[better] = X[better]
        top = best_obj.max()
        if top > overall + MIN_IMPROVEMENT:
            stale = 0
        else:
            stale += 1
        overall = max(overall, top)
        if it == iters or stale >= PATIENCE:
            break
        X = box.clip(X + sign * l * np.sign(G))
        used += 1
    i = int(np.argmax(best_obj))  # first index wins ties
    witness = best_X[i].copy()
    value = float(abs(eval_graph(g, witness)[output]))
    return AttackResult(value, witness, sign, used, output)


def attack_abs(g: ComputeGraph, box: Box, n: int = DEFAULT_STARTS, l: float = DEFAULT_STEP,
               iters: int = DEFAULT_ITERS, starts=None) -> AttackResult:
    """Best |g| found by FGSM runs of both signs on every output.

    With several outputs, each output is attacked separately with an equal
    share of the start budget; the overall maximum is returned together with
    the per-output maxima.
    """
    if not isinstance(box, Box):
        box = Box.from_list(box)
    m = g.output_dim
    if starts is None:
        starts = default_starts(box, max(1, n // m))
    best = None
    per_output = []
    for k in range(m):
        best_k = None
        for sign in (1, -1):
            res = fgsm_maximize(g, box, sign, starts, l, iters, output=k)
            if best_k is None or res.value > best_k.value:
                best_k = res
        per_output.append(best_k.value)
        if best is None or best_k.value > best.value:
            best = best_k
    best.per_output = per_output
    return best
