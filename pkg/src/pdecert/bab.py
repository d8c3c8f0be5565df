"""Input-splitting branch and bound for certified bounds on max |g|.

The heap is ordered by the CROWN bound ``beta`` of each box. Every round
pops up to ``batch`` boxes, splits each into P**d children, attacks and
bounds the children, raises the incumbent attack value ``gamma`` and keeps
only the children with ``beta > gamma + tol``. The run stops when the top
bound is within ``tol`` of gamma (converged), when the top box is no wider
than ``theta_bar`` (theta_bar), or when the wall-clock budget runs out
(timeout). In every case the reported ``certified_upper`` is a valid bound.

The set of boxes handled per round does not depend on the number of
workers, so reports are identical for any worker count.
"""

from __future__ import annotations

import csv
import heapq
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .attack import DEFAULT_ITERS, DEFAULT_STARTS, DEFAULT_STEP, attack_abs
from .crown import Box, crown_bounds
from .graph import ComputeGraph


@dataclass
class BabConfig:
    theta_bar: float = 1e-5
    P: int = 2
    tol: float = 1e-6
    timeout: float = 18000.0
    workers: int = 1
    batch: int = 8
    attack_starts: int = DEFAULT_STARTS
    attack_l: float = DEFAULT_STEP
    attack_iters: int = DEFAULT_ITERS
    child_starts: int = 9
    child_iters: int = 20
    keep_rejected: bool = False
    taylor: bool = True  # also bound difference quotients through their Taylor form

    def __post_init__(self):
        if self.theta_bar <= 0:
            raise ValueError("theta_bar must be positive")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.P < 2:
            raise ValueError("P must be at least 2")
        if self.workers < 1 or self.batch < 1:
            raise ValueError("workers and batch must be positive")


@dataclass
class BabNode:
    box: Box
    beta: float
    kappa: float
    creation_index: int
    beta_out: np.ndarray = field(repr=False, default=None)


@dataclass
class VerificationReport:
    certified_upper: float
    attack_lower: float
    witness: list
    termination: str  # converged | theta_bar | timeout
    nodes_expanded: int
    nodes_rejected: int
    rounds: int
    wall_time: float
    per_output: list
    config: dict = field(default_factory=dict)
    root_box: list = field(default_factory=list)
    trace: list = field(default_factory=list, repr=False)
    rejected_boxes: list = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return self.certified_upper - self.attack_lower

    def to_dict(self) -> dict:
        out = {
            "certified_upper": self.certified_upper,
            "attack_lower": self.attack_lower,
            "gap": self.gap,
            "witness": self.witness,
            "termination": self.termination,
            "nodes_expanded": self.nodes_expanded,
            "nodes_rejected": self.nodes_rejected,
            "rounds": self.rounds,
            "per_output": self.per_output,
            "root_box": self.root_box,
            "config": self.config,
            "wall_time": self.wall_time,
        }
        return out

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "top_beta", "gamma", "heap_size", "rejected_count"])
            w.writerows(self.trace)


def split(box: Box, P: int) -> list[Box]:
    """P-per-axis uniform grid of sub-boxes; degenerate axes are not split."""
    if P < 2:
        raise ValueError("P must be at least 2")
    axes = []
    for lo, hi in zip(box.lb, box.ub):
        if hi > lo:
            cuts = [lo + k * (hi - lo) / P for k in range(P)] + [hi]
            axes.append([(cuts[k], cuts[k + 1]) for k in range(P)])
        else:
            axes.append([(lo, hi)])
    out = []
    for combo in np.ndindex(*[len(a) for a in axes]):
        lb = [axes[i][j][0] for i, j in enumerate(combo)]
        ub = [axes[i][j][1] for i, j in enumerate(combo)]
        out.append(Box(lb, ub))
    return out


def _bound(g: ComputeGraph, box: Box, taylor: bool = True) -> np.ndarray:
    iv, _ = crown_bounds(g, box, companion=taylor)
    return np.maximum(iv.hi, -iv.lo)


def _evaluate(g: ComputeGraph, box: Box, cfg: BabConfig, root: bool = False):
    """Attack and bound one box -> (kappa, witness, kappa per output, beta per output)."""
    if root:
        n, iters, step = cfg.attack_starts, cfg.attack_iters, cfg.attack_l
    else:
        n, iters = cfg.child_starts, cfg.child_iters
        step = min(cfg.attack_l, box.radius / 4) if box.radius > 0 else cfg.attack_l
    att = attack_abs(g, box, n=n, l=step, iters=iters)
    return att.value, att.witness, np.asarray(att.per_output), _bound(g, box, cfg.taylor)


_WORKER: dict = {}


def _worker_init(g, cfg):
    _WORKER["g"] = g
    _WORKER["cfg"] = cfg


def _worker_eval(bounds):
    lb, ub = bounds
    return _evaluate(_WORKER["g"], Box(lb, ub), _WORKER["cfg"])


def verify(g: ComputeGraph, root, config: BabConfig | None = None, progress=None, **overrides) -> VerificationReport:
    """Certified upper bound on max over ``root`` of max_k |g_k(x)|.

    ``overrides`` update fields of ``config`` (e.g. ``theta_bar=1e-3``).
    ``progress``, if given, is called with each trace row.
    """
    cfg = BabConfig(**{**asdict(config or BabConfig()), **overrides})
    root = root if isinstance(root, Box) else Box.from_list(root)
    if root.dim != g.input_dim:
        raise ValueError("root box dimension does not match the graph")
    t0 = time.perf_counter()
    m = g.output_dim

    kappa, witness, kappa_out, beta_out = _evaluate(g, root, cfg, root=True)
    gamma, best_witness = kappa, witness
    gamma_out = kappa_out.copy()
    counter = 0
    heap: list = []
    root_node = BabNode(root, float(beta_out.max()), kappa, counter, beta_out)
    heapq.heappush(heap, (-root_node.beta, root_node.creation_index, root_node))
    rejected_max = -np.inf
    rejected_out = np.full(m, -np.inf)
    rejected_boxes: list = []
    expanded = rejected = rounds = 0
    trace = []
    termination = None

    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.workers, initializer=_worker_init, initargs=(g, cfg))
    try:
        while True:
            top = heap[0][2] if heap else None
            top_beta = top.beta if top is not None else -np.inf
            row = [rounds, max(top_beta, rejected_max, gamma), gamma, len(heap), rejected]
            trace.append(row)
            if progress is not None:
                progress(row)
            if top is None or top_beta <= gamma + cfg.tol:
                termination = "converged"
                break
            if top.box.radius <= cfg.theta_bar:
                termination = "theta_bar"
                break
            if time.perf_counter() - t0 > cfg.timeout:
                termination = "timeout"
                break

            parents = [heapq.heappop(heap)[2] for _ in range(min(cfg.batch, len(heap)))]
            expanded += len(parents)
            rounds += 1
            children = [(p, c) for p in parents for c in split(p.box, cfg.P)]
            if pool is None:
                results = [_evaluate(g, c, cfg) for _, c in children]
            else:
                chunk = max(1, len(children) // (4 * cfg.workers))
                results = list(pool.map(_worker_eval, [(c.lb, c.ub) for _, c in children], chunksize=chunk))

            for (parent, box), (k_val, k_wit, k_out, b_out) in zip(children, results):
                if k_val > gamma:
                    gamma, best_witness = k_val, k_wit
                gamma_out = np.maximum(gamma_out, k_out)
            for (parent, box), (k_val, k_wit, k_out, b_out) in zip(children, results):
                # a parent's bound also covers the child
                b_out = np.minimum(b_out, parent.beta_out)
                beta = float(b_out.max())
                counter += 1
                if beta > gamma + cfg.tol:
                    node = BabNode(box, beta, k_val, counter, b_out)
                    heapq.heappush(heap, (-beta, counter, node))
                else:
                    rejected += 1
                    rejected_max = max(rejected_max, beta)
                    rejected_out = np.maximum(rejected_out, b_out)
                    if cfg.keep_rejected:
                        rejected_boxes.append(box)
    finally:
        if pool is not None:
            pool.shutdown()

    remaining_out = np.full(m, -np.inf)
    for _, _, node in heap:
        remaining_out = np.maximum(remaining_out, node.beta_out)
    top_beta = heap[0][2].beta if heap else -np.inf
    certified = float(max(top_beta, rejected_max, gamma))
    cert_out = np.maximum(np.maximum(remaining_out, rejected_out), gamma_out)
    per_output = [
        {"name": name, "certified_upper": float(c), "attack_lower": float(a)}
        for name, c, a in zip(g.output_names, cert_out, gamma_out)
    ]
    cfg_dict = asdict(cfg)
    cfg_dict.pop("workers")  # results do not depend on it
    return VerificationReport(
        certified_upper=certified,
        attack_lower=float(gamma),
        witness=[float(v) for v in best_witness],
        termination=termination,
        nodes_expanded=expanded,
        nodes_rejected=rejected,
        rounds=rounds,
        wall_time=time.perf_counter() - t0,
        per_output=per_output,
        config=cfg_dict,
        root_box=root.to_list(),
        trace=trace,
        rejected_boxes=rejected_boxes,
    )


def default_workers() -> int:
    env = os.environ.get("PDECERT_WORKERS")
    return max(1, int(env)) if env else 1
