"""Acceptance criteria, one test per criterion (or sub-part).

Each test records a PASS/FAIL line that pytest prints in an
"acceptance criteria" summary section. Tolerances are the contract values.
"""

import json
import math
import re
import time

import numpy as np
import pytest

from conftest import record
from corpus import sample_with_corners, soundness_corpus
from pdecert.bab import BabConfig, verify
from pdecert.cli import main
from pdecert.crown import crown_bounds
from pdecert.fdquality import fd_sweep
from pdecert.graph import eval_graph, network_graph
from pdecert.ivp import empirical_error, error_envelope, initial_mismatch, smib_lipschitz, zeta_schedule
from pdecert.network import generate_fixture, store_network, viscous_shock_network
from pdecert.properties import DOMAINS, SMIBParams, build_residual

SMIB_FIXTURE = (42, [2, 16, 16, 2], "tanh")
FD_FIXTURE = (42, [2, 16, 16, 1])


def test_1_soundness_corpus():
    t0 = time.perf_counter()
    cases = soundness_corpus(cases_per_kind=17, seed=2024)
    rng = np.random.default_rng(0)
    violations, worst = 0, -np.inf
    for name, g, box in cases:
        iv, _ = crown_bounds(g, box)
        v = eval_graph(g, sample_with_corners(box, 10_000, rng))
        excess = max((v - iv.hi).max(), (iv.lo - v).max())
        worst = max(worst, excess)
        violations += int(excess > 1e-9)
    elapsed = time.perf_counter() - t0
    ok = len(cases) >= 200 and violations == 0 and elapsed < 300
    record("1", ok, f"{len(cases)} cases x 1e4 samples, {violations} violations, "
                    f"worst excess {worst:.2e}, {elapsed:.0f} s")
    assert ok


def test_2_exact_bab_oracle():
    grid = np.linspace(-1, 1, 1_000_000)[:, None]
    errs, times, ok = [], [], True
    for seed in range(10):
        g = network_graph(generate_fixture(seed, [1, 16, 16, 1], "tanh"))
        rep = verify(g, [[-1, 1]], theta_bar=1e-5, tol=1e-6)
        brute = float(np.abs(eval_graph(g, grid)).max())
        errs.append(abs(rep.certified_upper - brute))
        times.append(rep.wall_time)
        ok &= errs[-1] <= 1e-4 and rep.wall_time < 60 and rep.certified_upper >= brute - 1e-12
    record("2", ok, f"10 nets, max |certified - grid max| = {max(errs):.2e}, slowest run {max(times):.1f} s")
    assert ok


def _fd_rows(activation, hs, kink_margin=None):
    seed, arch = FD_FIXTURE
    net = generate_fixture(seed, arch, activation)
    return {r["h"]: r["mse"] for r in fd_sweep(net, 0, hs, n=10_000, seed=0, kink_margin=kink_margin)}


def test_3_fd_quality_small_steps():
    t0 = time.perf_counter()
    tanh = _fd_rows("tanh", (1e-4, 1e-6, 1e-7, 1e-12))
    relu = _fd_rows("relu", (1e-2, 1e-4, 1e-6, 1e-7, 1e-12), kink_margin=1e-3)
    flat = all(tanh[h] < 1e-8 for h in (1e-4, 1e-6, 1e-7))
    relu_ok = all(relu[h] < 1e-8 for h in (1e-2, 1e-4, 1e-6, 1e-7)) and relu[1e-12] > relu[1e-6]
    ok = flat and tanh[1e-12] > tanh[1e-6] and relu_ok and time.perf_counter() - t0 < 120
    record("3a", ok, "tanh MSE at h=1e-4/1e-6/1e-7: " + ", ".join(f"{tanh[h]:.1e}" for h in (1e-4, 1e-6, 1e-7))
           + f"; MSE(1e-12)={tanh[1e-12]:.1e} > MSE(1e-6); relu away from kinks all < 1e-8")
    assert ok


@pytest.mark.xfail(strict=True, reason="h=1e-2 truncation error (h/2)^2 E[f''^2] exceeds 1e-8 on the fixture")
def test_3_fd_quality_large_step():
    mse = _fd_rows("tanh", (1e-2,))[1e-2]
    ok = mse < 1e-8
    record("3b", ok, f"tanh MSE at h=1e-2 is {mse:.2e} (threshold 1e-8)")
    assert ok


@pytest.fixture(scope="module")
def smib_graph():
    seed, arch, act = SMIB_FIXTURE
    return build_residual(generate_fixture(seed, arch, act), "smib", params=SMIBParams())


def test_4_algorithm_mechanics(smib_graph):
    g = smib_graph
    root = DOMAINS["smib"]
    rep = verify(g, root, theta_bar=1e-3, keep_rejected=True, timeout=600)
    rng = np.random.default_rng(0)
    worst = max(np.abs(eval_graph(g, b.sample(1000, rng))).max() for b in rep.rejected_boxes)
    audit = bool(rep.rejected_boxes) and worst <= rep.certified_upper + 1e-9
    half = max(0.5 * (hi - lo) for lo, hi in root)
    tb = verify(g, root, theta_bar=half)
    tops = [row[1] for row in rep.trace]
    mono = all(b <= a + 1e-9 for a, b in zip(tops, tops[1:]))
    ok = audit and tb.nodes_expanded <= 1 and mono
    record("4", ok, f"(a) {len(rep.rejected_boxes)} rejected boxes, max sampled |g| {worst:.3e} <= "
                    f"{rep.certified_upper:.3e}; (b) theta_bar={half} expanded {tb.nodes_expanded}; "
                    f"(c) top bound nonincreasing over {len(tops)} rounds: {mono}")
    assert ok


def test_5_ivp_envelope():
    t0 = time.perf_counter()
    e2 = error_envelope(1.0, 0.0, 1.0, np.linspace(0, 2, 2001)).bound[-1]
    e1 = error_envelope(0.0, 1.0, 1.0, np.linspace(0, 1, 10_000)).bound[-1]
    closed = e2 == math.exp(2.0) and abs(e1 - (math.e - 1)) < 1e-8

    p = SMIBParams()
    seed, arch, act = SMIB_FIXTURE
    net = generate_fixture(seed, arch, act)
    cfg = BabConfig(theta_bar=1e-2, timeout=120)
    d0s = np.linspace(*DOMAINS["smib"][0], 5)
    delta, _ = initial_mismatch(net, p, cfg, DOMAINS["smib"][0])
    zeta = zeta_schedule(net, p, 4, cfg)
    t = np.linspace(0.0, DOMAINS["smib"][1][1], 2000)
    curve = error_envelope(delta, zeta, smib_lipschitz(p).C, t, quad_points=10_000)
    curve.empirical = empirical_error(net, p, d0s, t, max_step=1e-4)
    margin = float((curve.bound - curve.empirical).min())
    elapsed = time.perf_counter() - t0
    ok = closed and curve.dominated(1e-9) and elapsed < 600
    record("5", ok, f"e(2)={float(e2)!r}, |e(1)-(e-1)|={abs(e1 - (math.e - 1)):.1e}; min(envelope - empirical) "
                    f"over 5x2000 = {margin:.3e}; {elapsed:.0f} s")
    assert ok


def test_6_cli_determinism(tmp_path):
    seed, arch, act = SMIB_FIXTURE
    store_network(generate_fixture(seed, arch, act), tmp_path / "smib.json")
    texts = []
    for k, workers in enumerate((1, 1, 8, 8)):
        out = tmp_path / f"r{k}.json"
        rc = main(["verify", "--network", str(tmp_path / "smib.json"), "--benchmark", "smib",
                   "--theta-bar", "1e-3", "--workers", str(workers), "--output", str(out)])
        assert rc == 0
        texts.append(re.sub(r'"wall_time": [^,\n]*', '"wall_time": null', out.read_text(encoding="utf-8")))
    ok = all(t == texts[0] for t in texts)
    record("6", ok, f"4 verify runs (workers 1,1,8,8): reports byte-identical apart from wall_time: {ok}")
    assert ok


@pytest.mark.slow
def test_7_trend(smib_graph):
    smib = verify(smib_graph, DOMAINS["smib"], timeout=600)
    burgers_g = build_residual(viscous_shock_network(), "burgers")
    burgers = verify(burgers_g, DOMAINS["burgers"], timeout=600)
    ok = (smib.termination == "converged" and burgers.termination == "timeout"
          and np.isfinite(burgers.certified_upper))
    record("7", ok, f"SMIB {smib.termination} in {smib.wall_time:.1f} s (bound {smib.certified_upper:.3e}); "
                    f"Burgers {burgers.termination} after {burgers.wall_time:.0f} s with bound "
                    f"{burgers.certified_upper:.3e} vs attack {burgers.attack_lower:.3e}")
    assert ok
