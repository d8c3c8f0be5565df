"""Batch command-line front end.

Every subcommand reads an optional JSON config (``--config``) whose keys are
the fields of that subcommand's config class; command-line flags override
the file one-to-one. Reports are UTF-8 JSON with sorted keys and embed the
resolved config, minus run plumbing (output paths and the worker count),
so that reruns are byte-identical apart from ``wall_time``.

Exit codes: 0 success, 1 a reported check failed, 2 usage/config error,
3 a verification hit its timeout (its bound is still valid).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attack import attack_abs
from .bab import BabConfig, verify
from .crown import Box
from .fdquality import DEFAULT_HS, fd_sweep
from .ivp import empirical_error, error_envelope, initial_mismatch, smib_lipschitz, zeta_schedule
from .network import (WeightFileError, generate_fixture, load_network, network_hash, store_network,
                      viscous_shock_network)
from .properties import BENCHMARKS, PROPERTIES, SMIBParams, build_custom_property, build_property, default_box

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_TIMEOUT = 0, 1, 2, 3
PLUMBING = ("output", "trace", "csv", "workers")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Settings for ``verify`` and ``attack``; defaults follow the benchmark study."""

    network: str = ""
    benchmark: str = "burgers"
    property: str = "residual"
    box: list | None = None
    h1: float = 1e-6
    h2: float = 1e-3
    theta_bar: float = 1e-5
    P: int = 2
    tol: float = 1e-6
    timeout: float = 18000.0
    workers: int | None = None
    batch: int = 8
    attack_starts: int = 100
    attack_l: float = 1e-3
    attack_iters: int = 500
    taylor: bool = True
    seed: int = 0
    smib_params: dict = field(default_factory=dict)
    custom: dict | None = None
    output: str | None = None
    trace: str | None = None

    def validate(self):
        _need_file(self.network)
        if self.benchmark not in BENCHMARKS + ("custom",):
            raise ConfigError(f"benchmark must be one of {BENCHMARKS + ('custom',)}")
        if self.benchmark == "custom" and not self.custom:
            raise ConfigError("benchmark 'custom' needs a 'custom' section")
        if self.property not in PROPERTIES:
            raise ConfigError(f"property must be one of {PROPERTIES}")
        for name in ("h1", "h2"):
            v = getattr(self, name)
            if not 0 < v <= 1e-1:
                raise ConfigError(f"{name} must lie in (0, 0.1], got {v}")
        if self.P < 2:
            raise ConfigError("P must be at least 2")
        if self.theta_bar <= 0 or self.tol < 0 or self.timeout <= 0:
            raise ConfigError("theta_bar and timeout must be positive, tol nonnegative")
        if self.attack_starts < 1 or self.attack_iters < 0 or self.attack_l <= 0:
            raise ConfigError("attack settings out of range")


@dataclass
class FdSweepConfig:
    network: str = ""
    index: int = 0
    order: int = 1
    hs: list = field(default_factory=lambda: list(DEFAULT_HS))
    n: int = 10_000
    seed: int = 0
    domain: list | None = None
    kink_margin: float | None = None
    output: str | None = None

    def validate(self):
        _need_file(self.network)
        if self.order not in (1, 2):
            raise ConfigError("order must be 1 or 2")
        if self.n < 1 or not self.hs or any(h == 0 for h in self.hs):
            raise ConfigError("need n >= 1 and nonzero steps")


@dataclass
class ErrorCurveConfig:
    network: str = ""
    smib_params: dict = field(default_factory=dict)
    n_slices: int = 4
    delta0s: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    t_end: float = 2.0
    t_points: int = 2000
    quad_points: int = 10_000
    rk4_step: float = 1e-4
    h1: float = 1e-6
    theta_bar: float = 1e-2
    P: int = 2
    tol: float = 1e-6
    timeout: float = 120.0
    batch: int = 8
    taylor: bool = True
    workers: int | None = None
    output: str | None = None
    csv: str | None = None

    def validate(self):
        _need_file(self.network)
        if self.n_slices < 1 or self.t_points < 2 or self.t_end <= 0:
            raise ConfigError("need n_slices >= 1, t_points >= 2 and t_end > 0")
        if not 0 < self.h1 <= 1e-1 or self.P < 2 or self.theta_bar <= 0:
            raise ConfigError("h1, P or theta_bar out of range")


@dataclass
class GenFixtureConfig:
    output: str = ""
    seed: int = 0
    arch: list = field(default_factory=lambda: [2, 16, 16, 1])
    activation: str = "tanh"
    kind: str = "random"  # random | viscous-shock

    def validate(self):
        if not self.output:
            raise ConfigError("gen-fixture needs --output")
        if self.kind not in ("random", "viscous-shock"):
            raise ConfigError("kind must be 'random' or 'viscous-shock'")
        if self.activation not in ("tanh", "relu", "identity"):
            raise ConfigError("activation must be tanh, relu or identity")


def _need_file(path: str):
    if not path:
        raise ConfigError("no network file given")
    if not Path(path).is_file():
        raise ConfigError(f"network file not found: {path}")


def _workers(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("PDECERT_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"PDECERT_WORKERS must be an integer, got {env!r}") from None
    return 1


# --- argument plumbing ------------------------------------------------------


def _add_flags(p: argparse.ArgumentParser, cls):
    p.add_argument("--config", help="JSON config file; flags override its fields")
    for f in fields(cls):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.type in ("int", "int | None"):
            p.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type in ("float", "float | None"):
            p.add_argument(flag, dest=f.name, type=float, default=None)
        elif f.type in ("str", "str | None"):
            p.add_argument(flag, dest=f.name, default=None)
        else:
            p.add_argument(flag, dest=f.name, type=json.loads, default=None, metavar="JSON")


def _resolve(cls, args):
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        base = Path(args.config).parent
        if data.get("network") and not Path(data["network"]).is_absolute():
            data["network"] = str(base / data["network"])
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            data[name] = v
    try:
        cfg = cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _provenance(cfg) -> dict:
    d = asdict(cfg)
    for k in PLUMBING:
        d.pop(k, None)
    if d.get("network"):
        d["network"] = Path(d["network"]).name
    return d


def _emit(obj: dict, path: str | None):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _smib(d: dict) -> SMIBParams:
    try:
        return SMIBParams(**d)
    except TypeError as exc:
        raise ConfigError(f"bad smib_params: {exc}") from None


def _graph_and_box(cfg: RunConfig):
    try:
        net = load_network(cfg.network)
    except (WeightFileError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.benchmark == "custom":
        g = build_custom_property(net, cfg.custom, cfg.property, cfg.h1, cfg.h2)
        box = cfg.box or g.meta.get("box")
        if box is None:
            raise ConfigError("custom benchmarks need a box")
    else:
        params = _smib(cfg.smib_params) if cfg.benchmark == "smib" else None
        g = build_property(net, cfg.benchmark, cfg.property, cfg.h1, cfg.h2, params)
        box = cfg.box or default_box(cfg.benchmark, cfg.property)
    try:
        box = Box.from_list(box)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad box: {exc}") from None
    if box.dim != g.input_dim:
        raise ConfigError(f"box has {box.dim} dimensions, the {cfg.property} graph takes {g.input_dim}")
    return net, g, box


# --- subcommands ------------------------------------------------------------


def cmd_verify(cfg: RunConfig) -> int:
    net, g, box = _graph_and_box(cfg)
    bab = BabConfig(theta_bar=cfg.theta_bar, P=cfg.P, tol=cfg.tol, timeout=cfg.timeout,
                    workers=_workers(cfg.workers), batch=cfg.batch, attack_starts=cfg.attack_starts,
                    attack_l=cfg.attack_l, attack_iters=cfg.attack_iters, taylor=cfg.taylor)
    rep = verify(g, box, bab)
    if cfg.trace:
        rep.write_trace(cfg.trace)
    _emit({"command": "verify", "config": _provenance(cfg), "network_sha256": network_hash(net),
           "outputs": list(g.output_names), "report": rep.to_dict()}, cfg.output)
    return EXIT_TIMEOUT if rep.termination == "timeout" else EXIT_OK


def cmd_attack(cfg: RunConfig) -> int:
    net, g, box = _graph_and_box(cfg)
    res = attack_abs(g, box, n=cfg.attack_starts, l=cfg.attack_l, iters=cfg.attack_iters)
    _emit({"command": "attack", "config": _provenance(cfg), "network_sha256": network_hash(net),
           "outputs": list(g.output_names), "result": res.to_dict()}, cfg.output)
    return EXIT_OK


def cmd_fd_sweep(cfg: FdSweepConfig) -> int:
    net = load_network(cfg.network)
    if not 0 <= cfg.index < net.input_dim:
        raise ConfigError(f"index {cfg.index} out of range for a {net.input_dim}-input network")
    rows = fd_sweep(net, cfg.index, cfg.hs, cfg.n, cfg.seed, cfg.order, cfg.domain, cfg.kink_margin)
    fh = open(cfg.output, "w", newline="", encoding="utf-8") if cfg.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "mse", "n"])
        for r in rows:
            w.writerow([repr(r["h"]), repr(r["mse"]), r["n"]])
    finally:
        if cfg.output:
            fh.close()
    return EXIT_OK


def cmd_error_curve(cfg: ErrorCurveConfig) -> int:
    net = load_network(cfg.network)
    if net.input_dim != 2 or net.output_dim != 2:
        raise ConfigError("error curves need a 2-input, 2-output SMIB network")
    params = _smib(cfg.smib_params)
    bab = BabConfig(theta_bar=cfg.theta_bar, P=cfg.P, tol=cfg.tol, timeout=cfg.timeout,
                    batch=cfg.batch, taylor=cfg.taylor)
    d0 = [float(v) for v in cfg.delta0s]
    d_range = [min(d0), max(d0)] if d0 else None
    delta, init_rep = initial_mismatch(net, params, bab, d_range)
    zeta = zeta_schedule(net, params, cfg.n_slices, bab, d_range, [0.0, cfg.t_end],
                         workers=_workers(cfg.workers), h1=cfg.h1)
    lip = smib_lipschitz(params)
    t = np.linspace(0.0, cfg.t_end, cfg.t_points)
    curve = error_envelope(delta, zeta, lip.C, t, cfg.quad_points)
    curve.empirical = empirical_error(net, params, d0, t, cfg.rk4_step)
    curve.labels = [f"empirical_delta0={v:g}" for v in d0]
    dominated = curve.dominated()
    if cfg.csv:
        curve.write_csv(cfg.csv)
    runs = [init_rep] + zeta.reports
    _emit({
        "command": "error-curve",
        "config": _provenance(cfg),
        "network_sha256": network_hash(net),
        "lipschitz": {"C": lip.C, "provenance": lip.provenance},
        "delta_l2": delta,
        "zeta_breaks": zeta.breaks.tolist(),
        "zeta_linf": zeta.values.tolist(),
        "zeta_l2": (zeta.values * zeta.scale).tolist(),
        "bound_final": float(curve.bound[-1]),
        "empirical_max": float(curve.empirical.max()),
        "dominated": dominated,
        "terminations": [r.termination for r in runs],
        "wall_time": sum(r.wall_time for r in runs),
    }, cfg.output)
    if not dominated:
        return EXIT_CHECK
    return EXIT_TIMEOUT if any(r.termination == "timeout" for r in runs) else EXIT_OK


def cmd_gen_fixture(cfg: GenFixtureConfig) -> int:
    if cfg.kind == "viscous-shock":
        net = viscous_shock_network()
    else:
        net = generate_fixture(cfg.seed, cfg.arch, cfg.activation)
    store_network(net, cfg.output)
    _emit({"command": "gen-fixture", "config": _provenance(cfg), "path": cfg.output,
           "network_sha256": network_hash(net)}, None)
    return EXIT_OK


COMMANDS = {
    "verify": (RunConfig, cmd_verify, "certify a bound on max |property| by branch and bound"),
    "attack": (RunConfig, cmd_attack, "lower bound on max |property| by FGSM"),
    "fd-sweep": (FdSweepConfig, cmd_fd_sweep, "finite-difference vs exact derivative MSE per step h"),
    "error-curve": (ErrorCurveConfig, cmd_error_curve, "certified SMIB error envelope with RK4 check"),
    "gen-fixture": (GenFixtureConfig, cmd_gen_fixture, "write a deterministic fixture weight file"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdecert", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (cls, _, help_text) in COMMANDS.items():
        _add_flags(sub.add_parser(name, help=help_text), cls)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    cls, fn, _ = COMMANDS[args.command]
    try:
        return fn(_resolve(cls, args))
    except (ConfigError, WeightFileError, ValueError) as exc:
        print(f"pdecert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
