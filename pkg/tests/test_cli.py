import csv
import json
import os
import subprocess
import sys

import pytest

from pdecert.cli import EXIT_CONFIG, EXIT_OK, EXIT_TIMEOUT, main
from pdecert.network import generate_fixture, load_network, network_hash, store_network


@pytest.fixture(scope="module")
def nets(tmp_path_factory):
    d = tmp_path_factory.mktemp("nets")
    paths = {}
    for name, arch in (("burgers", [2, 8, 8, 1]), ("smib", [2, 16, 16, 2]), ("tiny", [2, 4, 1])):
        paths[name] = d / f"{name}.json"
        store_network(generate_fixture(42 if name == "smib" else 1, arch, "tanh"), paths[name])
    return paths


def run(argv, tmp_path, name="out.json"):
    out = tmp_path / name
    rc = main(argv + ["--output", str(out)])
    return rc, (json.loads(out.read_text()) if out.exists() else None)


def test_verify_initial(nets, tmp_path):
    rc, rep = run(["verify", "--network", str(nets["burgers"]), "--benchmark", "burgers", "--property", "initial",
                   "--timeout", "200"], tmp_path)
    assert rc == EXIT_OK
    r = rep["report"]
    assert r["certified_upper"] >= r["attack_lower"]
    assert rep["config"]["network"] == "burgers.json" and "output" not in rep["config"]
    assert rep["network_sha256"] == network_hash(load_network(nets["burgers"]))


def test_verify_theta_bar_quick(nets, tmp_path):
    rc, rep = run(["verify", "--network", str(nets["burgers"]), "--theta-bar", "0.5"], tmp_path)
    assert rc == EXIT_OK and rep["report"]["termination"] in ("theta_bar", "converged")
    assert rep["report"]["nodes_expanded"] <= 1


def test_verify_timeout_exit_code(nets, tmp_path):
    rc, rep = run(["verify", "--network", str(nets["smib"]), "--benchmark", "smib", "--no-taylor",
                   "--timeout", "1e-9", "--attack-starts", "4"], tmp_path)
    assert rc == EXIT_TIMEOUT and rep["report"]["termination"] == "timeout"


def test_verify_trace_and_determinism(nets, tmp_path, monkeypatch):
    base = ["verify", "--network", str(nets["burgers"]), "--theta-bar", "1e-2"]
    rc, a = run(base + ["--trace", str(tmp_path / "t.csv")], tmp_path, "a.json")
    assert rc == EXIT_OK
    rows = list(csv.reader((tmp_path / "t.csv").open()))
    assert rows[0][0] == "iteration" and len(rows) > 1
    monkeypatch.setenv("PDECERT_WORKERS", "2")
    _, b = run(base, tmp_path, "b.json")
    a["report"].pop("wall_time"), b["report"].pop("wall_time")
    assert a == b


def test_config_file_and_override(nets, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"network": str(nets["tiny"]), "benchmark": "burgers", "property": "boundary",
                               "attack_starts": 9}))
    rc, rep = run(["attack", "--config", str(cfg), "--attack-iters", "7"], tmp_path)
    assert rc == EXIT_OK
    assert rep["config"]["attack_starts"] == 9 and rep["config"]["attack_iters"] == 7
    assert rep["config"]["property"] == "boundary" and rep["result"]["iterations_used"] <= 7


def test_relative_network_path_in_config(nets, tmp_path):
    store_network(load_network(nets["tiny"]), tmp_path / "w.json")
    (tmp_path / "c.json").write_text(json.dumps({"network": "w.json", "attack_starts": 4, "attack_iters": 3}))
    rc, _ = run(["attack", "--config", str(tmp_path / "c.json")], tmp_path)
    assert rc == EXIT_OK


@pytest.mark.parametrize("argv", [
    ["verify", "--network", "/nonexistent.json"],
    ["verify", "--network", "{tiny}", "--h1", "0.5"],
    ["verify", "--network", "{tiny}", "--P", "1"],
    ["verify", "--network", "{tiny}", "--benchmark", "heat"],
    ["verify", "--network", "{tiny}", "--box", "[[0, 1]]"],
    ["verify", "--bogus-flag"],
    ["fd-sweep", "--network", "{tiny}", "--index", "5"],
    ["gen-fixture"],
])
def test_config_errors_exit_2(nets, argv, tmp_path, capsys):
    argv = [a.replace("{tiny}", str(nets["tiny"])) for a in argv]
    assert main(argv) == EXIT_CONFIG


def test_unknown_config_key(nets, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"network": str(nets["tiny"]), "thetabar": 1}))
    assert main(["verify", "--config", str(cfg)]) == EXIT_CONFIG


def test_bad_worker_env(nets, tmp_path, monkeypatch):
    monkeypatch.setenv("PDECERT_WORKERS", "many")
    assert main(["verify", "--network", str(nets["tiny"]), "--theta-bar", "0.5"]) == EXIT_CONFIG


def test_fd_sweep_csv(nets, tmp_path):
    out = tmp_path / "fd.csv"
    assert main(["fd-sweep", "--network", str(nets["burgers"]), "--hs", "[1e-6, 1e-12]", "--n", "500",
                 "--output", str(out)]) == EXIT_OK
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["h", "mse", "n"] and len(rows) == 3
    assert float(rows[1][1]) < 1e-8 < 1e12 * float(rows[2][1]) and float(rows[2][1]) > float(rows[1][1])


def test_gen_fixture_and_module_entry(tmp_path):
    out = tmp_path / "fx.json"
    proc = subprocess.run([sys.executable, "-m", "pdecert", "gen-fixture", "--output", str(out), "--seed", "42"],
                          capture_output=True, text=True, check=True)
    info = json.loads(proc.stdout)
    assert info["network_sha256"] == "e3775e0ead58aea3b2a3db122cfceaddbe48f50d1609ec9a72d40b183b17e1e5"
    assert network_hash(load_network(out)) == info["network_sha256"]
    shock = tmp_path / "shock.json"
    assert main(["gen-fixture", "--output", str(shock), "--kind", "viscous-shock"]) == EXIT_OK
    assert load_network(shock).layers[0].activation == "tanh"


def test_error_curve_small(nets, tmp_path):
    rc, rep = run(["error-curve", "--network", str(nets["smib"]), "--n-slices", "2", "--t-points", "200",
                   "--quad-points", "1000", "--delta0s", "[0, 0.5, 1]", "--rk4-step", "1e-3",
                   "--csv", str(tmp_path / "curve.csv")], tmp_path)
    assert rc == EXIT_OK and rep["dominated"]
    assert rep["lipschitz"]["C"] == pytest.approx(1.0855823048033113)
    rows = list(csv.reader((tmp_path / "curve.csv").open()))
    assert len(rows) == 201 and len(rows[0]) == 5


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "error-curve" in capsys.readouterr().out
