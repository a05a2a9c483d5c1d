import csv
import json

import numpy as np
import pytest

from multiplex_p2 import gof
from multiplex_p2.cli import EXIT_INVALID, EXIT_OK, EXIT_UNCONVERGED, main
from multiplex_p2.model import ParameterState
from multiplex_p2.network import load_bundle, write_bundle, write_multiplex
from multiplex_p2.simulate import SimBatch, simulate_network


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    """A small biplex with mild density and reciprocity, as a bundle and as layer CSVs."""
    root = tmp_path_factory.mktemp("toy")
    state = ParameterState.zeros(10, 2)
    state.mu[:] = [-1.0, -0.5]
    state.rho[:] = [1.0, 0.5]
    state.mu_cross[:] = [0.5]
    net = simulate_network(state, None, 10, 2, np.random.default_rng(1), layer_names=("friend", "advice"))
    write_bundle(root / "net.json", net)
    layers = write_multiplex(net, root / "layers")
    return root, net, layers


@pytest.fixture(scope="module")
def fitted(toy, tmp_path_factory):
    root, _, _ = toy
    out = tmp_path_factory.mktemp("fit")
    code = main(["fit", "--data", str(root / "net.json"), "--seed", "3", "--out", str(out / "a")])
    return code, out


def read_csv_body(path):
    return [r for r in csv.reader(line for line in open(path) if not line.startswith("#"))]


def test_fit_smoke_converges(fitted):
    code, out = fitted
    assert code == EXIT_OK
    diag = json.loads((out / "a" / "diagnostics.json").read_text())
    assert diag["unconverged"] == [] and diag["max_rhat"] < 1.05
    assert diag["config"]["chains"] == 4 and diag["config"]["iterations"] == 2000
    rows = read_csv_body(out / "a" / "summary.csv")
    assert rows[0][0] == "name" and len(rows) > 1


def test_fit_is_deterministic_across_threads(fitted, toy):
    _, out = fitted
    root, _, _ = toy
    again = out / "b"
    assert main(["fit", "--data", str(root / "net.json"), "--seed", "3", "--threads", "2",
                 "--out", str(again)]) == EXIT_OK
    assert (again / "draws.csv").read_bytes() == (out / "a" / "draws.csv").read_bytes()


def test_outputs_carry_provenance(fitted):
    _, out = fitted
    head = (out / "a" / "draws.csv").read_text().splitlines()[:4]
    keys = {line.split(":")[0] for line in head if line.startswith("#")}
    assert {"# tool", "# seed", "# config_hash"} <= keys
    prov = json.loads((out / "a" / "diagnostics.json").read_text())["provenance"]
    assert prov["seed"] == 3 and prov["command"] == "fit"


def test_strict_fit_exits_on_unconverged_chains(toy, tmp_path):
    root, _, _ = toy
    args = ["fit", "--data", str(root / "net.json"), "--seed", "1", "--iterations", "12",
            "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    assert main(args + ["--strict"]) == EXIT_UNCONVERGED


def test_fit_from_layer_files_with_config(toy, tmp_path):
    _, _, layers = toy
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 4, "chains": 2, "iterations": 200}))
    assert main(["fit", "--config", str(cfg), "--layers", *map(str, layers),
                 "--out", str(tmp_path / "o")]) == EXIT_OK
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert diag["config"]["chains"] == 2 and diag["model"]["layers"] == ["friend", "advice"]
    # flags override the file
    assert main(["fit", "--config", str(cfg), "--chains", "1", "--layers", *map(str, layers),
                 "--out", str(tmp_path / "p")]) == EXIT_OK
    assert json.loads((tmp_path / "p" / "diagnostics.json").read_text())["config"]["chains"] == 1


@pytest.mark.parametrize("args", [
    ["fit", "--data", "does/not/exist.json", "--seed", "1"],
    ["fit", "--seed", "1"],
    ["fit", "--data", "{net}"],
    ["fit", "--data", "{net}", "--seed", "1", "--chains", "0"],
    ["simulate", "--seed", "1", "--count", "-1", "--n", "5", "--model", "{model}"],
    ["simulate", "--seed", "1", "--count", "2", "--from", "posterior"],
    ["simulate", "--seed", "1", "--count", "2", "--from", "params", "--n", "5", "--model", "{model}"],
    ["gof", "--data", "{net}"],
    ["sbc", "--seed", "1", "--model", "{model}", "--n", "1", "--L", "2"],
    ["meta", "--seed", "1"],
    ["fit", "--config", "{bad_config}", "--data", "{net}", "--seed", "1"],
    ["fit", "--bogus"],
])
def test_invalid_input_exits_2(args, toy, tmp_path, capsys):
    root, _, _ = toy
    (tmp_path / "model.json").write_text(json.dumps({"layers": ["a", "b"]}))
    (tmp_path / "bad.json").write_text(json.dumps({"sed": 1}))
    subs = {"{net}": str(root / "net.json"), "{model}": str(tmp_path / "model.json"),
            "{bad_config}": str(tmp_path / "bad.json")}
    args = [subs.get(a, a) for a in args] + ["--out", str(tmp_path / "o")]
    assert main(args) == EXIT_INVALID
    assert capsys.readouterr().err.strip()


def test_missing_data_message(tmp_path, capsys):
    main(["fit", "--data", str(tmp_path / "missing.json"), "--seed", "1", "--out", str(tmp_path)])
    assert "missing.json" in capsys.readouterr().err


# -- simulate and gof ------------------------------------------------------------

def test_simulate_prior_thousand_networks(tmp_path):
    (tmp_path / "model.json").write_text(json.dumps({"layers": 2}))
    assert main(["simulate", "--model", str(tmp_path / "model.json"), "--n", "30", "--count", "1000",
                 "--seed", "5", "--out", str(tmp_path / "b")]) == EXIT_OK
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["count"] == 1000 and len(list((tmp_path / "b").glob("net_*.json"))) == 1000
    assert manifest["provenance"] == "prior" and manifest["header"]["seed"] == 5
    net, _ = load_bundle(tmp_path / "b" / manifest["files"][0])
    assert net.n == 30 and net.T == 2


def test_simulate_count_zero(tmp_path):
    (tmp_path / "model.json").write_text(json.dumps({"layers": 1}))
    assert main(["simulate", "--model", str(tmp_path / "model.json"), "--n", "5", "--count", "0",
                 "--seed", "5", "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "manifest.json").read_text())["files"] == []


def test_simulate_params_all_zero(tmp_path):
    (tmp_path / "model.json").write_text(json.dumps({"layers": 2}))
    (tmp_path / "params.json").write_text(json.dumps({}))
    assert main(["simulate", "--from", "params", "--params", str(tmp_path / "params.json"),
                 "--model", str(tmp_path / "model.json"), "--n", "30", "--count", "100",
                 "--seed", "2", "--out", str(tmp_path / "b")]) == EXIT_OK
    batch = SimBatch.read(tmp_path / "b")
    dens = [gof.density(net.layer(t)) for net in batch.networks for t in range(2)]
    assert abs(np.mean(dens) - 0.5) < 0.02


def test_posterior_simulate_then_gof(fitted, toy, tmp_path):
    _, out = fitted
    root, net, _ = toy
    assert main(["simulate", "--from", "posterior", "--draws", str(out / "a" / "draws.csv"),
                 "--data", str(root / "net.json"), "--count", "50", "--seed", "8",
                 "--out", str(tmp_path / "pp")]) == EXIT_OK
    assert main(["gof", "--data", str(root / "net.json"), "--batch", str(tmp_path / "pp"),
                 "--out", str(tmp_path / "g")]) == EXIT_OK
    doc = json.loads((tmp_path / "g" / "gof.json").read_text())
    assert doc["provenance"]["command"] == "gof"
    body = read_csv_body(tmp_path / "g" / "gof.csv")
    assert body[0] == ["statistic", "source", "replicate", "value"]
    assert {row[0].split("[")[0] for row in body[1:]} == set(gof.STATISTICS)
    assert sum(row[1] == "sim" for row in body) == 50 * sum(row[1] == "observed" for row in body)


def test_gof_shape_mismatch(toy, tmp_path):
    root, _, _ = toy
    (tmp_path / "model.json").write_text(json.dumps({"layers": 2}))
    main(["simulate", "--model", str(tmp_path / "model.json"), "--n", "6", "--count", "2",
          "--seed", "1", "--out", str(tmp_path / "b")])
    assert main(["gof", "--data", str(root / "net.json"), "--batch", str(tmp_path / "b"),
                 "--out", str(tmp_path / "g")]) == EXIT_INVALID


# -- studies and meta-analysis -------------------------------------------------------

def test_sbc_smoke(tmp_path):
    (tmp_path / "model.json").write_text(json.dumps({"layers": 2}))
    args = ["sbc", "--model", str(tmp_path / "model.json"), "--n", "10", "--L", "20", "--K", "50",
            "--iterations", "300", "--seed", "6", "--out", str(tmp_path / "s")]
    assert main(args) == EXIT_OK
    rows = read_csv_body(tmp_path / "s" / "sbc_ranks.csv")
    summary = json.loads((tmp_path / "s" / "sbc_summary.json").read_text())
    retained = 20 - len(summary["excluded"])
    per_param = {}
    for name, _, _ in rows[1:]:
        per_param[name] = per_param.get(name, 0) + 1
    assert set(per_param.values()) == {retained}
    # a second run resumes from checkpoints and writes the same ranks
    first = (tmp_path / "s" / "sbc_ranks.csv").read_bytes()
    assert main(args) == EXIT_OK
    assert (tmp_path / "s" / "sbc_ranks.csv").read_bytes() == first


def test_meta_thirty_four_groups(tmp_path):
    rng = np.random.default_rng(0)
    theta = rng.normal(2.62, 0.8, size=34)
    se = rng.uniform(0.2, 0.6, size=34)
    with open(tmp_path / "groups.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "parameter", "mean", "sd"])
        for k in range(34):
            w.writerow([f"class{k + 1}", "mu_cross", rng.normal(theta[k], se[k]), se[k]])
    assert main(["meta", "--input", str(tmp_path / "groups.csv"), "--seed", "2",
                 "--out", str(tmp_path / "m")]) == EXIT_OK
    rows = read_csv_body(tmp_path / "m" / "meta_summary.csv")
    assert rows[0] == ["parameter", "mu_mean", "mu_q2.5", "mu_q97.5", "tau_mean", "tau_q2.5",
                       "tau_q97.5", "groups", "max_rhat"]
    assert len(rows) == 2 and rows[1][0] == "mu_cross" and rows[1][7] == "34"
    assert float(rows[1][2]) < 2.62 < float(rows[1][3])


def test_meta_rejects_unknown_covariance_parameter(tmp_path):
    (tmp_path / "g.csv").write_text("group,parameter,mean,sd\nA,mu,1,1\nB,mu,2,1\n")
    assert main(["meta", "--input", str(tmp_path / "g.csv"), "--seed", "1", "--out", str(tmp_path),
                 "--covariance-parameters", "sigma"]) == EXIT_INVALID
