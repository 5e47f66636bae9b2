import json

import numpy as np
import pytest

from crw2d.cli import ExperimentConfig, RunManifest, main, manifest_path, parse_sites, parse_t_grid, run_experiment
from crw2d.series import read_csv


def test_parse_helpers():
    assert parse_sites("(0,0);(1,0)") == [[0, 0], [1, 0]]
    assert parse_sites("0; 1.5;3") == [0.0, 1.5, 3.0]
    assert parse_t_grid("1:1000:10") == [1.0, 1000.0, 10]
    for bad in ("", "(0,x)"):
        with pytest.raises(ValueError):
            parse_sites(bad)
    with pytest.raises(ValueError):
        parse_t_grid("1:10")


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("bogus")
    with pytest.raises(ValueError):
        ExperimentConfig("pnc", t_grid=[10.0, 1.0, 4])
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"command": "pnc", "colour": 1})


def test_pnc_example(tmp_path, capsys):
    out = tmp_path / "pnc.csv"
    args = ["pnc", "--starts", "(0,0);(1,0)", "--t", "1e2:1e4:8", "--replicas", "100000", "--seed", "42"]
    assert main(args + ["--output", str(out)]) == 0
    s = read_csv(out)
    assert len(s.times) == 8
    assert np.all((s.mean >= 0) & (s.mean <= 1)) and np.all(np.diff(s.mean) <= 0)
    first = out.read_bytes()
    assert main(args + ["--output", str(out)]) == 0
    assert out.read_bytes() == first
    assert main(args + ["--output", str(out), "--threads", "3"]) == 0
    assert out.read_bytes() == first


def test_density_example_first_row(tmp_path):
    out = tmp_path / "rho.csv"
    args = ["density", "--L", "1024", "--mode", "coalesce", "--init", "full", "--t", "1:1000:10", "--replicas", "8"]
    assert main(args + ["--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,mean,stderr,n,L,mode,init"
    t, mean = lines[1].split(",")[:2]
    assert float(t) == 0.0 and float(mean) == 1.0
    assert len(lines) == 12


def test_manifest_roundtrip_and_config_rerun(tmp_path):
    cfg = ExperimentConfig("rhoN", master_seed=9, replicas=3, L=32, t_grid=[1.0, 10.0, 3], output_path=str(tmp_path / "a.csv"))
    man = run_experiment(cfg)
    mpath = manifest_path(tmp_path / "a.csv")
    back = RunManifest.from_json(mpath.read_text())
    assert back.experiment_config() == cfg and back.outputs == man.outputs
    b = tmp_path / "b.csv"
    assert main(["rhoN", "--config", str(mpath), "--output", str(b)]) == 0
    assert b.read_bytes() == (tmp_path / "a.csv").read_bytes()


def test_horizon_warning_in_manifest(tmp_path):
    out = tmp_path / "small.csv"
    with pytest.warns(RuntimeWarning):
        assert main(["density", "--L", "16", "--t", "1:100:3", "--replicas", "2", "--output", str(out)]) == 0
    man = json.loads(manifest_path(out).read_text())
    assert man["warnings"]


def test_invalid_inputs_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"command": "pnc", "replicas": 0}))
    assert main(["pnc", "--config", str(bad), "--output", str(tmp_path / "x.csv")]) != 0
    assert main(["density", "--L", "100", "--output", str(tmp_path / "y.csv")]) != 0
    assert main(["pnc", "--starts", "(0,0);(0,0)", "--output", str(tmp_path / "z.csv")]) != 0
    wrong = tmp_path / "w.json"
    wrong.write_text(json.dumps({"command": "density"}))
    assert main(["pnc", "--config", str(wrong), "--output", str(tmp_path / "w.csv")]) != 0
    assert "error" in capsys.readouterr().err


def test_oned_and_ode_outputs(tmp_path):
    out = tmp_path / "o.csv"
    assert main(["oned", "--starts", "0;1;2;3", "--t", "0.1:2:4", "--replicas", "2000", "--output", str(out)]) == 0
    exact, mc = read_csv(out), read_csv(tmp_path / "o.mc.csv")
    assert np.all(exact.stderr == 0) and np.array_equal(exact.times, mc.times)
    ode = tmp_path / "ode.csv"
    assert main(["ode", "--kind", "rho1_ere", "--t0", "100", "--t", "100:1e6:5", "--output", str(ode)]) == 0
    s = read_csv(ode)
    assert s.times[0] == 100 and np.all(np.diff(s.mean) < 0)


def test_merge_command(tmp_path, capsys):
    paths = []
    for seed in (1, 2):
        p = tmp_path / f"m{seed}.csv"
        assert main(["pnc", "--seed", str(seed), "--replicas", "2000", "--t", "1:100:3", "--output", str(p)]) == 0
        paths.append(str(p))
    capsys.readouterr()
    assert main(["merge", *paths]) == 0
    text = capsys.readouterr().out
    n = [int(float(line.split(",")[3])) for line in text.splitlines()[1:]]
    assert n == [4000, 4000, 4000]


def test_verify_lists_each_criterion_once(capsys):
    assert main(["verify", "--level", "fast", "--only", "8", "--only", "9"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [line.split()[1] for line in out[:2]] == ["8", "9"]
    assert out[-1] == "2/2 criteria passed"
