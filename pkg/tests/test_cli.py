import json

import pytest

from putkit import __version__
from putkit.cli import main
from putkit.config import config_hash, parse_config

BASE = {
    "source": {"binary_symmetric": {"q": 0.8}},
    "channel": {"bsc": {"crossover": 0.2}},
    "tau": 2.0,
    "leak": 0.3,
}


def _write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def configs(tmp_path):
    return dict(
        base=_write(tmp_path, "base.json", BASE),
        mech=_write(tmp_path, "mech.json", dict(BASE, mechanism=[[0.93, 0.07], [0.21, 0.79]])),
        curve=_write(tmp_path, "curve.json", dict(BASE, leak=[0.05, 0.3])),
        bsc01=_write(tmp_path, "bsc01.json", dict(BASE, leak=0.4, mechanism={"bsc": {"p": 0.1}})),
    )


COMMANDS = {
    "capacity": ["capacity", "base"],
    "capacity-json": ["capacity", "base", "--json"],
    "put-curve": ["--restarts", "4", "put-curve", "curve"],
    "bound": ["--restarts", "4", "bound", "mech", "--k-list", "1000,1000000"],
    "bound-fixed": ["--restarts", "4", "bound", "mech", "--k-list", "1000", "--lambda1", "0.14"],
    "euclid": ["--restarts", "4", "euclid", "base", "--rho-list", "0.01"],
    "euclid-noisy": ["euclid", "base", "--mode", "noisy", "--rho-list", "0.1", "--no-exact"],
    "simulate": ["--seed", "3", "simulate", "bsc01", "--k", "100", "--blocks", "2000"],
}


def _run(argv, configs, out):
    args = [configs.get(a, a) for a in argv]
    sub = args.index(next(a for a in args if a in ("capacity", "put-curve", "bound", "euclid", "simulate")))
    args = args[:sub + 2] + ["--out", str(out)] + args[sub + 2:]
    return main(args)


@pytest.mark.parametrize("name", sorted(COMMANDS))
def test_byte_determinism(name, configs, tmp_path):
    a, b = tmp_path / "a.out", tmp_path / "b.out"
    assert _run(COMMANDS[name], configs, a) == 0
    assert _run(COMMANDS[name], configs, b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert b"\r\n" not in a.read_bytes()
    run = json.loads((tmp_path / "a.out.run.json").read_text())
    assert run["wall_time"] >= 0 and run["version"] == __version__
    assert run["outputs"] == [str(a)]


def test_capacity_output(configs, capsys):
    assert main(["capacity", configs["base"]]) == 0
    out = capsys.readouterr().out.splitlines()
    digest = config_hash(parse_config(BASE))
    assert out[0] == f"# config_hash={digest}"
    assert out[1] == "capacity = 0.1927448"


def test_capacity_json(configs, capsys):
    assert main(["capacity", configs["base"], "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert abs(data["capacity"] - 0.19274475702175742) < 1e-9
    assert data["optimal_input"] == pytest.approx([0.5, 0.5])


def test_put_curve_csv(configs, capsys):
    assert main(["--restarts", "4", "put-curve", configs["curve"]]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "L,f_value,best_p_z_given_u_flattened,i_vw,i_zw,i_uz,restarts_agreeing"
    rows = [line.split(",") for line in lines[2:]]
    assert len(rows) == 2
    assert float(rows[0][1]) <= float(rows[1][1])
    assert len(rows[0][2].split(";")) == 4


def test_bound_csv(configs, capsys):
    assert main(["--restarts", "4", "bound", configs["mech"], "--k-list", "1000,1000000"]) == 0
    lines = capsys.readouterr().out.splitlines()
    header = lines[1].split(",")
    assert header[:5] == ["k", "gamma", "lambda1", "lambda2", "bound"]
    rows = [dict(zip(header, line.split(","))) for line in lines[2:]]
    assert float(rows[1]["bound"]) < float(rows[0]["bound"])
    for r in rows:
        assert float(r["bound"]) >= float(r["put_value"]) - 1e-9


def test_simulate_json(configs, capsys):
    assert main(["simulate", configs["bsc01"], "--k", "100", "--blocks", "2000", "--delta", "0.3"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["n_blocks"] == 2000 and data["k"] == 100
    assert set(data) >= {"empirical_tail", "threshold", "std_error", "passed", "config_hash", "seed"}


def test_seed_changes_simulation(configs, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["--seed", "1", "simulate", configs["bsc01"], "--out", str(a), "--k", "100", "--blocks", "2000"])
    main(["--seed", "2", "simulate", configs["bsc01"], "--out", str(b), "--k", "100", "--blocks", "2000"])
    assert a.read_bytes() != b.read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    bad = _write(tmp_path, "bad.json", dict(BASE, tau=-2))
    assert main(["capacity", bad]) == 2
    assert "tau" in capsys.readouterr().err
    assert main(["capacity", str(tmp_path / "missing.json")]) == 2


def test_multi_leak_rejected_for_bound(configs, capsys):
    assert main(["bound", configs["curve"]]) == 2


def test_vacuous_strict_exit_code(configs, capsys):
    # at k = 1 with a positive leak multiplier the Berry-Esseen argument is negative
    argv = ["--restarts", "2", "bound", configs["bsc01"], "--k-list", "1", "--lambda1", "0.1",
            "--lambda2", "1", "--epsilon", "0.9"]
    assert main(argv) == 0
    assert "vacuous" in capsys.readouterr().err
    assert main(argv + ["--strict"]) == 3


def test_simulate_vacuous_exit_code(configs):
    assert main(["simulate", configs["bsc01"], "--k", "1", "--blocks", "10", "--delta", "0.01"]) == 3


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out
