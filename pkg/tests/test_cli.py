import csv
import hashlib
import json

import pytest

from optstop.cli import main, manifest_path_for, parse_vary, UsageError
from optstop.model import SystemConfig, dump_config


def _cfg_file(tmp_path, name="sys.cfg", **kw):
    base = dict(num_channels=4, sensing_fraction=0.05, theta=0.5, avg_power_budget=1.0)
    base.update(kw)
    path = tmp_path / name
    path.write_text(dump_config(SystemConfig(**base)))
    return path


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_solve_writes_policy_and_manifest(tmp_path):
    cfg = _cfg_file(tmp_path)
    assert main(["solve", str(cfg), "--out", str(tmp_path / "o")]) == 0
    pol = json.loads((tmp_path / "o" / "policy.json").read_text())
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert pol["mode"] == "overlay"
    assert pol["metrics"]["avg_power"] == pytest.approx(1.0, rel=1e-7)
    assert set(man["outputs"]) == {"policy.json", "policy.txt"}
    for name, rec in man["outputs"].items():
        assert _sha(tmp_path / "o" / name) == rec["sha256"]
    assert (tmp_path / "o" / "policy.txt").read_text().strip()


def test_simulate_is_reproducible(tmp_path):
    cfg = _cfg_file(tmp_path)
    main(["solve", str(cfg), "--out", str(tmp_path / "o")])
    pol = str(tmp_path / "o" / "policy.json")
    for d in ("a", "b"):
        assert main(["simulate", str(cfg), "--policy", pol, "--slots", "20000",
                     "--seed", "3", "--out", str(tmp_path / d)]) == 0
    a, b = (tmp_path / d / "report.json" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    rep = json.loads(a.read_text())
    assert rep["max_abs_delta_se"] < 5


def test_seed_from_environment(tmp_path, monkeypatch):
    cfg = _cfg_file(tmp_path)
    main(["solve", str(cfg), "--out", str(tmp_path / "o")])
    pol = str(tmp_path / "o" / "policy.json")
    monkeypatch.setenv("OPTSTOP_SEED", "5")
    main(["simulate", str(cfg), "--policy", pol, "--slots", "5000", "--out", str(tmp_path / "e")])
    main(["simulate", str(cfg), "--policy", pol, "--slots", "5000", "--seed", "5",
          "--out", str(tmp_path / "s")])
    assert (tmp_path / "e" / "report.json").read_bytes() == (tmp_path / "s" / "report.json").read_bytes()


def test_sweep_csv(tmp_path):
    cfg = _cfg_file(tmp_path, max_mean_delay=1.5)
    out = tmp_path / "sw.csv"
    assert main(["sweep", str(cfg), "--vary", "avg_power_budget=0.5:2:4", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["vary_value", "U", "S_or_I", "p", "expected_delay",
                             "lambda_p", "lambda_d", "lambda_i"]
    xs = [float(r["vary_value"]) for r in rows]
    assert xs == sorted(xs) and len(xs) == 4
    assert all(float(r["expected_delay"]) <= 1.5 + 1e-6 for r in rows)
    assert manifest_path_for(out).exists()


def test_parse_vary():
    key, grid = parse_vary("num_channels=1:5:9")
    assert key == "num_channels" and list(grid) == [1, 2, 3, 4, 5]
    for bad in ("nope=1:2:3", "avg_power_budget=1:2", "avg_power_budget=1:2:0"):
        with pytest.raises(UsageError):
            parse_vary(bad)


def test_deadline_outputs(tmp_path):
    cfg = _cfg_file(tmp_path, num_channels=10, avg_power_budget=0.2)
    assert main(["deadline", str(cfg), "--K", "2", "--tf", "4", "--rmin", "0.95",
                 "--frames", "2000", "--out", str(tmp_path / "d")]) == 0
    data = json.loads((tmp_path / "d" / "deadline.json").read_text())
    assert set(data["schemes"]) == {"offline", "online"}
    head = (tmp_path / "d" / "deadline.csv").read_text().splitlines()[0]
    assert head.startswith("scheme,throughput")


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["bogus"],
    ["deadline", "{cfg}", "--K", "3", "--tf", "3", "--rmin", "0.9", "--out", "{tmp}"],
    ["sweep", "{cfg}", "--vary", "warp=1:2:3", "--out", "{tmp}/x.csv"],
    ["solve", "{cfg}", "--mode", "underlay", "--out", "{tmp}"],
    ["solve", "{tmp}/missing.cfg", "--out", "{tmp}"],
])
def test_usage_errors_exit_1(tmp_path, argv):
    cfg = _cfg_file(tmp_path)
    argv = [a.format(cfg=cfg, tmp=tmp_path) for a in argv]
    assert main(argv) == 1


def test_infeasible_exits_2(tmp_path):
    cfg = _cfg_file(tmp_path, num_channels=1, theta=0.5, max_mean_delay=1.1)
    assert main(["solve", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_bad_slot_count(tmp_path):
    cfg = _cfg_file(tmp_path)
    main(["solve", str(cfg), "--out", str(tmp_path / "o")])
    assert main(["simulate", str(cfg), "--policy", str(tmp_path / "o" / "policy.json"),
                 "--slots", "0", "--out", str(tmp_path / "s")]) == 1
