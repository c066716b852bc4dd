import csv
import json
import math
import subprocess
import sys

import pytest

from fkstable import __version__
from fkstable.cli import main
from fkstable.core_model import ModelSpec

STD_HASH = ModelSpec.power_law(1, 0.5, 1.0, 1.0).hash()


def run(tmp_path, command, config, *extra, tag="out"):
    cfg = tmp_path / f"{tag}.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / tag
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def read(path):
    text = path.read_text()
    meta = dict(l[2:].split("=", 1) for l in text.splitlines() if l.startswith("# "))
    rows = list(csv.DictReader(l for l in text.splitlines() if not l.startswith("#")))
    return meta, rows


def test_envelope_single_point(tmp_path):
    code, out = run(tmp_path, "envelope", {"t": [0.5], "x": [0.3], "y": [0.7], "regimes": ["free"]})
    assert code == 0
    _, rows = read(out / "envelope.csv")
    assert len(rows) == 1


def test_envelope_hand_values(tmp_path):
    cases = [("free", 1.0, 0.5, 2.5, 2 ** -1.5),
             ("global-upper", 0.5, 0.2, 1.0, 0.4 * 0.5 / 0.8 ** 1.5),
             ("large", 4.0, 0.2, 1.0, 0.2 * 4.0 ** -2)]
    for i, (reg, t, x, y, expect) in enumerate(cases):
        code, out = run(tmp_path, "envelope", {"t": [t], "x": [x], "y": [y], "regimes": [reg]}, tag=f"r{i}")
        assert code == 0
        _, (row,) = read(out / "envelope.csv")
        assert float(row["value"]) == pytest.approx(expect, rel=1e-12)


def test_envelope_swap_symmetric(tmp_path):
    base = {"t": [0.1, 3.0], "regimes": ["free", "small-upper", "global-upper", "large", "green"]}
    _, a = run(tmp_path, "envelope", dict(base, x=[0.2, 1.5], y=[-0.4]), tag="a")
    _, b = run(tmp_path, "envelope", dict(base, x=[-0.4], y=[0.2, 1.5]), tag="b")
    va = [r["value"] for r in read(a / "envelope.csv")[1]]
    vb = [r["value"] for r in read(b / "envelope.csv")[1]]
    assert va == vb


def test_envelope_domain_errors_are_notes(tmp_path):
    code, out = run(tmp_path, "envelope", {"t": [5.0], "x": [0.3], "y": [0.7], "regimes": ["small-upper"]})
    assert code == 0
    _, (row,) = read(out / "envelope.csv")
    assert row["value"] == "" and row["note"]


SIM = {"quantity": "survival", "x": [0.3, 1.0], "t": 0.5, "n": 4000, "dt": 0.01}


def test_simulate_deterministic(tmp_path):
    _, a = run(tmp_path, "simulate", SIM, "--seed", "7", tag="a")
    _, b = run(tmp_path, "simulate", SIM, "--seed", "7", tag="b")
    assert (a / "simulate.csv").read_bytes() == (b / "simulate.csv").read_bytes()


def test_simulate_threads_invariant(tmp_path):
    cfg = dict(SIM, quantity="kernel", y=[0.2, 1.4], h=0.1)
    _, a = run(tmp_path, "simulate", cfg, "--threads", "1", tag="a")
    _, b = run(tmp_path, "simulate", cfg, "--threads", "8", tag="b")
    assert (a / "simulate.csv").read_bytes() == (b / "simulate.csv").read_bytes()


def test_simulate_stderr_scaling(tmp_path):
    _, a = run(tmp_path, "simulate", dict(SIM, n=20000), tag="a")
    _, b = run(tmp_path, "simulate", dict(SIM, n=40000), tag="b")
    for ra, rb in zip(read(a / "simulate.csv")[1], read(b / "simulate.csv")[1]):
        ratio = float(rb["stderr"]) / float(ra["stderr"])
        assert abs(ratio / (1 / math.sqrt(2)) - 1) < 0.2


VERIFY = {"checks": {"three-p": {"alpha": [0.5, 1.0], "n": 2000}}}


def test_verify_all_pass(tmp_path):
    code, out = run(tmp_path, "verify", VERIFY)
    assert code == 0
    _, rows = read(out / "verify.csv")
    summaries = [r for r in rows if r["row"] == "summary"]
    assert [r["check_id"] for r in summaries] == ["three-p:alpha=0.5", "three-p:alpha=1.0"]
    assert all(r["pass"] == "1" for r in summaries)


def test_verify_tight_ceiling_fails(tmp_path, capsys):
    code, _ = run(tmp_path, "verify", dict(VERIFY, ceiling=1.0))
    assert code == 1
    err = capsys.readouterr().err
    assert "violation: three-p:alpha=0.5" in err


def test_verify_disabled_check_absent(tmp_path):
    code, out = run(tmp_path, "verify", {"checks": {"three-p": {"n": 500}}})
    assert code == 0
    ids = {r["check_id"] for r in read(out / "verify.csv")[1]}
    assert ids == {"three-p:alpha=0.5"}


def test_barrier_default(tmp_path):
    code, out = run(tmp_path, "barrier", {})
    assert code == 0
    meta, rows = read(out / "barrier.csv")
    assert len(rows) == 3 and all(r["passed"] == "1" for r in rows)
    assert all(float(r["margin"]) <= 1e-4 for r in rows)
    assert float(meta["c0"]) == pytest.approx(32 / 3)
    assert {"eps0", "delta0", "c0"} <= set(meta)
    data = json.loads((out / "barrier.json").read_text())
    assert data["passed"] and data["eps0"] == float(meta["eps0"])


def test_barrier_rejects_large_R(tmp_path):
    code, _ = run(tmp_path, "barrier", {"R": 1.5})
    assert code == 2


@pytest.mark.parametrize("command", ["envelope", "simulate", "verify", "barrier", "duhamel"])
def test_unknown_key_is_config_error(tmp_path, command):
    code, _ = run(tmp_path, command, {"bogus": 1})
    assert code == 2


def test_unknown_model_key(tmp_path):
    m = ModelSpec.power_law(1, 0.5, 1.0, 1.0).to_dict()
    m["colour"] = "red"
    p = tmp_path / "m.json"
    p.write_text(json.dumps(m))
    assert main(["envelope", "--model", str(p), "--out", str(tmp_path)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["envelope", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_duhamel_and_metadata(tmp_path):
    cfg = {"t": [0.25], "x": [0.5], "y": [0.5, 1.5], "spec": {"dx": 0.05, "L": 1000.0, "caps": 2, "levels": 1}}
    code, out = run(tmp_path, "duhamel", cfg, "--seed", "11")
    assert code == 0
    meta, rows = read(out / "duhamel.csv")
    assert len(rows) == 2 and all(float(r["value"]) > 0 for r in rows)
    assert meta["model_hash"] == STD_HASH and meta["seed"] == "11" and meta["version"] == __version__


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "fkstable", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
