from __future__ import annotations

import json

import pytest

from neumannlab import cli
from neumannlab.config import ConfigError, load_config, read_ini
from neumannlab.grid import GridFunction

BASE = """
[run]
seed = 7
steps = geom-check, solve-linear, residual

[problem]
preset = constant

[geometry]
samples = 200
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_missing_seed_names_the_key(tmp_path):
    p = write(tmp_path, BASE.replace("seed = 7", ""))
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.key == "run.seed"
    assert cli.main(["run", "--config", str(p)]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("text,key", [
    ("[run]\nseed = 1\nbogus = 2\n", "run.bogus"),
    ("[nosuch]\nx = 1\n", "nosuch"),
    ("[run]\nseed = 1\n[problem]\npreset = nope\n", "problem.preset"),
    ("[run]\nseed = 1\n[problem]\npreset = constant\n[fd]\ntheta = 2\n", "fd.theta"),
    ("[run]\nseed = 1\n[problem]\npreset = constant\n[mc]\nscheme = wild\n", "mc.scheme"),
    ("[run]\nseed = -3\n[problem]\npreset = constant\n", "run.seed"),
])
def test_bad_entries_name_their_key(text, key):
    with pytest.raises(ConfigError) as ei:
        load_config(None, read_ini(text))
    assert ei.value.key == key


def test_overrides_take_precedence(tmp_path):
    p = write(tmp_path, BASE)
    cfg = load_config(p, {"run.seed": 99, "mc.paths": "123", "problem.c": "2.5"})
    assert cfg.seed == 99 and cfg.mc["paths"] == 123
    assert cfg.preset().coef.phi([[0.0]]) == pytest.approx(2.5)
    with pytest.raises(ConfigError):
        load_config(p, {"mc.nope": 1})


def test_run_is_reproducible_and_worker_invariant(tmp_path):
    p = write(tmp_path, BASE.replace("steps = geom-check, solve-linear, residual",
                                     "steps = solve-linear\n") + "[solver]\nmethod = mc\n[mc]\npaths = 500\ndt = 0.01\n")
    p2 = write(tmp_path, BASE.replace("preset = constant", "preset = manufactured_g0").replace(
        "steps = geom-check, solve-linear, residual", "steps = solve-linear") + "[solver]\nmethod = mc\n[mc]\npaths = 500\ndt = 0.01\n", "g.ini")
    for cfgp in (p, p2):
        r1 = cli.run(cfgp, {"run.output": str(tmp_path / "a"), "run.workers": 1})
        r2 = cli.run(cfgp, {"run.output": str(tmp_path / "b"), "run.workers": 3})
        assert r1.content_hash == r2.content_hash
        assert (tmp_path / "a" / "solution_mc.csv").read_bytes() == (tmp_path / "b" / "solution_mc.csv").read_bytes()
    r3 = cli.run(p2, {"run.output": str(tmp_path / "c"), "run.seed": 8})
    assert r3.content_hash != r2.content_hash


def test_cli_exit_codes_and_report(tmp_path, capsys):
    p = write(tmp_path, BASE)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(p), "--output", str(out)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL" not in text
    lines = (out / cli.MANIFEST).read_text().splitlines()
    recs = [json.loads(l) for l in lines]
    assert recs[-1]["event"] == "run" and recs[-1]["passed"]
    assert cli.main(["report", str(out)]) == cli.EXIT_OK
    # global flags accepted after the subcommand as well
    assert cli.main(["geom-check", "--config", str(p), "--output", str(out), "--seed", "3"]) == cli.EXIT_OK
    # a table edited after the run is caught when report recomputes the flags
    geo = out / "geom_check.csv"
    geo.write_text(geo.read_text().replace(",1\n", ",0\n", 1))
    assert cli.main(["report", str(out)]) == cli.EXIT_NUMERIC
    assert cli.main(["report", str(tmp_path / "empty")]) == cli.EXIT_CONFIG


def test_compare_command(tmp_path, capsys):
    import numpy as np
    t = np.array([0.0, 0.5])
    x = np.linspace(-1, 1, 5)
    a = GridFunction(t, x, np.ones((2, 5)), np.full((2, 5), 0.01))
    b = GridFunction(np.linspace(0, 1, 3), np.linspace(-1, 1, 9), np.ones((3, 9)), None)
    pa, pb = a.write_csv(tmp_path / "a.csv"), b.write_csv(tmp_path / "b.csv")
    assert cli.main(["compare", str(pa), str(pa)]) == cli.EXIT_OK
    assert cli.main(["compare", str(pa), str(pb), "--out", str(tmp_path / "d.csv")]) == cli.EXIT_OK
    assert (tmp_path / "d.csv").exists()
    # a stochastic grid cannot be interpolated onto other nodes
    assert cli.main(["compare", str(pb), str(pa)]) == cli.EXIT_CONFIG
    far = GridFunction(t, x, np.ones((2, 5)) + 1.0, np.zeros((2, 5))).write_csv(tmp_path / "far.csv")
    assert cli.main(["compare", str(pa), str(far)]) == cli.EXIT_NUMERIC


def test_compare_function_verdict():
    import numpy as np
    t, x = np.array([0.0]), np.linspace(-1, 1, 3)
    a = GridFunction(t, x, np.zeros((1, 3)), np.full((1, 3), 0.1))
    b = GridFunction(t, x, np.full((1, 3), 0.3), np.zeros((1, 3)))
    r = cli.compare(a, b, bias=0.0)
    assert r.verdict and r.max_ratio == pytest.approx(1.0)
    r = cli.compare(a, b.with_values(np.full((1, 3), 0.31)), bias=0.0)
    assert not r.verdict


def test_content_hash_is_order_independent():
    h1 = cli.content_hash({"a": b"1", "b": b"2"})
    h2 = cli.content_hash({"b": b"2", "a": b"1"})
    assert h1 == h2 and h1 != cli.content_hash({"a": b"1", "b": b"3"})
