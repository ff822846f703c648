import json
import math

import pytest

from gwwalk import cli, experiments, rng
from gwwalk.experiments import ConfigError, ExperimentConfig


def run(tmp_path, *args, config=None):
    argv = list(args)
    if config is not None:
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(config))
        argv += ["--config", str(p)]
    return cli.main(argv)


def test_derive_seed_determinism_and_labels():
    assert rng.derive_seed(2016, "tree", 3) == rng.derive_seed(2016, "tree", 3)
    assert rng.derive_seed(2016, "tree", 3) != rng.derive_seed(2016, "walk", 3)
    assert rng.derive_seed(2016, "tree", 3) != rng.derive_seed(2017, "tree", 3)
    assert 0 <= rng.derive_seed(2**64 - 1, "x" * 50, 10**9) < 2**64


def test_derive_seed_collision_scan():
    seen = {rng.derive_seed(2016, "tree", i) for i in range(10**6)}
    assert len(seen) == 10**6


def test_counter_stream():
    u = rng.uniforms(42, 1000)
    s = rng.Stream(42)
    assert [s.random() for _ in range(5)] == list(u[:5])
    assert 0 <= u.min() and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.05


def test_regimes_table(tmp_path, capsys):
    code = run(tmp_path, "regimes", "--beta", "0.5", "1", "1.8", "2.5", "--out", str(tmp_path))
    assert code == 0
    lines = (tmp_path / "regimes.csv").read_text().splitlines()
    head = lines[0].split(",")
    rows = [dict(zip(head, line.split(","))) for line in lines[1:]]
    assert [r["regime"] for r in rows] == ["recurrent", "ballistic_clt", "ballistic_no_clt", "sub_ballistic"]
    assert float(rows[0]["t_recurrent"]) == pytest.approx(2 / 3)
    assert float(rows[0]["t_clt"]) == pytest.approx(math.sqrt(2))
    assert float(rows[0]["t_ballistic"]) == pytest.approx(2.0)
    summary = json.loads((tmp_path / "regimes.json").read_text())
    assert {"config", "git", "wall_clock_s"} <= set(summary)


def test_malformed_pmf_exit_1(tmp_path, capsys):
    code = run(tmp_path, "regimes", "--out", str(tmp_path), config={"law": [[0, 0.25], [2, 0.65]]})
    assert code == 1
    assert "sum to 0.9" in capsys.readouterr().err


def test_subcritical_law_exit_1(tmp_path, capsys):
    code = run(tmp_path, "speed", "--out", str(tmp_path), config={"law": {"0": 0.5, "1": 0.5}})
    assert code == 1
    assert "supercritical" in capsys.readouterr().err


def test_unknown_experiment_exit_1(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["bogus"])
    assert e.value.code == 1


def test_unknown_config_field(tmp_path, capsys):
    assert run(tmp_path, "regimes", config={"bogus": 1}) == 1
    assert run(tmp_path, "regimes", config=[1, 2]) == 1


def test_infeasible_oracle_depth(tmp_path, capsys):
    assert run(tmp_path, "oracle-compare", "--out", str(tmp_path), config={"depth": 9}) == 1
    with pytest.raises(ConfigError):
        ExperimentConfig("oracle-compare", depth=0)


def test_tree_dump(capsys):
    assert cli.main(["tree-dump", "--seed", "5", "--depth", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "·\t2\t1"
    assert len(out) == 7


SMALL = {"n": 2000, "replicates": 60, "calib_walks": 4, "calib_steps": 50000}


def test_byte_identical_across_runs_and_threads(tmp_path):
    outs = []
    for i, threads in enumerate(["1", "1", "3"]):
        d = tmp_path / f"o{i}"
        code = run(tmp_path, "speed", "--out", str(d), "--threads", threads, config=SMALL)
        assert code in (0, 2)
        outs.append((d / "speed.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_seed_changes_output(tmp_path):
    run(tmp_path, "speed", "--out", str(tmp_path / "a"), config=SMALL)
    run(tmp_path, "speed", "--out", str(tmp_path / "b"), "--seed", "7", config=SMALL)
    assert (tmp_path / "a" / "speed.csv").read_bytes() != (tmp_path / "b" / "speed.csv").read_bytes()


def test_verdict_failure_exit_2(tmp_path, capsys):
    # 10^4 trap samples give a single moment evaluation, never a verdict
    code = run(tmp_path, "trap-moments", "--beta", "1", "--out", str(tmp_path), config={"trap_samples": 10**4})
    assert code == 2
    assert json.loads((tmp_path / "trap-moments.json").read_text())["rows"][0]["trend"] == "inconclusive"


def test_annealed_clt_json(tmp_path):
    code = run(tmp_path, "annealed-clt", "--beta", "1", "--out", str(tmp_path))
    summary = json.loads((tmp_path / "annealed-clt.json").read_text())
    row = summary["rows"][0]
    assert code == 0 and summary["passed"]
    assert row["verdict"] == "pass" and row["p_value"] > 0.01
    assert summary["config"]["seed"] == experiments.DEFAULT_SEED
