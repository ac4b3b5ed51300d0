import csv
import hashlib

import pytest
import yaml

from pinchfl import cli
from pinchfl.config import (ConfigError, ExperimentConfig, apply_override, derive_seed,
                            from_dict, load_config)

FAST = ["solver.ddpg.total_steps=300", "solver.ddpg.warmup_steps=100", "fl.rounds=3",
        "fl.total_samples=1200", "fl.test_samples=200", "solver.oracle.x_points=3",
        "solver.oracle.power_points=3"]


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert (cfg.population.M, cfg.population.N, cfg.population.K) == (30, 6, 3)
    assert cfg.fixed_x_p == cfg.geometry.L / 2


def test_round_trip_is_identity(tmp_path):
    cfg = load_config(None, ["population.M=20", "fl.alpha=0.05"])
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    again = load_config(path)
    assert again == cfg and again.dump() == cfg.dump()
    assert from_dict(yaml.safe_load(cfg.dump())) == cfg


def test_unknown_and_mistyped_keys_rejected():
    with pytest.raises(ConfigError) as exc:
        from_dict({"geometry": {"L": 30.0, "bogus": 1}, "extra": {}})
    msgs = " ".join(exc.value.problems)
    assert "geometry.bogus" in msgs and "extra" in msgs
    with pytest.raises(ConfigError):
        from_dict({"population": {"M": "thirty"}})
    assert load_config(None, ["solver.ddpg.actor_lr=1e-3"]).solver.ddpg.actor_lr == 1e-3


def test_range_checks():
    with pytest.raises(ConfigError):
        from_dict({"population": {"M": 4, "N": 6}})
    with pytest.raises(ConfigError):
        from_dict({"population": {"K": 7}})


def test_override_parsing():
    d = apply_override({}, "solver.ddpg.tau=0.01")
    assert d == {"solver": {"ddpg": {"tau": 0.01}}}
    with pytest.raises(ConfigError):
        apply_override({}, "no_equals_sign")
    with pytest.raises(ConfigError):
        apply_override({"a": 1}, "a.b=2")


def test_derive_seed():
    assert derive_seed(0, "fl") == derive_seed(0, "fl")
    assert derive_seed(0, "fl") != derive_seed(0, "ddpg")
    assert derive_seed(0, "fl") != derive_seed(1, "fl")
    want = int.from_bytes(hashlib.sha256(b"0:classify").digest()[:8], "big")
    assert derive_seed(0, "classify") == want == 14527311183695083696
    with pytest.raises(ValueError):
        derive_seed(0, "")


def run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path)] + [a for s in FAST for a in ("--set", s)])


def test_classify_selects_three_plus_three(tmp_path):
    assert run(tmp_path, "classify") == 0
    rows = list(csv.DictReader(open(tmp_path / "classification.csv")))
    assert list(rows[0]) == ["id", "CQ_norm", "DC_norm", "NO*", "category", "selected"]
    picked = [r["selected"] for r in rows]
    assert picked.count("conventional") == 3 and picked.count("pinching") == 3
    assert len(rows) == 30


def test_config_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "classify", "--set", "population.N=50") == 2
    assert "config error" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("geometry: {L: 30, nope: 1}\n")
    assert run(tmp_path, "classify", "--config", str(bad)) == 2


def test_missing_upstream_artifact_exit_code(tmp_path, capsys):
    assert run(tmp_path, "oracle") == 3
    assert "classify" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path):
    assert run(tmp_path, "classify") == 0
    assert run(tmp_path, "train-ddpg", "--set", "solver.ddpg.loss_cap=1e-30") == 4


def test_train_and_oracle_artifacts(tmp_path):
    assert run(tmp_path, "solve", "--scheme", "fixed") == 0
    for name in ("ddpg_fixed.npz", "rewards_fixed.csv", "best_decision_fixed.json",
                 "manifest_solve.json", "config_resolved.yaml"):
        assert (tmp_path / name).exists()
    assert run(tmp_path, "oracle", "--scheme", "without_pinching") == 0
    assert (tmp_path / "oracle_without_pinching.json").exists()


def test_run_fl_writes_all_schemes(tmp_path):
    assert run(tmp_path, "run-fl") == 0
    rows = list(csv.DictReader(open(tmp_path / "fl_log.csv")))
    assert {r["scheme"] for r in rows} == {"optimized", "fixed", "without_pinching"}
    assert len(rows) == 9
