import json

import numpy as np
import pytest

from dpcpsf.cli import main
from dpcpsf.config import (SCHEMA_ID, default_config, load_config,
                           save_config, train_config_from)
from dpcpsf.dpc import LossParams, Policy, RolloutStore, rollout
from dpcpsf.safeset import SafeSet


def test_default_config_roundtrip(tmp_path):
    cfg = default_config()
    path = tmp_path / "c.json"
    save_config(cfg, path)
    cfg2 = load_config(path)
    assert cfg2 == cfg


def test_load_config_rejects_unknown_schema(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schema": "other-v9"}))
    with pytest.raises(ValueError):
        load_config(path)


def test_load_config_merges_partial(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schema": SCHEMA_ID,
                                "psf": {"alpha": 123.0}}))
    cfg = load_config(path)
    assert cfg["psf"]["alpha"] == 123.0
    assert cfg["psf"]["margin"] == default_config()["psf"]["margin"]


def test_train_config_from_wires_cylinder():
    cfg = default_config()
    tc = train_config_from(cfg)
    assert tc.loss.cylinder == (0.0, 0.35, 0.5)
    cfg["train"]["cylinder_penalty"] = False
    assert train_config_from(cfg).loss.cylinder is None


def test_cli_reldeg_sub1(capsys):
    assert main(["reldeg", "--system", "sub1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["vector_relative_degree"] == [2, 2, 2]
    assert out["x_s1"] == ["x", "y", "z", "vx", "vy", "vz"]
    assert out["x_s2"] == []


def test_cli_reldeg_quad(capsys):
    assert main(["reldeg", "--system", "quad"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert not all(out["well_defined"])
    assert set(out["x_s1"]) == {"x", "y", "z", "vx", "vy", "vz"}


def test_cli_safeset_build(tmp_path, capsys):
    # synthesize a small store of clean hover-ish rollouts
    pol = Policy.init(hidden=(6,), seed=0)
    lp = LossParams()
    store = RolloutStore()
    rng = np.random.default_rng(0)
    for i in range(8):
        x0 = np.concatenate([rng.uniform(1.0, 2.0, 3), rng.uniform(-0.5, 0.5, 3)])
        r = rollout(pol, x0, np.concatenate([x0[:3], np.zeros(3)]), 10, 0.05, lp)
        r.batch, r.index = 0, i
        store.append(r)
    store_path = tmp_path / "s.csv"
    store.to_csv(str(store_path))
    out_dir = tmp_path / "ss"
    code = main(["safeset", "build", "--store", str(store_path),
                 "--out", str(out_dir)])
    assert code == 0
    ss = SafeSet.load(str(out_dir))
    assert {s.set_id for s in ss.sets} == {"cvx", "cyl0"}
    assert "set cvx" in capsys.readouterr().out


def test_cli_bench_table(tmp_path, capsys):
    table = tmp_path / "t.txt"
    table.write_text("header\nrow\n")
    assert main(["bench", "table", "--table", str(table)]) == 0
    assert "header" in capsys.readouterr().out
