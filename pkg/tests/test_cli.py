import json
import logging

import numpy as np
import pytest

from dynmtl.cli import (Checkpoint, ConfigError, load_checkpoint, main, parse_config,
                        parse_preference, save_checkpoint)

from conftest import small_config_dict

CKPTS = ("anchor", "affinity", "edge", "weight")


def test_seed_required_unless_given():
    with pytest.raises(ConfigError, match="seed"):
        parse_config({})
    assert parse_config({}, seed=4).seed == 4
    assert parse_config({"seed": 1}, seed=4).seed == 4


@pytest.mark.parametrize("raw,field", [
    ({"seed": 0, "train": {"edge_stepz": 3}}, "train.edge_stepz"),
    ({"seed": 0, "colour": 1}, "colour"),
    ({"seed": 0, "anchor": {"width": "wide"}}, "anchor.width"),
    ({"seed": 0, "train": {"exact_p_use": 1}}, "train.exact_p_use"),
    ({"seed": 0, "suite": {"seed": 5}}, "suite.seed"),
    ({"seed": 0, "eval": {"reference": [2.0, 2.0]}}, "eval.reference"),
    ({"seed": -3}, "seed"),
    ({"seed": 0, "train": {"eta": -1.0}}, "train"),
])
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(raw)


def test_config_echo_round_trips():
    cfg = parse_config(small_config_dict())
    again = parse_config(json.loads(cfg.dumps()))
    assert again.dumps() == cfg.dumps()
    assert again.training_hash() == cfg.training_hash()
    changed = small_config_dict()
    changed["eval"]["hv_prefs"] = 7
    assert parse_config(changed).training_hash() == cfg.training_hash()
    changed["train"]["lr"] = 0.5
    assert parse_config(changed).training_hash() != cfg.training_hash()


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3) / 7.0, "b": np.array([np.pi])}
    save_checkpoint(Checkpoint("edge", arrays, "h1", 5, {"n": 3}), tmp_path / "e.ckpt")
    back = load_checkpoint(tmp_path / "e.ckpt", "edge", "h1")
    assert back.meta == {"n": 3} and back.seed == 5
    assert all(back.arrays[k].tobytes() == arrays[k].tobytes() for k in arrays)
    with pytest.raises(ConfigError, match="hash"):
        load_checkpoint(tmp_path / "e.ckpt", "edge", "h2")
    with pytest.raises(ConfigError, match="expected 'anchor'"):
        load_checkpoint(tmp_path / "e.ckpt", "anchor")
    raw = (tmp_path / "e.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-3])
    with pytest.raises(ConfigError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt", "edge")


def test_parse_preference(caplog):
    with caplog.at_level(logging.WARNING):
        p = parse_preference("1,0,0", 0.0, 3)
    assert p.r == (1.0, 0.0, 0.0) and caplog.text == ""
    with caplog.at_level(logging.WARNING):
        p = parse_preference("2,1,1", 0.5, 3)
    assert p.r == (0.5, 0.25, 0.25) and "normalising" in caplog.text
    for bad, c in (("1,0", 0.0), ("a,b,c", 0.0), ("-1,1,1", 0.0), ("1,0,0", 1.5)):
        with pytest.raises(ConfigError):
            parse_preference(bad, c, 3)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "small.json"
    cfg_path.write_text(json.dumps(small_config_dict()))
    out = root / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return cfg_path, out


def test_train_outputs(small_run):
    _, out = small_run
    names = {p.name for p in out.iterdir()}
    assert {f"{c}.ckpt" for c in CKPTS} <= names
    assert {"config.json", "affinity.csv", "report_anchor.csv", "report_edge.csv",
            "report_weight.csv"} <= names
    header = (out / "report_edge.csv").read_text().splitlines()[0]
    assert header == "step,task_loss,active,inactive,omega,zeta,c,r_1,r_2,r_3"


def test_predict_json(small_run, capsys):
    _, out = small_run
    assert main(["predict", "--out", str(out), "--r", "1,0,0", "--c", "0.5"]) == 0
    first = capsys.readouterr().out
    assert main(["predict", "--out", str(out), "--r", "1,0,0", "--c", "0.5"]) == 0
    assert capsys.readouterr().out == first
    rep = json.loads(first)
    assert set(rep) >= {"parent", "active", "cross_task_edges", "param_count", "flop_count",
                        "resource_ratio"}
    assert np.array(rep["parent"]).shape == (2, 3)
    assert 0 < rep["resource_ratio"] <= 1
    assert main(["predict", "--out", str(out), "--r", "1,0,0", "--c", "1.5"]) == 2


def test_sweep_and_eval_hv(small_run, capsys):
    _, out = small_run
    assert main(["sweep", "--out", str(out), "--grid", "25"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary["by_c"]) == {"0.0", "1.0"}
    assert len((out / "sweep.csv").read_text().splitlines()) == 51
    assert json.loads((out / "sweep_summary.json").read_text()) == summary
    assert main(["eval-hv", "--out", str(out)]) == 0
    hv = json.loads(capsys.readouterr().out)
    assert hv["n_prefs"] == 5 and set(hv["by_c"]["1.0"]) == {"adapted", "unadapted"}


def test_config_hash_mismatch_rejected(small_run, tmp_path, capsys):
    cfg_path, out = small_run
    other = small_config_dict()
    other["train"]["lr"] = 0.01
    (tmp_path / "other.json").write_text(json.dumps(other))
    code = main(["sweep", "--config", str(tmp_path / "other.json"), "--out", str(out)])
    assert code == 2 and "hash mismatch" in capsys.readouterr().err
    assert main(["predict", "--out", str(out), "--seed", "99", "--r", "1,0,0"]) == 2


def test_missing_seed_exit_code(tmp_path, capsys):
    raw = small_config_dict()
    del raw["seed"]
    (tmp_path / "c.json").write_text(json.dumps(raw))
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_missing_out_and_config(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps(small_config_dict()))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 2
    assert "out" in capsys.readouterr().err
    assert main(["train", "--out", str(tmp_path / "o")]) == 2
    assert "--config" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path, capsys):
    raw = small_config_dict()
    raw["anchor"].update(lr=1e200, finetune_lr=1e200)
    (tmp_path / "c.json").write_text(json.dumps(raw))
    assert main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")]) == 3
    assert "numeric failure" in capsys.readouterr().err


def test_gen_data(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(small_config_dict()))
    assert main(["gen-data", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "targets_task2.csv").exists()
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta["spec"]["seed"] == 3


def test_checkpoints_reproduce_in_memory_models(tmp_path):
    from dynmtl.controller import EdgeHypernet, Preference, WeightHypernet, predict
    from dynmtl.numkernel import Rng
    from dynmtl.searchspace import AnchorNet
    from factories import random_anchor
    anchor = random_anchor()
    h = EdgeHypernet(3, 2, Rng(1), diag_bias=0.0, head_scale=1.0)
    hbar = WeightHypernet.for_anchor(anchor, Rng(2))
    hbar.params["head.W"].data = Rng(3).normal(hbar.params["head.W"].shape, scale=0.1)
    for name, arrays in (("anchor", anchor.arrays()), ("edge", h.numpy_params()),
                         ("weight", hbar.numpy_params())):
        save_checkpoint(Checkpoint(name, arrays, "x", 0), tmp_path / f"{name}.ckpt")
    anchor2 = AnchorNet.from_arrays(load_checkpoint(tmp_path / "anchor.ckpt", "anchor").arrays)
    h2 = EdgeHypernet(3, 2, Rng(50))
    h2.load_params(load_checkpoint(tmp_path / "edge.ckpt", "edge").arrays)
    hbar2 = WeightHypernet.for_anchor(anchor2, Rng(51))
    hbar2.load_params(load_checkpoint(tmp_path / "weight.ckpt", "weight").arrays)
    x = Rng(4).normal((9, 4))
    for c in (0.0, 1.0):
        pref = Preference((0.2, 0.5, 0.3), c)
        ta, ma = predict(h, hbar, anchor, pref)
        tb, mb = predict(h2, hbar2, anchor2, pref)
        assert np.array_equal(ta.parent, tb.parent)
        assert ma(x).tobytes() == mb(x).tobytes()
