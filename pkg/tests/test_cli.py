import json

import numpy as np
import pytest

from epsfp.cli import main
from epsfp.dataset import read_dataset


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--out", out, "--scenario", "fixed-location", "--devices", 3, "--frames", 4,
               "--seed", 5) == 0
    return out / "fixed-location.epsf"


def test_simulate_outputs(sim):
    h, recs = read_dataset(sim)
    assert h.record_count == 36 and len({r.device_id for r in recs}) == 3
    doc = json.loads((sim.parent / "run.json").read_text())
    assert doc["command"] == "simulate" and doc["config"]["seed"] == 5
    assert (sim.parent / "fixed-location.epsf.json").exists()


def test_simulate_rerun_is_byte_identical(sim, tmp_path):
    assert run("simulate", "--out", tmp_path, "--scenario", "fixed-location", "--devices", 3, "--frames", 4,
               "--seed", 5) == 0
    for name in ("fixed-location.epsf", "fixed-location.epsf.json", "run.json"):
        assert (tmp_path / name).read_bytes() == (sim.parent / name).read_bytes()


def test_config_file_then_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "frames_per_device": 1, "population": {"n_devices": 2}}))
    assert run("simulate", "--out", tmp_path / "o", "--config", cfg, "--seed", 4) == 0
    doc = json.loads((tmp_path / "o" / "run.json").read_text())
    assert doc["config"]["seed"] == 4 and doc["config"]["frames_per_device"] == 1


def test_eps_conversion(sim, tmp_path):
    assert run("eps", "--out", tmp_path, "--dataset", sim) == 0
    h, recs = read_dataset(tmp_path / "fixed-location-eps.epsf")
    assert h.record_count == 36 and h.frame_len == 4096
    np.testing.assert_allclose(recs[0].eps_rows().sum(axis=1), 1.0, rtol=1e-5)
    assert len(list((tmp_path / "eps_tables").glob("*.tsv"))) == 9


def test_figure3_counts(tmp_path, capsys):
    assert run("figure3", "--out", tmp_path) == 0
    rows = (tmp_path / "hump_counts.tsv").read_text().splitlines()[1:]
    assert {float(r.split("\t")[0]): int(r.split("\t")[1]) for r in rows} == {0: 0, 50: 1, 100: 2, 200: 4}
    assert (tmp_path / "envelope_cfo200.tsv").exists()


def test_train_and_checkpoint(sim, tmp_path):
    assert run("train", "--out", tmp_path, "--dataset", sim, "--epochs", 1) == 0
    from epsfp.cnn import load_checkpoint
    mp = load_checkpoint(tmp_path / "eps_cnn.ckpt")
    assert mp.arch.n_classes == 3
    assert (tmp_path / "losses.tsv").read_text().startswith("epoch\tloss\taccuracy\n1\t")


def test_evaluate_centroid(tmp_path):
    assert run("evaluate", "--out", tmp_path, "--devices", 3, "--frames", 5, "--train", "A", "--test", "A",
               "--test", "B", "--min-accuracy", 0.9) == 0
    text = (tmp_path / "report.csv").read_text()
    assert text.startswith("train_domain,test_domain,model,fold,accuracy\n")
    assert "A,B,nearest_centroid" in text


def test_zero_trust_commands(tmp_path, capsys):
    enroll = tmp_path / "enroll"
    assert run("simulate", "--out", enroll, "--scenario", "random-location", "--devices", 2, "--frames", 20,
               "--seed", 8) == 0
    probe = tmp_path / "probe"
    assert run("simulate", "--out", probe, "--scenario", "random-location", "--devices", 2, "--frames", 3,
               "--seed", 9) == 0
    reg_dir = tmp_path / "reg"
    assert run("enroll", "--out", reg_dir, "--dataset", enroll / "random-location.epsf") == 0
    reg = reg_dir / "registry.epsr"
    assert reg.exists() and (reg_dir / "audit.log").read_text().count('"enroll"') == 2
    v = tmp_path / "verify"
    assert run("verify", "--out", v, "--dataset", probe / "random-location.epsf", "--registry", reg) == 0
    rows = (v / "decisions.tsv").read_text().splitlines()[1:]
    assert len(rows) == 6
    a = tmp_path / "auth"
    assert run("auth", "--out", a, "--dataset", probe / "random-location.epsf", "--registry", reg,
               "--claim", 0, "--window", 1) == 0
    verdicts = [r.split("\t")[-1] for r in (a / "decisions.tsv").read_text().splitlines()[1:]]
    assert verdicts[:3] == ["accepted"] * 3 and verdicts[3:] == ["alert"] * 3


def test_exit_codes(tmp_path, sim):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sede": 1}))
    assert run("simulate", "--out", tmp_path, "--config", bad) == 2
    trunc = tmp_path / "t.epsf"
    trunc.write_bytes(sim.read_bytes()[:-7])
    assert run("eps", "--out", tmp_path, "--dataset", trunc) == 3
    assert run("eps", "--out", tmp_path, "--dataset", tmp_path / "missing.epsf") == 3
    assert run("train", "--out", tmp_path, "--dataset", sim, "--model", "nearest_centroid") == 2
    assert run("verify", "--out", tmp_path, "--dataset", sim, "--registry", tmp_path / "none.epsr") == 2
    with pytest.raises(SystemExit) as info:
        run("frobnicate")
    assert info.value.code == 2


def test_accept_subset(tmp_path):
    assert run("accept", "--out", tmp_path, "--only", "A1,A4") == 0
    lines = (tmp_path / "acceptance.txt").read_text().splitlines()
    assert lines[0].startswith("A1 PASS") and lines[1].startswith("A4 PASS")
    assert [r["id"] for r in json.loads((tmp_path / "acceptance.json").read_text())] == ["A1", "A4"]
    assert run("accept", "--only", "A99") == 2
