import json

import numpy as np
import pytest

from posetracker.cli import main
from posetracker.gcn import SiameseMatcher, init_weights
from posetracker.pairs import PairDataset
from posetracker.sequence import emit_sequence, load_sequence
from posetracker.synth import SynthConfig, synth_sequence

from conftest import person, sequence_of


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def single_person(tmp_path):
    path = tmp_path / "one.json"
    emit_sequence(synth_sequence(SynthConfig(n_people=1, n_frames=30, seed=3)), path)
    return path


@pytest.fixture(scope="module")
def small_pairs(tmp_path_factory):
    d = tmp_path_factory.mktemp("pairs")
    cfg = d / "fam.json"
    cfg.write_text(json.dumps({"template": {"n_people": 2, "n_frames": 6, "layout": "cluster",
                                            "frame_stride": 6, "noise_sigma": 2.0},
                               "seeds": [0, 6], "prefix": "p"}))
    assert run("gen-pairs", "--synth", cfg, "--categories", "positive,hard-negative", "--out", d / "p.json") == 0
    return d / "p.json"


def test_synth_bundled_config_is_schema_valid(tmp_path):
    out = tmp_path / "shift.json"
    assert run("synth", "--config", "camera_shift", "--out", out) == 0
    seq = load_sequence(out)
    assert len(seq) == 40
    assert (tmp_path / "shift.json.manifest.json").exists()
    assert run("synth", "--config", "small_suite", "--out", tmp_path / "suite") == 0
    assert len(list((tmp_path / "suite").glob("small-*.json"))) == 6
    assert run("synth", "--config", "small_suite", "--seed", 3, "--out", tmp_path / "s2") == 2


def test_track_single_person_keeps_one_id(tmp_path, single_person):
    out = tmp_path / "t.json"
    assert run("track", "--input", single_person, "--out", out, "--weights", "bundled") == 0
    seq = load_sequence(out)
    assert {c.track_id for f in seq.frames for c in f.candidates} == {1}
    man = json.loads((tmp_path / "t.json.manifest.json").read_text())
    assert man["command"] == "track" and man["frames"] == 30
    assert man["fps_excluding_inference"] > 0
    assert {"association", "matching", "io", "total"} <= set(man["timings"])


def test_track_gcn_vs_sc_on_camera_shift(tmp_path):
    gt = tmp_path / "gt.json"
    assert run("synth", "--config", "camera_shift", "--out", gt) == 0
    assert run("track", "--input", gt, "--out", tmp_path / "gcn.json", "--weights", "bundled") == 0
    assert run("track", "--input", gt, "--out", tmp_path / "sc.json", "--disable-gcn") == 0
    assert run("eval", "--gt", gt, "--run", f"gcn={tmp_path / 'gcn.json'}", "--run", f"sc={tmp_path / 'sc.json'}",
               "--out", tmp_path / "r.csv") == 0
    man = json.loads((tmp_path / "r.csv.manifest.json").read_text())
    rows = [line.split(",") for line in (tmp_path / "r.csv").read_text().splitlines()[1:]]
    idsw = {r[0]: int(r[5]) for r in rows if r[1] == "total"}
    assert idsw["gcn"] <= idsw["sc"]
    assert man["mota"]["gcn"] >= man["mota"]["sc"]
    assert "simplified protocol" in (tmp_path / "r.txt").read_text()


def test_missing_weights_exit_code(tmp_path, single_person, capsys):
    assert run("track", "--input", single_person, "--out", tmp_path / "t.json") == 2
    assert "MatcherUnavailable" in capsys.readouterr().err
    assert run("track", "--input", single_person, "--out", tmp_path / "t.json", "--weights", tmp_path / "no.json") == 1


def test_exit_codes_for_bad_input(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{]")
    assert run("track", "--input", bad, "--out", tmp_path / "t.json", "--disable-gcn") == 1
    assert "ParseError" in capsys.readouterr().err
    assert run("track", "--input", bad, "--out", tmp_path / "t.json", "--mode", "sometimes") == 2
    assert run("track", "--input", bad, "--out", tmp_path / "t.json", "--disable-gcn", "--tau-s", "1.5") == 2
    assert run("gen-pairs", "--out", tmp_path / "p.json") == 2
    assert run("gen-pairs", "--synth", "camera_shift", "--categories", "nope", "--out", tmp_path / "p.json") == 2
    assert run("nonsense") == 2


def test_perfect_eval_reports_one(tmp_path):
    gt = tmp_path / "gt.json"
    seq = sequence_of([[(1, person((300, 300)))], [(1, person((305, 300)))]])
    emit_sequence(seq, gt)
    assert run("track", "--input", gt, "--out", tmp_path / "t.json", "--disable-gcn") == 0
    assert run("eval", "--gt", gt, "--run", f"only={tmp_path / 't.json'}", "--out", tmp_path / "r.csv") == 0
    total = [r for r in (tmp_path / "r.csv").read_text().splitlines() if r.startswith("only,total,")][0]
    assert total.split(",")[6] == "1.000000"


def test_gen_pairs_two_frames_one_person(tmp_path):
    src = tmp_path / "s.json"
    emit_sequence(sequence_of([[(1, person((300, 300)))], [(1, person((302, 300)))]]), src)
    assert run("gen-pairs", "--input", src, "--out", tmp_path / "p.json") == 0
    assert PairDataset.load(tmp_path / "p.json").counts()["positive"] == 1


def test_train_writes_valid_weights(tmp_path, small_pairs):
    out = tmp_path / "w.json"
    assert run("train", "--pairs", small_pairs, "--out", out, "--epochs", 2, "--hidden", 8, "--embed", 16) == 0
    m = SiameseMatcher.load(out)
    m.weights.check()
    assert m.threshold is not None
    assert (tmp_path / "w.loss.csv").read_text().splitlines()[0] == "epoch,lr,loss"
    e = m.embed_batch(PairDataset.load(small_pairs).a_coords[:3], PairDataset.load(small_pairs).a_valid[:3])
    assert np.allclose(np.linalg.norm(e, axis=1), 1.0)


def test_train_zero_epochs_equals_init(tmp_path, small_pairs):
    out = tmp_path / "w.json"
    assert run("train", "--pairs", small_pairs, "--out", out, "--epochs", 0, "--hidden", 8, "--embed", 16,
               "--seed", 4) == 0
    ref = init_weights(15, 8, 16, np.random.default_rng(4))
    got = SiameseMatcher.load(out).weights
    assert all(np.array_equal(a, b) for (_, a), (_, b) in zip(ref.items(), got.items()))


def test_train_same_seed_same_bytes(tmp_path, small_pairs):
    args = ("--epochs", 2, "--hidden", 8, "--embed", 16, "--seed", 9)
    assert run("train", "--pairs", small_pairs, "--out", tmp_path / "a.json", *args) == 0
    assert run("train", "--pairs", small_pairs, "--out", tmp_path / "b.json", *args) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_train_dataset_errors(tmp_path, small_pairs):
    assert run("train", "--pairs", small_pairs, "--categories", "positive", "--out", tmp_path / "w.json") == 1
    assert run("train", "--pairs", small_pairs, "--categories", "other-negative", "--out", tmp_path / "w.json") == 1


def test_config_file_overrides(tmp_path, single_person):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"keyframe-interval": 3, "disable_gcn": True, "mode": "fki"}))
    assert run("track", "--input", single_person, "--out", tmp_path / "t.json", "--config", cfg) == 0
    man = json.loads((tmp_path / "t.json.manifest.json").read_text())
    assert man["config"]["keyframe_interval"] == 3 and man["config"]["disable_gcn"] is True
    keys = [f.keyframe for f in load_sequence(tmp_path / "t.json").frames]
    assert [k for k, v in enumerate(keys) if v] == list(range(0, 30, 3))
    # explicit flags beat the file
    assert run("track", "--input", single_person, "--out", tmp_path / "u.json", "--config", cfg,
               "--keyframe-interval", 7) == 0
    assert json.loads((tmp_path / "u.json.manifest.json").read_text())["config"]["keyframe_interval"] == 7
    cfg.write_text(json.dumps({"keyframe_intervall": 3}))
    assert run("track", "--input", single_person, "--out", tmp_path / "t.json", "--config", cfg) == 2


def test_track_directory_of_inputs(tmp_path):
    assert run("synth", "--config", "small_suite", "--out", tmp_path / "suite") == 0
    assert run("track", "--input", tmp_path / "suite", "--out", tmp_path / "tracked", "--weights", "bundled") == 0
    assert len(list((tmp_path / "tracked").glob("small-*.json"))) == 6
    assert (tmp_path / "tracked" / "run.manifest.json").exists()


def test_convert(tmp_path):
    from test_providers import posetrack_doc

    src = tmp_path / "000007_train.json"
    src.write_text(json.dumps(posetrack_doc()))
    assert run("convert", "--input", src, "--out", tmp_path / "c.json") == 0
    seq = load_sequence(tmp_path / "c.json")
    assert seq.seq_id == "000007_train" and len(seq) == 2


def test_rerun_reproduces_and_detects_tampering(tmp_path, single_person, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run("track", "--input", "one.json", "--out", "t.json", "--weights", "bundled") == 0
    manifest = tmp_path / "t.json.manifest.json"
    assert json.loads(manifest.read_text())["config"]["input"] == [str(single_person)]
    assert run("rerun", manifest, "--out-dir", tmp_path / "again", "--check") == 0
    assert (tmp_path / "again" / "t.json").read_bytes() == (tmp_path / "t.json").read_bytes()
    doc = json.loads(manifest.read_text())
    doc["config"]["keyframe_interval"] = 1
    (tmp_path / "m2.json").write_text(json.dumps(doc))
    assert run("rerun", tmp_path / "m2.json", "--out-dir", tmp_path / "changed", "--check") == 1
