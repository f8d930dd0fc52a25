import json

import numpy as np
import pytest

from posetracker.errors import FrameOutOfRange, InvalidConfig, ParseError, SchemaVersionError, ValidationError
from posetracker.geometry import BoundingBox, bbox_from_pose, mean_confidence, normalize_pose
from posetracker.providers import ReplayDetector, ReplayEstimator
from posetracker.sequence import dumps_sequence, emit_sequence, load_sequence, convert_posetrack, sequence_from_dict
from posetracker.synth import (JOINTS, SynthConfig, bundled_config, bundled_config_names, load_synth_config,
                               parse_synth_config, synth_sequence, synth_suite)

from conftest import person, sequence_of


def minimal_doc(frames=None):
    kp = person((300, 300)).tolist()
    return {"format": "posetracker-sequence", "format_version": 1, "seq_id": "m", "image_size": [1280, 720],
            "joint_order": list(JOINTS),
            "frames": frames if frames is not None else [{"index": 0, "candidates": [{"keypoints": kp}]}]}


def test_load_minimal_file_and_infer_box(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(minimal_doc()))
    seq = load_sequence(path)
    assert len(seq) == 1
    c = seq.frames[0].candidates[0]
    assert c.box == bbox_from_pose(c.pose)
    assert c.gt_id is None


def test_load_errors(tmp_path):
    doc = minimal_doc()
    doc["frames"] = [{"index": 0, "candidates": []}, {"index": 2, "candidates": []}]
    with pytest.raises(ValidationError):
        sequence_from_dict(doc)
    doc = minimal_doc()
    doc["format_version"] = 3
    with pytest.raises(SchemaVersionError):
        sequence_from_dict(doc)
    doc = minimal_doc()
    del doc["frames"][0]["candidates"][0]["keypoints"]
    with pytest.raises(ParseError, match=r"frames\[0\]\.candidates\[0\]"):
        sequence_from_dict(doc)
    doc = minimal_doc()
    doc["frames"][0]["candidates"][0]["keypoints"] = [[0, 0, 1]] * 14
    with pytest.raises(ValidationError):
        sequence_from_dict(doc)
    doc = minimal_doc()
    doc["frames"][0]["candidates"] *= 2
    for c, g in zip(doc["frames"][0]["candidates"], (4, 4)):
        c["gt_id"] = g
    with pytest.raises(ValidationError):
        sequence_from_dict(doc)
    path = tmp_path / "broken.json"
    path.write_text('{"format_version": 1,\n "seq_id": }')
    with pytest.raises(ParseError, match=":2:"):
        load_sequence(path)
    doc = minimal_doc()
    with pytest.raises(ValidationError):
        sequence_from_dict(doc, joint_order=tuple(reversed(JOINTS)))


def test_out_of_bounds_is_a_warning(caplog):
    doc = minimal_doc()
    doc["frames"][0]["candidates"][0]["keypoints"] = (person((300, 300)) + [5000.0, 0.0, 0.0]).tolist()
    seq = sequence_from_dict(doc)
    assert len(seq) == 1
    assert "outside the image" in caplog.text


def test_emit_load_round_trip(tmp_path):
    seq = synth_sequence(SynthConfig(n_people=3, n_frames=10, noise_sigma=1.5, seed=5,
                                     occlusion_windows=[(2, 3, 6)]))
    seq.frames[4].candidates[0].pose[2, 2] = 0.37
    path = tmp_path / "rt.json"
    emit_sequence(seq, path)
    back = load_sequence(path)
    assert back == seq
    assert dumps_sequence(back) == path.read_text()


def test_replay_detector():
    a, b, c = person((200, 300)), person((600, 300), seed=1), person((1000, 300), seed=2)
    seq = sequence_of([[(1, a), (2, b), (3, c)], []])
    det = ReplayDetector(seq)
    out = det(0)
    assert len(out) == 3
    again = det(0)
    assert len(again) == 3
    assert all(np.array_equal(x.pose, y.pose) and x.box == y.box for x, y in zip(again, out))
    assert np.array_equal(out[1].pose, b)
    assert det(1) == []
    with pytest.raises(FrameOutOfRange):
        det(2)


def test_replay_estimator_selects_best_contained():
    a, b = person((300, 300)), person((700, 300), seed=1)
    seq = sequence_of([[(1, a), (2, b)]])
    before = seq.frames[0].candidates[0].pose.copy()
    est = ReplayEstimator(seq)
    assert np.array_equal(est(0, bbox_from_pose(a)), a)
    assert np.array_equal(est(0, bbox_from_pose(b)), b)
    empty = est(0, BoundingBox(1100, 600, 1200, 700))
    assert mean_confidence(empty) == 0.0
    assert np.array_equal(empty[:, :2], a[:, :2])   # best candidate's coordinates, scores zeroed
    assert np.array_equal(seq.frames[0].candidates[0].pose, before)
    with pytest.raises(FrameOutOfRange):
        est(1, bbox_from_pose(a))


def test_replay_estimator_partial_overlap():
    a = person((300, 300))
    b = person((300, 300), seed=1)
    b[:, 0] += 400.0
    # roi covering all of A and a sliver of B: move 3 of B's joints into it
    b[:3, :2] = a[:3, :2]
    seq = sequence_of([[(1, a), (2, b)]])
    assert np.array_equal(ReplayEstimator(seq)(0, bbox_from_pose(a)), a)


def test_replay_estimator_empty_frame_and_noise():
    seq = sequence_of([[], [(1, person((300, 300)))]])
    est = ReplayEstimator(seq)
    assert est(0, BoundingBox(0, 0, 10, 10)).tolist() == np.zeros((15, 3)).tolist()
    noisy = ReplayEstimator(seq, noise_sigma=2.0, score_jitter=0.05, seed=3)
    roi = seq.frames[1].candidates[0].box
    p1, p2 = noisy(1, roi), noisy(1, roi)
    assert np.array_equal(p1, p2)
    d = p1 - seq.frames[1].candidates[0].pose
    assert 0 < np.abs(d[:, :2]).max() <= 6.0
    assert np.abs(d[:, 2]).max() <= 0.05 and p1[:, 2].max() <= 1.0


def test_synth_smoothness():
    seq = synth_sequence(SynthConfig(n_people=1, n_frames=100, seed=11))
    centers = np.array([fr.candidates[0].pose[:, :2].mean(axis=0) for fr in seq.frames])
    assert np.linalg.norm(np.diff(centers, axis=0), axis=1).max() < 5.0


def test_synth_camera_shift():
    base = SynthConfig(n_people=1, n_frames=20, seed=2)
    shifted = SynthConfig(n_people=1, n_frames=20, seed=2, camera_shift_events=[(10, 300, 0)])
    s0, s1 = synth_sequence(base), synth_sequence(shifted)
    p0 = [fr.candidates[0].pose for fr in s0.frames]
    p1 = [fr.candidates[0].pose for fr in s1.frames]
    assert np.array_equal(p0[9], p1[9])
    assert np.allclose(p1[10][:, 0], p0[10][:, 0] + 300, atol=1e-9)
    n0 = normalize_pose(p0[10], bbox_from_pose(p0[10]))
    n1 = normalize_pose(p1[10], bbox_from_pose(p1[10]))
    assert np.allclose(n0.coords, n1.coords, atol=1e-9)


def test_synth_zoom_and_occlusion():
    cfg = SynthConfig(n_people=2, n_frames=12, seed=4, zoom_events=[(5, 2.0)], occlusion_windows=[(1, 2, 4)],
                      enter_frames={2: 1})
    seq = synth_sequence(cfg)
    ids = [[c.gt_id for c in fr.candidates] for fr in seq.frames]
    assert ids[0] == [1] and ids[1] == [1, 2] and ids[2] == [2] and ids[3] == [2] and ids[4] == [1, 2]
    ref = synth_sequence(SynthConfig(n_people=2, n_frames=12, seed=4))
    h_ref = ref.frames[5].candidates[0].box.height
    assert seq.frames[5].candidates[0].box.height == pytest.approx(2 * h_ref, rel=1e-9)


def test_synth_determinism(tmp_path):
    cfg = SynthConfig(n_people=3, n_frames=15, noise_sigma=1.0, seed=9)
    emit_sequence(synth_sequence(cfg), tmp_path / "a.json")
    emit_sequence(synth_sequence(cfg), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_synth_config_errors(tmp_path):
    for bad in (dict(n_frames=0), dict(noise_sigma=-1), dict(layout="zigzag"),
                dict(camera_shift_events=[(50, 1, 1)]), dict(zoom_events=[(3, 0.0)]),
                dict(occlusion_windows=[(5, 0, 2)]), dict(bogus=1)):
        with pytest.raises(InvalidConfig):
            parse_synth_config({"n_frames": 10, **bad})
    with pytest.raises(InvalidConfig):
        bundled_config("no-such-suite")
    with pytest.raises(InvalidConfig):
        parse_synth_config(3)
    (tmp_path / "c.json").write_text("{nope")
    with pytest.raises(InvalidConfig):
        load_synth_config(tmp_path / "c.json")


def test_seeded_family_expands():
    cfgs = parse_synth_config({"template": {"n_frames": 4}, "seeds": [3, 6], "prefix": "fam"})
    assert [c.seed for c in cfgs] == [3, 4, 5]
    assert [c.seq_id for c in cfgs] == ["fam-3", "fam-4", "fam-5"]


def test_bundled_suites_are_valid():
    names = bundled_config_names()
    assert {"camera_shift", "camera_shift_suite", "small_suite", "six_person"} <= set(names)
    suite = bundled_config("camera_shift_suite")
    assert len(suite) >= 10 and all(c.camera_shift_events for c in suite)
    for cfg in bundled_config("small_suite"):
        assert cfg.n_people <= 3 and cfg.n_frames <= 20
    assert len(synth_suite(bundled_config("camera_shift"))) == 1


def posetrack_doc():
    names = ["nose", "head_bottom", "head_top", "left_ear", "right_ear", "left_shoulder", "right_shoulder",
             "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip", "right_hip", "left_knee",
             "right_knee", "left_ankle", "right_ankle"]

    def kps(dx, vis=1):
        return [v for k in range(17) for v in (100 + 10 * k + dx, 50 + 20 * k, vis)]

    return {
        "categories": [{"keypoints": names}],
        "images": [{"id": 11, "frame_id": 1, "vid_id": "007", "is_labeled": True},
                   {"id": 10, "frame_id": 0, "vid_id": "007", "is_labeled": True},
                   {"id": 12, "frame_id": 2, "vid_id": "007", "is_labeled": False}],
        "annotations": [{"image_id": 10, "track_id": 0, "keypoints": kps(0)},
                        {"image_id": 11, "track_id": 0, "keypoints": kps(5)},
                        {"image_id": 11, "track_id": 1, "keypoints": kps(400, vis=0)}],
    }


def test_convert_posetrack():
    seq = convert_posetrack(posetrack_doc(), JOINTS)
    assert seq.seq_id == "007"
    assert len(seq) == 2                                   # unlabeled frame dropped
    assert [len(f.candidates) for f in seq.frames] == [1, 1]  # invisible person dropped
    pose = seq.frames[0].candidates[0].pose
    # neck comes from head_bottom (source index 1), head_top from index 2
    assert pose[JOINTS.index("neck")].tolist() == [110.0, 70.0, 1.0]
    assert pose[JOINTS.index("head_top")].tolist() == [120.0, 90.0, 1.0]
    assert seq.frames[1].candidates[0].pose[0, 0] == 125.0
    assert len(convert_posetrack(posetrack_doc(), JOINTS, labeled_only=False)) == 3
    with pytest.raises(ValidationError):
        convert_posetrack(posetrack_doc(), ("head_top", "tail"))
