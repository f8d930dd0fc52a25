import numpy as np
import pytest

from posetracker.cli import _weights_path
from posetracker.gcn import SiameseMatcher
from posetracker.sequence import Candidate, FrameObservation, ObservationSequence
from posetracker.geometry import bbox_from_pose
from posetracker.skeleton import default_topology, topology_from_names
from posetracker.synth import JOINTS, bundled_config, synth_suite

# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def chain_topology(n):
    names = [f"j{k}" for k in range(n)]
    return topology_from_names(f"chain{n}", names, [(names[k], names[k + 1]) for k in range(n - 1)])


def person(center, height=200.0, score=1.0, seed=0):
    """A plausible 15-joint standing pose around ``center``."""
    rng = np.random.default_rng(seed)
    base = np.array([
        [0.0, -0.50], [0.0, -0.36], [0.03, -0.42], [-0.12, -0.34], [0.12, -0.34],
        [-0.16, -0.17], [0.16, -0.17], [-0.18, -0.02], [0.18, -0.02],
        [-0.08, 0.0], [0.08, 0.0], [-0.09, 0.24], [0.09, 0.24], [-0.10, 0.48], [0.10, 0.48],
    ])
    base = base + rng.uniform(-0.03, 0.03, size=base.shape)
    xy = np.asarray(center, dtype=np.float64) + height * base
    return np.column_stack([xy, np.full(15, float(score))])


def sequence_of(frames_people, joint_order=JOINTS, image_size=(1280, 720), seq_id="test"):
    """``frames_people``: list (frames) of lists of (gt_id, pose)."""
    frames = []
    for k, people in enumerate(frames_people):
        frames.append(FrameObservation(k, [Candidate(p, bbox_from_pose(p), gid) for gid, p in people]))
    return ObservationSequence(seq_id, image_size, tuple(joint_order), frames).validate()


@pytest.fixture(scope="session")
def topology():
    return default_topology()


@pytest.fixture(scope="session")
def bundled_matcher():
    return SiameseMatcher.load(_weights_path("bundled"))


@pytest.fixture(scope="session")
def shift_suite():
    return synth_suite(bundled_config("camera_shift_suite"))


@pytest.fixture(scope="session")
def small_suite():
    return synth_suite(bundled_config("small_suite"))
