import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from posetracker import kernels

NUMBA = kernels.implementations("numba")
NUMPY = kernels.implementations("numpy")
PLAIN = dict(kernels._LOOPS)      # uncompiled loop versions, a third opinion

TABLES = {"numba": NUMBA, "numpy": NUMPY, "plain": PLAIN}

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False, width=64)
grid = st.integers(-20, 20).map(lambda k: k / 4.0)     # coarse values so ties and touching edges show up
coord = st.one_of(finite, grid)


def same(*arrays):
    a0 = np.asarray(arrays[0])
    return all(a0.shape == np.asarray(a).shape and a0.dtype == np.asarray(a).dtype
               and np.array_equal(a0, a, equal_nan=True) for a in arrays[1:])


def run_all(name, *args):
    return [TABLES[t][name](*[np.array(a, copy=True) for a in args]) for t in TABLES]


def poses(n_joints):
    return hnp.arrays(np.float64, (n_joints, 3), elements=st.one_of(coord, st.floats(0, 1)))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 15).flatmap(poses), st.sampled_from([0.0, 0.05, 0.5]))
def test_tight_box_backends_agree(kps, floor):
    kps[:, 2] = np.abs(kps[:, 2]) % 1.0
    assert same(*run_all("tight_box", kps, floor))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 4), st.integers(1, 6), st.data())
def test_containment_backends_agree(n, j, data):
    cands = data.draw(hnp.arrays(np.float64, (n, j, 3), elements=grid))
    cands[:, :, 2] = np.abs(cands[:, :, 2]) / 5.0
    x0, y0 = data.draw(grid), data.draw(grid)
    box = np.array([x0, y0, x0 + data.draw(st.integers(0, 20)) / 4.0, y0 + data.draw(st.integers(0, 20)) / 4.0])
    assert same(*run_all("containment", cands, box, 0.05))


boxes = st.integers(0, 5).flatmap(lambda n: st.lists(
    st.tuples(coord, coord, st.one_of(st.floats(0, 500), st.integers(0, 8).map(float)),
              st.one_of(st.floats(0, 500), st.integers(0, 8).map(float))), min_size=n, max_size=n))


def as_boxes(rows):
    a = np.array([(x, y, x + w, y + h) for x, y, w, h in rows], dtype=np.float64)
    return a.reshape(-1, 4)


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_iou_backends_agree(a, b):
    assert same(*run_all("iou_matrix", as_boxes(a), as_boxes(b)))


@settings(max_examples=400, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6), st.data(), st.booleans())
def test_greedy_backends_agree(n, m, data, descending):
    score = data.draw(hnp.arrays(np.float64, (n, m), elements=st.integers(0, 10).map(lambda k: k / 10.0)))
    thr = data.draw(st.sampled_from([0.0, 0.3, 0.55, 1.0, np.inf]))
    assert same(*run_all("greedy_assign", score, thr, descending))


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5), st.data())
def test_pairwise_dist_backends_agree(n, m, data):
    a = data.draw(hnp.arrays(np.float64, (n, 2), elements=coord))
    b = data.draw(hnp.arrays(np.float64, (m, 2), elements=coord))
    assert same(*run_all("pairwise_dist", a, b))


def test_greedy_tie_break_rows_then_columns():
    for table in TABLES.values():
        m = np.full((3, 3), 0.5)
        assert table["greedy_assign"](m, 0.3, True).tolist() == [[0, 0], [1, 1], [2, 2]]
        m = np.array([[0.4, 0.9], [0.9, 0.4]])
        assert table["greedy_assign"](m, 0.3, True).tolist() == [[0, 1], [1, 0]]
        assert table["greedy_assign"](np.zeros((0, 3)), 0.3, True).shape == (0, 2)


def test_implementations_rejects_unknown_backend():
    with pytest.raises(ValueError):
        kernels.implementations("cuda")


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("off", "numpy"), ("1", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, POSETRACKER_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from posetracker import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_warmup_runs_on_both_tables():
    kernels.warmup(NUMPY)
    kernels.warmup(NUMBA)
