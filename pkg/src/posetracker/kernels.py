"""Hot inner loops of the tracking and evaluation paths.

Each kernel exists twice: an explicit-loop version compiled with
``numba.njit`` and a vectorized pure-numpy version. Both produce bitwise
identical results. The numba path is used when numba imports cleanly and the
environment variable ``POSETRACKER_NUMBA`` is not set to ``0``; set it to
``0`` to force the numpy path (useful for debugging and for platforms
without an LLVM build).

Only small arrays flow through here (a handful of people, 15 joints), so the
win from numba is mostly the removed per-call numpy overhead rather than
raw arithmetic throughput. ``benchmarks/bench_kernels.py`` compares both.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _numba_requested():
    return os.environ.get("POSETRACKER_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


NUMBA_ENABLED = HAVE_NUMBA and _numba_requested()


def _njit(fn):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


# ----------------------------------------------------------------------
# tight box over qualifying joints
# ----------------------------------------------------------------------

def _tight_box_loop(kps, floor):
    # returns (count, x_min, y_min, x_max, y_max)
    out = np.zeros(5)
    n = 0
    x0 = np.inf
    y0 = np.inf
    x1 = -np.inf
    y1 = -np.inf
    for j in range(kps.shape[0]):
        if kps[j, 2] >= floor:
            n += 1
            x = kps[j, 0]
            y = kps[j, 1]
            if x < x0:
                x0 = x
            if x > x1:
                x1 = x
            if y < y0:
                y0 = y
            if y > y1:
                y1 = y
    out[0] = n
    out[1] = x0
    out[2] = y0
    out[3] = x1
    out[4] = y1
    return out


def _tight_box_numpy(kps, floor):
    q = kps[kps[:, 2] >= floor]
    if len(q) == 0:
        return np.array([0.0, np.inf, np.inf, -np.inf, -np.inf])
    return np.array([len(q), q[:, 0].min(), q[:, 1].min(), q[:, 0].max(), q[:, 1].max()])


# ----------------------------------------------------------------------
# keypoint containment of several candidates in one box
# ----------------------------------------------------------------------

def _containment_loop(cands, box, floor):
    n = cands.shape[0]
    out = np.zeros(n)
    for i in range(n):
        total = 0
        inside = 0
        for j in range(cands.shape[1]):
            if cands[i, j, 2] >= floor:
                total += 1
                x = cands[i, j, 0]
                y = cands[i, j, 1]
                if box[0] <= x <= box[2] and box[1] <= y <= box[3]:
                    inside += 1
        if total > 0:
            out[i] = inside / total
    return out


def _containment_numpy(cands, box, floor):
    if cands.shape[0] == 0:
        return np.zeros(0)
    q = cands[:, :, 2] >= floor
    x = cands[:, :, 0]
    y = cands[:, :, 1]
    ins = q & (x >= box[0]) & (x <= box[2]) & (y >= box[1]) & (y <= box[3])
    total = q.sum(axis=1)
    out = np.zeros(cands.shape[0])
    ok = total > 0
    out[ok] = ins.sum(axis=1)[ok] / total[ok]
    return out


# ----------------------------------------------------------------------
# pairwise IOU
# ----------------------------------------------------------------------

def _iou_matrix_loop(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            union = area_a + area_b - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def _iou_matrix_numpy(a, b):
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    ok = (iw > 0.0) & (ih > 0.0) & (union > 0.0)
    out = np.zeros(inter.shape)
    out[ok] = inter[ok] / union[ok]
    return out


# ----------------------------------------------------------------------
# greedy one-to-one assignment
# ----------------------------------------------------------------------

def _greedy_loop(score, threshold, descending):
    n = score.shape[0]
    m = score.shape[1]
    flat = score.ravel()
    if descending:
        order = np.argsort(-flat, kind="mergesort")
    else:
        order = np.argsort(flat, kind="mergesort")
    row_used = np.zeros(n, dtype=np.bool_)
    col_used = np.zeros(m, dtype=np.bool_)
    out = np.empty((min(n, m), 2), dtype=np.int64)
    k = 0
    for idx in order:
        s = flat[idx]
        if descending:
            if not s > threshold:
                break
        else:
            if not s < threshold:
                break
        r = idx // m
        c = idx % m
        if row_used[r] or col_used[c]:
            continue
        row_used[r] = True
        col_used[c] = True
        out[k, 0] = r
        out[k, 1] = c
        k += 1
    return out[:k]


def _greedy_numpy(score, threshold, descending):
    n, m = score.shape
    flat = score.ravel()
    order = np.argsort(-flat if descending else flat, kind="mergesort")
    vals = flat[order]
    keep = vals > threshold if descending else vals < threshold
    order = order[keep]
    rows, cols = np.divmod(order, m) if m else (order, order)
    row_used = set()
    col_used = set()
    pairs = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        if r in row_used or c in col_used:
            continue
        row_used.add(r)
        col_used.add(c)
        pairs.append((r, c))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


# ----------------------------------------------------------------------
# pairwise euclidean distance between 2-d points
# ----------------------------------------------------------------------

def _pairwise_dist_loop(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            out[i, j] = np.sqrt(dx * dx + dy * dy)
    return out


def _pairwise_dist_numpy(a, b):
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


_NUMPY = {
    "tight_box": _tight_box_numpy,
    "containment": _containment_numpy,
    "iou_matrix": _iou_matrix_numpy,
    "greedy_assign": _greedy_numpy,
    "pairwise_dist": _pairwise_dist_numpy,
}

_LOOPS = {
    "tight_box": _tight_box_loop,
    "containment": _containment_loop,
    "iou_matrix": _iou_matrix_loop,
    "greedy_assign": _greedy_loop,
    "pairwise_dist": _pairwise_dist_loop,
}

_NUMBA = {name: _njit(fn) for name, fn in _LOOPS.items()} if HAVE_NUMBA else {}


def implementations(backend):
    """Kernel table for ``"numba"`` or ``"numpy"``, regardless of the env flag."""
    if backend == "numpy":
        return dict(_NUMPY)
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        return dict(_NUMBA)
    raise ValueError(f"unknown backend {backend!r}")


BACKEND = "numba" if NUMBA_ENABLED else "numpy"
_active = _NUMBA if NUMBA_ENABLED else _NUMPY

tight_box = _active["tight_box"]
containment = _active["containment"]
iou_matrix = _active["iou_matrix"]
greedy_assign = _active["greedy_assign"]
pairwise_dist = _active["pairwise_dist"]


def warmup(table=None):
    """Call every kernel once so JIT compilation (or cache loading) stays out of timings."""
    t = table or _active
    pose = np.array([[0.0, 0.0, 1.0], [1.0, 2.0, 1.0]])
    box = np.array([0.0, 0.0, 2.0, 2.0])
    t["tight_box"](pose, 0.05)
    t["containment"](pose[None], box, 0.05)
    m = t["iou_matrix"](box[None], box[None])
    t["greedy_assign"](m, 0.3, True)
    t["greedy_assign"](m, 0.3, False)
    t["pairwise_dist"](pose[:, :2].copy(), pose[:, :2].copy())
