"""Keypoint-level clear-MOT scoring.

Each joint type is scored as its own multi-object tracking problem: a
ground-truth joint and a predicted joint of the same type may correspond
when they are closer than ``dist_threshold`` times the diagonal of the
ground-truth person's box. Per frame and joint type:

1. correspondences from the previous frame are kept while still in range;
2. the rest are matched greedily by ascending distance, ties broken by
   lower gt id, then lower predicted id;
3. unmatched ground truth counts as a miss, unmatched predictions as false
   positives, and a matched ground-truth joint whose predicted id differs
   from the one it was last matched to counts as an id switch.

This is a simplified protocol (box-diagonal instead of head-size
normalization), so absolute numbers are not comparable to official
benchmark tables.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FrameMismatch, ValidationError
from .geometry import JOINT_SCORE_FLOOR

DEFAULT_DIST_THRESHOLD = 0.1
REPORT_COLUMNS = ("run", "joint", "gt", "miss", "fp", "idsw", "mota", "recall")


@dataclass
class MotTally:
    joint_names: tuple
    gt: np.ndarray = None
    misses: np.ndarray = None
    false_positives: np.ndarray = None
    id_switches: np.ndarray = None
    matches: np.ndarray = None

    def __post_init__(self):
        n = len(self.joint_names)
        for name in ("gt", "misses", "false_positives", "id_switches", "matches"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=np.int64))

    def __add__(self, other):
        if tuple(self.joint_names) != tuple(other.joint_names):
            raise ValidationError("cannot add tallies over different joint orders")
        return MotTally(self.joint_names, self.gt + other.gt, self.misses + other.misses,
                        self.false_positives + other.false_positives,
                        self.id_switches + other.id_switches, self.matches + other.matches)

    @staticmethod
    def _mota(gt, miss, fp, idsw):
        if gt == 0:
            return float("nan")
        return 1.0 - (miss + fp + idsw) / gt

    @property
    def total(self):
        return {"gt": int(self.gt.sum()), "miss": int(self.misses.sum()),
                "fp": int(self.false_positives.sum()), "idsw": int(self.id_switches.sum())}

    @property
    def mota(self):
        t = self.total
        return self._mota(t["gt"], t["miss"], t["fp"], t["idsw"])

    def joint_mota(self, j):
        return self._mota(int(self.gt[j]), int(self.misses[j]), int(self.false_positives[j]),
                          int(self.id_switches[j]))

    @property
    def recall(self):
        g = int(self.gt.sum())
        return float(self.matches.sum() / g) if g else float("nan")

    def rows(self, run):
        out = []
        for j, name in enumerate(self.joint_names):
            g = int(self.gt[j])
            out.append((run, name, g, int(self.misses[j]), int(self.false_positives[j]),
                        int(self.id_switches[j]), self.joint_mota(j),
                        float(self.matches[j] / g) if g else float("nan")))
        t = self.total
        out.append((run, "total", t["gt"], t["miss"], t["fp"], t["idsw"], self.mota, self.recall))
        return out


def _points(frame, tracked_only):
    """(ids, xy (n, J, 2), valid (n, J)) of a frame's people."""
    ids, poses = [], []
    for c in frame.candidates:
        if tracked_only:
            if c.state is not None and c.state != "tracked":
                continue
            pid = c.track_id
        else:
            pid = c.gt_id
        if pid is None:
            raise ValidationError(f"frame {frame.index}: candidate without an id")
        ids.append(pid)
        poses.append(c.pose)
    if not poses:
        return [], np.zeros((0, 0, 2)), np.zeros((0, 0), dtype=bool)
    p = np.asarray(poses, dtype=np.float64)
    return ids, p[:, :, :2], p[:, :, 2] >= JOINT_SCORE_FLOOR


def _diagonals(frame):
    return [c.box.diagonal for c in frame.candidates]


def match_frame(gt, pred, dist_threshold=DEFAULT_DIST_THRESHOLD, previous=None, n_joints=None):
    """Per-joint correspondences for one frame.

    ``gt`` and ``pred`` are frames of a ground-truth and a tracked sequence;
    ``previous`` is the result of this call on the previous frame (or None).
    Returns a list, one entry per joint type, of ``{gt_id: (pred_id, dist)}``.
    Pass ``n_joints`` to get full-length output when both frames are empty.
    """
    if gt.index != pred.index:
        raise FrameMismatch(f"ground truth frame {gt.index} vs prediction frame {pred.index}")
    g_ids, g_xy, g_ok = _points(gt, False)
    p_ids, p_xy, p_ok = _points(pred, True)
    if n_joints is None:
        n_joints = g_xy.shape[1] if len(g_ids) else (p_xy.shape[1] if len(p_ids) else 0)
    if len(g_ids) and len(p_ids) and g_xy.shape[1] != p_xy.shape[1]:
        raise FrameMismatch(f"frame {gt.index}: joint counts differ")
    thr = dist_threshold * np.asarray(_diagonals(gt), dtype=np.float64)
    g_order = np.argsort(np.asarray(g_ids), kind="stable") if g_ids else np.zeros(0, dtype=np.int64)
    p_order = np.argsort(np.asarray(p_ids), kind="stable") if p_ids else np.zeros(0, dtype=np.int64)
    out = []
    for j in range(n_joints):
        result = {}
        gi = [int(k) for k in g_order if g_ok[k, j]]
        pi = [int(k) for k in p_order if p_ok[k, j]]
        if gi and pi:
            d = kernels.pairwise_dist(np.ascontiguousarray(g_xy[gi, j]), np.ascontiguousarray(p_xy[pi, j]))
            within = d < thr[gi][:, None]
            used_g, used_p = set(), set()
            if previous and j < len(previous) and previous[j]:
                col = {p_ids[k]: b for b, k in enumerate(pi)}
                for a, k in enumerate(gi):
                    prev = previous[j].get(g_ids[k])
                    if prev is None:
                        continue
                    b = col.get(prev[0])
                    if b is not None and within[a, b]:
                        result[g_ids[k]] = (prev[0], float(d[a, b]))
                        used_g.add(a)
                        used_p.add(b)
            masked = np.where(within, d, np.inf)
            if used_g:
                masked[sorted(used_g), :] = np.inf
            if used_p:
                masked[:, sorted(used_p)] = np.inf
            for a, b in kernels.greedy_assign(masked, np.inf, False).tolist():
                result[g_ids[gi[a]]] = (p_ids[pi[b]], float(d[a, b]))
        out.append(result)
    return out


def mota(gt_seq, pred_seq, dist_threshold=DEFAULT_DIST_THRESHOLD):
    """Accumulate the clear-MOT tally over two aligned sequences."""
    if len(gt_seq.frames) != len(pred_seq.frames):
        raise FrameMismatch(f"ground truth has {len(gt_seq.frames)} frames, prediction {len(pred_seq.frames)}")
    if tuple(gt_seq.joint_order) != tuple(pred_seq.joint_order):
        raise FrameMismatch("joint orders differ between ground truth and prediction")
    names = tuple(gt_seq.joint_order)
    tally = MotTally(names)
    last = [dict() for _ in names]     # gt id -> last pred id ever matched
    previous = None
    for gf, pf in zip(gt_seq.frames, pred_seq.frames):
        res = match_frame(gf, pf, dist_threshold, previous, len(names))
        _, _, g_ok = _points(gf, False)
        _, _, p_ok = _points(pf, True)
        n_g = g_ok.sum(axis=0) if g_ok.size else np.zeros(len(names), dtype=np.int64)
        n_p = p_ok.sum(axis=0) if p_ok.size else np.zeros(len(names), dtype=np.int64)
        for j in range(len(names)):
            m = res[j]
            tally.gt[j] += n_g[j]
            tally.matches[j] += len(m)
            tally.misses[j] += n_g[j] - len(m)
            tally.false_positives[j] += n_p[j] - len(m)
            for gid, (pid, _) in m.items():
                before = last[j].get(gid)
                if before is not None and before != pid:
                    tally.id_switches[j] += 1
                last[j][gid] = pid
        previous = res
    return tally


def suite_tally(gt_seqs, pred_seqs, dist_threshold=DEFAULT_DIST_THRESHOLD):
    if len(gt_seqs) != len(pred_seqs):
        raise FrameMismatch("suite sizes differ")
    total = None
    for g, p in zip(gt_seqs, pred_seqs):
        t = mota(g, p, dist_threshold)
        total = t if total is None else total + t
    return total


@dataclass
class Report:
    rows: list = field(default_factory=list)
    tallies: dict = field(default_factory=dict)
    dist_threshold: float = DEFAULT_DIST_THRESHOLD

    def total_mota(self, run):
        return self.tallies[run].mota

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(list(r[:6]) + [f"{r[6]:.6f}", f"{r[7]:.6f}"])
        return buf.getvalue()

    def to_text(self):
        header = [c.upper() for c in REPORT_COLUMNS]
        body = [[str(v) for v in r[:6]] + [f"{100 * r[6]:.2f}", f"{100 * r[7]:.2f}"] for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(header, *body)]
        lines = [f"keypoint-level MOTA, match radius {self.dist_threshold:g} x gt box diagonal (simplified protocol)"]
        for row in [header] + body:
            lines.append("  ".join(x.rjust(w) if k > 1 else x.ljust(w) for k, (x, w) in enumerate(zip(row, widths))))
        return "\n".join(lines) + "\n"


def compare_runs(gt, runs, dist_threshold=DEFAULT_DIST_THRESHOLD):
    """Score several runs against the same ground truth.

    ``gt`` is a sequence or a list of sequences; ``runs`` maps a run name to
    a prediction sequence (or list, aligned with ``gt``).
    """
    if not runs:
        raise ValidationError("compare_runs needs at least one run")
    gts = gt if isinstance(gt, (list, tuple)) else [gt]
    report = Report(dist_threshold=dist_threshold)
    for name, pred in runs.items():
        preds = pred if isinstance(pred, (list, tuple)) else [pred]
        t = suite_tally(gts, preds, dist_threshold)
        report.tallies[name] = t
        report.rows.extend(t.rows(name))
    return report
