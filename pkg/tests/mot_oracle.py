"""Slow, loop-only clear-MOT reference used to cross-check the evaluator.

Written straight from the protocol description without sharing any code
with the package: plain Python lists, ``math.hypot`` distances, and a
``min`` over remaining candidates for every greedy pick.
"""

import math

import numpy as np

from posetracker.geometry import BoundingBox
from posetracker.sequence import Candidate, FrameObservation, ObservationSequence

FLOOR = 0.05


def _people(frame, pred):
    out = []
    for c in frame.candidates:
        if pred and c.state not in (None, "tracked"):
            continue
        pid = c.track_id if pred else c.gt_id
        out.append((pid, [tuple(map(float, row)) for row in c.pose], c.box))
    return out


def reference_tally(gt_seq, pred_seq, dist_threshold=0.1):
    """Return ``(gt, misses, fps, idsw)`` lists, one entry per joint type."""
    J = len(gt_seq.joint_order)
    gt_n, miss, fp, sw = [0] * J, [0] * J, [0] * J, [0] * J
    last = [{} for _ in range(J)]
    prev = [{} for _ in range(J)]
    for gf, pf in zip(gt_seq.frames, pred_seq.frames):
        G = _people(gf, False)
        P = _people(pf, True)
        cur = [{} for _ in range(J)]
        for j in range(J):
            gs = [(gid, kp[j], math.hypot(box.x_max - box.x_min, box.y_max - box.y_min))
                  for gid, kp, box in G if kp[j][2] >= FLOOR]
            ps = [(pid, kp[j]) for pid, kp, _ in P if kp[j][2] >= FLOOR]

            def dist(g, p):
                return math.hypot(g[1][0] - p[1][0], g[1][1] - p[1][1])

            def ok(g, p):
                return dist(g, p) < dist_threshold * g[2]

            match = {}
            used_p = set()
            for g in sorted(gs):
                want = prev[j].get(g[0])
                for p in ps:
                    if p[0] == want and p[0] not in used_p and ok(g, p):
                        match[g[0]] = p[0]
                        used_p.add(p[0])
            while True:
                cands = [(dist(g, p), g[0], p[0]) for g in gs for p in ps
                         if g[0] not in match and p[0] not in used_p and ok(g, p)]
                if not cands:
                    break
                _, gid, pid = min(cands)
                match[gid] = pid
                used_p.add(pid)
            gt_n[j] += len(gs)
            miss[j] += len(gs) - len(match)
            fp[j] += len(ps) - len(match)
            for gid, pid in match.items():
                if gid in last[j] and last[j][gid] != pid:
                    sw[j] += 1
                last[j][gid] = pid
            cur[j] = match
        prev = cur
    return gt_n, miss, fp, sw


def random_scenario(rng, n_frames=6, n_joints=3, grid=4.0):
    """Small gt/pred sequence pair with coarse coordinates so ties occur."""
    names = tuple(f"j{k}" for k in range(n_joints))
    gframes, pframes = [], []
    for f in range(n_frames):
        gc, pc = [], []
        for gid in rng.choice(np.arange(1, 5), size=rng.integers(0, 4), replace=False):
            xy = np.round(rng.uniform(0, 40, (n_joints, 2)) / grid) * grid
            s = np.where(rng.random(n_joints) < 0.15, 0.0, 1.0)
            pose = np.column_stack([xy, s])
            gc.append(Candidate(pose, BoundingBox(0.0, 0.0, 30.0 + 10 * gid, 40.0), int(gid)))
        for tid in rng.choice(np.arange(1, 7), size=rng.integers(0, 4), replace=False):
            if gc and rng.random() < 0.7:
                base = gc[rng.integers(len(gc))].pose.copy()
                base[:, :2] += np.round(rng.normal(0, 3, (n_joints, 2)))
            else:
                base = np.column_stack([np.round(rng.uniform(0, 40, (n_joints, 2))), np.ones(n_joints)])
            base[:, 2] = np.where(rng.random(n_joints) < 0.1, 0.01, base[:, 2])
            state = "lost" if rng.random() < 0.1 else "tracked"
            pc.append(Candidate(base, BoundingBox(0.0, 0.0, 1.0, 1.0), None, int(tid), state))
        gframes.append(FrameObservation(f, gc))
        pframes.append(FrameObservation(f, pc))
    gt = ObservationSequence("g", (64, 64), names, gframes).validate()
    pred = ObservationSequence("p", (64, 64), names, pframes, kind="tracked").validate()
    return gt, pred
