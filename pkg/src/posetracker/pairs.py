"""Pose pairs for training and validating the matcher.

Mining rules over ground-truth-annotated sequences:

* positive: the same id in two adjacent frames
* hard negative: different ids, same or adjacent frames, boxes overlap (IOU > 0)
* other negative: different ids, same or adjacent frames, boxes disjoint

Every pose is stored normalized by its own box.
"""

import json
from pathlib import Path

import numpy as np

from .errors import DegenerateBox, EmptyDataset, ParseError, SchemaVersionError, ValidationError
from .geometry import JOINT_SCORE_FLOOR, iou, normalize_pose

POSITIVE, HARD_NEGATIVE, OTHER_NEGATIVE = "positive", "hard-negative", "other-negative"
CATEGORIES = (POSITIVE, HARD_NEGATIVE, OTHER_NEGATIVE)
PAIRS_FORMAT = "posetracker-pairs"
PAIRS_VERSION = 1


class PairDataset:
    """Column-oriented pair storage; ``category`` holds indices into CATEGORIES."""

    def __init__(self, a_coords, a_valid, b_coords, b_valid, category, joint_order=()):
        self.a_coords = np.asarray(a_coords, dtype=np.float64)
        self.a_valid = np.asarray(a_valid, dtype=bool)
        self.b_coords = np.asarray(b_coords, dtype=np.float64)
        self.b_valid = np.asarray(b_valid, dtype=bool)
        self.category = np.asarray(category, dtype=np.int64)
        self.joint_order = tuple(joint_order)
        n = len(self.category)
        if not (len(self.a_coords) == len(self.b_coords) == len(self.a_valid) == len(self.b_valid) == n):
            raise ValidationError("pair columns have different lengths")

    @property
    def y(self):
        return (self.category == 0).astype(np.int64)

    def __len__(self):
        return len(self.category)

    def subset(self, idx):
        return PairDataset(self.a_coords[idx], self.a_valid[idx], self.b_coords[idx], self.b_valid[idx],
                           self.category[idx], self.joint_order)

    def only(self, *categories):
        codes = [CATEGORIES.index(c) for c in categories]
        return self.subset(np.isin(self.category, codes))

    def batch(self, idx=None):
        if idx is None:
            idx = slice(None)
        return (self.a_coords[idx], self.a_valid[idx], self.b_coords[idx], self.b_valid[idx],
                (self.category[idx] == 0).astype(np.float64))

    def counts(self):
        return {c: int(np.sum(self.category == k)) for k, c in enumerate(CATEGORIES)}

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.a_coords for p in parts]), np.concatenate([p.a_valid for p in parts]),
                   np.concatenate([p.b_coords for p in parts]), np.concatenate([p.b_valid for p in parts]),
                   np.concatenate([p.category for p in parts]), parts[0].joint_order)

    @classmethod
    def empty(cls, n_joints=15, joint_order=()):
        z2 = np.zeros((0, n_joints, 2))
        zb = np.zeros((0, n_joints), dtype=bool)
        return cls(z2, zb, z2, zb, np.zeros(0, dtype=np.int64), joint_order)

    def a_poses(self):
        return list(zip(self.a_coords, self.a_valid))

    def all_poses(self):
        return list(zip(self.a_coords, self.a_valid)) + list(zip(self.b_coords, self.b_valid))

    # -- file i/o -------------------------------------------------------

    def to_dict(self):
        def enc(coords, valid):
            return [[x, y, int(v)] for (x, y), v in zip(coords.tolist(), valid.tolist())]

        return {
            "format": PAIRS_FORMAT,
            "format_version": PAIRS_VERSION,
            "joint_order": list(self.joint_order),
            "counts": self.counts(),
            "pairs": [{"category": CATEGORIES[c], "a": enc(ac, av), "b": enc(bc, bv)}
                      for c, ac, av, bc, bv in zip(self.category.tolist(), self.a_coords, self.a_valid,
                                                   self.b_coords, self.b_valid)],
        }

    def save(self, path):
        doc = self.to_dict()
        pairs = doc.pop("pairs")
        head = json.dumps(doc, separators=(", ", ": "))[:-1]
        body = ",\n".join(json.dumps(p, separators=(",", ":")) for p in pairs)
        Path(path).write_text(head + ', "pairs": [\n' + body + "\n]}\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
        if doc.get("format") != PAIRS_FORMAT:
            raise ParseError(f"{path}: not a pairs file")
        if doc.get("format_version") != PAIRS_VERSION:
            raise SchemaVersionError(f"{path}: pairs format version {doc.get('format_version')} unsupported")
        order = tuple(doc.get("joint_order", ()))
        pairs = doc["pairs"]
        if not pairs:
            return cls.empty(len(order) or 15, order)
        try:
            a = np.array([p["a"] for p in pairs], dtype=np.float64)
            b = np.array([p["b"] for p in pairs], dtype=np.float64)
            cat = [CATEGORIES.index(p["category"]) for p in pairs]
        except (KeyError, ValueError) as exc:
            raise ParseError(f"{path}: malformed pair ({exc})") from None
        return cls(a[:, :, :2], a[:, :, 2] > 0, b[:, :, :2], b[:, :, 2] > 0, cat, order)


def _normalized(cand, floor):
    try:
        norm = normalize_pose(cand.pose, cand.box, floor)
    except DegenerateBox:
        return None
    return norm if norm.valid.any() else None


def generate_pairs(sequences, floor=JOINT_SCORE_FLOOR):
    """Mine labeled pose pairs from ground-truth sequences.

    Candidates without a ``gt_id``, without valid joints, or with a
    degenerate box are ignored. Output order is deterministic: sequences in
    order, then frames, then same-frame pairs before cross-frame pairs.
    """
    a_c, a_v, b_c, b_v, cats = [], [], [], [], []
    order = ()

    def add(x, y, cat):
        a_c.append(x.coords)
        a_v.append(x.valid)
        b_c.append(y.coords)
        b_v.append(y.valid)
        cats.append(cat)

    for seq in sequences:
        order = order or tuple(seq.joint_order)
        prev = []
        for fr in seq.frames:
            cur = []
            for c in fr.candidates:
                if c.gt_id is None:
                    continue
                norm = _normalized(c, floor)
                if norm is not None:
                    cur.append((c.gt_id, c.box, norm))
            for i in range(len(cur)):
                for j in range(i + 1, len(cur)):
                    (_, bi, ni), (_, bj, nj) = cur[i], cur[j]
                    add(ni, nj, 1 if iou(bi, bj) > 0.0 else 2)
            for pid, pbox, pnorm in prev:
                for cid, cbox, cnorm in cur:
                    if pid == cid:
                        add(pnorm, cnorm, 0)
                    else:
                        add(pnorm, cnorm, 1 if iou(pbox, cbox) > 0.0 else 2)
            prev = cur
    if not cats:
        n = len(order) or 15
        return PairDataset.empty(n, order)
    return PairDataset(np.array(a_c), np.array(a_v), np.array(b_c), np.array(b_v), np.array(cats), order)


def require_pairs(pairs):
    if len(pairs) == 0:
        raise EmptyDataset("pair dataset is empty")
    return pairs
