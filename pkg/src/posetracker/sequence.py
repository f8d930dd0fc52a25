"""Observation sequences and their JSON file format.

Sequence file (``format_version`` 1)::

    {
      "format": "posetracker-sequence",
      "format_version": 1,
      "kind": "observations" | "tracked",
      "seq_id": "name",
      "image_size": [width, height],
      "joint_order": ["head_top", ...],              # 15 names by default
      "frames": [
        {"index": 0,
         "keyframe": true,                           # tracked files only
         "candidates": [
           {"gt_id": 3,                              # optional
            "track_id": 1, "state": "tracked",       # tracked files only
            "keypoints": [[x, y, score], ...],       # one row per joint
            "bbox": [x_min, y_min, x_max, y_max]}    # optional on input
         ]}
      ]
    }

Missing boxes are inferred from the keypoints with the 20%-per-side rule.
Floats are written with ``repr`` precision, so emit/load round-trips exactly.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegeneratePose, ParseError, SchemaVersionError, ValidationError
from .geometry import BoundingBox, as_pose, bbox_from_pose, validate_box

log = logging.getLogger(__name__)

SEQUENCE_FORMAT = "posetracker-sequence"
SEQUENCE_VERSION = 1
# keypoints further than this fraction of the image size outside it trigger a warning
OUT_OF_BOUNDS_MARGIN = 1.0


@dataclass
class Candidate:
    pose: np.ndarray
    box: BoundingBox
    gt_id: Optional[int] = None
    track_id: Optional[int] = None
    state: Optional[str] = None

    def __eq__(self, other):
        if not isinstance(other, Candidate):
            return NotImplemented
        return (np.array_equal(self.pose, other.pose) and tuple(self.box) == tuple(other.box)
                and self.gt_id == other.gt_id and self.track_id == other.track_id
                and self.state == other.state)


@dataclass
class FrameObservation:
    index: int
    candidates: list = field(default_factory=list)
    keyframe: Optional[bool] = None

    _arrays = None

    def arrays(self):
        """Stacked ``(n, J, 3)`` poses and ``(n, 4)`` boxes, cached."""
        if self._arrays is None:
            if self.candidates:
                poses = np.stack([c.pose for c in self.candidates])
                boxes = np.array([tuple(c.box) for c in self.candidates], dtype=np.float64)
            else:
                poses = np.zeros((0, 0, 3))
                boxes = np.zeros((0, 4))
            poses.flags.writeable = False
            boxes.flags.writeable = False
            self._arrays = (poses, boxes)
        return self._arrays


@dataclass
class ObservationSequence:
    seq_id: str
    image_size: tuple
    joint_order: tuple
    frames: list
    kind: str = "observations"

    def __len__(self):
        return len(self.frames)

    @property
    def n_joints(self):
        return len(self.joint_order)

    def validate(self):
        for k, fr in enumerate(self.frames):
            if fr.index != k:
                raise ValidationError(f"{self.seq_id}: frame indices must be dense from 0, "
                                      f"found {fr.index} at position {k}")
            ids = [c.gt_id for c in fr.candidates if c.gt_id is not None]
            if len(ids) != len(set(ids)):
                raise ValidationError(f"{self.seq_id}: duplicate gt_id in frame {k}")
            tids = [c.track_id for c in fr.candidates if c.track_id is not None]
            if len(tids) != len(set(tids)):
                raise ValidationError(f"{self.seq_id}: duplicate track_id in frame {k}")
            for c in fr.candidates:
                if c.pose.shape != (self.n_joints, 3):
                    raise ValidationError(f"{self.seq_id}: frame {k}: pose shape {c.pose.shape}")
        self._warn_out_of_bounds()
        return self

    def _warn_out_of_bounds(self):
        w, h = self.image_size
        mx, my = OUT_OF_BOUNDS_MARGIN * w, OUT_OF_BOUNDS_MARGIN * h
        for fr in self.frames:
            for c in fr.candidates:
                x, y = c.pose[:, 0], c.pose[:, 1]
                if np.any((x < -mx) | (x > w + mx) | (y < -my) | (y > h + my)):
                    log.warning("%s: frame %d has keypoints far outside the image", self.seq_id, fr.index)
                    return

    def __eq__(self, other):
        if not isinstance(other, ObservationSequence):
            return NotImplemented
        return (self.seq_id == other.seq_id and tuple(self.image_size) == tuple(other.image_size)
                and tuple(self.joint_order) == tuple(other.joint_order) and self.kind == other.kind
                and len(self.frames) == len(other.frames)
                and all(a.index == b.index and a.keyframe == b.keyframe and a.candidates == b.candidates
                        for a, b in zip(self.frames, other.frames)))


def make_candidate(pose, box=None, gt_id=None, track_id=None, state=None):
    pose = as_pose(pose)
    if box is None:
        box = bbox_from_pose(pose)
    else:
        box = validate_box(box)
    return Candidate(pose, box, gt_id, track_id, state)


# ----------------------------------------------------------------------
# file i/o
# ----------------------------------------------------------------------

def sequence_to_dict(seq):
    frames = []
    for fr in seq.frames:
        out = {"index": fr.index}
        if fr.keyframe is not None:
            out["keyframe"] = bool(fr.keyframe)
        cands = []
        for c in fr.candidates:
            d = {}
            if c.gt_id is not None:
                d["gt_id"] = int(c.gt_id)
            if c.track_id is not None:
                d["track_id"] = int(c.track_id)
            if c.state is not None:
                d["state"] = c.state
            d["keypoints"] = c.pose.tolist()
            d["bbox"] = [float(v) for v in c.box]
            cands.append(d)
        out["candidates"] = cands
        frames.append(out)
    return {
        "format": SEQUENCE_FORMAT,
        "format_version": SEQUENCE_VERSION,
        "kind": seq.kind,
        "seq_id": seq.seq_id,
        "image_size": [int(v) if float(v).is_integer() else float(v) for v in seq.image_size],
        "joint_order": list(seq.joint_order),
        "frames": frames,
    }


def dumps_sequence(seq):
    doc = sequence_to_dict(seq)
    frames = doc.pop("frames")
    # one frame per line keeps files diffable without bloating them
    head = json.dumps(doc, separators=(", ", ": "))[:-1]
    body = ",\n".join("  " + json.dumps(f, separators=(",", ":")) for f in frames)
    return head + ', "frames": [\n' + body + "\n]}\n"


def emit_sequence(seq, path):
    seq.validate()
    Path(path).write_text(dumps_sequence(seq))


def sequence_from_dict(doc, source="<sequence>", joint_order=None):
    if not isinstance(doc, dict) or doc.get("format", SEQUENCE_FORMAT) != SEQUENCE_FORMAT:
        raise ParseError(f"{source}: not a sequence document")
    if "format_version" not in doc:
        raise ParseError(f"{source}: missing field 'format_version'")
    if doc["format_version"] != SEQUENCE_VERSION:
        raise SchemaVersionError(f"{source}: sequence format version {doc['format_version']!r} unsupported")
    for key in ("seq_id", "image_size", "joint_order", "frames"):
        if key not in doc:
            raise ParseError(f"{source}: missing field {key!r}")
    order = tuple(doc["joint_order"])
    if joint_order is not None and order != tuple(joint_order):
        raise ValidationError(f"{source}: joint_order differs from the topology's")
    size = doc["image_size"]
    if not (isinstance(size, list) and len(size) == 2):
        raise ParseError(f"{source}: image_size must be [width, height]")
    frames = []
    for k, f in enumerate(doc["frames"]):
        where = f"{source}: frames[{k}]"
        try:
            index = int(f["index"])
            raw_cands = f["candidates"]
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"{where}: needs integer 'index' and list 'candidates'") from None
        cands = []
        for m, c in enumerate(raw_cands):
            cw = f"{where}.candidates[{m}]"
            if "keypoints" not in c:
                raise ParseError(f"{cw}: missing field 'keypoints'")
            try:
                pose = as_pose(c["keypoints"], len(order))
                cand = make_candidate(pose, c.get("bbox"), c.get("gt_id"), c.get("track_id"), c.get("state"))
            except DegeneratePose as exc:
                raise ValidationError(f"{cw}: no bbox given and none inferable ({exc})") from None
            except ValidationError as exc:
                raise ValidationError(f"{cw}: {exc}") from None
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{cw}: {exc}") from None
            cands.append(cand)
        kf = f.get("keyframe")
        frames.append(FrameObservation(index, cands, None if kf is None else bool(kf)))
    seq = ObservationSequence(str(doc["seq_id"]), (size[0], size[1]), order, frames,
                              doc.get("kind", "observations"))
    return seq.validate()


def load_sequence(path, joint_order=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return sequence_from_dict(doc, str(path), joint_order)


# ----------------------------------------------------------------------
# PoseTrack'18 style (COCO-like) annotation converter
# ----------------------------------------------------------------------

POSETRACK18_KEYPOINTS = (
    "nose", "head_bottom", "head_top", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
# canonical joint -> PoseTrack keypoint name; ears are dropped
POSETRACK_JOINT_MAP = {"neck": "head_bottom"}


def convert_posetrack(doc, joint_order, seq_id=None, image_size=(1920, 1080), labeled_only=True):
    """Turn one PoseTrack'18-style annotation document into a sequence.

    Keypoints with visibility > 0 get score 1, others score 0. Frames are the
    (labeled) images in ``frame_id`` order, re-indexed densely from 0, so
    "adjacent" means adjacent among annotated frames. Persons with fewer than
    two visible joints are dropped; boxes are always inferred from keypoints.
    """
    try:
        names = tuple(doc["categories"][0]["keypoints"])
    except (KeyError, IndexError, TypeError):
        names = POSETRACK18_KEYPOINTS
    src_index = {n: k for k, n in enumerate(names)}
    try:
        mapping = [src_index[POSETRACK_JOINT_MAP.get(j, j)] for j in joint_order]
    except KeyError as exc:
        raise ValidationError(f"annotation has no keypoint for joint {exc.args[0]!r}") from None

    images = list(doc.get("images", []))
    if labeled_only:
        images = [im for im in images if im.get("is_labeled", True)]
    images.sort(key=lambda im: (im.get("frame_id", im["id"]), im["id"]))
    by_image = {}
    for ann in doc.get("annotations", []):
        by_image.setdefault(ann["image_id"], []).append(ann)

    frames = []
    for k, im in enumerate(images):
        cands = []
        for ann in sorted(by_image.get(im["id"], []), key=lambda a: a.get("track_id", -1)):
            kp = np.asarray(ann.get("keypoints", []), dtype=np.float64).reshape(-1, 3)
            if len(kp) != len(names):
                raise ValidationError(f"image {im['id']}: expected {len(names)} keypoints, got {len(kp)}")
            pose = kp[mapping].copy()
            pose[:, 2] = (pose[:, 2] > 0).astype(np.float64)
            pose[pose[:, 2] == 0, :2] = 0.0
            try:
                box = bbox_from_pose(pose)
            except DegeneratePose:
                continue
            tid = ann.get("track_id")
            cands.append(Candidate(pose, box, None if tid is None else int(tid)))
        frames.append(FrameObservation(k, cands))
    if seq_id is None:
        seq_id = str(images[0].get("vid_id", "posetrack")) if images else "posetrack"
    return ObservationSequence(seq_id, tuple(image_size), tuple(joint_order), frames).validate()
