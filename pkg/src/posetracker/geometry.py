"""Poses, boxes and the geometric operations the tracker is built on.

A pose is a ``(J, 3)`` float64 array of ``[x, y, score]`` rows in image
pixels, in the joint order of the active skeleton topology. Boxes are
``BoundingBox`` named tuples in ``xyxy`` form. Coordinates stay continuous;
nothing is rounded to integer pixels.
"""

import math
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DegenerateBox, DegeneratePose, ValidationError

# joints scoring below this never shape a box or feed the matcher
JOINT_SCORE_FLOOR = 0.05
# per-side growth of the tight keypoint box, as a fraction of its extent
BOX_ENLARGE = 0.2


class BoundingBox(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def diagonal(self):
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    def translated(self, dx, dy):
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_array(self):
        return np.array(self, dtype=np.float64)


class NormalizedPose(NamedTuple):
    """Box-relative joint coordinates in [-1, 1] plus a validity mask.

    ``valid[j]`` is False for joints below the score floor; their
    coordinates are zeroed.
    """

    coords: np.ndarray
    valid: np.ndarray


def as_pose(data, n_joints=None):
    """Coerce nested ``[[x, y, score], ...]`` data into a validated pose array."""
    pose = np.asarray(data, dtype=np.float64)
    if pose.ndim != 2 or pose.shape[1] != 3:
        raise ValidationError(f"pose must have shape (J, 3), got {pose.shape}")
    if n_joints is not None and pose.shape[0] != n_joints:
        raise ValidationError(f"pose has {pose.shape[0]} joints, topology has {n_joints}")
    if not np.all(np.isfinite(pose)):
        raise ValidationError("pose contains non-finite values")
    s = pose[:, 2]
    if np.any((s < 0.0) | (s > 1.0)):
        raise ValidationError("joint scores must lie in [0, 1]")
    return pose


def validate_box(box):
    box = BoundingBox(*map(float, box))
    if not all(math.isfinite(v) for v in box):
        raise ValidationError(f"non-finite box {tuple(box)}")
    if box.x_min > box.x_max or box.y_min > box.y_max:
        raise ValidationError(f"inverted box {tuple(box)}")
    return box


def bbox_from_pose(pose, floor=JOINT_SCORE_FLOOR, enlarge=BOX_ENLARGE):
    """ROI around the qualifying joints of ``pose``.

    The tight min/max box over joints scoring at least ``floor`` is grown by
    ``enlarge`` times its width on the left and on the right, and by
    ``enlarge`` times its height on the top and on the bottom.

    Raises
    ------
    DegeneratePose
        Fewer than two qualifying joints, or all of them on a single point.
    """
    n, x0, y0, x1, y1 = kernels.tight_box(pose, floor)
    if n < 2:
        raise DegeneratePose(f"only {int(n)} joints score >= {floor}")
    w = x1 - x0
    h = y1 - y0
    if w == 0.0 and h == 0.0:
        raise DegeneratePose("all qualifying joints coincide")
    return BoundingBox(float(x0 - enlarge * w), float(y0 - enlarge * h),
                       float(x1 + enlarge * w), float(y1 + enlarge * h))


def iou(a, b):
    """Intersection over union; 0 for disjoint boxes or a zero union."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a, boxes_b):
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    return kernels.iou_matrix(a, b)


def mean_confidence(pose):
    # fsum: exactly rounded, hence independent of joint order
    return math.fsum(pose[:, 2].tolist()) / pose.shape[0]


def normalize_pose(pose, box, floor=JOINT_SCORE_FLOOR):
    """Map joints into the box frame: center -> 0, edges -> +-1.

    Computed as ``((x - x_min) - (x_max - x)) / (x_max - x_min)`` so that
    translating pose and box together by an exactly representable offset
    leaves the output bitwise unchanged.
    """
    x0, y0, x1, y1 = box
    w = x1 - x0
    h = y1 - y0
    if not (w > 0.0 and h > 0.0):
        raise DegenerateBox(f"box {tuple(box)} has non-positive extent")
    x = pose[:, 0]
    y = pose[:, 1]
    coords = np.empty((pose.shape[0], 2))
    coords[:, 0] = ((x - x0) - (x1 - x)) / w
    coords[:, 1] = ((y - y0) - (y1 - y)) / h
    np.clip(coords, -1.0, 1.0, out=coords)
    valid = pose[:, 2] >= floor
    coords[~valid] = 0.0
    return NormalizedPose(coords, valid)


def normalize_own_box(pose, floor=JOINT_SCORE_FLOOR):
    """Normalize a pose by the ROI inferred from its own joints."""
    return normalize_pose(pose, bbox_from_pose(pose, floor), floor)


def translate_pose(pose, dx, dy):
    out = pose.copy()
    out[:, 0] += dx
    out[:, 1] += dy
    return out


def scale_pose(pose, factor, center=(0.0, 0.0)):
    out = pose.copy()
    out[:, 0] = center[0] + factor * (pose[:, 0] - center[0])
    out[:, 1] = center[1] + factor * (pose[:, 1] - center[1])
    return out
