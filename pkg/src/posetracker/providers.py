"""Detector and single-person estimator backed by a recorded sequence.

The tracking engine only needs two callables::

    detector(frame) -> list[Detection]
    estimator(frame, roi) -> pose array (J, 3)

The replay versions answer from the candidates stored in an
:class:`~posetracker.sequence.ObservationSequence`; real CNN models can be
dropped in behind the same call signatures.
"""

from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import FrameOutOfRange
from .geometry import JOINT_SCORE_FLOOR, BoundingBox

CONTAINMENT_FLOOR = 0.3
SCORE_JITTER = 0.05


class Detection(NamedTuple):
    box: BoundingBox
    pose: np.ndarray


class ReplayDetector:
    """Returns every recorded candidate of a frame, ground-truth ids stripped."""

    def __init__(self, seq):
        self.seq = seq
        self._cache = {}

    def __call__(self, frame):
        if not 0 <= frame < len(self.seq.frames):
            raise FrameOutOfRange(f"no frame {frame} in {self.seq.seq_id}", frame)
        dets = self._cache.get(frame)
        if dets is None:
            dets = tuple(Detection(c.box, c.pose) for c in self.seq.frames[frame].candidates)
            self._cache[frame] = dets
        return list(dets)


class ReplayEstimator:
    """Pose of the recorded candidate best contained in the ROI.

    Containment is the fraction of a candidate's qualifying joints that fall
    inside ``roi``. Below ``containment_floor`` the estimator "fails": the
    best candidate's pose comes back with every score zeroed, or an all-zero
    pose when the frame is empty.

    Optional noise (off by default): isotropic Gaussian on coordinates,
    clipped at 3 sigma, and uniform score jitter of +-``score_jitter``. The
    noise is seeded per ``(seed, frame, candidate)`` so repeated calls agree.
    """

    def __init__(self, seq, containment_floor=CONTAINMENT_FLOOR, noise_sigma=0.0,
                 score_jitter=0.0, seed=0, floor=JOINT_SCORE_FLOOR):
        self.seq = seq
        self.containment_floor = containment_floor
        self.noise_sigma = float(noise_sigma)
        self.score_jitter = float(score_jitter)
        self.seed = int(seed)
        self.floor = floor
        self.n_joints = seq.n_joints

    def _noisy(self, pose, frame, k):
        rng = np.random.default_rng((self.seed, frame, k))
        out = pose.copy()
        if self.noise_sigma > 0:
            s = self.noise_sigma
            out[:, :2] += np.clip(rng.normal(0.0, s, size=(len(pose), 2)), -3 * s, 3 * s)
        if self.score_jitter > 0:
            jit = rng.uniform(-self.score_jitter, self.score_jitter, size=len(pose))
            out[:, 2] = np.clip(out[:, 2] + jit, 0.0, 1.0)
        return out

    def __call__(self, frame, roi):
        if not 0 <= frame < len(self.seq.frames):
            raise FrameOutOfRange(f"no frame {frame} in {self.seq.seq_id}", frame)
        poses, _ = self.seq.frames[frame].arrays()
        if len(poses) == 0:
            return np.zeros((self.n_joints, 3))
        frac = kernels.containment(poses, np.asarray(roi, dtype=np.float64), self.floor)
        k = int(np.argmax(frac))
        if self.noise_sigma > 0 or self.score_jitter > 0:
            pose = self._noisy(poses[k], frame, k)
        else:
            pose = poses[k].copy()
        if frac[k] < self.containment_floor:
            pose[:, 2] = 0.0
        return pose
