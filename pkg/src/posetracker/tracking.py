"""Online top-down multi-person pose tracking.

Every frame, each tracked person is followed by running the single-person
estimator inside the enlarged box of its previous pose. A target whose mean
joint confidence drops to ``tau_s`` or below becomes lost. On keyframes the
detector runs and detections are associated with the existing tracks in two
stages: box overlap first (IOU > ``tau_o``), then Siamese pose matching for
whatever is left. Unmatched detections start new tracks.
"""

import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import DegenerateBox, DegeneratePose, InvalidConfig, MatcherUnavailable, ProviderError
from .geometry import BoundingBox, bbox_from_pose, mean_confidence, normalize_pose
from .sequence import Candidate, FrameObservation, ObservationSequence

TRACKED, LOST = "tracked", "lost"
MODES = ("fki", "aki", "hybrid")


@dataclass
class TrackerConfig:
    tau_s: float = 0.4              # confidence threshold of the tracked/lost decision
    tau_o: float = 0.3              # IOU threshold of spatial association
    keyframe_interval: int = 5
    mode: str = "hybrid"
    match_threshold: Optional[float] = None   # None: use the matcher's calibrated value
    max_lost_frames: Optional[int] = None     # None: 2 * keyframe_interval
    use_pose_matching: bool = True
    new_ids_after_start: bool = True
    record_matrices: bool = False

    def validate(self):
        if not (0 < self.tau_s < 1 and 0 < self.tau_o < 1):
            raise InvalidConfig("tau_s and tau_o must lie in (0, 1)")
        if self.keyframe_interval < 1:
            raise InvalidConfig("keyframe_interval must be >= 1")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if self.max_lost_frames is not None and self.max_lost_frames < 0:
            raise InvalidConfig("max_lost_frames must be >= 0")
        return self

    @property
    def lost_limit(self):
        return 2 * self.keyframe_interval if self.max_lost_frames is None else self.max_lost_frames

    def to_dict(self):
        return asdict(self)


@dataclass
class Track:
    id: int
    state: str
    pose: np.ndarray
    box: BoundingBox
    last_seen: int
    embedding: Optional[np.ndarray] = None


class TrackEntry(NamedTuple):
    track_id: int
    pose: np.ndarray
    box: BoundingBox
    state: str


@dataclass
class AssociationLog:
    """Inputs and outputs of both association stages of one keyframe."""
    track_ids: list
    det_indices: list
    iou: np.ndarray
    spatial_pairs: list          # (track id, detection index)
    pose_track_ids: list = field(default_factory=list)
    pose_det_indices: list = field(default_factory=list)
    distances: Optional[np.ndarray] = None
    pose_pairs: list = field(default_factory=list)
    match_threshold: Optional[float] = None


@dataclass
class FrameResult:
    index: int
    entries: list
    keyframe: bool
    associations: list = field(default_factory=list)  # (track id, detection index, "spatial"|"pose")
    new_ids: list = field(default_factory=list)
    terminated_ids: list = field(default_factory=list)
    log: Optional[AssociationLog] = None

    def tracked(self):
        return [e for e in self.entries if e.state == TRACKED]


def update_state(pose, tau_s):
    return TRACKED if mean_confidence(pose) > tau_s else LOST


def is_keyframe(frame, cfg, any_lost):
    if frame == 0:
        return True
    if cfg.mode == "fki":
        return frame % cfg.keyframe_interval == 0
    if cfg.mode == "aki":
        return bool(any_lost)
    return frame % cfg.keyframe_interval == 0 or bool(any_lost)


def spatial_match(track_boxes, det_boxes, tau_o):
    """Greedy IOU matching: descending IOU, only pairs with IOU > tau_o.

    Returns ``(pairs, iou_matrix)`` with ``pairs`` as (row, column) indices.
    Ties go to the lower row, then the lower column.
    """
    a = np.asarray(track_boxes, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    m = kernels.iou_matrix(a, b)
    return [tuple(p) for p in kernels.greedy_assign(m, tau_o, True).tolist()], m


def pose_match(track_embeddings, det_embeddings, match_threshold):
    """Greedy matching on embedding distance: ascending, only pairs below the threshold."""
    ta = np.asarray(track_embeddings, dtype=np.float64)
    da = np.asarray(det_embeddings, dtype=np.float64)
    if len(ta) == 0 or len(da) == 0:
        return [], np.zeros((len(ta), len(da)))
    diff = ta[:, None, :] - da[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    return [tuple(p) for p in kernels.greedy_assign(dist, match_threshold, False).tolist()], dist


class PoseTracker:
    """One engine per sequence; frames must be stepped in order."""

    def __init__(self, cfg, detector, estimator, matcher=None):
        self.cfg = cfg.validate()
        if cfg.use_pose_matching and matcher is None:
            raise MatcherUnavailable("pose matching is enabled but no matcher weights were loaded")
        self.detector = detector
        self.estimator = estimator
        self.matcher = matcher if cfg.use_pose_matching else None
        self.match_threshold = cfg.match_threshold
        if self.matcher is not None and self.match_threshold is None:
            if matcher.threshold is None:
                raise MatcherUnavailable("matcher has no calibrated threshold; pass match_threshold")
            self.match_threshold = matcher.threshold
        self.tracks = []
        self.next_id = 1
        self.frame = 0
        self.timings = defaultdict(float)
        self.calls = defaultdict(int)

    # -- providers ------------------------------------------------------

    def _estimate(self, frame, roi):
        t = time.perf_counter()
        try:
            pose = self.estimator(frame, roi)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(f"estimator failed: {exc}", frame) from exc
        self.timings["estimator"] += time.perf_counter() - t
        self.calls["estimator"] += 1
        return pose

    def _detect(self, frame):
        t = time.perf_counter()
        try:
            dets = self.detector(frame)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(f"detector failed: {exc}", frame) from exc
        self.timings["detector"] += time.perf_counter() - t
        self.calls["detector"] += 1
        return dets

    # -- main loop ------------------------------------------------------

    def step(self):
        frame = self.frame
        cfg = self.cfg
        tau_s = cfg.tau_s
        for tr in self.tracks:
            if tr.state != TRACKED:
                continue
            try:
                roi = bbox_from_pose(tr.pose)
            except DegeneratePose:
                tr.state = LOST
                continue
            pose = self._estimate(frame, roi)
            if mean_confidence(pose) > tau_s:
                try:
                    box = bbox_from_pose(pose)
                except DegeneratePose:
                    tr.state = LOST
                    continue
                tr.pose = pose
                tr.box = box
                tr.last_seen = frame
                tr.embedding = None
            else:
                tr.state = LOST
        any_lost = any(tr.state == LOST for tr in self.tracks)
        key = is_keyframe(frame, cfg, any_lost)
        result = FrameResult(frame, [], key)
        if key:
            dets = self._detect(frame)
            t = time.perf_counter()
            self._associate(frame, dets, result)
            self.timings["association"] += time.perf_counter() - t
        limit = cfg.lost_limit
        keep = []
        for tr in self.tracks:
            if tr.state == LOST and frame - tr.last_seen > limit:
                result.terminated_ids.append(tr.id)
            else:
                keep.append(tr)
        self.tracks = keep
        result.entries = [TrackEntry(tr.id, tr.pose, tr.box, tr.state) for tr in self.tracks]
        self.frame += 1
        return result

    def run(self, n_frames):
        return [self.step() for _ in range(n_frames)]

    def _embed_track(self, tr):
        if tr.embedding is None:
            tr.embedding = self.matcher.embed(normalize_pose(tr.pose, tr.box))
        return tr.embedding

    def _associate(self, frame, detections, result):
        cfg = self.cfg
        dets = []
        for k, d in enumerate(detections):
            if mean_confidence(d.pose) > cfg.tau_s:
                dets.append((k, d))
        tracks = self.tracks
        t_boxes = np.array([tuple(tr.box) for tr in tracks], dtype=np.float64).reshape(-1, 4)
        d_boxes = np.array([tuple(d.box) for _, d in dets], dtype=np.float64).reshape(-1, 4)
        pairs, iou_m = spatial_match(t_boxes, d_boxes, cfg.tau_o)
        log = None
        if cfg.record_matrices:
            log = AssociationLog([tr.id for tr in tracks], [k for k, _ in dets], iou_m,
                                 [(tracks[i].id, dets[j][0]) for i, j in pairs])
            result.log = log
        used_t = set()
        used_d = set()
        for i, j in pairs:
            self._revive(tracks[i], dets[j][1], frame)
            used_t.add(i)
            used_d.add(j)
            result.associations.append((tracks[i].id, dets[j][0], "spatial"))

        left_t = [i for i in range(len(tracks)) if i not in used_t]
        left_d = [j for j in range(len(dets)) if j not in used_d]
        if self.matcher is not None and left_t and left_d:
            t0 = time.perf_counter()
            det_emb = []
            ok_d = []
            for j in left_d:
                d = dets[j][1]
                try:
                    norm = normalize_pose(d.pose, d.box)
                except DegenerateBox:
                    continue
                if norm.valid.any():
                    ok_d.append(j)
                    det_emb.append(self.matcher.embed(norm))
            trk_emb = [self._embed_track(tracks[i]) for i in left_t]
            pp, dist = pose_match(trk_emb, det_emb, self.match_threshold)
            self.timings["matching"] += time.perf_counter() - t0
            if log is not None:
                log.pose_track_ids = [tracks[i].id for i in left_t]
                log.pose_det_indices = [dets[j][0] for j in ok_d]
                log.distances = dist
                log.match_threshold = self.match_threshold
                log.pose_pairs = [(tracks[left_t[a]].id, dets[ok_d[b]][0]) for a, b in pp]
            for a, b in pp:
                i, j = left_t[a], ok_d[b]
                self._revive(tracks[i], dets[j][1], frame)
                used_t.add(i)
                used_d.add(j)
                result.associations.append((tracks[i].id, dets[j][0], "pose"))

        for i, tr in enumerate(tracks):
            if i not in used_t:
                tr.state = LOST
        if cfg.new_ids_after_start or frame == 0:
            for j, (k, d) in enumerate(dets):
                if j in used_d:
                    continue
                tr = Track(self.next_id, TRACKED, d.pose, d.box, frame)
                self.next_id += 1
                self.tracks.append(tr)
                result.new_ids.append(tr.id)

    @staticmethod
    def _revive(tr, det, frame):
        tr.pose = det.pose
        tr.box = det.box
        tr.state = TRACKED
        tr.last_seen = frame
        tr.embedding = None


def track_sequence(seq, cfg, matcher=None, estimator_kwargs=None):
    """Run the engine over a whole sequence with replay providers."""
    from .providers import ReplayDetector, ReplayEstimator

    engine = PoseTracker(cfg, ReplayDetector(seq), ReplayEstimator(seq, **(estimator_kwargs or {})), matcher)
    return engine.run(len(seq.frames)), engine


def results_to_sequence(results, seq_id, image_size, joint_order):
    """Tracked-output document: every active track per frame with its state."""
    frames = []
    for r in results:
        cands = [Candidate(e.pose, e.box, None, e.track_id, e.state) for e in r.entries]
        frames.append(FrameObservation(r.index, cands, r.keyframe))
    return ObservationSequence(seq_id, tuple(image_size), tuple(joint_order), frames, kind="tracked")
