"""Seeded synthetic pose sequences.

People are 2-d stick figures with individual body proportions, walking
slowly while their limbs swing sinusoidally. Scripted events mimic the two
failure modes a box-overlap tracker has trouble with: a sudden camera shift
(every coordinate jumps by ``(dx, dy)``) and a sudden zoom about the image
center. Occlusion windows remove a person's observations for a while.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .geometry import bbox_from_pose
from .sequence import Candidate, FrameObservation, ObservationSequence

# canonical 15-joint order produced by the generator
JOINTS = (
    "head_top", "neck", "nose", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# segment lengths as fractions of body height
_BODY = {
    "head": 0.13, "nose": 0.07, "torso": 0.30, "shoulder": 0.11, "hip": 0.08,
    "upper_arm": 0.17, "forearm": 0.15, "thigh": 0.24, "shin": 0.23,
}
LAYOUTS = ("spread", "crossing", "cluster")


@dataclass
class SynthConfig:
    n_people: int = 2
    n_frames: int = 60
    image_size: tuple = (1280, 720)
    camera_shift_events: list = field(default_factory=list)  # (frame, dx, dy)
    zoom_events: list = field(default_factory=list)          # (frame, factor)
    occlusion_windows: list = field(default_factory=list)    # (person id, start, end) end exclusive
    enter_frames: dict = field(default_factory=dict)         # person id -> first visible frame
    noise_sigma: float = 0.0
    seed: int = 0
    layout: str = "spread"
    height_range: tuple = (170.0, 230.0)
    max_speed: float = 1.5          # px/frame of the pelvis
    swing_amplitude: float = 0.45   # rad, upper bound
    swing_frequency: float = 0.04   # cycles/frame, upper bound
    frame_stride: int = 1           # emit every k-th simulated frame
    seq_id: str = ""

    def validate(self):
        if self.n_people < 0 or self.n_frames < 1:
            raise InvalidConfig("need n_people >= 0 and n_frames >= 1")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be >= 0")
        if self.layout not in LAYOUTS:
            raise InvalidConfig(f"layout must be one of {LAYOUTS}")
        if self.frame_stride < 1:
            raise InvalidConfig("frame_stride must be >= 1")
        for ev in self.camera_shift_events:
            if len(ev) != 3 or not 0 < ev[0] < self.n_frames:
                raise InvalidConfig(f"camera shift event {ev} outside frame range")
        for ev in self.zoom_events:
            if len(ev) != 2 or not 0 < ev[0] < self.n_frames or ev[1] <= 0:
                raise InvalidConfig(f"zoom event {ev} invalid")
        for ev in self.occlusion_windows:
            if len(ev) != 3 or not (1 <= ev[0] <= self.n_people) or not 0 <= ev[1] < ev[2] <= self.n_frames:
                raise InvalidConfig(f"occlusion window {ev} invalid")
        for pid, start in self.enter_frames.items():
            if not (1 <= int(pid) <= self.n_people) or not 0 <= start < self.n_frames:
                raise InvalidConfig(f"enter frame {pid}: {start} invalid")
        return self

    def to_dict(self):
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["height_range"] = list(self.height_range)
        d["camera_shift_events"] = [list(e) for e in self.camera_shift_events]
        d["zoom_events"] = [list(e) for e in self.zoom_events]
        d["occlusion_windows"] = [list(e) for e in self.occlusion_windows]
        d["enter_frames"] = {str(k): v for k, v in self.enter_frames.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown synth config keys: {sorted(extra)}")
        d = dict(d)
        for key in ("image_size", "height_range"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("camera_shift_events", "zoom_events", "occlusion_windows"):
            if key in d:
                d[key] = [tuple(e) for e in d[key]]
        if "enter_frames" in d:
            d["enter_frames"] = {int(k): int(v) for k, v in d["enter_frames"].items()}
        return cls(**d).validate()


def parse_synth_config(doc):
    """Accepts a single config, a suite (``{"configs": [...]}`` or a list), or
    a seeded family ``{"template": {...}, "seeds": [start, stop]}`` that
    expands to one config per seed in ``range(start, stop)``."""
    if isinstance(doc, dict) and "template" in doc:
        start, stop = doc["seeds"]
        prefix = doc.get("prefix", "synth")
        return [SynthConfig.from_dict({**doc["template"], "seed": s, "seq_id": f"{prefix}-{s}"})
                for s in range(int(start), int(stop))]
    if isinstance(doc, dict) and "configs" in doc:
        doc = doc["configs"]
    if isinstance(doc, list):
        return [SynthConfig.from_dict(d) for d in doc]
    if not isinstance(doc, dict):
        raise InvalidConfig("synth config must be a JSON object or list")
    return SynthConfig.from_dict(doc)


def load_synth_config(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}:{exc.lineno}: {exc.msg}") from None
    return parse_synth_config(doc)


def bundled_config(name):
    """Load ``data/configs/<name>.json`` shipped with the package."""
    ref = resources.files("posetracker.data").joinpath("configs", f"{name}.json")
    if not ref.is_file():
        raise InvalidConfig(f"no bundled synth config named {name!r}")
    return parse_synth_config(json.loads(ref.read_text()))


def bundled_config_names():
    root = resources.files("posetracker.data").joinpath("configs")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def synth_suite(configs):
    if isinstance(configs, SynthConfig):
        configs = [configs]
    return [synth_sequence(c) for c in configs]


# ----------------------------------------------------------------------
# stick figures
# ----------------------------------------------------------------------

def _dir(theta):
    # theta = 0 points straight down in image coordinates
    return np.array([math.sin(theta), math.cos(theta)])


class _Person:
    def __init__(self, rng, cfg, slot):
        lo, hi = cfg.height_range
        self.height = rng.uniform(lo, hi)
        self.seg = {k: v * self.height * rng.uniform(0.85, 1.15) for k, v in _BODY.items()}
        self.facing = 1.0 if rng.random() < 0.5 else -1.0
        self.lean = rng.uniform(-0.12, 0.12)
        amp = cfg.swing_amplitude
        freq = cfg.swing_frequency
        # (base, amplitude, frequency, phase) for each swinging angle
        self.angles = {}
        for limb in ("l_arm", "r_arm", "l_fore", "r_fore", "l_leg", "r_leg", "l_shin", "r_shin", "head"):
            if "arm" in limb:
                base = rng.uniform(-0.5, 0.5)
            elif "fore" in limb:
                base = rng.uniform(-1.2, 0.2)
            elif "leg" in limb:
                base = rng.uniform(-0.25, 0.25)
            elif "shin" in limb:
                base = rng.uniform(0.0, 0.35)
            else:
                base = rng.uniform(-0.2, 0.2)
            self.angles[limb] = (base, rng.uniform(0.3, 1.0) * amp, rng.uniform(0.4, 1.0) * freq,
                                 rng.uniform(0, 2 * math.pi))
        self.scores = rng.uniform(0.75, 1.0, size=len(JOINTS))
        self.wobble = rng.uniform(0, 2 * math.pi)
        self.pos, self.vel = _placement(rng, cfg, slot, self.height)

    def angle(self, name, t):
        base, amp, freq, phase = self.angles[name]
        return base + amp * math.sin(2 * math.pi * freq * t + phase)

    def pose(self, t):
        s = self.seg
        f = self.facing
        root = self.pos + self.vel * t + np.array([0.0, 1.5 * math.sin(0.2 * t + self.wobble)])
        up = _dir(math.pi + self.lean)
        side = np.array([-up[1], up[0]])
        neck = root + s["torso"] * up
        head_dir = _dir(math.pi + self.lean + self.angle("head", t))
        head_top = neck + s["head"] * head_dir
        nose = neck + s["nose"] * _dir(math.pi + self.lean + self.angle("head", t) - 0.5 * f)
        l_sh = neck + f * s["shoulder"] * side
        r_sh = neck - f * s["shoulder"] * side
        l_hip = root + f * s["hip"] * side
        r_hip = root - f * s["hip"] * side
        la = f * self.angle("l_arm", t)
        ra = f * self.angle("r_arm", t)
        l_el = l_sh + s["upper_arm"] * _dir(la)
        r_el = r_sh + s["upper_arm"] * _dir(ra)
        l_wr = l_el + s["forearm"] * _dir(la + f * self.angle("l_fore", t))
        r_wr = r_el + s["forearm"] * _dir(ra + f * self.angle("r_fore", t))
        ll = f * self.angle("l_leg", t)
        rl = f * self.angle("r_leg", t)
        l_kn = l_hip + s["thigh"] * _dir(ll)
        r_kn = r_hip + s["thigh"] * _dir(rl)
        l_an = l_kn + s["shin"] * _dir(ll - f * self.angle("l_shin", t))
        r_an = r_kn + s["shin"] * _dir(rl - f * self.angle("r_shin", t))
        xy = np.array([head_top, neck, nose, l_sh, r_sh, l_el, r_el, l_wr, r_wr,
                       l_hip, r_hip, l_kn, r_kn, l_an, r_an])
        return np.column_stack([xy, self.scores])


def _placement(rng, cfg, slot, height):
    w, h = cfg.image_size
    n = max(cfg.n_people, 1)
    speed = cfg.max_speed
    y = h * 0.5 + rng.uniform(-0.12, 0.12) * h
    if cfg.layout == "spread":
        x = w * (slot + 0.5) / n + rng.uniform(-0.05, 0.05) * w / n
        vel = rng.uniform(-speed, speed, size=2) * np.array([1.0, 0.3])
    elif cfg.layout == "crossing":
        left = slot % 2 == 0
        x = w * (0.3 if left else 0.7) + rng.uniform(-0.05, 0.05) * w
        vx = rng.uniform(0.6, 1.0) * speed * (1 if left else -1)
        vel = np.array([vx, rng.uniform(-0.1, 0.1) * speed])
    else:  # cluster: everyone within about half a body width of the center
        x = w * 0.5 + rng.uniform(-0.25, 0.25) * height
        y = h * 0.5 + rng.uniform(-0.15, 0.15) * height
        vel = rng.uniform(-speed, speed, size=2) * np.array([1.0, 0.3])
    return np.array([x, y]), vel


def synth_sequence(cfg):
    """Generate the ground-truth observation sequence for ``cfg``.

    Person ids are 1..n_people. Deterministic for a given config.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    people = [_Person(rng, cfg, k) for k in range(cfg.n_people)]
    noise_rng = np.random.default_rng((cfg.seed, 1))
    cx, cy = cfg.image_size[0] / 2.0, cfg.image_size[1] / 2.0
    scale = 1.0
    offset = np.zeros(2)
    shifts = {}
    for fr, dx, dy in cfg.camera_shift_events:
        shifts.setdefault(fr, []).append(("shift", dx, dy))
    for fr, z in cfg.zoom_events:
        shifts.setdefault(fr, []).append(("zoom", z, None))
    hidden = {}
    for pid, start, end in cfg.occlusion_windows:
        hidden.setdefault(pid, []).append((start, end))

    frames = []
    stride = cfg.frame_stride
    for k in range(cfg.n_frames):
        for kind, a, b in shifts.get(k, ()):
            if kind == "shift":
                offset = offset + np.array([a, b], dtype=np.float64)
            else:
                scale *= a
                offset = np.array([cx, cy]) + a * (offset - np.array([cx, cy]))
        t = k * stride
        cands = []
        for pid, person in enumerate(people, 1):
            pose = person.pose(t)
            if cfg.noise_sigma > 0:
                pose[:, :2] += noise_rng.normal(0.0, cfg.noise_sigma, size=(len(JOINTS), 2))
            if k < cfg.enter_frames.get(pid, 0):
                continue
            if any(s <= k < e for s, e in hidden.get(pid, ())):
                continue
            pose[:, :2] = scale * pose[:, :2] + offset
            cands.append(Candidate(pose, bbox_from_pose(pose), pid))
        frames.append(FrameObservation(k, cands))
    seq_id = cfg.seq_id or f"synth-{cfg.layout}-{cfg.seed}"
    return ObservationSequence(seq_id, tuple(cfg.image_size), JOINTS, frames).validate()
