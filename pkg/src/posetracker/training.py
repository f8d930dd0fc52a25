"""SGD training of the Siamese matcher plus threshold calibration."""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateDataset, EmptyDataset, InvalidConfig
from .gcn import DEFAULT_EMBED, DEFAULT_HIDDEN, DEFAULT_MARGIN, SiameseMatcher, init_weights, loss_gradients
from .skeleton import build_partitioned_adjacency, compute_reference_radii

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 200
    lr: float = 0.001
    lr_decay_epochs: tuple = (40, 60, 80, 100)
    lr_decay_factor: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.0
    margin: float = DEFAULT_MARGIN
    hidden: int = DEFAULT_HIDDEN
    embed: int = DEFAULT_EMBED
    seed: int = 0

    def validate(self):
        if self.batch_size < 1 or self.epochs < 0 or self.hidden < 1 or self.embed < 1:
            raise InvalidConfig("batch_size, hidden and embed must be positive, epochs non-negative")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise InvalidConfig("lr and weight_decay must be >= 0, momentum in [0, 1)")
        if self.margin <= 0 or self.lr_decay_factor <= 0:
            raise InvalidConfig("margin and lr_decay_factor must be positive")
        if list(self.lr_decay_epochs) != sorted(self.lr_decay_epochs):
            raise InvalidConfig("lr_decay_epochs must be ascending")
        return self

    def lr_at(self, epoch):
        steps = sum(1 for m in self.lr_decay_epochs if epoch >= m)
        return self.lr * self.lr_decay_factor ** steps

    def to_dict(self):
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        return d


@dataclass
class TrainResult:
    matcher: SiameseMatcher
    loss_curve: list = field(default_factory=list)  # (epoch, lr, mean batch loss)

    @property
    def weights(self):
        return self.matcher.weights


def sgd_step(weights, grads, lr, weight_decay=0.0, momentum=0.0, velocity=None):
    """In-place SGD update with coupled weight decay; edge importance is kept >= 0."""
    for name, p in weights.items():
        d = getattr(grads, name) + weight_decay * p
        if momentum:
            v = getattr(velocity, name)
            v *= momentum
            v += d
            d = v
        p -= lr * d
    np.maximum(weights.m1, 0.0, out=weights.m1)
    np.maximum(weights.m2, 0.0, out=weights.m2)


def train(pairs, cfg, topology, radii=None, init=None):
    """Train a matcher on ``pairs``; deterministic for a fixed ``cfg.seed``.

    Reference radii default to those of every pose in the dataset. The
    returned matcher has no threshold yet, see :func:`calibrate_threshold`.
    """
    cfg.validate()
    n = len(pairs)
    if n == 0:
        raise EmptyDataset("no training pairs")
    y = pairs.y
    if y.min() == y.max():
        raise DegenerateDataset("training pairs carry a single label")
    if radii is None:
        radii = compute_reference_radii(pairs.all_poses(), topology)
    adj = build_partitioned_adjacency(topology, radii)
    rng = np.random.default_rng(cfg.seed)
    weights = init.copy() if init is not None else init_weights(topology.n_joints, cfg.hidden, cfg.embed, rng)
    velocity = weights.zeros_like() if cfg.momentum else None
    curve = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = loss_gradients(pairs.batch(idx), weights, adj, cfg.margin)
            sgd_step(weights, grads, lr, cfg.weight_decay, cfg.momentum, velocity)
            total += loss * len(idx)
        curve.append((epoch, lr, total / n))
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log.info("epoch %d lr %.2e loss %.5f", epoch, lr, total / n)
    matcher = SiameseMatcher(weights, topology, radii, cfg.margin)
    return TrainResult(matcher, curve)


def matching_accuracy(matcher, pairs, threshold=None):
    """Fraction of pairs where ``distance < threshold`` agrees with the label.

    Works for any object with ``pair_distances(pairs)``, including the
    Euclidean baseline.
    """
    if len(pairs) == 0:
        raise EmptyDataset("no pairs to score")
    if threshold is None:
        threshold = matcher.threshold
    d = matcher.pair_distances(pairs)
    return float(np.mean((d < threshold) == (pairs.y == 1)))


def threshold_grid(distances):
    """Candidate thresholds: 0, midpoints between sorted distinct distances, max + 1."""
    u = np.unique(distances)
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[0.0], mids, [u[-1] + 1.0]])


def best_threshold(distances, y):
    distances = np.asarray(distances, dtype=np.float64)
    y = np.asarray(y)
    if len(distances) == 0:
        raise EmptyDataset("no pairs to calibrate on")
    grid = threshold_grid(distances)
    pos = np.sort(distances[y == 1])
    neg = np.sort(distances[y != 1])
    correct = np.searchsorted(pos, grid, side="left") + (len(neg) - np.searchsorted(neg, grid, side="left"))
    k = int(np.argmax(correct))  # first maximum, i.e. the smallest threshold
    return float(grid[k]), correct[k] / len(distances)


def calibrate_threshold(matcher, validation_pairs):
    """Accuracy-maximizing distance threshold; ties go to the smaller value."""
    if len(validation_pairs) == 0:
        raise EmptyDataset("no validation pairs")
    thr, _ = best_threshold(matcher.pair_distances(validation_pairs), validation_pairs.y)
    return thr
