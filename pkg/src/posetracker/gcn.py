"""Siamese graph-convolution pose matcher.

Network (both branches share one :class:`GcnWeights`)::

    normalized joints (J x 2, invalid joints zeroed)
      -> graph conv 1: relu( sum_c (A_c * M1) X W1_c + b1 )      J x H
      -> graph conv 2: relu( sum_c (A_c * M2) H1 W2_c + b2 )     J x H
      -> mean over valid joints                                  H
      -> linear head  g Wh + bh                                  E (=128)
      -> l2 normalization

``A_c`` are the partition operators from :mod:`posetracker.skeleton`, ``M1``
and ``M2`` the learnable edge-importance masks. The head is a 1x1
convolution over the pooled node axis, i.e. a dense layer.

Everything is batched over a leading axis and written in plain numpy,
including the hand-derived backward pass.
"""

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import EmptyPose, ParseError, SchemaVersionError, ShapeMismatch, ValidationError
from .skeleton import N_PARTITIONS, build_partitioned_adjacency, topology_from_names

WEIGHTS_FORMAT = "posetracker-gcn-weights"
WEIGHTS_VERSION = 1

DEFAULT_HIDDEN = 64
DEFAULT_EMBED = 128
DEFAULT_MARGIN = 1.0
IN_DIM = 2


@dataclass
class GcnWeights:
    w1: np.ndarray  # (3, C_in, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (3, H, H)
    b2: np.ndarray  # (H,)
    m1: np.ndarray  # (J, J) edge importance, layer 1
    m2: np.ndarray  # (J, J) edge importance, layer 2
    wh: np.ndarray  # (H, E)
    bh: np.ndarray  # (E,)

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]

    def items(self):
        return [(n, getattr(self, n)) for n in self.names()]

    @property
    def dims(self):
        return {"in": self.w1.shape[1], "hidden": self.w1.shape[2],
                "embed": self.wh.shape[1], "joints": self.m1.shape[0]}

    def copy(self):
        return GcnWeights(*(a.copy() for _, a in self.items()))

    def zeros_like(self):
        return GcnWeights(*(np.zeros_like(a) for _, a in self.items()))

    def norm(self):
        return float(np.sqrt(sum(float(np.sum(a * a)) for _, a in self.items())))

    def check(self):
        d = self.dims
        J, C, H, E = d["joints"], d["in"], d["hidden"], d["embed"]
        expected = {"w1": (N_PARTITIONS, C, H), "b1": (H,), "w2": (N_PARTITIONS, H, H), "b2": (H,),
                    "m1": (J, J), "m2": (J, J), "wh": (H, E), "bh": (E,)}
        for name, arr in self.items():
            if arr.shape != expected[name]:
                raise ShapeMismatch(f"{name}: shape {arr.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        if np.any(self.m1 < 0) or np.any(self.m2 < 0):
            raise ValidationError("edge importance must be non-negative")
        return self


def init_weights(n_joints, hidden=DEFAULT_HIDDEN, embed=DEFAULT_EMBED, rng=None, in_dim=IN_DIM):
    """Glorot-uniform matrices, zero biases, all-ones edge importance."""
    rng = np.random.default_rng(rng)

    def glorot(shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    return GcnWeights(
        w1=glorot((N_PARTITIONS, in_dim, hidden), N_PARTITIONS * in_dim, hidden),
        b1=np.zeros(hidden),
        w2=glorot((N_PARTITIONS, hidden, hidden), N_PARTITIONS * hidden, hidden),
        b2=np.zeros(hidden),
        m1=np.ones((n_joints, n_joints)),
        m2=np.ones((n_joints, n_joints)),
        wh=glorot((hidden, embed), hidden, embed),
        bh=np.zeros(embed),
    )


# ----------------------------------------------------------------------
# forward / backward
# ----------------------------------------------------------------------

def _conv(x, a_eff, w, b):
    # node-major layout: x (J, B, C); a_eff (3, J, J); w (3, C, H)
    # returns ax (3, J*B, C) and pre (J*B, H)
    J, B, C = x.shape
    ax = (a_eff.reshape(N_PARTITIONS * J, J) @ x.reshape(J, B * C)).reshape(N_PARTITIONS, J * B, C)
    pre = ax[0] @ w[0]
    for c in range(1, N_PARTITIONS):
        pre += ax[c] @ w[c]
    pre += b
    return ax, pre


def _conv_backward(dpre, x, ax, a, a_eff, w):
    J, B, C = x.shape
    dw = np.empty_like(w)
    dax = np.empty((N_PARTITIONS, J * B, C))
    for c in range(N_PARTITIONS):
        dw[c] = ax[c].T @ dpre
        np.matmul(dpre, w[c].T, out=dax[c])
    dax = dax.reshape(N_PARTITIONS * J, B * C)
    x2 = x.reshape(J, B * C)
    da = (dax @ x2.T).reshape(N_PARTITIONS, J, J)
    dx = (a_eff.reshape(N_PARTITIONS * J, J).T @ dax).reshape(J, B, C)
    db = dpre.sum(axis=0)
    dm = (da * a).sum(axis=0)
    return dx, dw, db, dm


def gcn_layer_forward(features, adj, edge_mask, w, b):
    """One graph convolution with ReLU on a single ``(J, C)`` feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    J = adj.n_joints
    if features.ndim != 2 or features.shape[0] != J:
        raise ShapeMismatch(f"features {features.shape} vs {J} joints")
    if edge_mask.shape != (J, J) or w.shape[0] != N_PARTITIONS or w.shape[1] != features.shape[1] \
            or b.shape != (w.shape[2],):
        raise ShapeMismatch("layer weights do not match features/adjacency")
    _, pre = _conv(features[:, None, :], adj.ops * edge_mask, w, b)
    return np.maximum(pre, 0.0)


class _Trace:
    __slots__ = ("x", "valid", "nvalid", "a1", "a2", "ax1", "pre1", "h1", "ax2", "pre2",
                 "g", "z", "znorm", "e")


def forward(weights, adj, coords, valid, trace=False):
    """Embed a batch of normalized poses: ``coords (B,J,2)``, ``valid (B,J)``."""
    coords = np.asarray(coords, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    J = adj.n_joints
    if coords.ndim != 3 or coords.shape[1:] != (J, weights.w1.shape[1]) or valid.shape != coords.shape[:2]:
        raise ShapeMismatch(f"input {coords.shape} / mask {valid.shape} vs {J} joints")
    if weights.m1.shape != (J, J):
        raise ShapeMismatch(f"weights built for {weights.m1.shape[0]} joints, adjacency has {J}")
    B = coords.shape[0]
    H = weights.w1.shape[2]
    nvalid = valid.sum(axis=1)
    if np.any(nvalid == 0):
        raise EmptyPose("pose without valid joints cannot be embedded")
    vf = valid.T.astype(np.float64)                              # (J, B)
    x = np.ascontiguousarray((coords * valid[:, :, None]).transpose(1, 0, 2))
    a1 = adj.ops * weights.m1
    a2 = adj.ops * weights.m2
    ax1, pre1 = _conv(x, a1, weights.w1, weights.b1)
    h1 = np.maximum(pre1, 0.0).reshape(J, B, H)
    ax2, pre2 = _conv(h1, a2, weights.w2, weights.b2)
    h2 = np.maximum(pre2, 0.0).reshape(J, B, H)
    g = np.einsum("jb,jbh->bh", vf, h2) / nvalid[:, None]
    z = g @ weights.wh + weights.bh
    znorm = np.sqrt(np.sum(z * z, axis=1))
    e = z / np.maximum(znorm, 1e-300)[:, None]
    if not trace:
        return e, None
    t = _Trace()
    t.x, t.valid, t.nvalid, t.a1, t.a2 = x, vf, nvalid, a1, a2
    t.ax1, t.pre1, t.h1, t.ax2, t.pre2 = ax1, pre1, h1, ax2, pre2
    t.g, t.z, t.znorm, t.e = g, z, znorm, e
    return e, t


def backward(weights, adj, t, d_e):
    """Gradients of a scalar w.r.t. all parameters, given ``d_e = dL/de``."""
    e = t.e
    # d/dz of z/|z| projects out the radial component
    dz = (d_e - e * np.sum(e * d_e, axis=1, keepdims=True)) / np.maximum(t.znorm, 1e-300)[:, None]
    dwh = t.g.T @ dz
    dbh = dz.sum(axis=0)
    dg = (dz @ weights.wh.T) / t.nvalid[:, None]                  # (B, H)
    J, B = t.valid.shape
    dpre2 = (t.valid[:, :, None] * dg[None, :, :]).reshape(J * B, -1)
    dpre2 *= t.pre2 > 0.0
    dh1, dw2, db2, dm2 = _conv_backward(dpre2, t.h1, t.ax2, adj.ops, t.a2, weights.w2)
    dpre1 = dh1.reshape(J * B, -1) * (t.pre1 > 0.0)
    _, dw1, db1, dm1 = _conv_backward(dpre1, t.x, t.ax1, adj.ops, t.a1, weights.w1)
    return GcnWeights(dw1, db1, dw2, db2, dm1, dm2, dwh, dbh)


# ----------------------------------------------------------------------
# distance and loss
# ----------------------------------------------------------------------

def pose_distance(e1, e2):
    d = np.asarray(e1, dtype=np.float64) - np.asarray(e2, dtype=np.float64)
    return float(np.sqrt(np.dot(d, d)))


def contrastive_loss(D, y, margin=DEFAULT_MARGIN):
    """Margin contrastive loss on the squared embedding distance."""
    d2 = D * D
    return 0.5 * y * d2 + 0.5 * (1 - y) * max(0.0, margin - d2)


def batch_loss(weights, adj, batch, margin=DEFAULT_MARGIN):
    a_coords, a_valid, b_coords, b_valid, y = batch
    B = len(y)
    e, _ = forward(weights, adj, np.concatenate([a_coords, b_coords]), np.concatenate([a_valid, b_valid]))
    diff = e[:B] - e[B:]
    d2 = np.sum(diff * diff, axis=1)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(0.5 * y * d2 + 0.5 * (1 - y) * np.maximum(0.0, margin - d2)))


def loss_gradients(batch, weights, adj, margin=DEFAULT_MARGIN):
    """Mean contrastive loss over a pair batch and its exact gradient.

    ``batch`` is ``(a_coords, a_valid, b_coords, b_valid, y)``. Subgradient
    0 is taken at the hinge and at ReLU kinks.
    """
    a_coords, a_valid, b_coords, b_valid, y = batch
    B = len(y)
    if B == 0:
        raise ShapeMismatch("empty batch")
    coords = np.concatenate([a_coords, b_coords])
    valid = np.concatenate([a_valid, b_valid])
    e, t = forward(weights, adj, coords, valid, trace=True)
    diff = e[:B] - e[B:]
    d2 = np.sum(diff * diff, axis=1)
    y = np.asarray(y, dtype=np.float64)
    hinge = np.maximum(0.0, margin - d2)
    loss = float(np.mean(0.5 * y * d2 + 0.5 * (1 - y) * hinge))
    dl_dd2 = (0.5 * y - 0.5 * (1 - y) * (hinge > 0.0)) / B
    de_a = 2.0 * diff * dl_dd2[:, None]
    grads = backward(weights, adj, t, np.concatenate([de_a, -de_a]))
    return loss, grads


# ----------------------------------------------------------------------
# matcher bundle and weights file
# ----------------------------------------------------------------------

class SiameseMatcher:
    """Trained weights plus everything needed to embed poses at inference."""

    def __init__(self, weights, topology, radii, margin=DEFAULT_MARGIN, threshold=None):
        self.weights = weights.check()
        self.topology = topology
        self.radii = np.asarray(radii, dtype=np.float64)
        self.adj = build_partitioned_adjacency(topology, self.radii)
        if weights.m1.shape[0] != topology.n_joints:
            raise ShapeMismatch("weights and topology disagree on joint count")
        self.margin = float(margin)
        self.threshold = None if threshold is None else float(threshold)

    def embed_batch(self, coords, valid):
        return forward(self.weights, self.adj, coords, valid)[0]

    def embed(self, norm_pose):
        coords, valid = norm_pose
        return self.embed_batch(coords[None], valid[None])[0]

    def pair_distances(self, pairs):
        ea = self.embed_batch(pairs.a_coords, pairs.a_valid)
        eb = self.embed_batch(pairs.b_coords, pairs.b_valid)
        d = ea - eb
        return np.sqrt(np.sum(d * d, axis=1))

    def to_dict(self):
        topo = self.topology
        return {
            "format": WEIGHTS_FORMAT,
            "format_version": WEIGHTS_VERSION,
            "topology": {
                "name": topo.name,
                "joint_order": list(topo.joint_names),
                "edges": [[topo.joint_names[a], topo.joint_names[b]] for a, b in topo.edges],
            },
            "dims": self.weights.dims,
            "activation": "relu",
            "margin": self.margin,
            "threshold": self.threshold,
            "reference_radii": self.radii.tolist(),
            "params": {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                       for name, arr in self.weights.items()},
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def from_dict(cls, doc, source="<weights>"):
        if doc.get("format") != WEIGHTS_FORMAT:
            raise ParseError(f"{source}: not a weights file")
        if doc.get("format_version") != WEIGHTS_VERSION:
            raise SchemaVersionError(f"{source}: weights format version {doc.get('format_version')} unsupported")
        try:
            t = doc["topology"]
            topology = topology_from_names(t["name"], t["joint_order"], [tuple(e) for e in t["edges"]])
            params = {}
            for name in GcnWeights.names():
                p = doc["params"][name]
                params[name] = np.asarray(p["data"], dtype=np.float64).reshape(p["shape"])
            weights = GcnWeights(**params)
            return cls(weights, topology, doc["reference_radii"], doc["margin"], doc.get("threshold"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{source}: malformed weights file ({exc})") from None

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc, str(path))


class EuclideanMatcher:
    """Baseline: distance between normalized joint vectors, no network."""

    threshold = None

    def pair_distances(self, pairs):
        d = (pairs.a_coords - pairs.b_coords).reshape(len(pairs.y), -1)
        return np.sqrt(np.sum(d * d, axis=1))
