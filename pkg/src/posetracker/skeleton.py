"""Skeleton topology and the partitioned adjacency used by graph convolution.

Neighbors of a root joint (the joint itself plus its 1-hop limbs) are split
into three classes by comparing reference radii, i.e. mean distances to the
skeleton's gravity center over a training set:

    0  root      r_j == r_i
    1  inward    r_j <  r_i   (centripetal)
    2  outward   r_j >  r_i   (centrifugal)

Each class gets its own J x J operator whose entries are ``1/Z``, where ``Z``
is the number of the root's neighbors that fall in the same class.
"""

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import EmptyPose, NoValidSamples, NotNeighbors, ParseError, SchemaVersionError, ValidationError

N_PARTITIONS = 3
TOPOLOGY_FORMAT = "posetracker-topology"
TOPOLOGY_VERSION = 1


@dataclass(frozen=True)
class SkeletonTopology:
    name: str
    joint_names: tuple
    edges: tuple  # sorted (i, j) index pairs with i < j

    def __post_init__(self):
        names = tuple(self.joint_names)
        n = len(names)
        if n == 0:
            raise ValidationError("topology has no joints")
        if len(set(names)) != n:
            raise ValidationError("duplicate joint names")
        seen = set()
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValidationError(f"edge ({a}, {b}) references a missing joint")
            if a == b:
                raise ValidationError(f"self-loop on joint {names[a]}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValidationError(f"duplicate edge {names[key[0]]}-{names[key[1]]}")
            seen.add(key)
        object.__setattr__(self, "joint_names", names)
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if not _connected(n, self.edges):
            raise ValidationError(f"topology {self.name!r} is not connected")

    @property
    def n_joints(self):
        return len(self.joint_names)

    def index(self, name):
        return self.joint_names.index(name)

    def neighborhood(self, i):
        """B(v_i): the root itself and every joint one limb away, sorted."""
        nb = {i}
        for a, b in self.edges:
            if a == i:
                nb.add(b)
            elif b == i:
                nb.add(a)
        return sorted(nb)


def _connected(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def topology_from_names(name, joint_names, edge_names):
    idx = {j: k for k, j in enumerate(joint_names)}
    try:
        edges = tuple((idx[a], idx[b]) for a, b in edge_names)
    except KeyError as exc:
        raise ValidationError(f"edge references unknown joint {exc.args[0]!r}") from None
    return SkeletonTopology(name, tuple(joint_names), edges)


def parse_topology(text, source="<string>"):
    """Parse the line-oriented topology format.

    Grammar (one directive per line, ``#`` starts a comment)::

        format posetracker-topology 1
        name <identifier>
        joint <name>            # repeated, in index order
        edge <name> <name>      # repeated, unordered pair
    """
    name = None
    version = None
    joints = []
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key == "format":
            if len(parts) != 3 or parts[1] != TOPOLOGY_FORMAT:
                raise ParseError(f"{source}:{lineno}: bad format line")
            try:
                version = int(parts[2])
            except ValueError:
                raise ParseError(f"{source}:{lineno}: bad format version {parts[2]!r}") from None
            if version != TOPOLOGY_VERSION:
                raise SchemaVersionError(f"{source}: topology format version {version} unsupported")
        elif key == "name" and len(parts) == 2:
            name = parts[1]
        elif key == "joint" and len(parts) == 2:
            joints.append(parts[1])
        elif key == "edge" and len(parts) == 3:
            edges.append((parts[1], parts[2]))
        else:
            raise ParseError(f"{source}:{lineno}: cannot parse {raw.strip()!r}")
    if version is None:
        raise ParseError(f"{source}: missing format line")
    if name is None:
        raise ParseError(f"{source}: missing name line")
    return topology_from_names(name, joints, edges)


def format_topology(topo):
    lines = [f"format {TOPOLOGY_FORMAT} {TOPOLOGY_VERSION}", f"name {topo.name}"]
    lines += [f"joint {j}" for j in topo.joint_names]
    lines += [f"edge {topo.joint_names[a]} {topo.joint_names[b]}" for a, b in topo.edges]
    return "\n".join(lines) + "\n"


def load_topology(path):
    path = Path(path)
    return parse_topology(path.read_text(), str(path))


def default_topology():
    """The bundled 15-joint skeleton (canonical joint order)."""
    text = resources.files("posetracker.data").joinpath("posetrack15.topology").read_text()
    return parse_topology(text, "posetrack15.topology")


# ----------------------------------------------------------------------
# reference radii
# ----------------------------------------------------------------------

def gravity_center(norm_pose):
    coords, valid = norm_pose
    if not valid.any():
        raise EmptyPose("pose has no valid joints")
    return coords[valid].mean(axis=0)


def compute_reference_radii(training_poses, topology):
    """Mean distance of each joint to its pose's gravity center.

    Joints that are invalid in a given pose are skipped for that pose only.
    """
    poses = list(training_poses)
    if not poses:
        raise NoValidSamples("no training poses")
    J = topology.n_joints
    total = np.zeros(J)
    count = np.zeros(J, dtype=np.int64)
    for p in poses:
        coords, valid = p
        if coords.shape != (J, 2):
            raise ValidationError(f"pose shape {coords.shape} does not match topology ({J} joints)")
        if not valid.any():
            continue
        center = coords[valid].mean(axis=0)
        d = np.hypot(coords[:, 0] - center[0], coords[:, 1] - center[1])
        total[valid] += d[valid]
        count[valid] += 1
    if np.any(count == 0):
        missing = [topology.joint_names[j] for j in np.flatnonzero(count == 0)]
        raise NoValidSamples(f"joints never valid in training data: {', '.join(missing)}")
    return total / count


# ----------------------------------------------------------------------
# partitioning
# ----------------------------------------------------------------------

def partition_label(i, j, radii, topology=None):
    if topology is not None and j not in topology.neighborhood(i):
        raise NotNeighbors(f"joint {j} is not in the neighborhood of joint {i}")
    if i == j or radii[j] == radii[i]:
        return 0
    return 1 if radii[j] < radii[i] else 2


@dataclass(frozen=True, eq=False)
class PartitionedAdjacency:
    ops: np.ndarray     # (3, J, J), already divided by Z
    labels: np.ndarray  # (J, J) int, -1 outside the neighborhood

    @property
    def n_joints(self):
        return self.ops.shape[1]


def build_partitioned_adjacency(topology, radii):
    radii = np.asarray(radii, dtype=np.float64)
    J = topology.n_joints
    if radii.shape != (J,):
        raise ValidationError(f"radii shape {radii.shape} does not match topology ({J} joints)")
    if not np.all(np.isfinite(radii)) or np.any(radii < 0):
        raise ValidationError("reference radii must be finite and non-negative")
    ops = np.zeros((N_PARTITIONS, J, J))
    labels = np.full((J, J), -1, dtype=np.int64)
    for i in range(J):
        nb = topology.neighborhood(i)
        lab = [partition_label(i, j, radii) for j in nb]
        for j, c in zip(nb, lab):
            labels[i, j] = c
            ops[c, i, j] = 1.0 / lab.count(c)
    ops.flags.writeable = False
    labels.flags.writeable = False
    return PartitionedAdjacency(ops, labels)
