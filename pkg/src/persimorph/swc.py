"""SWC parsing, tree construction and per-node encoder features.

SWC is a line-oriented text format with one sample point per line::

    # comment
    id type x y z radius parent

``parent == -1`` marks the root (the soma). Ids need not be contiguous or
sorted; internally nodes are indexed in breadth-first order from the root.
"""

from __future__ import annotations

import io
import os
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DanglingParent,
    DuplicateId,
    EmptyFile,
    EmptyFitSet,
    MalformedLine,
    MultipleRoots,
    NoRoot,
)

FEATURE_NAMES = ("x", "y", "z", "radius", "path_length")


class SwcRecord(NamedTuple):
    id: int
    type_code: int
    x: float
    y: float
    z: float
    radius: float
    parent_id: int


def _as_int(token):
    try:
        return int(token)
    except ValueError:
        v = float(token)
        if not v.is_integer():
            raise
        return int(v)


def parse_swc(source) -> list[SwcRecord]:
    """Parse SWC text into records, in file order.

    ``source`` may be a string of SWC text, an open text stream, or an
    iterable of lines. Comments (``#``) and blank lines are skipped.
    Raises ``MalformedLine``, ``DuplicateId`` or ``EmptyFile``.
    """
    if isinstance(source, str):
        lines = io.StringIO(source)
    else:
        lines = source
    records = []
    seen = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 7:
            raise MalformedLine(lineno, f"expected 7 fields, got {len(fields)}", raw)
        try:
            node_id = _as_int(fields[0])
            type_code = _as_int(fields[1])
            x, y, z, radius = (float(t) for t in fields[2:6])
            parent_id = _as_int(fields[6])
        except ValueError:
            raise MalformedLine(lineno, "non-numeric field", raw) from None
        if node_id < 1:
            raise MalformedLine(lineno, "node id must be positive", raw)
        if not all(np.isfinite((x, y, z, radius))):
            raise MalformedLine(lineno, "non-finite coordinate or radius", raw)
        if radius < 0:
            raise MalformedLine(lineno, "negative radius", raw)
        if node_id in seen:
            raise DuplicateId(node_id, lineno)
        seen[node_id] = lineno
        records.append(SwcRecord(node_id, type_code, x, y, z, radius, parent_id))
    if not records:
        raise EmptyFile("no data lines")
    return records


def read_swc(path) -> list[SwcRecord]:
    with open(path, "r", newline=None) as fh:
        return parse_swc(fh)


@dataclass(frozen=True, eq=False)
class MorphTree:
    """Validated rooted tree. Immutable once built; build with ``build_tree``."""

    nodes: dict
    children: dict
    root_id: int
    name: str = ""
    # breadth-first order of node ids, parents always before children
    order: tuple = field(default=(), repr=False)

    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, MorphTree):
            return NotImplemented
        return (
            self.root_id == other.root_id
            and self.nodes == other.nodes
            and self.children == other.children
        )

    def parent(self, node_id):
        p = self.nodes[node_id].parent_id
        return None if p == -1 else p

    def is_leaf(self, node_id):
        return not self.children[node_id]

    @property
    def leaves(self):
        return [n for n in self.order if not self.children[n]]

    @cached_property
    def index(self) -> dict:
        """Node id -> position in breadth-first order."""
        return {n: i for i, n in enumerate(self.order)}

    @cached_property
    def parent_index(self) -> np.ndarray:
        """Parent position per node in BFS order; -1 for the root."""
        idx = self.index
        out = np.full(len(self.order), -1, dtype=np.int64)
        for i, n in enumerate(self.order):
            p = self.nodes[n].parent_id
            if p != -1:
                out[i] = idx[p]
        out.setflags(write=False)
        return out

    @cached_property
    def xyz(self) -> np.ndarray:
        a = np.array([[self.nodes[n].x, self.nodes[n].y, self.nodes[n].z] for n in self.order], dtype=float)
        a.setflags(write=False)
        return a

    @cached_property
    def radii(self) -> np.ndarray:
        a = np.array([self.nodes[n].radius for n in self.order], dtype=float)
        a.setflags(write=False)
        return a

    @cached_property
    def heights(self) -> np.ndarray:
        """Longest downward edge count to a leaf (leaves are 0)."""
        parent = self.parent_index
        h = np.zeros(len(parent), dtype=np.int64)
        for i in range(len(parent) - 1, 0, -1):
            p = parent[i]
            if h[i] + 1 > h[p]:
                h[p] = h[i] + 1
        h.setflags(write=False)
        return h


def build_tree(records: Sequence[SwcRecord], name: str = "") -> MorphTree:
    """Link records into a ``MorphTree``.

    Raises ``NoRoot``, ``MultipleRoots``, ``DanglingParent`` or ``CycleDetected``.
    """
    nodes = {}
    for r in records:
        if r.id in nodes:
            raise DuplicateId(r.id)
        nodes[r.id] = r
    roots = [r.id for r in records if r.parent_id == -1]
    for r in records:
        if r.parent_id != -1 and r.parent_id not in nodes:
            raise DanglingParent(r.id, r.parent_id)
    if len(roots) > 1:
        raise MultipleRoots(roots)
    if not roots:
        raise NoRoot("no node with parent id -1")
    children = {r.id: [] for r in records}
    for r in records:
        if r.parent_id != -1:
            children[r.parent_id].append(r.id)
    root = roots[0]
    order = []
    queue = deque([root])
    while queue:
        n = queue.popleft()
        order.append(n)
        queue.extend(children[n])
    if len(order) != len(nodes):
        reached = set(order)
        raise CycleDetected([n for n in nodes if n not in reached])
    children = {k: tuple(v) for k, v in children.items()}
    return MorphTree(nodes=nodes, children=children, root_id=root, name=name, order=tuple(order))


def load_tree(path) -> MorphTree:
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return build_tree(read_swc(path), name=name)


def serialize_swc(tree: MorphTree, header: str | None = None) -> str:
    """Write the tree back as SWC text (BFS order, exact float repr)."""
    out = []
    if header:
        out.extend("# " + h for h in header.splitlines())
    for n in tree.order:
        r = tree.nodes[n]
        out.append(f"{r.id} {r.type_code} {r.x!r} {r.y!r} {r.z!r} {r.radius!r} {r.parent_id}")
    return "\n".join(out) + "\n"


def write_swc(tree: MorphTree, path, header=None):
    with open(path, "w", newline="\n") as fh:
        fh.write(serialize_swc(tree, header))


def tree_from_arrays(parent, xyz, radii, type_code=3, name="") -> MorphTree:
    """Build a tree from a parent array (index-based, ``-1`` for the root).

    Node ids are ``index + 1``. The root gets SWC type 1 (soma).
    """
    records = []
    for i, p in enumerate(parent):
        t = 1 if p < 0 else type_code
        x, y, z = (float(v) for v in xyz[i])
        records.append(SwcRecord(i + 1, t, x, y, z, float(radii[i]), -1 if p < 0 else int(p) + 1))
    return build_tree(records, name=name)


# --- node features ------------------------------------------------------------

@dataclass
class NodeFeatures:
    """Per-node ``(x, y, z, radius, path_length_from_soma)`` in BFS order."""

    values: np.ndarray
    node_ids: tuple
    stats: "ZScoreStats | None" = None

    @property
    def normalized(self):
        return self.stats is not None


def path_lengths(tree: MorphTree) -> np.ndarray:
    parent = tree.parent_index
    xyz = tree.xyz
    out = np.zeros(len(parent))
    edge = np.linalg.norm(xyz[1:] - xyz[parent[1:]], axis=1)
    for i in range(1, len(parent)):
        out[i] = out[parent[i]] + edge[i - 1]
    return out


def compute_node_features(tree: MorphTree) -> NodeFeatures:
    vals = np.column_stack([tree.xyz, tree.radii, path_lengths(tree)])
    return NodeFeatures(values=vals, node_ids=tree.order)


@dataclass(frozen=True)
class ZScoreStats:
    mean: np.ndarray
    std: np.ndarray
    # columns whose population std was zero; those are centred but not scaled
    degenerate: np.ndarray

    def apply(self, feats: NodeFeatures) -> NodeFeatures:
        scale = np.where(self.degenerate, 1.0, self.std)
        return NodeFeatures((feats.values - self.mean) / scale, feats.node_ids, stats=self)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "degenerate": self.degenerate.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["degenerate"], bool))


def fit_zscore(population: Iterable[NodeFeatures]) -> ZScoreStats:
    """Population (divide-by-N) statistics pooled over all nodes."""
    blocks = [f.values for f in population]
    if not blocks:
        raise EmptyFitSet("z-score fit set is empty")
    X = np.concatenate(blocks, axis=0)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return ZScoreStats(mean, std, std == 0)


def fit_and_apply_zscore(population: Sequence[NodeFeatures], fit_set=None):
    """Fit on ``population[fit_set]`` (all when ``None``), apply to everything.

    ``fit_set`` is a sequence of indices or a boolean mask. Returns
    ``(normalized_list, stats)``.
    """
    population = list(population)
    if fit_set is None:
        chosen = population
    else:
        sel = np.asarray(fit_set)
        if sel.dtype == bool:
            sel = np.flatnonzero(sel)
        chosen = [population[i] for i in sel]
    stats = fit_zscore(chosen)
    return [stats.apply(f) for f in population], stats
