"""Radial-distance filtration over a morphology tree.

f(root) = 0 and f(v) = max(f(parent(v)), |v - soma|), filled breadth-first
so every parent is finalized before its children.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import UnknownNode
from .swc import MorphTree


@dataclass(frozen=True)
class FiltrationMap:
    """Filtration values aligned with ``tree.order``."""

    values: np.ndarray
    tree: MorphTree

    def __getitem__(self, node_id):
        try:
            return float(self.values[self.tree.index[node_id]])
        except KeyError:
            raise UnknownNode(node_id) from None

    def as_dict(self):
        return {n: float(v) for n, v in zip(self.tree.order, self.values)}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "f_value"])
            for n, v in zip(self.tree.order, self.values):
                w.writerow([n, repr(float(v))])


def raw_radial_distance(tree: MorphTree, node_id) -> float:
    if node_id not in tree.nodes:
        raise UnknownNode(node_id)
    s = tree.nodes[tree.root_id]
    v = tree.nodes[node_id]
    return math.sqrt((v.x - s.x) ** 2 + (v.y - s.y) ** 2 + (v.z - s.z) ** 2)


def raw_radial_distances(tree: MorphTree) -> np.ndarray:
    d = tree.xyz - tree.xyz[0]
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def compute_filtration(tree: MorphTree) -> FiltrationMap:
    d_raw = raw_radial_distances(tree)
    parent = tree.parent_index
    f = np.empty_like(d_raw)
    f[0] = 0.0
    # tree.order is breadth-first, so parent[i] < i
    for i in range(1, len(f)):
        fp = f[parent[i]]
        f[i] = fp if fp > d_raw[i] else d_raw[i]
    f.setflags(write=False)
    return FiltrationMap(f, tree)
