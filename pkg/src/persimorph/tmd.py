"""Elder-rule persistence pairs on a filtered tree, plus branch enrichment.

Each subtree carries a champion: its leaf with the largest filtration value.
At every bifurcation the champion with the largest value survives and every
other child's champion dies there, emitting ``(f(leaf), f(bifurcation))``.
The surviving global champion is paired with the root (death 0) unless
``include_root_pair=False``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError, FiltrationTreeMismatch, NotAnAncestor
from .filtration import FiltrationMap, compute_filtration
from .swc import MorphTree

DIAGRAM_HEADER = ("birth", "death", "delta", "mean_radius")


class PersistencePair(NamedTuple):
    birth: float
    death: float
    leaf_id: int
    death_node_id: int


class EnrichedPair(NamedTuple):
    birth: float
    death: float
    delta: float
    mean_radius: float


@dataclass
class PersistenceDiagram:
    """Enriched pairs as an ``(m, 4)`` array of (birth, death, delta, mean_radius)."""

    pairs: np.ndarray
    neuron_id: str = ""

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=float).reshape(-1, 4)

    @property
    def m(self):
        return len(self.pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        for row in self.pairs:
            yield EnrichedPair(*(float(v) for v in row))

    @property
    def birth(self):
        return self.pairs[:, 0]

    @property
    def death(self):
        return self.pairs[:, 1]

    @property
    def delta(self):
        return self.pairs[:, 2]

    @property
    def mean_radius(self):
        return self.pairs[:, 3]

    @property
    def persistence(self):
        """Grid ordinate ``b - d`` (differs from ``delta`` after scale augmentation)."""
        return self.pairs[:, 0] - self.pairs[:, 1]

    def copy(self):
        return PersistenceDiagram(self.pairs.copy(), self.neuron_id)

    def __add__(self, other):
        return PersistenceDiagram(np.vstack([self.pairs, other.pairs]), self.neuron_id)


def _better(fa, la, fb, lb):
    """True when champion (fa, la) beats (fb, lb): larger f, then smaller id."""
    return fa > fb or (fa == fb and la < lb)


def elder_rule_pairs(tree: MorphTree, f: FiltrationMap, include_root_pair: bool = True) -> list[PersistencePair]:
    if f.tree is not tree and (len(f.values) != len(tree) or f.tree.order != tree.order):
        raise FiltrationTreeMismatch("filtration was computed on a different tree")
    order = tree.order
    vals = f.values
    idx = tree.index
    n = len(order)
    champ_f = np.full(n, -math.inf)
    champ_leaf = [None] * n
    pairs = []
    # reverse BFS visits every child before its parent
    for i in range(n - 1, -1, -1):
        node = order[i]
        kids = tree.children[node]
        if not kids:
            champ_f[i] = vals[i]
            champ_leaf[i] = node
        else:
            kid_idx = [idx[c] for c in kids]
            best = kid_idx[0]
            for k in kid_idx[1:]:
                if _better(champ_f[k], champ_leaf[k], champ_f[best], champ_leaf[best]):
                    best = k
            for k in kid_idx:
                if k != best:
                    pairs.append(PersistencePair(float(champ_f[k]), float(vals[i]), champ_leaf[k], node))
            champ_f[i] = champ_f[best]
            champ_leaf[i] = champ_leaf[best]
    if include_root_pair:
        pairs.append(PersistencePair(float(champ_f[0]), float(vals[0]), champ_leaf[0], tree.root_id))
    return pairs


def enrich_pairs(tree: MorphTree, pairs, neuron_id: str | None = None) -> PersistenceDiagram:
    """Attach persistence ``delta = b - d`` and the mean radius on the leaf-to-death path."""
    rows = []
    for p in pairs:
        if p.leaf_id not in tree.nodes or p.death_node_id not in tree.nodes:
            raise NotAnAncestor(p.leaf_id, p.death_node_id)
        radii = []
        node = p.leaf_id
        while True:
            radii.append(tree.nodes[node].radius)
            if node == p.death_node_id:
                break
            par = tree.nodes[node].parent_id
            if par == -1:
                raise NotAnAncestor(p.leaf_id, p.death_node_id)
            node = par
        rows.append((p.birth, p.death, p.birth - p.death, math.fsum(radii) / len(radii)))
    return PersistenceDiagram(np.array(rows, dtype=float).reshape(-1, 4), tree.name if neuron_id is None else neuron_id)


def tree_diagram(tree: MorphTree, include_root_pair: bool = True) -> PersistenceDiagram:
    """filtration -> elder rule -> enrichment in one call."""
    f = compute_filtration(tree)
    return enrich_pairs(tree, elder_rule_pairs(tree, f, include_root_pair))


def write_diagram_csv(diagram: PersistenceDiagram, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGRAM_HEADER)
        for row in diagram.pairs:
            w.writerow([repr(float(v)) for v in row])


def read_diagram_csv(path, neuron_id=None) -> PersistenceDiagram:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != DIAGRAM_HEADER:
        raise DataError(f"{path}: expected header {','.join(DIAGRAM_HEADER)}")
    try:
        data = [[float(v) for v in r] for r in rows[1:] if r]
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    if any(len(r) != 4 for r in data):
        raise DataError(f"{path}: every row needs 4 values")
    if neuron_id is None:
        neuron_id = os.path.splitext(os.path.basename(str(path)))[0]
    return PersistenceDiagram(np.array(data, dtype=float).reshape(-1, 4), neuron_id)
