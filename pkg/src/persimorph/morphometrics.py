"""Classical morphometric baseline: eight scalars per tree."""

from __future__ import annotations

import numpy as np

from .filtration import compute_filtration
from .swc import MorphTree, path_lengths
from .tmd import enrich_pairs, elder_rule_pairs

FEATURES = (
    "leaf_count",
    "bifurcation_count",
    "total_cable_length",
    "max_radial_extent",
    "max_branch_order",
    "mean_radius",
    "mean_tip_path_length",
    "total_persistence",
)


def morphometrics(tree: MorphTree) -> np.ndarray:
    """Feature vector in ``FEATURES`` order.

    A bifurcation is any node with two or more children, the soma included.
    Branch order counts bifurcations strictly above a node.
    """
    parent = tree.parent_index
    nkids = np.array([len(tree.children[n]) for n in tree.order])
    leaves = nkids == 0
    plen = path_lengths(tree)
    cable = float(np.linalg.norm(tree.xyz[1:] - tree.xyz[parent[1:]], axis=1).sum()) if len(tree) > 1 else 0.0
    order = np.zeros(len(tree), dtype=np.int64)
    for i in range(1, len(tree)):
        p = parent[i]
        order[i] = order[p] + (1 if nkids[p] >= 2 else 0)
    f = compute_filtration(tree)
    diagram = enrich_pairs(tree, elder_rule_pairs(tree, f))
    return np.array([
        leaves.sum(),
        (nkids >= 2).sum(),
        cable,
        f.values.max(),
        order.max(),
        tree.radii.mean(),
        plen[leaves].mean(),
        diagram.delta.sum(),
    ], dtype=float)
