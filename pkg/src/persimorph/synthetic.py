"""Seeded synthetic neurons for desk-scale experiments.

Class ``c`` is a full binary tree of depth ``3 + c`` hanging off a soma at the
origin: ``2**(3 + c)`` tips, edge lengths ``U(5, 10) * (1 + 0.1 c)``, radii
``U(0.5, 1.5)``. Branch directions keep their parent's heading plus noise so
arbors grow outward. Depth and extent separate the classes by construction.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .rng import substream
from .swc import tree_from_arrays


def _unit(v):
    return v / np.linalg.norm(v)


def synthetic_tree(label, rng, name=""):
    depth = 3 + label
    scale = 1.0 + 0.1 * label
    parent = [-1]
    xyz = [np.zeros(3)]
    radii = [rng.uniform(0.5, 1.5)]
    heading = [None]
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for p in frontier:
            for _ in range(2):
                base = heading[p] if heading[p] is not None else np.zeros(3)
                d = _unit(base + rng.normal(size=3) * (0.6 if heading[p] is not None else 1.0))
                length = rng.uniform(5.0, 10.0) * scale
                parent.append(p)
                xyz.append(xyz[p] + d * length)
                radii.append(rng.uniform(0.5, 1.5))
                heading.append(d)
                nxt.append(len(parent) - 1)
        frontier = nxt
    return tree_from_arrays(parent, np.array(xyz), np.array(radii), name=name)


def generate_synthetic_dataset(n_per_class, classes=2, seed=0):
    """List of ``(MorphTree, label)``, class-major order, names ``c{label}_{k:04d}``."""
    if not 2 <= classes <= 5:
        raise ConfigError("classes must be between 2 and 5")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be positive")
    out = []
    for c in range(classes):
        for k in range(n_per_class):
            name = f"c{c}_{k:04d}"
            out.append((synthetic_tree(c, substream(seed, "synth", c, k), name=name), c))
    return out
