"""Shared generators and independent oracles for the test suite."""

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from persimorph.swc import tree_from_arrays


def random_tree(rng, n=None, max_nodes=64, name=""):
    """Random rooted tree: each node attaches to a uniformly chosen earlier node."""
    if n is None:
        n = int(rng.integers(2, max_nodes + 1))
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    xyz = rng.normal(scale=20.0, size=(n, 3))
    radii = rng.uniform(0.2, 2.0, size=n)
    return tree_from_arrays(parent, xyz, radii, name=name)


def random_grid_tree(rng, n=None, max_nodes=64):
    """Integer coordinates, so radial distances repeat and ties are common."""
    if n is None:
        n = int(rng.integers(2, max_nodes + 1))
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    xyz = rng.integers(-3, 4, size=(n, 3)).astype(float)
    return tree_from_arrays(parent, xyz, np.ones(n))


def rotation_matrix(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def transformed(tree, R=np.eye(3), t=np.zeros(3)):
    parent = tree.parent_index
    xyz = tree.xyz @ R.T + t
    return tree_from_arrays(parent, xyz, tree.radii)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a


def union_find_pairs(tree, f_values):
    """Superlevel-set 0-dimensional persistence of ``f`` on the tree graph.

    Vertices enter in decreasing ``f`` (deeper nodes first on ties). A vertex
    with no entered neighbour starts a component born at its value; when a
    vertex joins several components, all but the one with the highest birth
    die at the vertex value. The surviving component dies at ``f(root)``.
    Returns a sorted list of ``(birth, death)``.
    """
    f = np.asarray(f_values, float)
    parent = tree.parent_index
    n = len(f)
    depth = np.zeros(n, dtype=int)
    for i in range(1, n):
        depth[i] = depth[parent[i]] + 1
    nbrs = [[] for _ in range(n)]
    for i in range(1, n):
        nbrs[i].append(parent[i])
        nbrs[parent[i]].append(i)
    uf = _UnionFind(n)
    birth = np.full(n, np.nan)
    entered = np.zeros(n, dtype=bool)
    pairs = []
    for v in sorted(range(n), key=lambda i: (-f[i], -depth[i], i)):
        entered[v] = True
        roots = sorted({uf.find(u) for u in nbrs[v] if entered[u]}, key=lambda r: -birth[r])
        if not roots:
            birth[v] = f[v]
            continue
        keep = roots[0]
        for r in roots[1:]:
            pairs.append((birth[r], f[v]))
            uf.parent[r] = keep
        uf.parent[v] = keep
    survivor = uf.find(0)
    pairs.append((birth[survivor], f[0]))
    return sorted(pairs)


def dijkstra_path_lengths(tree):
    """Soma distances along the tree, via scipy's shortest-path solver."""
    parent = tree.parent_index
    xyz = tree.xyz
    n = len(parent)
    rows, cols, w = [], [], []
    for i in range(1, n):
        d = float(np.linalg.norm(xyz[i] - xyz[parent[i]]))
        rows += [i, parent[i]]
        cols += [parent[i], i]
        w += [d, d]
    g = csr_matrix((w, (rows, cols)), shape=(n, n))
    return dijkstra(g, indices=0)
