"""Frozen-embedding evaluation: kNN, fusion, retrieval, complementarity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.stats import rankdata

from .encoders import Embedding, l2_normalize
from .errors import (
    DimMismatch,
    EmptyGallery,
    EmptyTrainSet,
    KTooLarge,
    LengthMismatch,
    ShapeMismatch,
)
from .rng import substream


@dataclass
class LabeledEmbeddingSet:
    embeddings: np.ndarray  # (n, d)
    labels: np.ndarray      # (n,) ints in [0, num_classes)
    split: str = "train"
    modality: str = "tree"
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=float))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.embeddings) != len(self.labels):
            raise LengthMismatch(f"{len(self.embeddings)} embeddings but {len(self.labels)} labels")
        if len(self.labels) and self.labels.min() < 0:
            raise ShapeMismatch("labels must be non-negative")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, split=None):
        idx = np.asarray(idx)
        ids = [self.ids[i] for i in idx] if self.ids else []
        return LabeledEmbeddingSet(self.embeddings[idx], self.labels[idx], split or self.split, self.modality, ids)


@dataclass
class KnnResult:
    predictions: np.ndarray
    accuracy: float  # percent; nan when the test set has no labels


def _cosine_distance(A, B):
    An, _ = l2_normalize(A)
    Bn, _ = l2_normalize(B)
    return 1.0 - An @ Bn.T


def _euclidean_distance(A, B):
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(d2, 0.0))


def knn_classify(train: LabeledEmbeddingSet, test, k: int = 20, metric: str = "cosine") -> KnnResult:
    """Majority vote over the ``k`` nearest training points.

    Equal distances are ordered by training index. Vote ties go to the class
    whose tied neighbours are closer on average, then to the smaller label.
    ``test`` may be a ``LabeledEmbeddingSet`` or a bare ``(n, d)`` array.
    """
    if len(train) == 0:
        raise EmptyTrainSet("kNN needs a non-empty training set")
    if not 1 <= k <= len(train):
        raise KTooLarge(f"k={k} but the training set has {len(train)} points")
    X = test.embeddings if isinstance(test, LabeledEmbeddingSet) else np.atleast_2d(np.asarray(test, float))
    if X.shape[1] != train.embeddings.shape[1]:
        raise DimMismatch(f"test dim {X.shape[1]} != train dim {train.embeddings.shape[1]}")
    dist = (_cosine_distance if metric == "cosine" else _euclidean_distance)(X, train.embeddings)
    nn = np.argsort(dist, axis=1, kind="stable")[:, :k]
    n_classes = int(train.labels.max()) + 1
    preds = np.empty(len(X), dtype=np.int64)
    for q in range(len(X)):
        lab = train.labels[nn[q]]
        d = dist[q, nn[q]]
        counts = np.bincount(lab, minlength=n_classes)
        top = np.flatnonzero(counts == counts.max())
        if len(top) == 1:
            preds[q] = top[0]
        else:
            means = [d[lab == c].mean() for c in top]
            preds[q] = top[int(np.argmin(means))]  # argmin keeps the first (smallest label) on ties
    acc = math.nan
    if isinstance(test, LabeledEmbeddingSet) and len(test):
        acc = 100.0 * float(np.mean(preds == test.labels))
    return KnnResult(preds, acc)


# --- fusion -----------------------------------------------------------------------

def fuse_arrays(E_tree, E_image, strategy="concat", weight=0.5, pad=False):
    """Row-wise fusion, re-normalized. Returns ``(fused, norms)``; zero rows stay zero."""
    A = np.atleast_2d(np.asarray(E_tree, float))
    B = np.atleast_2d(np.asarray(E_image, float))
    if strategy == "concat":
        F = np.concatenate([A, B], axis=1)
    elif strategy in ("add", "weighted_add"):
        if A.shape[1] != B.shape[1]:
            if not pad:
                raise DimMismatch(f"cannot add dims {A.shape[1]} and {B.shape[1]}")
            d = max(A.shape[1], B.shape[1])
            A = np.pad(A, ((0, 0), (0, d - A.shape[1])))
            B = np.pad(B, ((0, 0), (0, d - B.shape[1])))
        F = A + B if strategy == "add" else weight * A + (1.0 - weight) * B
    else:
        raise ValueError(f"unknown fusion strategy {strategy!r}")
    return l2_normalize(F)


def fuse(e_tree: Embedding, e_image: Embedding, strategy="concat", weight=0.5, pad=False) -> Embedding:
    F, norms = fuse_arrays(e_tree.values, e_image.values, strategy, weight, pad)
    return Embedding(F[0], normalized=bool(norms[0] > 0))


# --- retrieval --------------------------------------------------------------------

@dataclass
class RetrievalResult:
    ids: np.ndarray     # (n_query, k) gallery ids, best first
    scores: np.ndarray  # (n_query, k) cosine similarities


def retrieve(queries, gallery, top_k=5, gallery_ids=None) -> RetrievalResult:
    """Rank gallery items by cosine similarity; ties go to the smaller id."""
    G = np.atleast_2d(np.asarray(gallery, float))
    if G.size == 0 or len(G) == 0:
        raise EmptyGallery("retrieval gallery is empty")
    Q = np.atleast_2d(np.asarray(queries, float))
    if Q.shape[1] != G.shape[1]:
        raise DimMismatch(f"query dim {Q.shape[1]} != gallery dim {G.shape[1]}")
    gid = np.arange(len(G)) if gallery_ids is None else np.asarray(gallery_ids)
    Qn, _ = l2_normalize(Q)
    Gn, _ = l2_normalize(G)
    S = Qn @ Gn.T
    k = min(top_k, len(G))
    ids = np.empty((len(Q), k), dtype=gid.dtype)
    scores = np.empty((len(Q), k))
    for q in range(len(Q)):
        order = np.lexsort((gid, -S[q]))[:k]
        ids[q] = gid[order]
        scores[q] = S[q, order]
    return RetrievalResult(ids, scores)


def recall_at_k(result: RetrievalResult, true_ids, k):
    true_ids = np.asarray(true_ids)
    hits = (result.ids[:, :k] == true_ids[:, None]).any(axis=1)
    return 100.0 * float(hits.mean())


# --- complementarity ----------------------------------------------------------------

_GRID = 2.0 ** -32


def apportion_percent(counts):
    """Percentages of ``counts`` on a 2**-32 grid that sum to exactly 100.

    Largest-remainder rounding keeps each share within one grid step of
    ``100 * count / total``.
    """
    counts = [int(c) for c in counts]
    total = sum(counts)
    if total == 0:
        return [0.0] * len(counts)
    units = 100 * 2 ** 32
    exact = [c * units for c in counts]  # numerators over ``total``
    floors = [e // total for e in exact]
    short = units - sum(floors)
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] % total), i))
    for i in order[:short]:
        floors[i] += 1
    return [f * _GRID for f in floors]


def _pca_scores(X, d):
    Xc = X - X.mean(axis=0)
    U, S, _ = np.linalg.svd(Xc, full_matrices=False)
    return U[:, :d] * S[:d]


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else math.nan


def pca_aligned_pearson(E_tree, E_image):
    """Mean absolute Pearson r between matching principal components."""
    # centred data has rank <= n - 1; later components are numerical noise
    d = max(1, min(E_tree.shape[1], E_image.shape[1], len(E_tree) - 1))
    A = _pca_scores(np.asarray(E_tree, float), d)
    B = _pca_scores(np.asarray(E_image, float), d)
    rs = [abs(_pearson(A[:, j], B[:, j])) for j in range(A.shape[1])]
    rs = [r for r in rs if not math.isnan(r)]
    return float(np.mean(rs)) if rs else math.nan


def _spearman_from_ranks(ra, rb):
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    num = float(ra @ rb)
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        return math.nan
    return max(-1.0, min(1.0, num / den))


def rsa(E_a, E_b, n_perm=1000, seed=0):
    """Spearman correlation of pairwise Euclidean distances, with a one-sided
    permutation p-value (samples of the second set relabelled)."""
    E_a = np.asarray(E_a, float)
    E_b = np.asarray(E_b, float)
    n = len(E_a)
    if len(E_b) != n:
        raise LengthMismatch("RSA needs the same samples in both sets")
    if n < 3:
        return math.nan, math.nan
    ra = rankdata(pdist(E_a))
    rb = rankdata(pdist(E_b))
    rho = _spearman_from_ranks(ra, rb)
    if n_perm <= 0 or math.isnan(rho):
        return rho, math.nan
    rng = substream(seed, "rsa_permutation")
    iu = np.triu_indices(n, 1)
    Db = squareform(pdist(E_b))
    hits = 0
    for _ in range(n_perm):
        p = rng.permutation(n)
        r = _spearman_from_ranks(ra, rankdata(Db[np.ix_(p, p)][iu]))
        hits += r >= rho
    return rho, (1 + hits) / (1 + n_perm)


@dataclass
class ComplementarityReport:
    n: int
    pearson_r: float
    rsa_spearman: float
    rsa_p_value: float
    acc_tree: float
    acc_image: float
    acc_fused: float
    gain: float
    complementarity_score: float
    both_correct_pct: float
    both_wrong_pct: float
    rescue_count: int
    hard_case_count: int
    rescue_rate: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def complementarity(pred_tree, pred_image, pred_fused, labels, emb_tree=None, emb_image=None,
                    n_perm=1000, seed=0) -> ComplementarityReport:
    labels = np.asarray(labels)
    preds = [np.asarray(p) for p in (pred_tree, pred_image, pred_fused)]
    if any(len(p) != len(labels) for p in preds):
        raise LengthMismatch("prediction vectors and labels differ in length")
    n = len(labels)
    ct, ci, cf = (p == labels for p in preds)
    exactly_one = int(np.sum(ct ^ ci))
    both = int(np.sum(ct & ci))
    hard = ~ct & ~ci
    comp, both_pct, wrong_pct = apportion_percent([exactly_one, both, int(hard.sum())])
    acc = [100.0 * float(c.mean()) if n else math.nan for c in (ct, ci, cf)]
    rescue = int(np.sum(cf & hard))
    pearson = rho = pval = math.nan
    if emb_tree is not None and emb_image is not None:
        pearson = pca_aligned_pearson(np.asarray(emb_tree, float), np.asarray(emb_image, float))
        rho, pval = rsa(emb_tree, emb_image, n_perm=n_perm, seed=seed)
    return ComplementarityReport(
        n=n,
        pearson_r=pearson,
        rsa_spearman=rho,
        rsa_p_value=pval,
        acc_tree=acc[0],
        acc_image=acc[1],
        acc_fused=acc[2],
        gain=acc[2] - max(acc[0], acc[1]),
        complementarity_score=comp,
        both_correct_pct=both_pct,
        both_wrong_pct=wrong_pct,
        rescue_count=rescue,
        hard_case_count=int(hard.sum()),
        rescue_rate=100.0 * rescue / int(hard.sum()) if hard.any() else 0.0,
        metadata={
            "pearson": "mean |r| over matched principal components, PCA fit on the evaluated set",
            "rsa": "Spearman on upper-triangle Euclidean distances; one-sided permutation p-value",
            "n_permutations": n_perm,
        },
    )
