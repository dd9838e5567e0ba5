"""End-to-end glue: samples -> preprocessing -> training -> frozen evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment_diagram
from .contrastive import Batch, TrainConfig, loss_value, train_step
from .encoders import (
    DualEncoder,
    ModelDims,
    build_tree_batch,
    head_forward,
    image_forward_batch,
    l2_normalize,
    tree_forward_batch,
)
from .errors import ConfigError
from .evaluation import (
    LabeledEmbeddingSet,
    complementarity,
    fuse_arrays,
    knn_classify,
    recall_at_k,
    retrieve,
)
from .pimage import Bounds, ImageConfig, compute_bounds, render
from .rng import substream
from .swc import MorphTree, NodeFeatures, ZScoreStats, compute_node_features, fit_zscore
from .tmd import PersistenceDiagram, tree_diagram

log = logging.getLogger(__name__)


@dataclass
class Sample:
    neuron_id: str
    tree: MorphTree
    diagram: PersistenceDiagram
    features: NodeFeatures
    label: int | None = None


def make_sample(tree: MorphTree, label=None, neuron_id=None) -> Sample:
    nid = neuron_id or tree.name
    diagram = tree_diagram(tree)
    diagram.neuron_id = nid
    return Sample(nid, tree, diagram, compute_node_features(tree), label)


@dataclass
class Preprocessing:
    """Everything fitted on the training split and frozen afterwards."""

    zscore: ZScoreStats
    bounds: Bounds
    image_config: ImageConfig
    channel_mean: np.ndarray
    channel_std: np.ndarray

    def to_dict(self):
        return {
            "zscore": self.zscore.to_dict(),
            "bounds": {"b_min": self.bounds.b_min, "b_max": self.bounds.b_max,
                       "p_min": self.bounds.p_min, "p_max": self.bounds.p_max},
            "image_config": self.image_config.to_dict(),
            "channel_mean": self.channel_mean.tolist(),
            "channel_std": self.channel_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(ZScoreStats.from_dict(d["zscore"]), Bounds(**d["bounds"]),
                   ImageConfig.from_dict(d["image_config"]),
                   np.asarray(d["channel_mean"], float), np.asarray(d["channel_std"], float))


def fit_preprocessing(train: list[Sample], image_config: ImageConfig) -> Preprocessing:
    zs = fit_zscore([s.features for s in train])
    bounds = compute_bounds([s.diagram for s in train])
    imgs = np.stack([render(s.diagram, image_config, bounds).data for s in train])
    mean = imgs.mean(axis=(0, 1, 2))
    std = imgs.std(axis=(0, 1, 2))
    return Preprocessing(zs, bounds, image_config, mean, np.where(std > 0, std, 1.0))


def dims_for(image_config: ImageConfig, **kw) -> ModelDims:
    return ModelDims(image_height=image_config.height, image_width=image_config.width,
                     image_channels=len(image_config.channels), **kw)


def attach_preprocessing(model: DualEncoder, prep: Preprocessing):
    d = model.dims
    ic = prep.image_config
    if (d.image_height, d.image_width, d.image_channels) != (ic.height, ic.width, len(ic.channels)):
        raise ConfigError("model image dims do not match the image configuration")
    model.image.channel_mean[...] = prep.channel_mean
    model.image.channel_std[...] = prep.channel_std
    model.extra["preprocessing"] = prep.to_dict()


def render_images(samples, prep: Preprocessing, augment: AugmentConfig | None = None, view=0):
    out = []
    for s in samples:
        d = s.diagram if augment is None else augment_diagram(s.diagram, augment, view=view)
        out.append(render(d, prep.image_config, prep.bounds).data)
    return np.stack(out)


def make_batch(samples, prep: Preprocessing, augment: AugmentConfig | None = None, view=0) -> Batch:
    trees = build_tree_batch([(s.tree, prep.zscore.apply(s.features)) for s in samples])
    return Batch(trees, render_images(samples, prep, augment, view), [s.neuron_id for s in samples])


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    initial_full_loss: float = math.nan
    final_full_loss: float = math.nan


def batch_schedule(n, batch_size, steps, seed):
    """Indices for each step: seeded epoch permutations, incomplete tails dropped."""
    if n < batch_size:
        raise ConfigError(f"batch_size {batch_size} exceeds training set size {n}")
    per_epoch = n // batch_size
    for step in range(steps):
        epoch, j = divmod(step, per_epoch)
        perm = substream(seed, "batches", epoch).permutation(n)
        yield step, perm[j * batch_size:(j + 1) * batch_size]


def train(model: DualEncoder, samples: list[Sample], prep: Preprocessing, cfg: TrainConfig,
          augment: AugmentConfig | None = None, on_step=None) -> TrainResult:
    """Contrastive training in place. ``on_step(record, model)`` after each update."""
    attach_preprocessing(model, prep)
    full = make_batch(samples, prep)
    result = TrainResult(initial_full_loss=loss_value(model, full))
    for step, idx in batch_schedule(len(samples), cfg.batch_size, cfg.steps, cfg.seed):
        batch = make_batch([samples[i] for i in idx], prep, augment, view=step)
        rec = train_step(model, batch, cfg, step)
        result.history.append(rec)
        if on_step is not None:
            on_step(rec, model)
    result.final_full_loss = loss_value(model, full)
    return result


def embed(model: DualEncoder, samples, prep: Preprocessing, space="encoder", chunk=64):
    """Frozen embeddings ``(E_tree, E_image)`` from encoder outputs or projection heads."""
    Et, Ev = [], []
    for lo in range(0, len(samples), chunk):
        b = make_batch(samples[lo:lo + chunk], prep)
        H, _ = tree_forward_batch(model.tree, b.trees)
        V, _ = image_forward_batch(model.image, b.images)
        if space == "projection":
            H, _ = head_forward(model.tree_head, H)
            V, _ = head_forward(model.image_head, V)
        elif space != "encoder":
            raise ConfigError(f"unknown embedding space {space!r}")
        Et.append(H)
        Ev.append(V)
    return np.concatenate(Et), np.concatenate(Ev)


def stratified_split(labels, test_fraction=0.3, seed=0):
    """Seeded per-class split. Returns sorted ``(train_idx, test_idx)``."""
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[substream(seed, "split", int(c)).permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=np.int64)), np.sort(np.array(test, dtype=np.int64))


def evaluate(model: DualEncoder, samples, train_idx, test_idx, prep: Preprocessing, ks=(20,),
             fusion="concat", fusion_weight=0.5, space="encoder", metric="cosine", n_perm=1000, seed=0):
    """kNN per modality and fused, cross-modal retrieval and complementarity on the test split."""
    labels = np.array([s.label for s in samples], dtype=np.int64)
    Et, Ev = embed(model, samples, prep, space)
    Et, _ = l2_normalize(Et)
    Ev, _ = l2_normalize(Ev)
    Ef, _ = fuse_arrays(Et, Ev, fusion, fusion_weight, pad=True)
    ids = [s.neuron_id for s in samples]
    sets = {name: LabeledEmbeddingSet(E, labels, modality=name, ids=ids)
            for name, E in (("tree", Et), ("image", Ev), ("fused", Ef))}
    report = {"n_train": int(len(train_idx)), "n_test": int(len(test_idx)), "fusion": fusion,
              "space": space, "metric": metric, "knn": {}, "predictions": {}}
    y_test = labels[test_idx]
    for k in ks:
        kk = min(k, len(train_idx))
        res = {}
        for name, S in sets.items():
            r = knn_classify(S.take(train_idx, "train"), S.take(test_idx, "test"), kk, metric)
            res[name] = r
        report["knn"][str(k)] = {name: r.accuracy for name, r in res.items()}
        report["knn"][str(k)]["k_used"] = kk
        report["predictions"][str(k)] = {name: r.predictions.tolist() for name, r in res.items()}
    k0 = str(ks[0])
    preds = report["predictions"][k0]
    comp = complementarity(preds["tree"], preds["image"], preds["fused"], y_test,
                           Et[test_idx], Ev[test_idx], n_perm=n_perm, seed=seed)
    report["complementarity"] = comp.to_dict()
    report["complementarity"]["k"] = int(ks[0])
    # cross-modal retrieval within the test split, in the shared projection space
    test = [samples[i] for i in test_idx]
    Zt, Zv = embed(model, test, prep, "projection")
    pos = np.arange(len(test_idx))
    t2i = retrieve(Zt, Zv, top_k=5)
    i2t = retrieve(Zv, Zt, top_k=5)
    report["retrieval"] = {
        "tree_to_image": {"recall@1": recall_at_k(t2i, pos, 1), "recall@5": recall_at_k(t2i, pos, 5),
                          "class_precision@5": _class_precision(t2i.ids, y_test)},
        "image_to_tree": {"recall@1": recall_at_k(i2t, pos, 1), "recall@5": recall_at_k(i2t, pos, 5),
                          "class_precision@5": _class_precision(i2t.ids, y_test)},
    }
    report["test_ids"] = [ids[i] for i in test_idx]
    report["y_test"] = y_test.tolist()
    return report


def _class_precision(ranked, y):
    return 100.0 * float((y[ranked] == y[:, None]).mean())
