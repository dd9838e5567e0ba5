"""Dual encoders, projection heads and checkpoints, in plain numpy.

Tree branch: child-sum TreeLSTM over z-scored node features. For node v with
input x and children C(v)::

    hs = sum_k h_k
    i, o = sigmoid(W_i x + U_i hs + b_i), sigmoid(W_o x + U_o hs + b_o)
    u    = tanh(W_u x + U_u hs + b_u)
    f_k  = sigmoid(W_f x + U_f h_k + b_f)          (one gate per child)
    c    = i * u + sum_k f_k * c_k
    h    = o * tanh(c)

Nodes are evaluated level by level (grouped by height above the leaves) for a
whole batch of trees at once, so deep chains never recurse.

Image branch: a small patch network standing in for a ViT backbone. Channels
are z-scored with training-set statistics, cut into patches, linearly
embedded with a learned position table, passed through two tanh mixing
layers and mean-pooled.

Every forward function returns a cache consumed by the matching backward.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DataError, ShapeMismatch
from .rng import substream

CKPT_MAGIC = b"PMCK"
CKPT_VERSION = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class ModelDims:
    input_dim: int = 5
    hidden_dim: int = 32
    image_height: int = 112
    image_width: int = 112
    image_channels: int = 3
    patch_size: int = 16
    image_dim: int = 48
    proj_hidden: int = 32
    proj_out: int = 16
    head_activation: str = "tanh"  # or "identity"

    @property
    def patch_grid(self):
        P = self.patch_size
        return (-(-self.image_height // P), -(-self.image_width // P))

    @property
    def num_patches(self):
        gh, gw = self.patch_grid
        return gh * gw

    @property
    def patch_len(self):
        return self.patch_size * self.patch_size * self.image_channels

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, int) and v < 1:
                raise ShapeMismatch(f"{f.name} must be positive")
        if self.head_activation not in ("tanh", "identity"):
            raise ShapeMismatch(f"unknown head activation {self.head_activation!r}")
        return self

    @classmethod
    def full_scale(cls, **kw):
        return cls(hidden_dim=256, image_dim=384, proj_hidden=256, proj_out=128, patch_size=14, **kw)


@dataclass
class Embedding:
    values: np.ndarray
    normalized: bool


def l2_normalize(U):
    """Row-normalize; zero rows stay zero. Returns ``(Z, norms)``."""
    norms = np.sqrt(np.einsum("ij,ij->i", U, U))
    safe = np.where(norms > 0, norms, 1.0)
    return U / safe[:, None], norms


# --- parameter containers -----------------------------------------------------

class _Params:
    _trainable: tuple = ()
    _buffers: tuple = ()

    def tensors(self):
        return {k: getattr(self, k) for k in self._trainable}

    def buffers(self):
        return {k: getattr(self, k) for k in self._buffers}

    def copy(self):
        kw = {f.name: (getattr(self, f.name).copy() if isinstance(getattr(self, f.name), np.ndarray) else getattr(self, f.name))
              for f in fields(self)}
        return type(self)(**kw)


@dataclass
class TreeEncoderParams(_Params):
    W: np.ndarray      # (input_dim, 4D): gate blocks i | o | u | f
    U_iou: np.ndarray  # (D, 3D)
    U_f: np.ndarray    # (D, D)
    b: np.ndarray      # (4D,)
    _trainable = ("W", "U_iou", "U_f", "b")

    @property
    def hidden_dim(self):
        return self.U_f.shape[0]

    @property
    def input_dim(self):
        return self.W.shape[0]


@dataclass
class ImageEncoderParams(_Params):
    W_embed: np.ndarray  # (patch_len, E)
    b_embed: np.ndarray
    pos: np.ndarray      # (num_patches, E)
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    channel_mean: np.ndarray  # input standardization, fitted on training images
    channel_std: np.ndarray
    patch_size: int = 16
    _trainable = ("W_embed", "b_embed", "pos", "W1", "b1", "W2", "b2")
    _buffers = ("channel_mean", "channel_std")

    @property
    def out_dim(self):
        return self.W2.shape[1]


@dataclass
class ProjectionHead(_Params):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "tanh"
    _trainable = ("W1", "b1", "W2", "b2")

    @property
    def in_dim(self):
        return self.W1.shape[0]

    @property
    def out_dim(self):
        return self.W2.shape[1]


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(seed, dims: ModelDims = ModelDims()):
    """Seeded initialisation: weights ~ U(+-1/sqrt(fan_in)), biases 0, forget bias +1."""
    dims.validate()
    D, E = dims.hidden_dim, dims.image_dim
    r = substream(seed, "init", "tree")
    b = np.zeros(4 * D)
    b[3 * D:] = 1.0
    tree = TreeEncoderParams(
        W=_uniform(r, dims.input_dim, (dims.input_dim, 4 * D)),
        U_iou=_uniform(r, D, (D, 3 * D)),
        U_f=_uniform(r, D, (D, D)),
        b=b,
    )
    r = substream(seed, "init", "image")
    K = dims.patch_len
    image = ImageEncoderParams(
        W_embed=_uniform(r, K, (K, E)),
        b_embed=np.zeros(E),
        pos=_uniform(r, E, (dims.num_patches, E)),
        W1=_uniform(r, E, (E, E)),
        b1=np.zeros(E),
        W2=_uniform(r, E, (E, E)),
        b2=np.zeros(E),
        channel_mean=np.zeros(dims.image_channels),
        channel_std=np.ones(dims.image_channels),
        patch_size=dims.patch_size,
    )
    heads = []
    for name, d_in in (("tree_head", D), ("image_head", E)):
        r = substream(seed, "init", name)
        heads.append(ProjectionHead(
            W1=_uniform(r, d_in, (d_in, dims.proj_hidden)),
            b1=np.zeros(dims.proj_hidden),
            W2=_uniform(r, dims.proj_hidden, (dims.proj_hidden, dims.proj_out)),
            b2=np.zeros(dims.proj_out),
            activation=dims.head_activation,
        ))
    return tree, image, heads[0], heads[1]


# --- tree encoder ---------------------------------------------------------------

@dataclass
class TreeBatch:
    X: np.ndarray        # (n, input_dim) stacked node features
    parent: np.ndarray   # (n,) global parent index, -1 at roots
    roots: np.ndarray    # (N,) root index of each tree
    levels: list         # [(node_idx, child_matrix or None)], ascending height

    @property
    def size(self):
        return len(self.roots)


def build_tree_batch(items) -> TreeBatch:
    """Stack ``(tree, features)`` pairs; ``features`` rows follow ``tree.order``."""
    Xs, parents, heights, roots = [], [], [], []
    off = 0
    for tree, feats in items:
        vals = feats.values if hasattr(feats, "values") else np.asarray(feats)
        if vals.shape[0] != len(tree):
            raise ShapeMismatch(f"{vals.shape[0]} feature rows for a {len(tree)}-node tree")
        p = tree.parent_index
        Xs.append(vals)
        parents.append(np.where(p >= 0, p + off, -1))
        heights.append(tree.heights)
        roots.append(off)
        off += len(tree)
    X = np.ascontiguousarray(np.concatenate(Xs, axis=0), dtype=float)
    parent = np.concatenate(parents)
    height = np.concatenate(heights)

    n = len(parent)
    has_parent = parent >= 0
    kids = np.flatnonzero(has_parent)
    kid_order = kids[np.argsort(parent[kids], kind="stable")]
    counts = np.bincount(parent[kids], minlength=n)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])

    by_height = np.argsort(height, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(height))])
    levels = []
    for h in range(len(bounds) - 1):
        idx = by_height[bounds[h]:bounds[h + 1]]
        if len(idx) == 0:
            continue
        if h == 0:
            levels.append((idx, None))
            continue
        cnt = counts[idx]
        M = np.full((len(idx), int(cnt.max())), -1, dtype=np.int64)
        for j in range(M.shape[1]):
            sel = cnt > j
            M[sel, j] = kid_order[start[idx[sel]] + j]
        levels.append((idx, M))
    return TreeBatch(X, parent, np.asarray(roots, dtype=np.int64), levels)


def _child_sum(values, M):
    """Sum child rows per parent in a canonical (sorted) order, so the result
    does not depend on how children are listed."""
    g = values[M]
    g[M < 0] = 0.0
    g.sort(axis=1)
    return g.sum(axis=1)


def tree_forward_batch(p: TreeEncoderParams, batch: TreeBatch):
    if batch.X.shape[1] != p.input_dim:
        raise ShapeMismatch(f"features have {batch.X.shape[1]} columns, encoder expects {p.input_dim}")
    D = p.hidden_dim
    n = len(batch.parent)
    X, parent = batch.X, batch.parent
    Wiou, Wf = p.W[:, :3 * D], p.W[:, 3 * D:]
    biou, bf = p.b[:3 * D], p.b[3 * D:]
    shape = (n, D)
    i_g, o_g, u_g, c, h, tc, f, fc, hsum = (np.zeros(shape) for _ in range(9))
    fcsum = np.zeros(shape)
    for idx, M in batch.levels:
        if M is not None:
            hsum[idx] = _child_sum(h, M)
            fcsum[idx] = _child_sum(fc, M)
        z = X[idx] @ Wiou + hsum[idx] @ p.U_iou + biou
        ii = sigmoid(z[:, :D])
        oo = sigmoid(z[:, D:2 * D])
        uu = np.tanh(z[:, 2 * D:])
        cc = ii * uu + fcsum[idx]
        t = np.tanh(cc)
        i_g[idx], o_g[idx], u_g[idx], c[idx], tc[idx] = ii, oo, uu, cc, t
        h[idx] = oo * t
        ch = idx[parent[idx] >= 0]
        if len(ch):
            ff = sigmoid(X[parent[ch]] @ Wf + h[ch] @ p.U_f + bf)
            f[ch] = ff
            fc[ch] = ff * c[ch]
    cache = dict(i=i_g, o=o_g, u=u_g, c=c, h=h, tc=tc, f=f, hsum=hsum, batch=batch)
    return h[batch.roots].copy(), cache


def tree_backward(p: TreeEncoderParams, cache, dH):
    """Gradients of the tree parameters given d(loss)/d(root hidden states)."""
    D = p.hidden_dim
    batch = cache["batch"]
    X, parent = batch.X, batch.parent
    i_g, o_g, u_g, c, h, tc, f, hsum = (cache[k] for k in ("i", "o", "u", "c", "h", "tc", "f", "hsum"))
    n = len(parent)
    dh = np.zeros((n, D))
    dc = np.zeros((n, D))
    dhsum = np.zeros((n, D))
    dfcsum = np.zeros((n, D))
    dh[batch.roots] += dH
    dW = np.zeros_like(p.W)
    dU_iou = np.zeros_like(p.U_iou)
    dU_f = np.zeros_like(p.U_f)
    db = np.zeros_like(p.b)
    for idx, _ in reversed(batch.levels):
        ch = idx[parent[idx] >= 0]
        if len(ch):
            par = parent[ch]
            dfc = dfcsum[par]
            ff = f[ch]
            dc[ch] += dfc * ff
            gf = dfc * c[ch] * ff * (1.0 - ff)
            dW[:, 3 * D:] += X[par].T @ gf
            dU_f += h[ch].T @ gf
            db[3 * D:] += gf.sum(axis=0)
            dh[ch] += dhsum[par] + gf @ p.U_f.T
        t = tc[idx]
        dhi = dh[idx]
        oo, ii, uu = o_g[idx], i_g[idx], u_g[idx]
        dci = dc[idx] + dhi * oo * (1.0 - t * t)
        g = np.concatenate([
            dci * uu * ii * (1.0 - ii),
            dhi * t * oo * (1.0 - oo),
            dci * ii * (1.0 - uu * uu),
        ], axis=1)
        dfcsum[idx] = dci
        dW[:, :3 * D] += X[idx].T @ g
        dU_iou += hsum[idx].T @ g
        db[:3 * D] += g.sum(axis=0)
        dhsum[idx] = g @ p.U_iou.T
    return {"W": dW, "U_iou": dU_iou, "U_f": dU_f, "b": db}


def tree_forward(p: TreeEncoderParams, tree, features) -> Embedding:
    """Root hidden state of one tree (unnormalized)."""
    H, _ = tree_forward_batch(p, build_tree_batch([(tree, features)]))
    return Embedding(H[0], normalized=False)


# --- image encoder ----------------------------------------------------------------

def _patchify(imgs, P):
    N, H, W, C = imgs.shape
    Hp, Wp = -(-H // P) * P, -(-W // P) * P
    if (Hp, Wp) != (H, W):
        padded = np.zeros((N, Hp, Wp, C))
        padded[:, :H, :W] = imgs
        imgs = padded
    gh, gw = Hp // P, Wp // P
    x = imgs.reshape(N, gh, P, gw, P, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(N, gh * gw, P * P * C)


def standardize_images(p: ImageEncoderParams, imgs):
    std = np.where(p.channel_std > 0, p.channel_std, 1.0)
    return (imgs - p.channel_mean) / std


def image_forward_batch(p: ImageEncoderParams, imgs):
    imgs = np.asarray(imgs, dtype=float)
    if imgs.ndim == 3:
        imgs = imgs[None]
    if imgs.shape[-1] != len(p.channel_mean):
        raise ShapeMismatch(f"image has {imgs.shape[-1]} channels, encoder expects {len(p.channel_mean)}")
    Xp = _patchify(standardize_images(p, imgs), p.patch_size)
    N, n_p, K = Xp.shape
    if K != p.W_embed.shape[0] or n_p != p.pos.shape[0]:
        raise ShapeMismatch(f"image gives {n_p} patches of length {K}; encoder expects "
                            f"{p.pos.shape[0]} of length {p.W_embed.shape[0]}")
    E = p.out_dim
    T = (Xp.reshape(-1, K) @ p.W_embed).reshape(N, n_p, E) + p.b_embed + p.pos
    A1 = np.tanh(T.reshape(-1, E) @ p.W1 + p.b1)
    A2 = np.tanh(A1 @ p.W2 + p.b2)
    out = A2.reshape(N, n_p, E).mean(axis=1)
    return out, dict(Xp=Xp, T=T, A1=A1, A2=A2)


def image_backward(p: ImageEncoderParams, cache, dout):
    Xp, T, A1, A2 = cache["Xp"], cache["T"], cache["A1"], cache["A2"]
    N, n_p, K = Xp.shape
    E = p.out_dim
    dA2 = np.repeat(dout / n_p, n_p, axis=0)
    g2 = dA2 * (1.0 - A2 * A2)
    dW2 = A1.T @ g2
    db2 = g2.sum(axis=0)
    g1 = (g2 @ p.W2.T) * (1.0 - A1 * A1)
    dW1 = T.reshape(-1, E).T @ g1
    db1 = g1.sum(axis=0)
    dT = g1 @ p.W1.T
    dW_embed = Xp.reshape(-1, K).T @ dT
    dT3 = dT.reshape(N, n_p, E)
    return {"W_embed": dW_embed, "b_embed": dT3.sum(axis=(0, 1)), "pos": dT3.sum(axis=0),
            "W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def image_forward(p: ImageEncoderParams, img) -> Embedding:
    data = img.data if hasattr(img, "data") else img
    out, _ = image_forward_batch(p, data)
    return Embedding(out[0], normalized=False)


# --- projection heads ---------------------------------------------------------

def head_forward(head: ProjectionHead, x):
    if x.shape[1] != head.in_dim:
        raise ShapeMismatch(f"head expects input dim {head.in_dim}, got {x.shape[1]}")
    a = x @ head.W1 + head.b1
    g = np.tanh(a) if head.activation == "tanh" else a
    u = g @ head.W2 + head.b2
    z, norms = l2_normalize(u)
    return z, dict(x=x, g=g, z=z, norms=norms)


def head_backward(head: ProjectionHead, cache, dz):
    """Returns ``(param_grads, d_input)``."""
    x, g, z, norms = cache["x"], cache["g"], cache["z"], cache["norms"]
    safe = np.where(norms > 0, norms, 1.0)
    du = (dz - z * np.einsum("ij,ij->i", z, dz)[:, None]) / safe[:, None]
    du[norms == 0] = 0.0
    dW2 = g.T @ du
    dg = du @ head.W2.T
    da = dg * (1.0 - g * g) if head.activation == "tanh" else dg
    grads = {"W1": x.T @ da, "b1": da.sum(axis=0), "W2": dW2, "b2": du.sum(axis=0)}
    return grads, da @ head.W1.T


def project(head: ProjectionHead, e: Embedding) -> Embedding:
    z, cache = head_forward(head, np.asarray(e.values, float)[None])
    return Embedding(z[0], normalized=bool(cache["norms"][0] > 0))


# --- full model + checkpoints -------------------------------------------------

@dataclass
class DualEncoder:
    dims: ModelDims
    tree: TreeEncoderParams
    image: ImageEncoderParams
    tree_head: ProjectionHead
    image_head: ProjectionHead
    log_tau: np.ndarray = field(default_factory=lambda: np.array([math.log(0.07)]))
    extra: dict = field(default_factory=dict)

    @classmethod
    def init(cls, seed, dims: ModelDims = ModelDims(), tau=0.07):
        return cls(dims, *init_params(seed, dims), log_tau=np.array([math.log(tau)]))

    @property
    def tau(self):
        return float(np.exp(self.log_tau[0]))

    def named_tensors(self):
        """Trainable tensors in declared order (views; mutate in place)."""
        out = {}
        for prefix in ("tree", "image", "tree_head", "image_head"):
            for k, v in getattr(self, prefix).tensors().items():
                out[f"{prefix}.{k}"] = v
        out["log_tau"] = self.log_tau
        return out

    def named_buffers(self):
        return {f"image.{k}": v for k, v in self.image.buffers().items()}

    def copy(self):
        return DualEncoder(self.dims, self.tree.copy(), self.image.copy(), self.tree_head.copy(),
                           self.image_head.copy(), self.log_tau.copy(), json.loads(json.dumps(self.extra)))

    def state_equal(self, other):
        a = {**self.named_tensors(), **self.named_buffers()}
        b = {**other.named_tensors(), **other.named_buffers()}
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)


def save_checkpoint(model: DualEncoder, path, metadata: dict | None = None):
    """Binary checkpoint plus a ``.json`` metadata sidecar.

    Layout: magic ``PMCK``, u32 version, u32 header length, UTF-8 JSON header
    (dims, tensor table, extras), then float64 little-endian tensors in the
    order of the table.
    """
    tensors = {**model.named_tensors(), **model.named_buffers()}
    header = {
        "dims": asdict(model.dims),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
        "dtype": "<f8",
        "extra": model.extra,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values())
    blob = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hbytes)) + hbytes + body
    with open(path, "wb") as fh:
        fh.write(blob)
    meta = {"dims": asdict(model.dims), "checkpoint_sha256": hashlib.sha256(blob).hexdigest()}
    meta.update(metadata or {})
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> DualEncoder:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    dims = ModelDims(**header["dims"])
    model = DualEncoder.init(0, dims)
    slots = {**model.named_tensors(), **model.named_buffers()}
    off = 12 + hlen
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        if name not in slots or slots[name].shape != shape:
            raise DataError(f"{path}: unexpected tensor {name} {shape}")
        slots[name][...] = arr
    if off != len(blob):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    model.extra = header.get("extra", {})
    return model
