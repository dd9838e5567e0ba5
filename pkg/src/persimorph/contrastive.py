"""Symmetric InfoNCE with a learnable temperature, and a small training loop.

Similarities are ``s_ij = <zt_i, zv_j> / tau`` with ``tau = exp(log_tau)``;
the loss averages the row-wise and column-wise cross-entropies of the
diagonal. All gradients are analytic; ``grad_check`` compares them with
central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonFiniteInput, NonFiniteLoss
from .encoders import (
    DualEncoder,
    TreeBatch,
    head_backward,
    head_forward,
    image_backward,
    image_forward_batch,
    tree_backward,
    tree_forward_batch,
)
from .rng import substream

LOG_TAU_MIN = math.log(1e-3)
LOG_TAU_MAX = math.log(1e2)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 5e-4
    weight_decay: float = 0.05
    steps: int = 200
    seed: int = 0
    init_tau: float = 0.07
    schedule: str = "constant"  # or "warmup_cosine"
    warmup_steps: int = 0
    # full-scale reference settings, recorded for external runs only
    adam_betas: tuple = (0.9, 0.999)
    epochs: int = 300
    warmup_epochs: int = 20

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.lr < 0 or self.weight_decay < 0 or self.steps < 0 or self.init_tau <= 0:
            raise ConfigError("lr, weight_decay, steps must be non-negative and init_tau positive")
        if self.schedule not in ("constant", "warmup_cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))

    def to_dict(self):
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def lr_at(self, step):
        if self.schedule == "constant":
            return self.lr
        if step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        span = max(1, self.steps - self.warmup_steps)
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * (step - self.warmup_steps) / span))


def _pairwise_dot(A, B):
    # elementwise product then a last-axis sum: swapping A and B gives the exact transpose
    return (A[:, None, :] * B[None, :, :]).sum(axis=-1)


def _row_log_softmax(S):
    m = S.max(axis=1, keepdims=True)
    shifted = S - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def similarity_matrix(Zt, Zv, log_tau):
    return _pairwise_dot(Zt, Zv) / math.exp(float(np.asarray(log_tau).reshape(-1)[0]))


def infonce_loss(Zt, Zv, log_tau):
    """Return ``(loss, dZt, dZv, dlog_tau)``."""
    Zt = np.asarray(Zt, dtype=float)
    Zv = np.asarray(Zv, dtype=float)
    if Zt.shape != Zv.shape or Zt.ndim != 2:
        raise DimensionMismatch(f"embedding shapes differ: {Zt.shape} vs {Zv.shape}")
    lt = float(np.asarray(log_tau).reshape(-1)[0])
    if not (np.all(np.isfinite(Zt)) and np.all(np.isfinite(Zv)) and math.isfinite(lt)):
        raise NonFiniteInput("non-finite embeddings or temperature")
    N = Zt.shape[0]
    tau = math.exp(lt)
    S = _pairwise_dot(Zt, Zv) / tau
    Lr = _row_log_softmax(S)
    Lc = _row_log_softmax(np.ascontiguousarray(S.T))
    loss = -(np.trace(Lr) + np.trace(Lc)) / (2 * N)
    G = (np.exp(Lr) + np.exp(Lc).T - 2.0 * np.eye(N)) / (2 * N)
    dZt = G @ Zv / tau
    dZv = G.T @ Zt / tau
    # summing M and its transpose separately keeps the result exact under a modality swap
    M = G * S
    dlog_tau = -0.5 * (float(np.sum(M)) + float(np.sum(np.ascontiguousarray(M.T))))
    return float(loss), dZt, dZv, dlog_tau


# --- full pipeline -------------------------------------------------------------

@dataclass
class Batch:
    trees: TreeBatch
    images: np.ndarray  # (N, H, W, C), unstandardized densities
    ids: list = field(default_factory=list)

    @property
    def size(self):
        return self.trees.size


def forward(model: DualEncoder, batch: Batch):
    H, tc = tree_forward_batch(model.tree, batch.trees)
    V, ic = image_forward_batch(model.image, batch.images)
    Zt, htc = head_forward(model.tree_head, H)
    Zv, hvc = head_forward(model.image_head, V)
    return Zt, Zv, (tc, ic, htc, hvc)


def loss_value(model: DualEncoder, batch: Batch) -> float:
    Zt, Zv, _ = forward(model, batch)
    return infonce_loss(Zt, Zv, model.log_tau)[0]


def loss_and_grads(model: DualEncoder, batch: Batch):
    Zt, Zv, (tc, ic, htc, hvc) = forward(model, batch)
    loss, dZt, dZv, dlt = infonce_loss(Zt, Zv, model.log_tau)
    g_th, dH = head_backward(model.tree_head, htc, dZt)
    g_ih, dV = head_backward(model.image_head, hvc, dZv)
    g_t = tree_backward(model.tree, tc, dH)
    g_i = image_backward(model.image, ic, dV)
    grads = {}
    for prefix, g in (("tree", g_t), ("image", g_i), ("tree_head", g_th), ("image_head", g_ih)):
        for k, v in g.items():
            grads[f"{prefix}.{k}"] = v
    grads["log_tau"] = np.array([dlt])
    return loss, grads


def apply_update(model: DualEncoder, grads, lr, weight_decay):
    """Gradient descent with decoupled weight decay (none on the temperature)."""
    for name, p in model.named_tensors().items():
        g = grads[name]
        if name == "log_tau":
            p -= lr * g
            np.clip(p, LOG_TAU_MIN, LOG_TAU_MAX, out=p)
        else:
            p -= lr * g + (lr * weight_decay) * p


def train_step(model: DualEncoder, batch: Batch, cfg: TrainConfig, step: int = 0):
    """One update in place. Returns ``{step, loss, tau, grad_norm}``."""
    loss, grads = loss_and_grads(model, batch)
    grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not (math.isfinite(loss) and math.isfinite(grad_norm)):
        raise NonFiniteLoss(step, loss, f"grad_norm={grad_norm}")
    lr = cfg.lr_at(step)
    if lr > 0:
        apply_update(model, grads, lr, cfg.weight_decay)
    return {"step": step, "loss": loss, "tau": model.tau, "grad_norm": grad_norm}


def grad_check(model: DualEncoder, batch: Batch, epsilon=1e-4, probes=10, seed=0, floor=1e-8):
    """Max relative error between analytic and central-difference gradients.

    Probes up to ``probes`` random coordinates per tensor. The relative error
    of one coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    _, grads = loss_and_grads(model, batch)
    rng = substream(seed, "grad_check")
    worst = 0.0
    for name, p in model.named_tensors().items():
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        g = grads[name].reshape(-1)
        for j in picks:
            old = flat[j]
            flat[j] = old + epsilon
            lp = loss_value(model, batch)
            flat[j] = old - epsilon
            lm = loss_value(model, batch)
            flat[j] = old
            num = (lp - lm) / (2 * epsilon)
            err = abs(g[j] - num) / max(abs(g[j]), abs(num), floor)
            worst = max(worst, err)
    return worst
