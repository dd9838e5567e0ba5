"""Augmentations in persistence space, applied to enriched pairs before rendering.

Three independent, stochastically gated operations per view:

* jitter: Gaussian noise on birth and death, with one bandwidth each drawn
  per diagram as a fraction of its birth range; pairs are then repaired so
  that ``b >= d >= 0``;
* scale: ``delta *= alpha`` with one ``alpha`` per diagram;
* radius: ``mean_radius *= beta`` with one ``beta`` per diagram.

``delta`` is a channel weight here and is never re-derived from the
jittered birth/death.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, EmptyDiagram
from .rng import substream
from .tmd import PersistenceDiagram


@dataclass(frozen=True)
class AugmentConfig:
    enable_jitter: bool = True
    enable_scale: bool = True
    enable_radius: bool = True
    jitter_fraction_range: tuple = (0.01, 0.05)
    scale_range: tuple = (0.9, 1.1)
    radius_range: tuple = (0.85, 1.15)
    apply_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("jitter_fraction_range", "scale_range", "radius_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi:
                raise ConfigError(f"{name}: low {lo} > high {hi}")
            object.__setattr__(self, name, (lo, hi))
        if self.jitter_fraction_range[0] < 0:
            raise ConfigError("jitter_fraction_range must be non-negative")
        if self.scale_range[0] < 0:
            raise ConfigError("scale_range must be non-negative")
        if self.radius_range[0] <= 0:
            raise ConfigError("radius_range must be strictly positive")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ConfigError("apply_probability must lie in [0, 1]")

    @property
    def disabled(self):
        return not (self.enable_jitter or self.enable_scale or self.enable_radius)

    def to_dict(self):
        d = asdict(self)
        for k in ("jitter_fraction_range", "scale_range", "radius_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def augment_with_params(diagram: PersistenceDiagram, cfg: AugmentConfig, rng=None, view=0):
    """Augment one view; returns ``(diagram, applied)`` where ``applied`` logs the draws.

    ``rng`` defaults to the stream derived from ``(cfg.seed, neuron_id, view)``.
    """
    if len(diagram) == 0:
        raise EmptyDiagram(f"cannot augment empty diagram {diagram.neuron_id!r}")
    applied = {"neuron_id": diagram.neuron_id, "view": view}
    if cfg.disabled:
        return diagram.copy(), applied
    if rng is None:
        rng = substream(cfg.seed, "augment", diagram.neuron_id, view)
    P = diagram.pairs.copy()
    p = cfg.apply_probability

    # gates are always drawn so enabling one op never shifts another's stream
    gate_jitter, gate_scale, gate_radius = rng.random(3)

    if cfg.enable_jitter and gate_jitter < p:
        span = float(P[:, 0].max() - P[:, 0].min())
        lo, hi = cfg.jitter_fraction_range
        sigma_b = rng.uniform(lo, hi) * span
        sigma_d = rng.uniform(lo, hi) * span
        b = P[:, 0] + rng.normal(0.0, sigma_b, size=len(P))
        d = P[:, 1] + rng.normal(0.0, sigma_d, size=len(P))
        d = np.maximum(d, 0.0)
        b = np.maximum(b, d)
        P[:, 0], P[:, 1] = b, d
        applied["sigma_b"], applied["sigma_d"] = float(sigma_b), float(sigma_d)

    if cfg.enable_scale and gate_scale < p:
        alpha = rng.uniform(*cfg.scale_range)
        P[:, 2] = P[:, 2] * alpha
        applied["alpha"] = float(alpha)

    if cfg.enable_radius and gate_radius < p:
        beta = rng.uniform(*cfg.radius_range)
        P[:, 3] = P[:, 3] * beta
        applied["beta"] = float(beta)

    return PersistenceDiagram(P, diagram.neuron_id), applied


def augment_diagram(diagram: PersistenceDiagram, cfg: AugmentConfig, rng=None, view=0) -> PersistenceDiagram:
    return augment_with_params(diagram, cfg, rng, view)[0]
