"""Three-channel persistence images.

Each pair becomes an isotropic Gaussian at (birth, persistence) on an
``H x W`` pixel grid. Channel R weights every pair by 1, G by its persistence
delta and B by its mean radius::

    I_c(x, y) = sum_i w_ic / (2 pi s^2) * exp(-((x - px_i)^2 + (y - py_i)^2) / (2 s^2))

Pixel centres sit at integer coordinates; row 0 is the lowest persistence.
Kernels are cut off outside a square window of ``truncation_radius * sigma``
around each point, which lets the sum factor into two small matrix products.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .tmd import PersistenceDiagram

CHANNELS = ("R", "G", "B")
RAW_MAGIC = b"PIMG"
RAW_HEADER = struct.Struct("<4sIII")


def normalize_channels(channels) -> tuple:
    if isinstance(channels, str):
        channels = list(channels.upper().replace(",", ""))
    chosen = {c.upper() for c in channels}
    bad = chosen - set(CHANNELS)
    if bad or not chosen:
        raise ConfigError(f"channels must be a non-empty subset of RGB, got {channels!r}")
    return tuple(c for c in CHANNELS if c in chosen)


@dataclass(frozen=True)
class ImageConfig:
    height: int = 112
    width: int = 112
    sigma: float = 16.0
    channels: tuple = CHANNELS
    bounds_mode: str = "global"  # or "per_image"
    truncation_radius: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "channels", normalize_channels(self.channels))
        if self.height < 8 or self.width < 8:
            raise ConfigError("image height and width must be >= 8")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not self.truncation_radius > 0:
            raise ConfigError("truncation_radius must be positive")
        if self.bounds_mode not in ("global", "per_image"):
            raise ConfigError(f"unknown bounds_mode {self.bounds_mode!r}")

    def to_dict(self):
        d = asdict(self)
        d["channels"] = "".join(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Bounds:
    b_min: float
    b_max: float
    p_min: float
    p_max: float

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        try:
            return cls(float(d["b_min"]), float(d["b_max"]), float(d["p_min"]), float(d["p_max"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: bad bounds file ({e})") from None


def compute_bounds(diagrams) -> Bounds:
    """Birth and persistence ranges over a collection of diagrams."""
    stacked = [d.pairs for d in diagrams if len(d)]
    if not stacked:
        return Bounds(0.0, 0.0, 0.0, 0.0)
    P = np.vstack(stacked)
    b = P[:, 0]
    p = P[:, 0] - P[:, 1]
    return Bounds(float(b.min()), float(b.max()), float(p.min()), float(p.max()))


def _axis(v, lo, hi, n):
    if hi == lo:
        # degenerate axis: every point goes to the centre
        return np.full(np.shape(v), (n - 1) / 2.0)
    v = np.clip(v, lo, hi)
    return (v - lo) / (hi - lo) * (n - 1)


def map_points(birth, persistence, config: ImageConfig, bounds: Bounds):
    """Vectorised grid coordinates ``(px, py)``; values outside bounds are clamped."""
    px = _axis(np.asarray(birth, float), bounds.b_min, bounds.b_max, config.width)
    py = _axis(np.asarray(persistence, float), bounds.p_min, bounds.p_max, config.height)
    return px, py


def map_to_grid(pair, config: ImageConfig, bounds: Bounds):
    px, py = map_points(pair[0], pair[0] - pair[1], config, bounds)
    return float(px), float(py)


@dataclass
class PersistenceImage:
    data: np.ndarray  # (H, W, C), channel order fixed R, G, B
    config: ImageConfig
    neuron_id: str = ""
    bounds: Bounds | None = field(default=None, repr=False)

    def channel(self, name):
        return self.data[:, :, self.config.channels.index(name)]


def _kernel_1d(centres, n, sigma, cutoff):
    grid = np.arange(n, dtype=float)
    d = grid[None, :] - centres[:, None]
    k = np.exp(-(d * d) / (2.0 * sigma * sigma))
    k[np.abs(d) > cutoff] = 0.0
    return k


def render(diagram: PersistenceDiagram, config: ImageConfig = ImageConfig(), bounds: Bounds | None = None) -> PersistenceImage:
    """Rasterise a diagram. ``bounds=None`` uses the diagram's own ranges."""
    H, W = config.height, config.width
    data = np.zeros((H, W, len(config.channels)))
    if bounds is None or config.bounds_mode == "per_image":
        bounds = compute_bounds([diagram])
    if len(diagram) == 0:
        return PersistenceImage(data, config, diagram.neuron_id, bounds)
    px, py = map_points(diagram.birth, diagram.persistence, config, bounds)
    cutoff = config.truncation_radius * config.sigma
    gx = _kernel_1d(px, W, config.sigma, cutoff)
    gy = _kernel_1d(py, H, config.sigma, cutoff)
    norm = 1.0 / (2.0 * math.pi * config.sigma ** 2)
    weights = {"R": np.ones(len(diagram)), "G": diagram.delta, "B": diagram.mean_radius}
    for ci, name in enumerate(config.channels):
        # each channel is computed on its own so subsets give identical planes
        data[:, :, ci] = (gy.T @ (weights[name][:, None] * gx)) * norm
    return PersistenceImage(data, config, diagram.neuron_id, bounds)


def render_many(diagrams, config: ImageConfig, bounds: Bounds | None, workers: int = 1):
    from .parallel import parallel_map

    return parallel_map(_render_one, [(d, config, bounds) for d in diagrams], workers)


def _render_one(args):
    return render(*args)


# --- export ---------------------------------------------------------------

def to_rgb8(img: PersistenceImage) -> np.ndarray:
    """8-bit RGB, each channel scaled by its own max, row 0 at the top = highest persistence."""
    H, W = img.data.shape[:2]
    out = np.zeros((H, W, 3), dtype=np.uint8)
    for ci, name in enumerate(img.config.channels):
        plane = img.data[:, :, ci]
        top = plane.max()
        if top > 0:
            out[:, :, CHANNELS.index(name)] = np.rint(np.clip(plane / top, 0.0, 1.0) * 255).astype(np.uint8)
    return out[::-1]


def export_png(img: PersistenceImage, path):
    from PIL import Image

    try:
        Image.fromarray(to_rgb8(img), mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def export_raw(img: PersistenceImage, path):
    data = np.ascontiguousarray(img.data, dtype="<f4")
    H, W, C = data.shape
    try:
        with open(path, "wb") as fh:
            fh.write(RAW_HEADER.pack(RAW_MAGIC, H, W, C))
            fh.write(data.tobytes(order="C"))
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def import_raw(path) -> np.ndarray:
    """Read a PIMG file into an ``(H, W, C)`` float32 array."""
    with open(path, "rb") as fh:
        head = fh.read(RAW_HEADER.size)
        if len(head) != RAW_HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, H, W, C = RAW_HEADER.unpack(head)
        if magic != RAW_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        body = fh.read()
    if len(body) != H * W * C * 4:
        raise DataError(f"{path}: expected {H * W * C * 4} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(H, W, C).astype(np.float32)
