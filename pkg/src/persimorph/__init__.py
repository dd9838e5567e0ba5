"""Neuron morphology as trees and persistence images, with a contrastive dual encoder."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericError, PersimorphError
from .filtration import FiltrationMap, compute_filtration
from .pimage import Bounds, ImageConfig, PersistenceImage, compute_bounds, render
from .swc import MorphTree, build_tree, load_tree, parse_swc, serialize_swc
from .tmd import PersistenceDiagram, elder_rule_pairs, enrich_pairs, tree_diagram

__all__ = [
    "Bounds",
    "ConfigError",
    "DataError",
    "FiltrationMap",
    "ImageConfig",
    "MorphTree",
    "NumericError",
    "PersimorphError",
    "PersistenceDiagram",
    "PersistenceImage",
    "build_tree",
    "compute_bounds",
    "compute_filtration",
    "elder_rule_pairs",
    "enrich_pairs",
    "load_tree",
    "parse_swc",
    "render",
    "serialize_swc",
    "tree_diagram",
]
