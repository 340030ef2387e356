"""Scene-based graph neural recommendation (SceneRec) on numpy."""

from .graph import BipartiteGraph, EntityMaps, GraphBundle, SceneGraph, load_dataset, validate
from .model import ParameterSet, SceneRec, Variant
from .training import TrainConfig, train

__all__ = ["BipartiteGraph", "EntityMaps", "GraphBundle", "SceneGraph", "load_dataset", "validate",
           "ParameterSet", "SceneRec", "Variant", "TrainConfig", "train"]
__version__ = "0.1.0"
