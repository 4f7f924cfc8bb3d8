"""Traffic-matrix estimation from link loads with a dynamic demand model."""

from .estimator import EstimatorConfig, init_state, run, step
from .ingest import DatasetBundle, SplitSpec, load_canonical, split
from .netmodel import Topology, TrafficSeries, routing_matrix

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle",
    "EstimatorConfig",
    "SplitSpec",
    "Topology",
    "TrafficSeries",
    "init_state",
    "load_canonical",
    "routing_matrix",
    "run",
    "split",
    "step",
]
