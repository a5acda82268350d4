"""Reproducible batched simulation of spreading processes on graphs."""

from .distributed import TrafficLog, run_distributed_epochs
from .engine import EpochResults, Simulation, StateBatch, init_states, step
from .errors import PropsimError
from .graph import CsrGraph, degree_centrality_seeds, from_edges, load_graph
from .models import CATALOG, ModelSpec
from .partition import GraphPartitioner, generate_partition, load_partition, save_partitions

__version__ = "0.1.0"

__all__ = [
    "CATALOG",
    "CsrGraph",
    "EpochResults",
    "GraphPartitioner",
    "ModelSpec",
    "PropsimError",
    "Simulation",
    "StateBatch",
    "TrafficLog",
    "degree_centrality_seeds",
    "from_edges",
    "generate_partition",
    "init_states",
    "load_graph",
    "load_partition",
    "run_distributed_epochs",
    "save_partitions",
    "step",
]
