"""Stone-age distributed protocols: asynchronous unison, restart, MIS, leader
election, a synchronizer, and the tooling to simulate and check them."""
from .engine import ProtocolSpec, Scheduler, Trace, run, replay
from .topology import Graph, GraphSpec, build_graph

__all__ = ["Graph", "GraphSpec", "ProtocolSpec", "Scheduler", "Trace", "build_graph", "replay", "run"]
__version__ = "0.1.0"
