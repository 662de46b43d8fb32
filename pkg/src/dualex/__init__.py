"""Graph-classifier explanations for control flow graphs.

Edge-attribution prototypes are extracted from training graphs, verified
against the classifier, and matched into new malicious predictions to give
per-node risk scores.
"""

from .graph import BENIGN, MALICIOUS, Cfg, EdgeRecord, NodeRecord, make_graph, to_undirected
from .pipeline import PipelineConfig, RunReport, grid_search, run_pipeline

__all__ = ["BENIGN", "MALICIOUS", "Cfg", "EdgeRecord", "NodeRecord", "make_graph", "to_undirected",
           "PipelineConfig", "RunReport", "grid_search", "run_pipeline"]
__version__ = "0.1.0"
