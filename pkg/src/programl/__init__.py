"""Program graphs from LLVM IR text, exact dataflow label oracles, and a
message passing network that learns them."""

__version__ = "0.1.0"

from .analysis import AnalysisResult, AnalysisTask, eligible_roots, run_analysis
from .graph import ProgramGraph, build_graph, read_graphs, write_graphs
from .ir import IRModule, IRSyntaxError, ValidationError, parse_ir
from .model import GraphBatch, ModelConfig, ModelParameters, init_params, propagate
from .training import Checkpoint, Metrics, evaluate, train
from .vocab import Vocabulary, build_vocab, normalize

__all__ = [
    "AnalysisResult", "AnalysisTask", "Checkpoint", "GraphBatch", "IRModule", "IRSyntaxError",
    "Metrics", "ModelConfig", "ModelParameters", "ProgramGraph", "ValidationError", "Vocabulary",
    "build_graph", "build_vocab", "eligible_roots", "evaluate", "init_params", "normalize",
    "parse_ir", "propagate", "read_graphs", "run_analysis", "train", "write_graphs",
]
