"""qdfc: a dataflow graph compiler and bit-exact fixed-point emulator for
few-shot image-classification backbones.

The pieces, in dependency order: ``fixed_point`` (Q-format arithmetic),
``graph_ir`` (the twelve-kind dataflow IR with shape/layout inference),
``executor`` (float64 and bit-exact integer evaluation), ``transforms``
(streamlining passes and quantization), ``backbone`` (reference models),
``few_shot`` (episode sampling and nearest-class-mean evaluation),
``cost_model`` (streaming vs systolic estimates), ``data_io`` (all bytes on
disk) and ``cli`` (the ``qdfc`` command).
"""

from .fixed_point import FixedValue, QFormat, quantize, quantize_array
from .graph_ir import Graph, GraphBuilder, Initializer, Layout, Node, TensorSpec, infer_shapes
from .transforms import DEFAULT_PIPELINE, QuantConfig, quantize_graph, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PIPELINE",
    "FixedValue",
    "Graph",
    "GraphBuilder",
    "Initializer",
    "Layout",
    "Node",
    "QFormat",
    "QuantConfig",
    "TensorSpec",
    "infer_shapes",
    "quantize",
    "quantize_array",
    "quantize_graph",
    "run_pipeline",
    "__version__",
]
