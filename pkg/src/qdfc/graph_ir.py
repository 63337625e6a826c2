"""Dataflow graph IR: typed tensors, nodes, shape/layout inference, validation.

Graphs are plain dataclasses and are treated as immutable after construction;
every transformation produces a new Graph.  Tensor names are single-assignment:
each name is produced by exactly one of a graph input, an initializer, or one
node output.

Execution semantics are layout-aware: a node computes the mathematically
correct result for whatever layout its input actually has (e.g. a pool always
pools the spatial axes of the incoming layout).  Axis-bearing attributes such
as MultiThreshold's ``channel_axis`` or ReduceMean's ``axes`` record the layout
convention the node was authored for; the transform passes use them to align
the graph with the hardware-friendly NHWC mainline.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fixed_point import QFormat


class Layout(str, Enum):
    NCHW = "NCHW"
    NHWC = "NHWC"
    NC = "NC"
    N = "N"

    @property
    def rank(self) -> int:
        return len(self.value)

    @property
    def channel_axis(self) -> int:
        return self.value.index("C") if "C" in self.value else -1

    @property
    def spatial_axes(self) -> Tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.value) if a in "HW")


NODE_KINDS = frozenset(
    {
        "Conv",
        "MatMul",
        "MultiThreshold",
        "Transpose",
        "ReduceMean",
        "GlobalAccPool",
        "Mul",
        "Add",
        "MaxPool",
        "Relu",
        "Flatten",
        "MVAU",
    }
)

# Attributes that must be present (and integer-valued where noted) per kind.
REQUIRED_ATTRS: Dict[str, Tuple[str, ...]] = {
    "Conv": ("kernel", "stride", "pad"),
    "Transpose": ("perm",),
    "ReduceMean": ("axes",),
    "MultiThreshold": ("scale", "bias", "channel_axis"),
    "MaxPool": ("kernel", "stride"),
    "MVAU": ("scale", "bias", "channel_axis"),
}

_INPUT_COUNTS: Dict[str, Tuple[int, int]] = {
    # kind -> (min inputs, max inputs)
    "Conv": (2, 2),
    "MatMul": (2, 2),
    "MultiThreshold": (2, 2),
    "Transpose": (1, 1),
    "ReduceMean": (1, 1),
    "GlobalAccPool": (1, 1),
    "Mul": (2, 2),
    "Add": (2, 2),
    "MaxPool": (1, 1),
    "Relu": (1, 1),
    "Flatten": (1, 1),
    "MVAU": (3, 3),
}


class CycleError(Exception):
    """The node graph contains a dependency cycle."""


class ShapeMismatch(Exception):
    """Shape or layout inference failed at a specific node."""


class ValidationError(Exception):
    """A graph failed validation; carries the diagnostic list."""

    def __init__(self, diagnostics: Sequence[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class TensorSpec:
    """Name, shape, layout and element type of one tensor."""

    name: str
    shape: Tuple[int, ...]
    layout: Layout
    dtype: str = "float32"
    qformat: Optional[QFormat] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        object.__setattr__(self, "layout", Layout(self.layout))
        if not self.name:
            raise ValueError("tensor name must be non-empty")
        if len(self.shape) == 0 or any(d < 1 for d in self.shape):
            raise ValueError(f"tensor {self.name!r}: extents must be >= 1, got {self.shape}")
        if self.layout.rank != len(self.shape):
            raise ValueError(
                f"tensor {self.name!r}: layout {self.layout.value} does not match rank {len(self.shape)}"
            )
        if self.dtype not in ("float32", "fixed"):
            raise ValueError(f"tensor {self.name!r}: unknown dtype {self.dtype!r}")
        if self.dtype == "float32" and self.qformat is not None:
            raise ValueError(f"tensor {self.name!r}: float32 tensors carry no qformat")

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


@dataclass
class Node:
    name: str
    kind: str
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    attrs: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.inputs = tuple(self.inputs)
        self.outputs = tuple(self.outputs)
        if not self.name:
            raise ValueError("node name must be non-empty")


@dataclass
class Initializer:
    """A constant tensor: spec plus payload.

    Float payloads are stored as float32, fixed payloads as int64 code arrays
    (serialized as int32; every legal QFormat fits).
    """

    spec: TensorSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.spec.dtype == "float32":
            self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        else:
            if self.spec.qformat is None:
                raise ValueError(f"fixed initializer {self.spec.name!r} needs a qformat")
            self.data = np.ascontiguousarray(self.data, dtype=np.int64)
            if not self.spec.qformat.contains_code(self.data):
                raise ValueError(f"initializer {self.spec.name!r}: codes outside {self.spec.qformat}")
        if tuple(self.data.shape) != self.spec.shape:
            raise ValueError(
                f"initializer {self.spec.name!r}: payload shape {self.data.shape} != spec {self.spec.shape}"
            )


@dataclass
class Graph:
    name: str
    inputs: List[TensorSpec]
    outputs: List[TensorSpec]
    nodes: List[Node]
    initializers: Dict[str, Initializer] = field(default_factory=dict)
    # Derived: specs of every tensor (filled by infer_shapes, not serialized).
    value_info: Dict[str, TensorSpec] = field(default_factory=dict)

    def spec_of(self, name: str) -> TensorSpec:
        for s in self.inputs:
            if s.name == name:
                return s
        if name in self.initializers:
            return self.initializers[name].spec
        if name in self.value_info:
            return self.value_info[name]
        raise KeyError(f"no spec known for tensor {name!r}")

    def input_names(self) -> List[str]:
        return [s.name for s in self.inputs]

    def output_names(self) -> List[str]:
        return [s.name for s in self.outputs]


def producers(g: Graph) -> Dict[str, Node]:
    out: Dict[str, Node] = {}
    for n in g.nodes:
        for t in n.outputs:
            out[t] = n
    return out


def consumers(g: Graph) -> Dict[str, List[Node]]:
    out: Dict[str, List[Node]] = {}
    for n in g.nodes:
        for t in n.inputs:
            out.setdefault(t, []).append(n)
    return out


def validate(g: Graph) -> List[str]:
    """Structural validation; returns a list of diagnostics (empty when clean)."""
    diags: List[str] = []
    defined: Dict[str, str] = {}

    def define(name: str, origin: str) -> None:
        if name in defined:
            diags.append(f"tensor {name!r} defined by both {defined[name]} and {origin}")
        else:
            defined[name] = origin

    for s in g.inputs:
        define(s.name, "graph input")
    for name, init in g.initializers.items():
        if name != init.spec.name:
            diags.append(f"initializer key {name!r} does not match spec name {init.spec.name!r}")
        define(name, "initializer")
        if init.spec.dtype == "fixed" and init.spec.qformat is None:
            diags.append(f"initializer {name!r}: fixed dtype without qformat")

    seen_nodes = set()
    for n in g.nodes:
        if n.name in seen_nodes:
            diags.append(f"duplicate node name {n.name!r}")
        seen_nodes.add(n.name)
        if n.kind not in NODE_KINDS:
            diags.append(f"node {n.name!r}: unknown kind {n.kind!r}")
            continue
        lo, hi = _INPUT_COUNTS[n.kind]
        if not lo <= len(n.inputs) <= hi:
            diags.append(f"node {n.name!r}: {n.kind} expects {lo}..{hi} inputs, has {len(n.inputs)}")
        for t in n.outputs:
            define(t, f"node {n.name!r}")
        for a in REQUIRED_ATTRS.get(n.kind, ()):
            if a not in n.attrs:
                diags.append(f"node {n.name!r}: missing attribute {a!r}")
        diags.extend(_check_attr_values(n))

    for n in g.nodes:
        for t in n.inputs:
            if t not in defined:
                diags.append(f"node {n.name!r}: input tensor {t!r} is undefined")

    for s in g.outputs:
        if s.name not in defined:
            diags.append(f"graph output {s.name!r} is undefined")
        if s.dtype == "fixed" and s.qformat is None:
            diags.append(f"graph output {s.name!r}: fixed dtype without qformat")

    for s in g.inputs:
        if s.dtype == "fixed" and s.qformat is None:
            diags.append(f"graph input {s.name!r}: fixed dtype without qformat")

    try:
        topo_order(g)
    except CycleError as e:
        diags.append(str(e))
    return diags


def _check_attr_values(n: Node) -> List[str]:
    diags: List[str] = []
    a = n.attrs
    if n.kind in ("Conv", "MaxPool"):
        for key in ("kernel", "stride"):
            if key in a and (not isinstance(a[key], int) or a[key] < 1):
                diags.append(f"node {n.name!r}: {key} must be a positive int")
        if n.kind == "Conv" and "pad" in a and (not isinstance(a["pad"], int) or a["pad"] < 0):
            diags.append(f"node {n.name!r}: pad must be a non-negative int")
    if n.kind == "Transpose" and "perm" in a:
        perm = tuple(a["perm"])
        if sorted(perm) != list(range(len(perm))):
            diags.append(f"node {n.name!r}: perm {perm} is not a permutation")
    if n.kind == "ReduceMean" and "axes" in a:
        axes = tuple(a["axes"])
        if len(set(axes)) != len(axes) or any(not isinstance(x, int) for x in axes):
            diags.append(f"node {n.name!r}: axes {axes} must be distinct ints")
    if n.kind in ("MultiThreshold", "MVAU") and "channel_axis" in a:
        if not isinstance(a["channel_axis"], int) or a["channel_axis"] < 0:
            diags.append(f"node {n.name!r}: channel_axis must be a non-negative int")
    return diags


def topo_order(g: Graph) -> List[Node]:
    """Topological order over nodes, breaking ties by insertion order.

    Raises CycleError naming the nodes left on a cycle.
    """
    index = {id(n): i for i, n in enumerate(g.nodes)}
    produced_by: Dict[str, int] = {}
    for i, n in enumerate(g.nodes):
        for t in n.outputs:
            produced_by[t] = i

    indeg = [0] * len(g.nodes)
    dependents: List[List[int]] = [[] for _ in g.nodes]
    for i, n in enumerate(g.nodes):
        for t in n.inputs:
            j = produced_by.get(t)
            if j is not None and j != i:
                indeg[i] += 1
                dependents[j].append(i)

    ready = [i for i, d in enumerate(indeg) if d == 0]
    heapq.heapify(ready)
    order: List[Node] = []
    while ready:
        i = heapq.heappop(ready)
        order.append(g.nodes[i])
        for j in dependents[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, j)
    if len(order) != len(g.nodes):
        stuck = sorted(n.name for i, n in enumerate(g.nodes) if indeg[i] > 0)
        raise CycleError(f"cycle through nodes: {', '.join(stuck)}")
    return order


# ---------------------------------------------------------------------------
# shape / layout / dtype inference


def _layout_perm_result(layout: Layout, perm: Tuple[int, ...]) -> Layout:
    letters = "".join(layout.value[p] for p in perm)
    try:
        return Layout(letters)
    except ValueError:
        raise ShapeMismatch(
            f"transpose perm {perm} maps layout {layout.value} to unsupported {letters}"
        )


def _dtype_of(specs: Sequence[TensorSpec]) -> Tuple[str, Optional[QFormat]]:
    """Propagated dtype: float32 wins; fixed propagates a format only if unique."""
    if any(s.dtype == "float32" for s in specs):
        return "float32", None
    fmts = {s.qformat for s in specs}
    if len(fmts) == 1:
        return "fixed", fmts.pop()
    return "fixed", None


def _attr_out_dtype(node: Node, fallback: Tuple[str, Optional[QFormat]]):
    q = node.attrs.get("out_qformat")
    if q is not None:
        return "fixed", QFormat.parse(q) if isinstance(q, str) else q
    return fallback


def infer_shapes(g: Graph) -> Graph:
    """Resolve shape, layout and dtype for every tensor; returns a new Graph.

    Idempotent: inferring an already-inferred graph yields an identical one.
    Declared graph output specs are checked against the computed ones.
    """
    known: Dict[str, TensorSpec] = {}
    for s in g.inputs:
        known[s.name] = s
    for name, init in g.initializers.items():
        known[name] = init.spec

    def spec(name: str, node: Node) -> TensorSpec:
        if name not in known:
            raise ShapeMismatch(f"node {node.name!r}: input {name!r} has no known spec")
        return known[name]

    for node in topo_order(g):
        fn = _INFER_FNS.get(node.kind)
        if fn is None:
            raise ShapeMismatch(f"node {node.name!r}: cannot infer kind {node.kind!r}")
        for out_spec in fn(node, lambda t: spec(t, node)):
            known[out_spec.name] = out_spec

    value_info = {
        name: s
        for name, s in known.items()
        if name not in g.initializers and all(i.name != name for i in g.inputs)
    }

    new_outputs: List[TensorSpec] = []
    for declared in g.outputs:
        if declared.name not in known:
            raise ShapeMismatch(f"graph output {declared.name!r} was never produced")
        computed = known[declared.name]
        if computed.shape != declared.shape or computed.layout != declared.layout:
            raise ShapeMismatch(
                f"graph output {declared.name!r}: declared {declared.shape}/{declared.layout.value} "
                f"but computed {computed.shape}/{computed.layout.value}"
            )
        new_outputs.append(declared)

    return replace(g, outputs=new_outputs, value_info=value_info)


def _conv_out_hw(h: int, w: int, k: int, s: int, p: int, node: Node) -> Tuple[int, int]:
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"node {node.name!r}: empty output window ({oh}x{ow})")
    return oh, ow


def _infer_conv(node: Node, spec) -> List[TensorSpec]:
    x, w = spec(node.inputs[0]), spec(node.inputs[1])
    if x.layout not in (Layout.NCHW, Layout.NHWC):
        raise ShapeMismatch(f"node {node.name!r}: Conv input must be rank-4, got {x.layout.value}")
    if w.layout is not Layout.NC:
        raise ShapeMismatch(f"node {node.name!r}: Conv weight must be a rank-2 matrix")
    k, s, p = node.attrs["kernel"], node.attrs["stride"], node.attrs["pad"]
    n = x.shape[0]
    if x.layout is Layout.NCHW:
        c, h, wd = x.shape[1], x.shape[2], x.shape[3]
    else:
        h, wd, c = x.shape[1], x.shape[2], x.shape[3]
    if w.shape[0] != k * k * c:
        raise ShapeMismatch(
            f"node {node.name!r}: weight rows {w.shape[0]} != kernel*kernel*channels {k * k * c}"
        )
    f = w.shape[1]
    oh, ow = _conv_out_hw(h, wd, k, s, p, node)
    if x.layout is Layout.NCHW:
        shape = (n, f, oh, ow)
    else:
        shape = (n, oh, ow, f)
    dt, qf = _dtype_of([x, w])
    if dt == "fixed":
        qf = None  # accumulator output, width is execution-derived
    return [TensorSpec(node.outputs[0], shape, x.layout, dt, qf)]


def _infer_matmul(node: Node, spec) -> List[TensorSpec]:
    x, w = spec(node.inputs[0]), spec(node.inputs[1])
    if w.layout is not Layout.NC:
        raise ShapeMismatch(f"node {node.name!r}: MatMul weight must be a rank-2 matrix")
    dt, qf = _dtype_of([x, w])
    if dt == "fixed":
        qf = None
    f = w.shape[1]
    if x.layout is Layout.NC:
        if x.shape[1] != w.shape[0]:
            raise ShapeMismatch(
                f"node {node.name!r}: inner dims {x.shape[1]} vs {w.shape[0]} differ"
            )
        return [TensorSpec(node.outputs[0], (x.shape[0], f), Layout.NC, dt, qf)]
    if x.layout in (Layout.NCHW, Layout.NHWC):
        n = x.shape[0]
        if x.layout is Layout.NCHW:
            c, h, wd = x.shape[1], x.shape[2], x.shape[3]
        else:
            h, wd, c = x.shape[1], x.shape[2], x.shape[3]
        if "im2col_kernel" in node.attrs:
            k = node.attrs["im2col_kernel"]
            s = node.attrs.get("im2col_stride", 1)
            p = node.attrs.get("im2col_pad", 0)
        else:
            k, s, p = 1, 1, 0
        if w.shape[0] != k * k * c:
            raise ShapeMismatch(
                f"node {node.name!r}: weight rows {w.shape[0]} != kernel*kernel*channels {k * k * c}"
            )
        oh, ow = _conv_out_hw(h, wd, k, s, p, node)
        if x.layout is Layout.NCHW:
            shape = (n, f, oh, ow)
        else:
            shape = (n, oh, ow, f)
        return [TensorSpec(node.outputs[0], shape, x.layout, dt, qf)]
    raise ShapeMismatch(f"node {node.name!r}: MatMul input layout {x.layout.value} unsupported")


def _infer_multithreshold(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    t = spec(node.inputs[1])
    if t.layout is not Layout.NC:
        raise ShapeMismatch(f"node {node.name!r}: thresholds must be a rank-2 (rows, steps) tensor")
    ch = x.shape[x.layout.channel_axis] if x.layout.channel_axis >= 0 else 1
    if t.shape[0] not in (1, ch):
        raise ShapeMismatch(
            f"node {node.name!r}: threshold rows {t.shape[0]} match neither 1 nor channels {ch}"
        )
    dt, qf = _attr_out_dtype(node, ("float32", None))
    return [TensorSpec(node.outputs[0], x.shape, x.layout, dt, qf)]


def _infer_transpose(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    perm = tuple(node.attrs["perm"])
    if sorted(perm) != list(range(len(x.shape))):
        raise ShapeMismatch(f"node {node.name!r}: perm {perm} invalid for rank {len(x.shape)}")
    shape = tuple(x.shape[p] for p in perm)
    layout = _layout_perm_result(x.layout, perm)
    return [TensorSpec(node.outputs[0], shape, layout, x.dtype, x.qformat)]


def _infer_reducemean(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    if x.layout not in (Layout.NCHW, Layout.NHWC):
        raise ShapeMismatch(f"node {node.name!r}: ReduceMean input must be rank-4")
    axes = tuple(sorted(node.attrs["axes"]))
    if axes not in ((1, 2), (2, 3)):
        raise ShapeMismatch(f"node {node.name!r}: axes {axes} are not a spatial pair")
    n = x.shape[0]
    c = x.shape[x.layout.channel_axis]
    dt, qf = _attr_out_dtype(node, _dtype_of([x]))
    if dt == "fixed" and "out_qformat" not in node.attrs:
        qf = None
    return [TensorSpec(node.outputs[0], (n, c), Layout.NC, dt, qf)]


def _infer_gap(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    if x.layout not in (Layout.NCHW, Layout.NHWC):
        raise ShapeMismatch(f"node {node.name!r}: GlobalAccPool input must be rank-4")
    n, c = x.shape[0], x.shape[x.layout.channel_axis]
    dt, _ = _dtype_of([x])
    # A pooled sum outgrows the input format; its width is execution-derived.
    return [TensorSpec(node.outputs[0], (n, c), Layout.NC, dt, None)]


def _infer_elementwise(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    other = spec(node.inputs[1])
    if other.shape not in ((1,),):
        if len(other.shape) == 1:
            ch = x.shape[x.layout.channel_axis] if x.layout.channel_axis >= 0 else None
            if other.shape[0] != ch:
                raise ShapeMismatch(
                    f"node {node.name!r}: per-channel operand {other.shape} does not match channels"
                )
        elif other.shape != x.shape or other.layout != x.layout:
            raise ShapeMismatch(
                f"node {node.name!r}: operand {other.shape}/{other.layout.value} does not match "
                f"{x.shape}/{x.layout.value}"
            )
    dt, qf = _attr_out_dtype(node, _dtype_of([x, other]))
    if dt == "fixed" and "out_qformat" not in node.attrs:
        qf = None
    return [TensorSpec(node.outputs[0], x.shape, x.layout, dt, qf)]


def _infer_maxpool(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    if x.layout not in (Layout.NCHW, Layout.NHWC):
        raise ShapeMismatch(f"node {node.name!r}: MaxPool input must be rank-4")
    k, s = node.attrs["kernel"], node.attrs["stride"]
    n = x.shape[0]
    if x.layout is Layout.NCHW:
        c, h, w = x.shape[1], x.shape[2], x.shape[3]
    else:
        h, w, c = x.shape[1], x.shape[2], x.shape[3]
    oh, ow = _conv_out_hw(h, w, k, s, 0, node)
    shape = (n, c, oh, ow) if x.layout is Layout.NCHW else (n, oh, ow, c)
    return [TensorSpec(node.outputs[0], shape, x.layout, x.dtype, x.qformat)]


def _infer_relu(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    return [TensorSpec(node.outputs[0], x.shape, x.layout, x.dtype, x.qformat)]


def _infer_flatten(node: Node, spec) -> List[TensorSpec]:
    x = spec(node.inputs[0])
    rest = 1
    for d in x.shape[1:]:
        rest *= d
    return [TensorSpec(node.outputs[0], (x.shape[0], rest), Layout.NC, x.dtype, x.qformat)]


def _infer_mvau(node: Node, spec) -> List[TensorSpec]:
    mm = Node(node.name, "MatMul", node.inputs[:2], (node.outputs[0],), dict(node.attrs))
    acc_spec = _infer_matmul(mm, spec)[0]
    dt, qf = _attr_out_dtype(node, ("float32", None))
    return [TensorSpec(node.outputs[0], acc_spec.shape, acc_spec.layout, dt, qf)]


_INFER_FNS: Dict[str, Callable[[Node, Callable[[str], TensorSpec]], List[TensorSpec]]] = {
    "Conv": _infer_conv,
    "MatMul": _infer_matmul,
    "MultiThreshold": _infer_multithreshold,
    "Transpose": _infer_transpose,
    "ReduceMean": _infer_reducemean,
    "GlobalAccPool": _infer_gap,
    "Mul": _infer_elementwise,
    "Add": _infer_elementwise,
    "MaxPool": _infer_maxpool,
    "Relu": _infer_relu,
    "Flatten": _infer_flatten,
    "MVAU": _infer_mvau,
}


def same_graph(a: Graph, b: Graph) -> bool:
    """Structural equality including initializer payload bytes and value_info."""
    if a.name != b.name or a.inputs != b.inputs or a.outputs != b.outputs:
        return False
    if len(a.nodes) != len(b.nodes):
        return False
    for na, nb in zip(a.nodes, b.nodes):
        if (na.name, na.kind, na.inputs, na.outputs, na.attrs) != (
            nb.name,
            nb.kind,
            nb.inputs,
            nb.outputs,
            nb.attrs,
        ):
            return False
    if list(a.initializers) != list(b.initializers):
        return False
    for k in a.initializers:
        ia, ib = a.initializers[k], b.initializers[k]
        if ia.spec != ib.spec or ia.data.tobytes() != ib.data.tobytes():
            return False
    return a.value_info == b.value_info


class GraphBuilder:
    """Small imperative helper for constructing validated graphs."""

    def __init__(self, name: str):
        self._name = name
        self._inputs: List[TensorSpec] = []
        self._outputs: List[str] = []
        self._nodes: List[Node] = []
        self._inits: Dict[str, Initializer] = {}
        self._count = 0

    def input(self, name: str, shape, layout, dtype: str = "float32", qformat=None) -> str:
        self._inputs.append(TensorSpec(name, tuple(shape), Layout(layout), dtype, qformat))
        return name

    def init(self, name: str, data: np.ndarray, layout, dtype: str = "float32", qformat=None) -> str:
        spec = TensorSpec(name, tuple(np.asarray(data).shape), Layout(layout), dtype, qformat)
        self._inits[name] = Initializer(spec, np.asarray(data))
        return name

    def node(self, kind: str, inputs: Sequence[str], attrs: Optional[dict] = None,
             out: Optional[str] = None, name: Optional[str] = None) -> str:
        self._count += 1
        out = out or f"t{self._count}"
        name = name or f"{kind.lower()}{self._count}"
        self._nodes.append(Node(name, kind, tuple(inputs), (out,), dict(attrs or {})))
        return out

    def output(self, name: str) -> None:
        self._outputs.append(name)

    def build(self, name: Optional[str] = None) -> Graph:
        g = Graph(
            name=name or self._name,
            inputs=list(self._inputs),
            outputs=[],
            nodes=list(self._nodes),
            initializers=dict(self._inits),
        )
        g = infer_shapes(g)
        outs = []
        for t in self._outputs:
            outs.append(g.spec_of(t))
        g = replace(g, outputs=outs)
        diags = validate(g)
        if diags:
            raise ValidationError(diags)
        return g
