"""Graph rewrites that align a float export with the hardware dataflow form.

Every pass takes a Graph and returns ``(new_graph, change_count)``; a pass
re-applied to its own output reports zero changes.  All passes preserve the
graph's input/output contract and its computed values (the streamlining
passes are value-preserving; ``quantize_graph`` is the one deliberate
semantics change and is therefore not a registered pass).

The layout story: an exported float graph computes in NCHW, the matrix
dataflow wants NHWC, and threshold units carry a ``channel_axis`` marker for
the layout they were authored against.  ``insert_layout_transposes`` makes
every marker agree with its input, ``absorb_transpose`` flips threshold
units to channel-last and pushes the transpose below them, and
``cancel_inverse_transposes`` sinks transposes through layout-agnostic
nodes until inverse pairs meet and vanish.  On the reference backbone the
end state has no Transpose nodes at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fixed_point import QFormat, quantize_array
from .graph_ir import (
    Graph,
    Initializer,
    Layout,
    Node,
    TensorSpec,
    consumers,
    infer_shapes,
    producers,
)

NCHW_TO_NHWC = (0, 2, 3, 1)
NHWC_TO_NCHW = (0, 3, 1, 2)


class UnknownPass(Exception):
    pass


class UnsupportedLayoutPair(Exception):
    pass


class UnsupportedReduction(Exception):
    pass


class NonPositiveScale(Exception):
    pass


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class TransformPass:
    name: str
    apply: Callable[[Graph], Tuple[Graph, int]]


@dataclass(frozen=True)
class QuantConfig:
    """Fixed-point build settings.

    Weights of matrix layers take ``conv_weight_fmt``; activations (threshold
    unit outputs, residual sums, graph inputs) take ``act_fmt``, which must be
    unsigned because activations follow a ReLU.  ``output_fmt`` controls the
    final feature tensor and defaults to the activation format.  Accumulators
    are always exact at full width ("exact-widened"); there is no other
    accumulator policy.
    """

    conv_weight_fmt: QFormat
    act_fmt: QFormat
    output_fmt: Optional[QFormat] = None
    accumulator: str = "exact-widened"

    def __post_init__(self) -> None:
        if self.act_fmt.signed:
            raise ConfigError("activation format must be unsigned (activations follow a ReLU)")
        if self.accumulator != "exact-widened":
            raise ConfigError(f"unknown accumulator policy {self.accumulator!r}")

    @property
    def resolved_output_fmt(self) -> QFormat:
        return self.output_fmt if self.output_fmt is not None else self.act_fmt

    @classmethod
    def from_dict(cls, d: dict) -> "QuantConfig":
        unknown = sorted(set(d) - {"conv", "act", "output"})
        if unknown:
            raise ConfigError(f"unknown quantization config key(s): {', '.join(unknown)}")
        try:
            conv = QFormat.parse(d["conv"])
            act = QFormat.parse(d["act"])
            out = QFormat.parse(d["output"]) if "output" in d and d["output"] else None
        except KeyError as e:
            raise ConfigError(f"quantization config missing key {e.args[0]!r}")
        except ValueError as e:
            raise ConfigError(str(e))
        return cls(conv_weight_fmt=conv, act_fmt=act, output_fmt=out)

    @classmethod
    def parse_flag(cls, text: str) -> "QuantConfig":
        """Parse either a JSON object string or ``conv=s:1.5,act=u:2.2`` pairs."""
        text = text.strip()
        if text.startswith("{"):
            import json

            try:
                return cls.from_dict(json.loads(text))
            except json.JSONDecodeError as e:
                raise ConfigError(f"bad quantization JSON: {e}")
        d = {}
        for part in text.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ConfigError(f"bad quantization setting {part!r}, expected key=fmt")
            k, v = part.split("=", 1)
            d[k.strip()] = v.strip()
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = {"conv": str(self.conv_weight_fmt), "act": str(self.act_fmt)}
        if self.output_fmt is not None:
            d["output"] = str(self.output_fmt)
        return d


class _Namer:
    """Fresh-name factory over the graph's tensor and node namespaces."""

    def __init__(self, g: Graph):
        taken = {s.name for s in g.inputs} | set(g.initializers)
        for n in g.nodes:
            taken.add(n.name)
            taken.update(n.outputs)
        self.taken = taken

    def fresh(self, base: str) -> str:
        if base not in self.taken:
            self.taken.add(base)
            return base
        i = 2
        while f"{base}_{i}" in self.taken:
            i += 1
        name = f"{base}_{i}"
        self.taken.add(name)
        return name


def _prune_unused_inits(nodes: List[Node], inits: Dict[str, Initializer], g: Graph) -> Dict[str, Initializer]:
    used = set(g.output_names())
    for n in nodes:
        used.update(n.inputs)
    return {k: v for k, v in inits.items() if k in used}


def _rebuild(g: Graph, nodes: List[Node], inits: Optional[Dict[str, Initializer]] = None) -> Graph:
    inits = dict(g.initializers) if inits is None else inits
    inits = _prune_unused_inits(nodes, inits, g)
    g2 = replace(g, nodes=list(nodes), initializers=inits, value_info={})
    return infer_shapes(g2)


def _rename_uses(nodes: List[Node], old: str, new: str) -> List[Node]:
    out = []
    for n in nodes:
        if old in n.inputs:
            n = Node(n.name, n.kind, tuple(new if t == old else t for t in n.inputs), n.outputs, dict(n.attrs))
        out.append(n)
    return out


def _is_layout_perm(perm: Tuple[int, ...]) -> bool:
    return tuple(perm) in (NCHW_TO_NHWC, NHWC_TO_NCHW, (0, 1, 2, 3))


def _const_operand(g: Graph, node: Node) -> Optional[Initializer]:
    """The initializer behind input 1 of an elementwise node, if any."""
    if len(node.inputs) < 2:
        return None
    return g.initializers.get(node.inputs[1])


def _is_agnostic_unary(g: Graph, node: Node) -> bool:
    """Nodes a pure layout transpose commutes with (layout-aware semantics).

    Flatten is excluded: its output order depends on the input layout.
    Threshold units are excluded here because their channel_axis marker is
    managed by the dedicated insertion/absorption passes.
    """
    if node.kind in ("Relu", "MaxPool"):
        return True
    if node.kind in ("Mul", "Add"):
        init = _const_operand(g, node)
        return init is not None and init.data.ndim <= 1
    return False


# ---------------------------------------------------------------------------
# passes


def infer_shapes_pass(g: Graph) -> Tuple[Graph, int]:
    """Annotation-only pass: resolve every tensor's shape, layout and dtype."""
    return infer_shapes(g), 0


def lower_conv_to_matmul(g: Graph) -> Tuple[Graph, int]:
    """Rewrite Conv nodes as (im2col) MatMul over the stored weight matrix.

    Weights are already held in the flattened (k*k*C_in, C_out) layout, so the
    rewrite only moves the patch gather into the consuming matrix multiply.
    A 1x1 stride-1 unpadded conv degenerates to a plain MatMul.
    """
    g = infer_shapes(g)
    nodes: List[Node] = []
    changed = 0
    for n in g.nodes:
        if n.kind != "Conv":
            nodes.append(n)
            continue
        k, s, p = n.attrs["kernel"], n.attrs["stride"], n.attrs["pad"]
        attrs = {a: v for a, v in n.attrs.items() if a not in ("kernel", "stride", "pad")}
        if (k, s, p) != (1, 1, 0):
            attrs.update({"im2col_kernel": k, "im2col_stride": s, "im2col_pad": p})
        nodes.append(Node(n.name, "MatMul", n.inputs, n.outputs, attrs))
        changed += 1
    if not changed:
        return g, 0
    return _rebuild(g, nodes), changed


def _required_layout(g: Graph, node: Node) -> Optional[Layout]:
    spec = g.spec_of(node.inputs[0])
    if spec.layout not in (Layout.NCHW, Layout.NHWC):
        return None
    if node.kind in ("MatMul", "MVAU"):
        return Layout.NHWC
    if node.kind == "MultiThreshold":
        ax = node.attrs["channel_axis"]
        if ax == 1:
            return Layout.NCHW
        if ax == 3:
            return Layout.NHWC
        raise UnsupportedLayoutPair(
            f"node {node.name!r}: no rank-4 layout has channel axis {ax}"
        )
    if node.kind == "ReduceMean":
        axes = tuple(sorted(node.attrs["axes"]))
        if axes == (2, 3):
            return Layout.NCHW
        if axes == (1, 2):
            return Layout.NHWC
        return None
    return None


def insert_layout_transposes(g: Graph) -> Tuple[Graph, int]:
    """Wrap every node whose input layout disagrees with the layout
    convention it was authored for (matrix units want NHWC, threshold units
    want the layout matching their channel_axis marker) in a transpose pair:
    one into the required layout before the node, the inverse after it.

    Wrapping keeps the rest of the graph byte-for-byte identical, so the
    rewrite is purely local and every intermediate graph stays consistent;
    the inverse transposes meet their neighbours' and are removed by
    absorb_transpose / cancel_inverse_transposes.  Values are unchanged:
    execution is layout-aware, a transpose only changes memory order.
    """
    g = infer_shapes(g)
    changed = 0
    while True:
        site = None
        for node in g.nodes:
            req = _required_layout(g, node)
            if req is None:
                continue
            actual = g.spec_of(node.inputs[0]).layout
            if actual is req:
                continue
            if actual.rank != 4 or req.rank != 4:
                raise UnsupportedLayoutPair(
                    f"node {node.name!r}: cannot adapt {actual.value} to {req.value}"
                )
            site = (node, actual, req)
            break
        if site is None:
            return g, changed
        node, actual, req = site
        into = NCHW_TO_NHWC if (actual, req) == (Layout.NCHW, Layout.NHWC) else NHWC_TO_NCHW
        back = NHWC_TO_NCHW if into == NCHW_TO_NHWC else NCHW_TO_NHWC

        namer = _Namer(g)
        pre_out = namer.fresh(f"{node.inputs[0]}_{req.value.lower()}")
        pre = Node(namer.fresh(f"{node.name}_pre_transpose"), "Transpose",
                   (node.inputs[0],), (pre_out,), {"perm": list(into)})
        if g.spec_of(node.outputs[0]).layout.rank == 4:
            mid_out = namer.fresh(f"{node.outputs[0]}_{req.value.lower()}")
            post = Node(namer.fresh(f"{node.name}_post_transpose"), "Transpose",
                        (mid_out,), node.outputs, {"perm": list(back)})
            replacement = [
                pre,
                Node(node.name, node.kind, (pre_out,) + node.inputs[1:], (mid_out,), dict(node.attrs)),
                post,
            ]
        else:
            # reductions leave the spatial axes behind; no layout to restore
            replacement = [
                pre,
                Node(node.name, node.kind, (pre_out,) + node.inputs[1:], node.outputs, dict(node.attrs)),
            ]
        nodes: List[Node] = []
        for n in g.nodes:
            if n is node:
                nodes.extend(replacement)
            else:
                nodes.append(n)
        g = _rebuild(g, nodes)
        changed += 1


def absorb_affine_into_thresholds(g: Graph) -> Tuple[Graph, int]:
    """Fold Mul(scalar a > 0) / Add(scalar or per-channel b) into a directly
    following threshold unit: comparing a*x + b >= T is comparing
    x >= (T - b) / a, so the affine node disappears and the thresholds move.

    Raises NonPositiveScale for a <= 0 (the comparison direction would flip).
    """
    g = infer_shapes(g)
    changed = 0
    while True:
        prod_map = producers(g)
        cons_map = consumers(g)
        site = None
        for m in g.nodes:
            if m.kind != "MultiThreshold":
                continue
            p = prod_map.get(m.inputs[0])
            if p is None or p.kind not in ("Mul", "Add"):
                continue
            init = _const_operand(g, p)
            if init is None or init.data.ndim > 1:
                continue
            if p.kind == "Mul" and init.data.shape != (1,):
                continue  # per-channel scaling is not part of this pattern
            if len(cons_map.get(p.outputs[0], [])) != 1 or p.outputs[0] in g.output_names():
                continue
            site = (m, p, init)
            break
        if site is None:
            return g, changed
        m, p, init = site

        if init.spec.dtype == "fixed":
            const = init.spec.qformat.to_real(init.data).astype(np.float64)
        else:
            const = init.data.astype(np.float64)
        thr_init = g.initializers[m.inputs[1]]
        thr = thr_init.data.astype(np.float64)
        if p.kind == "Mul":
            a = float(const[0])
            if a <= 0.0:
                raise NonPositiveScale(f"node {p.name!r}: scale {a} must be positive")
            new_thr = thr / a
        else:
            if const.shape == (1,):
                new_thr = thr - float(const[0])
            else:
                c = const.shape[0]
                rows = np.broadcast_to(thr, (c, thr.shape[1])) if thr.shape[0] == 1 else thr
                new_thr = rows - const[:, None]

        namer = _Namer(g)
        thr_name = namer.fresh(f"{m.inputs[1]}_adj")
        inits = dict(g.initializers)
        inits[thr_name] = Initializer(
            TensorSpec(thr_name, new_thr.shape, Layout.NC, "float32"),
            new_thr.astype(np.float32),
        )
        new_m = Node(m.name, "MultiThreshold", (p.inputs[0], thr_name), m.outputs, dict(m.attrs))
        nodes = [new_m if n is m else n for n in g.nodes if n is not p]
        g = _rebuild(g, nodes, inits)
        changed += 1


def absorb_transpose_into_multithreshold(g: Graph) -> Tuple[Graph, int]:
    """Rewrite Transpose(NHWC->NCHW) -> MultiThreshold(channel_axis=1) as a
    channel-last MultiThreshold followed by the same Transpose.

    The threshold unit then reads the matrix unit's NHWC output directly; the
    trailing transpose keeps downstream consumers unchanged and is cleaned up
    by cancel_inverse_transposes once it meets an inverse.
    """
    g = infer_shapes(g)
    changed = 0
    while True:
        prod_map = producers(g)
        cons_map = consumers(g)
        site = None
        for m in g.nodes:
            if m.kind != "MultiThreshold" or m.attrs.get("channel_axis") != 1:
                continue
            p = prod_map.get(m.inputs[0])
            if p is None or p.kind != "Transpose" or tuple(p.attrs["perm"]) != NHWC_TO_NCHW:
                continue
            if len(cons_map.get(p.outputs[0], [])) != 1 or p.outputs[0] in g.output_names():
                continue
            site = (m, p)
            break
        if site is None:
            return g, changed
        m, p = site
        namer = _Namer(g)
        mid = namer.fresh(f"{m.outputs[0]}_nhwc")
        attrs = dict(m.attrs)
        attrs["channel_axis"] = 3
        new_m = Node(m.name, "MultiThreshold", (p.inputs[0], m.inputs[1]), (mid,), attrs)
        new_t = Node(namer.fresh(f"{p.name}_moved"), "Transpose", (mid,), m.outputs, {"perm": list(NHWC_TO_NCHW)})
        nodes: List[Node] = []
        for n in g.nodes:
            if n is p:
                continue
            if n is m:
                nodes.extend([new_m, new_t])
            else:
                nodes.append(n)
        g = _rebuild(g, nodes)
        changed += 1


def cancel_inverse_transposes(g: Graph) -> Tuple[Graph, int]:
    """Remove layout transposes that do no work.

    Local rewrites, applied to a fixed point:

    * drop identity-permutation transposes;
    * drop adjacent pairs whose permutations compose to the identity;
    * absorb a transpose feeding GlobalAccPool (its (N, C) sum is invariant
      under spatial/channel permutation);
    * hoist a transpose above a two-input Add when both operands arrive
      through equal transposes;
    * sink a transpose below a layout-agnostic unary node so that inverse
      pairs separated by such nodes eventually become adjacent.

    Each rewrite preserves computed values exactly; sinking only changes the
    layout in which intermediate nodes operate.
    """
    g = infer_shapes(g)
    changed = 0
    while True:
        action = _find_cancel_action(g)
        if action is None:
            return g, changed
        g = action()
        changed += 1


def _find_cancel_action(g: Graph):
    prod_map = producers(g)
    cons_map = consumers(g)
    out_names = set(g.output_names())

    def is_transpose(n: Optional[Node]) -> bool:
        return n is not None and n.kind == "Transpose"

    # identity perms
    for t in g.nodes:
        if is_transpose(t) and tuple(t.attrs["perm"]) == tuple(range(len(t.attrs["perm"]))):
            if t.outputs[0] in out_names:
                continue

            def drop_identity(t=t):
                nodes = [n for n in g.nodes if n is not t]
                nodes = _rename_uses(nodes, t.outputs[0], t.inputs[0])
                return _rebuild(g, nodes)

            return drop_identity

    # adjacent inverse pairs
    for t2 in g.nodes:
        if not is_transpose(t2):
            continue
        t1 = prod_map.get(t2.inputs[0])
        if not is_transpose(t1):
            continue
        p1, p2 = tuple(t1.attrs["perm"]), tuple(t2.attrs["perm"])
        if not all(p1[p2[i]] == i for i in range(len(p1))):
            continue
        if t2.outputs[0] in out_names:
            # The pair ends at a graph output, so its name must survive.
            # Splice both transposes out by renaming the tensor above them,
            # which needs that tensor to have a producer and no other uses.
            src = t1.inputs[0]
            upstream = prod_map.get(src)
            if (
                upstream is None
                or src in out_names
                or len(cons_map.get(src, [])) != 1
                or len(cons_map.get(t1.outputs[0], [])) != 1
            ):
                continue

            def drop_pair_at_output(t1=t1, t2=t2, upstream=upstream, src=src):
                out = t2.outputs[0]
                new_up = Node(
                    upstream.name,
                    upstream.kind,
                    upstream.inputs,
                    tuple(out if o == src else o for o in upstream.outputs),
                    dict(upstream.attrs),
                )
                nodes = [
                    new_up if n is upstream else n
                    for n in g.nodes
                    if n is not t1 and n is not t2
                ]
                return _rebuild(g, nodes)

            return drop_pair_at_output

        def drop_pair(t1=t1, t2=t2):
            nodes = [n for n in g.nodes if n is not t2]
            nodes = _rename_uses(nodes, t2.outputs[0], t1.inputs[0])
            still_used = any(t1.outputs[0] in n.inputs for n in nodes if n is not t1)
            if not still_used and t1.outputs[0] not in out_names:
                nodes = [n for n in nodes if n is not t1]
            return _rebuild(g, nodes)

        return drop_pair

    # transpose feeding a global accumulate pool
    for gap in g.nodes:
        if gap.kind != "GlobalAccPool":
            continue
        t = prod_map.get(gap.inputs[0])
        if (
            is_transpose(t)
            and _is_layout_perm(tuple(t.attrs["perm"]))
            and len(cons_map.get(t.outputs[0], [])) == 1
            and t.outputs[0] not in out_names
        ):

            def absorb_into_gap(gap=gap, t=t):
                new_gap = Node(gap.name, gap.kind, (t.inputs[0],), gap.outputs, dict(gap.attrs))
                nodes = [new_gap if n is gap else n for n in g.nodes if n is not t]
                return _rebuild(g, nodes)

            return absorb_into_gap

    # equal transposes on both operands of an Add
    for a in g.nodes:
        if a.kind != "Add" or len(a.inputs) != 2:
            continue
        t1, t2 = prod_map.get(a.inputs[0]), prod_map.get(a.inputs[1])
        if not (is_transpose(t1) and is_transpose(t2)) or t1 is t2:
            continue
        if tuple(t1.attrs["perm"]) != tuple(t2.attrs["perm"]):
            continue
        if not _is_layout_perm(tuple(t1.attrs["perm"])):
            continue
        if any(
            len(cons_map.get(t.outputs[0], [])) != 1 or t.outputs[0] in out_names
            for t in (t1, t2)
        ):
            continue

        def hoist_add(a=a, t1=t1, t2=t2):
            namer = _Namer(g)
            mid = namer.fresh(f"{a.outputs[0]}_pre")
            new_a = Node(a.name, "Add", (t1.inputs[0], t2.inputs[0]), (mid,), dict(a.attrs))
            new_t = Node(
                namer.fresh(f"{t1.name}_post"),
                "Transpose",
                (mid,),
                a.outputs,
                {"perm": list(t1.attrs["perm"])},
            )
            nodes: List[Node] = []
            for n in g.nodes:
                if n is t1 or n is t2:
                    continue
                if n is a:
                    nodes.extend([new_a, new_t])
                else:
                    nodes.append(n)
            return _rebuild(g, nodes)

        return hoist_add

    # sink through a layout-agnostic unary node
    for t in g.nodes:
        if not is_transpose(t) or t.outputs[0] in out_names:
            continue
        if not _is_layout_perm(tuple(t.attrs["perm"])):
            continue
        cons = cons_map.get(t.outputs[0], [])
        if len(cons) != 1:
            continue
        u = cons[0]
        if not _is_agnostic_unary(g, u) or u.inputs[0] != t.outputs[0]:
            continue

        def sink(t=t, u=u):
            namer = _Namer(g)
            mid = namer.fresh(f"{u.outputs[0]}_pre")
            new_u = Node(u.name, u.kind, (t.inputs[0],) + u.inputs[1:], (mid,), dict(u.attrs))
            new_t = Node(
                namer.fresh(f"{t.name}_sunk"),
                "Transpose",
                (mid,),
                u.outputs,
                {"perm": list(t.attrs["perm"])},
            )
            nodes = []
            for n in g.nodes:
                if n is t:
                    continue
                if n is u:
                    nodes.extend([new_u, new_t])
                else:
                    nodes.append(n)
            return _rebuild(g, nodes)

        return sink

    return None


def convert_reduce_mean_to_gap(g: Graph) -> Tuple[Graph, int]:
    """Replace a spatial ReduceMean with GlobalAccPool followed by a scalar
    Mul by the reciprocal pixel count, keeping division out of the dataflow.

    A layout transpose feeding only the ReduceMean is absorbed: the pooled
    (N, C) sum does not depend on the spatial/channel memory order.
    """
    g = infer_shapes(g)
    changed = 0
    while True:
        prod_map = producers(g)
        cons_map = consumers(g)
        site = None
        for rm in g.nodes:
            if rm.kind == "ReduceMean":
                site = rm
                break
        if site is None:
            return g, changed
        rm = site
        x_spec = g.spec_of(rm.inputs[0])
        if x_spec.layout not in (Layout.NCHW, Layout.NHWC):
            raise UnsupportedReduction(f"node {rm.name!r}: input is not a rank-4 tensor")
        axes = tuple(sorted(rm.attrs["axes"]))
        if axes != x_spec.layout.spatial_axes:
            raise UnsupportedReduction(
                f"node {rm.name!r}: axes {axes} are not the spatial axes of {x_spec.layout.value}"
            )
        hw = 1
        for ax in x_spec.layout.spatial_axes:
            hw *= x_spec.shape[ax]

        src = rm.inputs[0]
        drop: Optional[Node] = None
        p = prod_map.get(src)
        if (
            p is not None
            and p.kind == "Transpose"
            and _is_layout_perm(tuple(p.attrs["perm"]))
            and len(cons_map.get(p.outputs[0], [])) == 1
            and p.outputs[0] not in g.output_names()
        ):
            src = p.inputs[0]
            drop = p

        namer = _Namer(g)
        sum_name = namer.fresh(f"{rm.outputs[0]}_sum")
        const_name = namer.fresh(f"{rm.name}_inv_area")
        inits = dict(g.initializers)
        inits[const_name] = Initializer(
            TensorSpec(const_name, (1,), Layout.N, "float32"),
            np.asarray([1.0 / hw], dtype=np.float32),
        )
        gap = Node(namer.fresh(f"{rm.name}_gap"), "GlobalAccPool", (src,), (sum_name,), {})
        mul_attrs = {}
        if "out_qformat" in rm.attrs:
            mul_attrs["out_qformat"] = rm.attrs["out_qformat"]
        mul = Node(namer.fresh(f"{rm.name}_scale"), "Mul", (sum_name, const_name), rm.outputs, mul_attrs)
        nodes: List[Node] = []
        for n in g.nodes:
            if n is drop:
                continue
            if n is rm:
                nodes.extend([gap, mul])
            else:
                nodes.append(n)
        g = _rebuild(g, nodes, inits)
        changed += 1


def fuse_mvau(g: Graph) -> Tuple[Graph, int]:
    """Fuse MatMul (constant weights) directly followed by a layout-consistent
    MultiThreshold into one matrix-vector-activation unit."""
    g = infer_shapes(g)
    changed = 0
    while True:
        prod_map = producers(g)
        cons_map = consumers(g)
        site = None
        for m in g.nodes:
            if m.kind != "MultiThreshold":
                continue
            p = prod_map.get(m.inputs[0])
            if p is None or p.kind != "MatMul" or p.inputs[1] not in g.initializers:
                continue
            if len(cons_map.get(p.outputs[0], [])) != 1 or p.outputs[0] in g.output_names():
                continue
            out_layout = g.spec_of(p.outputs[0]).layout
            if out_layout.channel_axis != m.attrs.get("channel_axis"):
                continue
            site = (m, p)
            break
        if site is None:
            return g, changed
        m, p = site
        namer = _Namer(g)
        attrs = {k: v for k, v in p.attrs.items() if k.startswith("im2col_")}
        for key in ("scale", "bias", "channel_axis", "out_qformat"):
            if key in m.attrs:
                attrs[key] = m.attrs[key]
        mvau = Node(
            namer.fresh(f"{p.name}_mvau"),
            "MVAU",
            (p.inputs[0], p.inputs[1], m.inputs[1]),
            m.outputs,
            attrs,
        )
        nodes: List[Node] = []
        for n in g.nodes:
            if n is m:
                continue
            if n is p:
                nodes.append(mvau)
            else:
                nodes.append(n)
        g = _rebuild(g, nodes)
        changed += 1


# ---------------------------------------------------------------------------
# quantization


def quantize_graph(g: Graph, cfg: QuantConfig) -> Graph:
    """Turn a float graph with ReLU activations into a fixed-point graph.

    Matrix-layer weights are quantized to the weight format.  Every ReLU
    becomes a MultiThreshold realizing the quantized ReLU for the activation
    format: for a b-bit unsigned activation there are 2**b - 1 thresholds at
    (k - 0.5) * step, scale = step, bias = 0.  Residual adds and reductions
    get the requantization format they narrow to.  Streamline constants on
    Mul/Add stay real-valued; the absorb_affine pass folds them into
    thresholds.
    """
    act = cfg.act_fmt
    out_fmt = cfg.resolved_output_fmt
    g = infer_shapes(g)

    if any(s.dtype != "float32" for s in g.inputs):
        raise ConfigError("graph is already quantized")

    namer = _Namer(g)
    inits = dict(g.initializers)
    nodes: List[Node] = []

    weight_names = set()
    for n in g.nodes:
        if n.kind in ("Conv", "MatMul", "MVAU") and len(n.inputs) >= 2 and n.inputs[1] in inits:
            weight_names.add(n.inputs[1])
    for name in weight_names:
        init = inits[name]
        if init.spec.dtype == "fixed":
            raise ConfigError(f"weight {name!r} is already quantized")
        codes = quantize_array(init.data.astype(np.float64), cfg.conv_weight_fmt)
        spec = TensorSpec(name, init.spec.shape, init.spec.layout, "fixed", cfg.conv_weight_fmt)
        inits[name] = Initializer(spec, codes)

    steps = (1 << act.total_bits) - 1
    for n in g.nodes:
        if n.kind == "Relu":
            x_spec = g.spec_of(n.inputs[0])
            ch_axis = x_spec.layout.channel_axis
            if ch_axis < 0:
                ch_axis = len(x_spec.shape) - 1
            ks = np.arange(1, steps + 1, dtype=np.float64)
            thr = ((ks - 0.5) * act.step).astype(np.float32).reshape(1, steps)
            thr_name = namer.fresh(f"{n.name}_thresholds")
            inits[thr_name] = Initializer(TensorSpec(thr_name, thr.shape, Layout.NC, "float32"), thr)
            attrs = {
                "scale": act.step,
                "bias": 0.0,
                "channel_axis": ch_axis,
                "out_qformat": str(act),
            }
            nodes.append(Node(n.name, "MultiThreshold", (n.inputs[0], thr_name), n.outputs, attrs))
        elif n.kind in ("Mul", "Add"):
            attrs = dict(n.attrs)
            attrs.setdefault("out_qformat", str(act))
            nodes.append(Node(n.name, n.kind, n.inputs, n.outputs, attrs))
        elif n.kind == "ReduceMean":
            attrs = dict(n.attrs)
            attrs.setdefault("out_qformat", str(out_fmt))
            nodes.append(Node(n.name, n.kind, n.inputs, n.outputs, attrs))
        else:
            nodes.append(n)

    new_inputs = [
        TensorSpec(s.name, s.shape, s.layout, "fixed", act) for s in g.inputs
    ]
    g2 = replace(g, inputs=new_inputs, nodes=nodes, initializers=inits, value_info={}, outputs=[])
    g2 = infer_shapes(g2)
    new_outputs = [g2.spec_of(s.name) for s in g.outputs]
    g2 = replace(g2, outputs=new_outputs)
    return infer_shapes(g2)


# ---------------------------------------------------------------------------
# pipeline

PASS_REGISTRY: Dict[str, TransformPass] = {
    p.name: p
    for p in [
        TransformPass("infer_shapes", infer_shapes_pass),
        TransformPass("lower_conv", lower_conv_to_matmul),
        TransformPass("insert_layout_transposes", insert_layout_transposes),
        TransformPass("absorb_affine", absorb_affine_into_thresholds),
        TransformPass("absorb_transpose", absorb_transpose_into_multithreshold),
        TransformPass("cancel_inverse_transposes", cancel_inverse_transposes),
        TransformPass("convert_reduce_mean_to_gap", convert_reduce_mean_to_gap),
        TransformPass("fuse_mvau", fuse_mvau),
    ]
}

DEFAULT_PIPELINE: List[str] = [
    "infer_shapes",
    "lower_conv",
    "insert_layout_transposes",
    "absorb_affine",
    "absorb_transpose",
    "cancel_inverse_transposes",
    "convert_reduce_mean_to_gap",
    "fuse_mvau",
]


def run_pipeline(g: Graph, passes: Optional[Sequence[str]] = None) -> Tuple[Graph, List[Tuple[str, int]]]:
    """Apply the named passes in order, each to a fixed point.

    Returns the transformed graph and a per-pass change log.  Unknown names
    raise UnknownPass; an empty list is a no-op.
    """
    names = list(DEFAULT_PIPELINE if passes is None else passes)
    log: List[Tuple[str, int]] = []
    for name in names:
        if name not in PASS_REGISTRY:
            raise UnknownPass(f"unknown pass {name!r} (available: {', '.join(sorted(PASS_REGISTRY))})")
        fn = PASS_REGISTRY[name].apply
        total = 0
        for _ in range(64):
            g, c = fn(g)
            total += c
            if c == 0:
                break
        else:
            raise RuntimeError(f"pass {name!r} did not reach a fixed point")
        log.append((name, total))
    return g, log
