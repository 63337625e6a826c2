"""Reference executor: float64 semantics and bit-exact fixed-point emulation.

Two modes share one dispatch table:

* float mode evaluates everything in float64, dequantizing any fixed-point
  constants first; it is the semantic oracle for the transform passes.
* fixed mode carries an int64 code array plus a fractional width per tensor.
  Multiplications and accumulations are exact at full width; narrowing only
  happens at explicit requantization points (MultiThreshold / MVAU outputs,
  Mul / Add / ReduceMean nodes carrying an ``out_qformat`` attribute).

Thresholds and streamline scale constants remain real-valued even in
quantized graphs.  Comparisons against them are still deterministic because
an exact integer code times a power of two is exactly representable in
float64 (guarded: accumulators are kept below 2**52).

Both modes are layout-aware: a node computes the correct result for the
layout its input actually has, so inserting or removing pure layout
transposes never changes computed values, only memory order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .fixed_point import QFormat, quantize_array
from .graph_ir import Graph, Layout, Node, TensorSpec, infer_shapes, topo_order

_ACC_GUARD = 1 << 52  # |codes| must stay below this for exact float64 views


class InputMismatch(Exception):
    """Provided inputs do not match the graph's input specs."""


class UnquantizedNode(Exception):
    """Fixed mode hit a node or tensor without fixed-point semantics."""


class UnsortedThresholds(Exception):
    """MultiThreshold rows must be strictly ascending."""


class SpecMismatch(Exception):
    """Two graphs cannot be compared: their I/O specs differ."""


@dataclass
class TensorValue:
    """A concrete tensor: spec plus data.

    Float tensors carry float64 data; fixed tensors carry int64 codes in the
    spec's QFormat.
    """

    spec: TensorSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if tuple(self.data.shape) != self.spec.shape:
            raise InputMismatch(
                f"tensor {self.spec.name!r}: data shape {self.data.shape} != spec {self.spec.shape}"
            )
        if self.spec.dtype == "fixed":
            if not np.issubdtype(self.data.dtype, np.integer):
                raise InputMismatch(f"tensor {self.spec.name!r}: fixed tensors carry integer codes")
            self.data = self.data.astype(np.int64)
            if self.spec.qformat is not None and not self.spec.qformat.contains_code(self.data):
                raise InputMismatch(
                    f"tensor {self.spec.name!r}: codes outside {self.spec.qformat} range"
                )
        else:
            self.data = self.data.astype(np.float64)


@dataclass
class TraceEntry:
    node: str
    checksum: str
    elements: int


@dataclass
class ExecTrace:
    mode: str
    entries: List[TraceEntry] = field(default_factory=list)


@dataclass
class EquivalenceReport:
    trials: int
    float_max_abs: float
    float_max_rel: float
    fixed_trials: int
    fixed_mismatches: int


# An in-flight fixed-point tensor: exact integer codes at a fractional width.
@dataclass
class _Fx:
    codes: np.ndarray
    frac: int
    signed: bool


def _checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def _pool_patches(x: np.ndarray, layout: Layout, k: int, s: int) -> np.ndarray:
    """Gather pooling windows: (N, OH, OW, k*k, C) view-copies, layout-aware."""
    if layout is Layout.NCHW:
        n, c, h, w = x.shape
    else:
        n, h, w, c = x.shape
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    out = np.empty((n, oh, ow, k * k, c), dtype=x.dtype)
    for kh in range(k):
        for kw in range(k):
            if layout is Layout.NCHW:
                sl = x[:, :, kh : kh + oh * s : s, kw : kw + ow * s : s]
                sl = np.moveaxis(sl, 1, -1)
            else:
                sl = x[:, kh : kh + oh * s : s, kw : kw + ow * s : s, :]
            out[:, :, :, kh * k + kw, :] = sl
    return out


def _im2col(x: np.ndarray, layout: Layout, k: int, s: int, p: int) -> np.ndarray:
    """Patch matrix (N, OH, OW, k*k*C) in (kh, kw, c) column order.

    The column order matches the weight-matrix row convention, so the same
    gather serves NCHW and NHWC inputs identically.
    """
    if p > 0:
        if layout is Layout.NCHW:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        else:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    patches = _pool_patches(x, layout, k, s)
    n, oh, ow = patches.shape[:3]
    return patches.reshape(n, oh, ow, -1)


def _spatial_sum_exact(x: np.ndarray, layout: Layout) -> np.ndarray:
    """Sum over spatial axes in ascending flat-index order, returning (N, C).

    Uses a sequential cumulative sum so float results are reproducible
    independent of reduction tree shape.
    """
    if layout is Layout.NCHW:
        n, c = x.shape[0], x.shape[1]
        flat = x.reshape(n, c, -1)
    else:
        n, c = x.shape[0], x.shape[3]
        flat = np.moveaxis(x, 3, 1).reshape(n, c, -1)
    return np.cumsum(flat, axis=2)[:, :, -1]


def _channels_last(x: np.ndarray, layout: Layout) -> Tuple[np.ndarray, int]:
    ax = layout.channel_axis
    if ax < 0:
        return x[..., np.newaxis], -1
    return np.moveaxis(x, ax, -1), ax


def _check_thresholds(t: np.ndarray, node: str) -> None:
    if t.ndim != 2:
        raise UnsortedThresholds(f"node {node!r}: thresholds must be rank-2")
    if t.shape[1] > 1 and not np.all(np.diff(t, axis=1) > 0):
        raise UnsortedThresholds(f"node {node!r}: threshold rows must be strictly ascending")


def _threshold_counts(x: np.ndarray, thresholds: np.ndarray, layout: Layout, node: str) -> np.ndarray:
    """Count, per element, how many thresholds it meets (x >= T_k).

    Thresholds have shape (rows, steps) with rows either 1 (shared) or equal
    to the channel count of the input's layout.
    """
    _check_thresholds(thresholds, node)
    t = thresholds.astype(np.float64)
    xc, moved_axis = _channels_last(x, layout)
    ch = xc.shape[-1]
    if t.shape[0] == 1:
        counts = np.searchsorted(t[0], xc, side="right")
    elif t.shape[0] == ch:
        counts = np.empty(xc.shape, dtype=np.int64)
        for c in range(ch):
            counts[..., c] = np.searchsorted(t[c], xc[..., c], side="right")
    else:
        raise InputMismatch(
            f"node {node!r}: {t.shape[0]} threshold rows for {ch} channels"
        )
    counts = counts.astype(np.int64)
    if moved_axis < 0:
        return counts[..., 0]
    return np.moveaxis(counts, -1, moved_axis)


def eval_multithreshold(
    x: Union[float, np.ndarray],
    thresholds: np.ndarray,
    scale: float,
    bias: float,
) -> Union[float, np.ndarray]:
    """Functional form of the thresholding unit: bias + scale * |{k: x >= T_k}|.

    ``thresholds`` is one strictly ascending 1-D vector applied elementwise.
    """
    t = np.asarray(thresholds, dtype=np.float64).reshape(1, -1)
    _check_thresholds(t, "<eval_multithreshold>")
    scalar = np.isscalar(x) or np.ndim(x) == 0
    xv = np.asarray(x, dtype=np.float64)
    counts = np.searchsorted(t[0], xv, side="right").astype(np.float64)
    out = bias + scale * counts
    return float(out) if scalar else out


def _fx_real(v: _Fx) -> np.ndarray:
    """Exact float64 view of fixed codes (guarded power-of-two scaling)."""
    if np.any(np.abs(v.codes) >= _ACC_GUARD):
        raise RuntimeError("accumulator exceeds the exact float64 comparison range")
    return v.codes.astype(np.float64) * (2.0 ** -v.frac)


def _requant_array(codes: np.ndarray, frac_from: int, fmt: QFormat) -> np.ndarray:
    shift = fmt.frac_bits - frac_from
    if shift >= 0:
        if shift and np.any(np.abs(codes) >= (1 << (62 - shift))):
            raise RuntimeError("requantize shift would overflow int64")
        c = codes << shift
    else:
        s = -shift
        c = (codes + (1 << (s - 1))) >> s
    return np.clip(c, fmt.min_code, fmt.max_code)


def _node_out_qformat(node: Node, mode_required: bool) -> Optional[QFormat]:
    q = node.attrs.get("out_qformat")
    if q is None:
        if mode_required:
            raise UnquantizedNode(
                f"node {node.name!r}: {node.kind} needs an out_qformat to run in fixed mode"
            )
        return None
    return QFormat.parse(q) if isinstance(q, str) else q


def _broadcast_const(const: np.ndarray, x_shape: Tuple[int, ...], layout: Layout) -> np.ndarray:
    """Broadcast a scalar (1,) or per-channel (C,) constant along the layout's channel axis."""
    if const.shape == (1,):
        return const.reshape(())
    if const.ndim == 1:
        ax = layout.channel_axis
        shape = [1] * len(x_shape)
        shape[ax] = const.shape[0]
        return const.reshape(shape)
    return const


class _Runner:
    def __init__(self, g: Graph, mode: str):
        self.g = infer_shapes(g) if not g.value_info else g
        self.mode = mode
        self.env: Dict[str, Union[np.ndarray, _Fx]] = {}

    # -- environment ------------------------------------------------------

    def bind_inputs(self, inputs: Dict[str, TensorValue]) -> None:
        expected = {s.name for s in self.g.inputs}
        if set(inputs) != expected:
            raise InputMismatch(f"inputs {sorted(inputs)} do not match graph inputs {sorted(expected)}")
        for spec in self.g.inputs:
            tv = inputs[spec.name]
            if tuple(tv.data.shape) != spec.shape or tv.spec.layout != spec.layout:
                raise InputMismatch(
                    f"input {spec.name!r}: got {tv.data.shape}/{tv.spec.layout.value}, "
                    f"expected {spec.shape}/{spec.layout.value}"
                )
            if self.mode == "fixed":
                if spec.dtype != "fixed" or spec.qformat is None:
                    raise UnquantizedNode(f"graph input {spec.name!r} is not quantized")
                if tv.spec.dtype != "fixed":
                    raise InputMismatch(f"input {spec.name!r}: fixed mode expects integer codes")
                if not spec.qformat.contains_code(tv.data):
                    raise InputMismatch(f"input {spec.name!r}: codes outside {spec.qformat}")
                self.env[spec.name] = _Fx(tv.data.astype(np.int64), spec.qformat.frac_bits, spec.qformat.signed)
            else:
                if tv.spec.dtype == "fixed":
                    qf = tv.spec.qformat
                    self.env[spec.name] = tv.data.astype(np.float64) * qf.step
                else:
                    self.env[spec.name] = tv.data.astype(np.float64)

        for name, init in self.g.initializers.items():
            if init.spec.dtype == "fixed":
                qf = init.spec.qformat
                if self.mode == "fixed":
                    self.env[name] = _Fx(init.data.astype(np.int64), qf.frac_bits, qf.signed)
                else:
                    self.env[name] = init.data.astype(np.float64) * qf.step
            else:
                self.env[name] = init.data.astype(np.float64)

    def _layout(self, tensor: str) -> Layout:
        return self.g.spec_of(tensor).layout

    def _float_const(self, node: Node, idx: int):
        """Fetch a constant operand as real values (fixed consts dequantize exactly)."""
        v = self.env[node.inputs[idx]]
        if isinstance(v, _Fx):
            return _fx_real(v), True
        return np.asarray(v, dtype=np.float64), False

    # -- float mode -------------------------------------------------------

    def run_float_node(self, node: Node) -> np.ndarray:
        k = node.kind
        env = self.env
        if k == "Relu":
            return np.maximum(env[node.inputs[0]], 0.0)
        if k == "Transpose":
            return np.transpose(env[node.inputs[0]], tuple(node.attrs["perm"]))
        if k == "Flatten":
            x = env[node.inputs[0]]
            return x.reshape(x.shape[0], -1)
        if k == "MaxPool":
            x = env[node.inputs[0]]
            lay = self._layout(node.inputs[0])
            patches = _pool_patches(x, lay, node.attrs["kernel"], node.attrs["stride"])
            pooled = patches.max(axis=3)  # (N, OH, OW, C)
            return np.moveaxis(pooled, 3, 1) if lay is Layout.NCHW else pooled
        if k in ("Conv", "MatMul", "MVAU"):
            x = env[node.inputs[0]]
            w = env[node.inputs[1]]
            lay = self._layout(node.inputs[0])
            acc = self._matmul_like_float(node, x, w, lay)
            if k == "MVAU":
                t = env[node.inputs[2]]
                out_lay = self.g.spec_of(node.outputs[0]).layout
                counts = _threshold_counts(acc, np.asarray(t), out_lay, node.name)
                return node.attrs["bias"] + node.attrs["scale"] * counts.astype(np.float64)
            return acc
        if k == "MultiThreshold":
            x = env[node.inputs[0]]
            t = np.asarray(env[node.inputs[1]])
            lay = self._layout(node.inputs[0])
            counts = _threshold_counts(x, t, lay, node.name)
            return node.attrs["bias"] + node.attrs["scale"] * counts.astype(np.float64)
        if k in ("Mul", "Add"):
            x = env[node.inputs[0]]
            other = np.asarray(env[node.inputs[1]], dtype=np.float64)
            if other.ndim <= 1:
                other = _broadcast_const(other, x.shape, self._layout(node.inputs[0]))
            return x * other if k == "Mul" else x + other
        if k == "ReduceMean":
            x = env[node.inputs[0]]
            lay = self._layout(node.inputs[0])
            total = _spatial_sum_exact(x, lay)
            hw = 1
            for ax in lay.spatial_axes:
                hw *= x.shape[ax]
            return total / float(hw)
        if k == "GlobalAccPool":
            x = env[node.inputs[0]]
            return _spatial_sum_exact(x, self._layout(node.inputs[0]))
        raise InputMismatch(f"node {node.name!r}: kind {k!r} not executable")

    def _matmul_like_float(self, node: Node, x: np.ndarray, w: np.ndarray, lay: Layout) -> np.ndarray:
        if node.kind == "Conv":
            kk, s, p = node.attrs["kernel"], node.attrs["stride"], node.attrs["pad"]
        elif "im2col_kernel" in node.attrs:
            kk = node.attrs["im2col_kernel"]
            s = node.attrs.get("im2col_stride", 1)
            p = node.attrs.get("im2col_pad", 0)
        else:
            kk, s, p = 1, 1, 0
        if lay is Layout.NC:
            return x @ w
        cols = _im2col(x, lay, kk, s, p)
        out = cols @ w  # (N, OH, OW, F)
        return np.moveaxis(out, 3, 1) if lay is Layout.NCHW else out

    # -- fixed mode -------------------------------------------------------

    def _as_fx(self, node: Node, idx: int) -> _Fx:
        v = self.env[node.inputs[idx]]
        if not isinstance(v, _Fx):
            raise UnquantizedNode(
                f"node {node.name!r}: operand {node.inputs[idx]!r} is not quantized"
            )
        return v

    def run_fixed_node(self, node: Node) -> _Fx:
        k = node.kind
        if k == "Relu":
            raise UnquantizedNode(f"node {node.name!r}: Relu has no fixed-point form; quantize first")
        if k == "Transpose":
            v = self._as_fx(node, 0)
            return _Fx(np.transpose(v.codes, tuple(node.attrs["perm"])), v.frac, v.signed)
        if k == "Flatten":
            v = self._as_fx(node, 0)
            return _Fx(v.codes.reshape(v.codes.shape[0], -1), v.frac, v.signed)
        if k == "MaxPool":
            v = self._as_fx(node, 0)
            lay = self._layout(node.inputs[0])
            patches = _pool_patches(v.codes, lay, node.attrs["kernel"], node.attrs["stride"])
            pooled = patches.max(axis=3)
            codes = np.moveaxis(pooled, 3, 1) if lay is Layout.NCHW else pooled
            return _Fx(codes, v.frac, v.signed)
        if k in ("Conv", "MatMul", "MVAU"):
            x = self._as_fx(node, 0)
            w = self._as_fx(node, 1)
            lay = self._layout(node.inputs[0])
            acc = self._matmul_like_fixed(node, x, w, lay)
            if k == "MVAU":
                t, _ = self._float_const(node, 2)
                out_lay = self.g.spec_of(node.outputs[0]).layout
                return self._apply_thresholds(node, acc, t, out_lay)
            return acc
        if k == "MultiThreshold":
            x = self._as_fx(node, 0)
            t, _ = self._float_const(node, 1)
            lay = self._layout(node.inputs[0])
            return self._apply_thresholds(node, x, t, lay)
        if k == "Mul":
            return self._fixed_mul(node)
        if k == "Add":
            return self._fixed_add(node)
        if k == "ReduceMean":
            x = self._as_fx(node, 0)
            lay = self._layout(node.inputs[0])
            out_fmt = _node_out_qformat(node, mode_required=True)
            total = _spatial_sum_exact(x.codes, lay)
            hw = 1
            for ax in lay.spatial_axes:
                hw *= x.codes.shape[ax]
            # Same rule as the GlobalAccPool + Mul expansion: exact sum times
            # the float32-rounded reciprocal, then one requantization.
            real = _Fx(total, x.frac, True)
            mean = _fx_real(real) * np.float64(np.float32(1.0 / hw))
            return _Fx(quantize_array(mean, out_fmt), out_fmt.frac_bits, out_fmt.signed)
        if k == "GlobalAccPool":
            x = self._as_fx(node, 0)
            lay = self._layout(node.inputs[0])
            return _Fx(_spatial_sum_exact(x.codes, lay), x.frac, True)
        raise InputMismatch(f"node {node.name!r}: kind {k!r} not executable")

    def _matmul_like_fixed(self, node: Node, x: _Fx, w: _Fx, lay: Layout) -> _Fx:
        if node.kind == "Conv":
            kk, s, p = node.attrs["kernel"], node.attrs["stride"], node.attrs["pad"]
        elif "im2col_kernel" in node.attrs:
            kk = node.attrs["im2col_kernel"]
            s = node.attrs.get("im2col_stride", 1)
            p = node.attrs.get("im2col_pad", 0)
        else:
            kk, s, p = 1, 1, 0
        if lay is Layout.NC:
            acc = x.codes @ w.codes
        else:
            cols = _im2col(x.codes, lay, kk, s, p)
            acc = cols @ w.codes
            acc = np.moveaxis(acc, 3, 1) if lay is Layout.NCHW else acc
        if np.any(np.abs(acc) >= _ACC_GUARD):
            raise RuntimeError(f"node {node.name!r}: accumulator exceeds the exact range")
        return _Fx(acc, x.frac + w.frac, True)

    def _apply_thresholds(self, node: Node, x: _Fx, t: np.ndarray, lay: Layout) -> _Fx:
        out_fmt = _node_out_qformat(node, mode_required=True)
        counts = _threshold_counts(_fx_real(x), np.asarray(t), lay, node.name)
        vals = node.attrs["bias"] + node.attrs["scale"] * counts.astype(np.float64)
        return _Fx(quantize_array(vals, out_fmt), out_fmt.frac_bits, out_fmt.signed)

    def _fixed_mul(self, node: Node) -> _Fx:
        x = self._as_fx(node, 0)
        out_fmt = _node_out_qformat(node, mode_required=True)
        other = self.env[node.inputs[1]]
        lay = self._layout(node.inputs[0])
        if isinstance(other, _Fx):
            c = _broadcast_const(other.codes, x.codes.shape, lay) if other.codes.ndim <= 1 else other.codes
            prod = x.codes * c
            return _Fx(_requant_array(prod, x.frac + other.frac, out_fmt), out_fmt.frac_bits, out_fmt.signed)
        # Real-valued scale: the documented requantization rule.
        c = _broadcast_const(np.asarray(other, dtype=np.float64), x.codes.shape, lay)
        real = _fx_real(x) * c
        return _Fx(quantize_array(real, out_fmt), out_fmt.frac_bits, out_fmt.signed)

    def _fixed_add(self, node: Node) -> _Fx:
        x = self._as_fx(node, 0)
        out_fmt = _node_out_qformat(node, mode_required=True)
        other = self.env[node.inputs[1]]
        lay = self._layout(node.inputs[0])
        if isinstance(other, _Fx):
            b_codes = other.codes
            if b_codes.ndim <= 1:
                b_codes = _broadcast_const(b_codes, x.codes.shape, lay)
            # Both operands widen exactly to the wider fractional width (a
            # requantization to the wider format can neither round nor
            # saturate), the sum stays exact, and a single rounding happens
            # at the consumer-format requantize below.
            frac = max(x.frac, other.frac)
            xa = x.codes << (frac - x.frac)
            xb = b_codes << (frac - other.frac)
            return _Fx(_requant_array(xa + xb, frac, out_fmt), out_fmt.frac_bits, out_fmt.signed)
        c = _broadcast_const(np.asarray(other, dtype=np.float64), x.codes.shape, lay)
        real = _fx_real(x) + c
        return _Fx(quantize_array(real, out_fmt), out_fmt.frac_bits, out_fmt.signed)


def _run(g: Graph, inputs: Dict[str, TensorValue], mode: str, want_trace: bool):
    runner = _Runner(g, mode)
    g = runner.g
    runner.bind_inputs(inputs)
    trace = ExecTrace(mode=mode)
    for node in topo_order(g):
        if mode == "float":
            out = runner.run_float_node(node)
        else:
            out = runner.run_fixed_node(node)
        runner.env[node.outputs[0]] = out
        if want_trace:
            arr = out.codes if isinstance(out, _Fx) else out
            trace.entries.append(TraceEntry(node.name, _checksum(arr), int(arr.size)))

    outputs: Dict[str, TensorValue] = {}
    for spec in g.outputs:
        v = runner.env.get(spec.name)
        if v is None:
            raise InputMismatch(f"graph output {spec.name!r} was never computed")
        if mode == "float":
            from dataclasses import replace as _replace

            out_spec = _replace(spec, dtype="float32", qformat=None)
            outputs[spec.name] = TensorValue(out_spec, np.asarray(v, dtype=np.float64))
        else:
            if not isinstance(v, _Fx):
                raise UnquantizedNode(f"graph output {spec.name!r} is not quantized")
            if spec.qformat is None or spec.qformat.frac_bits != v.frac:
                raise ValueError(
                    f"graph output {spec.name!r}: declared {spec.qformat} does not match "
                    f"computed fractional width {v.frac}"
                )
            outputs[spec.name] = TensorValue(spec, v.codes)
    if want_trace:
        return outputs, trace
    return outputs


def run_float(g: Graph, inputs: Dict[str, TensorValue], trace: bool = False):
    """Evaluate in float64.  Fixed-point constants are dequantized exactly."""
    return _run(g, inputs, "float", trace)


def run_fixed(g: Graph, inputs: Dict[str, TensorValue], trace: bool = False):
    """Evaluate bit-exactly on integer codes.  Requires a quantized graph."""
    return _run(g, inputs, "fixed", trace)


def _sample_inputs(g: Graph, rng: np.random.Generator) -> Tuple[Dict[str, TensorValue], Dict[str, TensorValue]]:
    """Random inputs for comparison runs: (float-mode dict, fixed-mode dict).

    When an input is quantized, values are drawn on its representable grid so
    float and fixed mode see the same real numbers; fixed-mode inputs are the
    matching codes.  Float-only inputs are uniform in [-1, 1).
    """
    fl: Dict[str, TensorValue] = {}
    fx: Dict[str, TensorValue] = {}
    for spec in g.inputs:
        if spec.dtype == "fixed" and spec.qformat is not None:
            qf = spec.qformat
            codes = rng.integers(qf.min_code, qf.max_code + 1, size=spec.shape)
            fx[spec.name] = TensorValue(spec, codes.astype(np.int64))
            from dataclasses import replace as _replace

            f_spec = _replace(spec, dtype="float32", qformat=None)
            fl[spec.name] = TensorValue(f_spec, codes.astype(np.float64) * qf.step)
        else:
            data = rng.uniform(-1.0, 1.0, size=spec.shape)
            fl[spec.name] = TensorValue(spec, data)
    return fl, fx


def compare_runs(g1: Graph, g2: Graph, n: int = 16, seed: int = 0) -> EquivalenceReport:
    """Run both graphs on n seeded random inputs and report deviations.

    Float mode always runs; fixed mode runs when every input of both graphs
    is quantized.  Graphs must share input and output names, shapes and
    layouts (dtypes may differ, e.g. float vs quantized builds).
    """
    g1 = infer_shapes(g1) if not g1.value_info else g1
    g2 = infer_shapes(g2) if not g2.value_info else g2

    def io_sig(g: Graph):
        return (
            [(s.name, s.shape, s.layout) for s in g.inputs],
            [(s.name, s.shape, s.layout) for s in g.outputs],
        )

    if io_sig(g1) != io_sig(g2):
        raise SpecMismatch(f"graphs disagree on I/O specs: {io_sig(g1)} vs {io_sig(g2)}")

    fixed_ok = all(s.dtype == "fixed" and s.qformat is not None for s in g1.inputs) and all(
        s.dtype == "fixed" and s.qformat is not None for s in g2.inputs
    )

    max_abs = 0.0
    max_rel = 0.0
    fixed_mismatches = 0
    fixed_trials = 0
    seeds = np.random.SeedSequence(seed).spawn(n)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        fl, fx = _sample_inputs(g1, rng)
        o1 = run_float(g1, fl)
        o2 = run_float(g2, fl)
        for name in o1:
            a, b = o1[name].data, o2[name].data
            diff = np.abs(a - b)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
            max_abs = max(max_abs, float(diff.max(initial=0.0)))
            max_rel = max(max_rel, float((diff / denom).max(initial=0.0)))
        if fixed_ok:
            fixed_trials += 1
            q1 = run_fixed(g1, fx)
            q2 = run_fixed(g2, fx)
            for name in q1:
                fixed_mismatches += int(np.count_nonzero(q1[name].data != q2[name].data))
    return EquivalenceReport(
        trials=n,
        float_max_abs=max_abs,
        float_max_rel=max_rel,
        fixed_trials=fixed_trials,
        fixed_mismatches=fixed_mismatches,
    )
