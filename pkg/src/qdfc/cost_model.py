"""First-order analytic cost model: streaming (on-chip weights) versus
systolic (DRAM-resident weights) execution of a quantized graph.

The model is deliberately coarse.  Matrix layers dominate, so they are the
only contributors: a layer multiplying a fan-in of F into E output elements
costs mac = E * F multiply-accumulates and runs in ceil(mac / parallelism)
cycles on `parallelism` lanes.

Streaming: every layer holds its weights on chip and the layers form a
pipeline.  Latency of one input is the wavefront traversal,
latency = sum_l cycles_l / clock_hz, which can be read as (max layer
cycles) * effective-depth / clock with effective depth sum(cycles)/max(cycles);
throughput is set by the slowest stage, fps = clock_hz / max_l cycles_l.

Systolic: one shared array of the same lane count, weights fetched from
DRAM every inference, so the compute term is identical and a fetch term
total_weight_bits / 8 / dram_bandwidth is added; with no pipelining across
inputs, fps = 1 / latency.  Streaming is therefore strictly faster whenever
any weights exist, which is the architectural contrast the model exists to
show; absolute numbers are not calibrated to any device.

Multipliers where both operand widths (weight bits, activation bits) reach
dsp_width_threshold are counted DSP-like, narrower ones LUT-like: narrow
formats visibly trade DSP blocks for fabric logic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .graph_ir import Graph, infer_shapes

WEIGHT_KINDS = ("Conv", "MatMul", "MVAU")


class UnquantizedGraph(Exception):
    pass


class ProfileError(Exception):
    pass


@dataclass(frozen=True)
class ArchParams:
    style: str
    clock_hz: float
    parallelism: int
    onchip_weight_bits_capacity: int
    dram_bandwidth_bytes_per_s: Optional[float] = None
    dsp_width_threshold: int = 8

    def __post_init__(self) -> None:
        if self.style not in ("streaming", "systolic"):
            raise ProfileError(f"style must be 'streaming' or 'systolic', got {self.style!r}")
        for name in ("clock_hz", "parallelism", "onchip_weight_bits_capacity", "dsp_width_threshold"):
            if getattr(self, name) <= 0:
                raise ProfileError(f"{name} must be positive")
        if self.style == "systolic":
            if self.dram_bandwidth_bytes_per_s is None or self.dram_bandwidth_bytes_per_s <= 0:
                raise ProfileError("systolic style requires a positive dram_bandwidth_bytes_per_s")
        elif self.dram_bandwidth_bytes_per_s is not None:
            raise ProfileError("streaming style keeps weights on chip; dram bandwidth does not apply")


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    mac_count: int
    weight_bits: int
    cycles: int
    weight_width: int
    act_width: int


@dataclass(frozen=True)
class CostReport:
    style: str
    per_layer: Tuple[LayerCost, ...]
    latency_s: float
    throughput_fps: float
    weight_bits: int
    estimated_dsp_like_units: int
    estimated_lut_like_units: int

    def to_dict(self) -> dict:
        return {
            "style": self.style,
            "per_layer": [
                {
                    "name": l.name,
                    "kind": l.kind,
                    "mac_count": l.mac_count,
                    "weight_bits": l.weight_bits,
                    "cycles": l.cycles,
                }
                for l in self.per_layer
            ],
            "latency_s": self.latency_s,
            "throughput_fps": self.throughput_fps,
            "weight_bits": self.weight_bits,
            "estimated_dsp_like_units": self.estimated_dsp_like_units,
            "estimated_lut_like_units": self.estimated_lut_like_units,
        }


def estimate(g: Graph, arch: ArchParams) -> CostReport:
    """Cost a quantized graph under the documented first-order formulas."""
    g = infer_shapes(g) if not g.value_info else g
    layers: List[LayerCost] = []
    for node in g.nodes:
        if node.kind not in WEIGHT_KINDS:
            continue
        w_init = g.initializers.get(node.inputs[1])
        if w_init is None:
            raise UnquantizedGraph(f"layer {node.name!r} has a non-constant weight tensor")
        if w_init.spec.dtype != "fixed" or w_init.spec.qformat is None:
            raise UnquantizedGraph(f"layer {node.name!r} has unquantized weights")
        in_spec = g.spec_of(node.inputs[0])
        if in_spec.qformat is None:
            raise UnquantizedGraph(f"layer {node.name!r} has an unquantized input tensor")
        fan_in = w_init.spec.shape[0]
        out_elems = 1
        for d in g.spec_of(node.outputs[0]).shape:
            out_elems *= d
        mac = out_elems * fan_in
        w_bits = w_init.spec.size * w_init.spec.qformat.total_bits
        cycles = math.ceil(mac / arch.parallelism)
        layers.append(
            LayerCost(
                name=node.name,
                kind=node.kind,
                mac_count=mac,
                weight_bits=w_bits,
                cycles=cycles,
                weight_width=w_init.spec.qformat.total_bits,
                act_width=in_spec.qformat.total_bits,
            )
        )

    total_bits = sum(l.weight_bits for l in layers)
    total_cycles = sum(l.cycles for l in layers)
    max_cycles = max((l.cycles for l in layers), default=0)

    compute_s = total_cycles / arch.clock_hz
    if arch.style == "streaming":
        latency = compute_s
        fps = arch.clock_hz / max_cycles if max_cycles else 0.0
    else:
        fetch_s = (total_bits / 8) / arch.dram_bandwidth_bytes_per_s
        latency = compute_s + fetch_s
        fps = 1.0 / latency if latency > 0 else 0.0

    dsp = 0
    lut = 0
    for l in layers:
        if l.weight_width >= arch.dsp_width_threshold and l.act_width >= arch.dsp_width_threshold:
            dsp += arch.parallelism
        else:
            lut += arch.parallelism

    return CostReport(
        style=arch.style,
        per_layer=tuple(layers),
        latency_s=latency,
        throughput_fps=fps,
        weight_bits=total_bits,
        estimated_dsp_like_units=dsp,
        estimated_lut_like_units=lut,
    )


def fits_onchip(report: CostReport, arch: ArchParams) -> Tuple[bool, int]:
    """Whether the weights fit in on-chip memory, and by how many bits.

    The boundary is inclusive: weight_bits exactly at capacity fits with
    margin zero.
    """
    margin = arch.onchip_weight_bits_capacity - report.weight_bits
    return margin >= 0, margin


def load_profile(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            profile = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ProfileError(f"cannot read profile {path}: {exc}")
    if not isinstance(profile, dict):
        raise ProfileError(f"profile {path}: root must be an object")
    return profile


def arch_from_profile(profile: dict, style: str) -> ArchParams:
    try:
        return ArchParams(
            style=style,
            clock_hz=float(profile["clock_hz"]),
            parallelism=int(profile["parallelism"]),
            onchip_weight_bits_capacity=int(profile["onchip_weight_bits_capacity"]),
            dram_bandwidth_bytes_per_s=(
                float(profile["dram_bandwidth_bytes_per_s"]) if style == "systolic" else None
            ),
            dsp_width_threshold=int(profile.get("dsp_width_threshold", 8)),
        )
    except KeyError as exc:
        raise ProfileError(f"profile missing field {exc.args[0]!r}")
    except (TypeError, ValueError) as exc:
        raise ProfileError(f"bad profile field: {exc}")
