#!/usr/bin/env python3
"""Compare streaming and systolic execution estimates across weight widths.

Compiles the reference backbone at a narrow and a wide quantization, then
prints latency, throughput, weight storage, and unit-class estimates for
both architecture styles under one device profile.
"""

import argparse
import os
import sys

from qdfc.backbone import build_reference_backbone
from qdfc.cost_model import arch_from_profile, estimate, fits_onchip, load_profile
from qdfc.transforms import QuantConfig, quantize_graph, run_pipeline

DEFAULT_PROFILE = os.path.join(os.path.dirname(__file__), "..", "profiles", "pynq_z1.json")


def compile_at(quant: str, seed: int):
    g = quantize_graph(build_reference_backbone(seed=seed), QuantConfig.parse_flag(quant))
    g, _ = run_pipeline(g)
    return g


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", default=DEFAULT_PROFILE)
    ap.add_argument("--narrow", default="conv=s:1.5,act=u:2.2")
    ap.add_argument("--wide", default="conv=s:6.10,act=u:8.8")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    profile = load_profile(args.profile)
    print(f"profile: {profile.get('name', args.profile)}")
    header = f"{'build':<28}{'style':<11}{'latency':>10}{'fps':>9}{'Mbit':>8}{'dsp':>6}{'lut':>6}  fits"
    print(header)
    print("-" * len(header))
    for label, quant in (("narrow " + args.narrow, args.narrow), ("wide " + args.wide, args.wide)):
        g = compile_at(quant, args.seed)
        for style in ("streaming", "systolic"):
            arch = arch_from_profile(profile, style)
            rep = estimate(g, arch)
            fits, margin = fits_onchip(rep, arch)
            print(
                f"{label:<28}{style:<11}"
                f"{rep.latency_s * 1e3:>8.2f}ms"
                f"{rep.throughput_fps:>9.1f}"
                f"{rep.weight_bits / 1e6:>8.2f}"
                f"{rep.estimated_dsp_like_units:>6}"
                f"{rep.estimated_lut_like_units:>6}"
                f"  {'yes' if fits else 'NO':<3} ({margin:+d} bits)"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
