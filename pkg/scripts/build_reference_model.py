#!/usr/bin/env python3
"""Build the ResNet-9-like reference backbone and save it as a model file.

With --quant the graph is quantized and run through the default pass
pipeline first, which is the configuration the rest of the tooling
(estimate, run --mode fixed) expects.
"""

import argparse
import collections
import sys

from qdfc.backbone import build_reference_backbone
from qdfc.data_io import save_model
from qdfc.transforms import QuantConfig, quantize_graph, run_pipeline


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output prefix; writes PREFIX.json and PREFIX.bin")
    ap.add_argument("--seed", type=int, default=0, help="weight init seed")
    ap.add_argument("--quant", default=None,
                    help='quantize and compile, e.g. "conv=s:1.5,act=u:2.2"')
    args = ap.parse_args(argv)

    g = build_reference_backbone(seed=args.seed)
    if args.quant:
        g = quantize_graph(g, QuantConfig.parse_flag(args.quant))
        g, log = run_pipeline(g)
        for name, n in log:
            print(f"{name}: {n} change(s)")

    save_model(g, args.out + ".json", args.out + ".bin")
    census = collections.Counter(n.kind for n in g.nodes)
    print(f"saved {args.out}.json / {args.out}.bin")
    print("nodes:", ", ".join(f"{k} x{v}" for k, v in sorted(census.items())))
    total = sum(init.spec.size for init in g.initializers.values())
    print(f"parameters: {total}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
