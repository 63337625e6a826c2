"""Command-line front door: compile, run, fsl-eval, estimate.

File-in/file-out only.  Every command is deterministic for identical files,
flags and seeds: reports are canonical JSON, tensor and model payloads are
written by the same serializers the tests use.  Exit code 0 on success, 1 on
any error with a one-line diagnostic on stderr; data goes to files or
stdout, never to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import cost_model, data_io, executor, few_shot, transforms
from .fixed_point import quantize_array
from .graph_ir import Graph, ValidationError


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit(2) on bad usage."""

    def error(self, message: str):
        raise CliError(message)


@dataclass(frozen=True)
class BuildConfig:
    """Resolved compile settings: pass list, optional quantization, outputs."""

    passes: List[str]
    quant: Optional[transforms.QuantConfig]
    manifest_out: str
    blob_out: str
    seed: int = 0


def _default_blob(manifest_path: str) -> str:
    root, ext = os.path.splitext(manifest_path)
    return root + ".bin" if ext == ".json" else manifest_path + ".bin"


def _load_graph(args) -> Graph:
    blob = args.blob if args.blob else _default_blob(args.graph)
    return data_io.load_model(args.graph, blob)


def _positive(name: str):
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}")
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {v}")
        return v

    return parse


def _emit_json(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)


def build_parser() -> _Parser:
    p = _Parser(prog="qdfc", description="Dataflow compiler and fixed-point emulator")
    sub = p.add_subparsers(dest="command", metavar="command")

    c = sub.add_parser("compile", help="transform and quantize a model")
    c.add_argument("--graph", required=True, help="input model manifest (.json)")
    c.add_argument("--blob", default=None, help="input weight blob (default: manifest with .bin)")
    c.add_argument("--passes", default=None,
                   help="comma-separated pass names; empty string = none; omitted = default pipeline")
    c.add_argument("--quant", default=None,
                   help="quantization config: conv=s:1.5,act=u:2.2[,output=...] or a JSON object")
    c.add_argument("--out", required=True, help="output prefix; writes PREFIX.json and PREFIX.bin")

    r = sub.add_parser("run", help="execute a model on one input tensor")
    r.add_argument("--graph", required=True)
    r.add_argument("--blob", default=None)
    r.add_argument("--input", required=True, help="input tensor payload (sidecar at INPUT.json)")
    r.add_argument("--mode", choices=("float", "fixed"), default="float")
    r.add_argument("--out", required=True, help="output tensor path (sidecar at OUT.json)")

    e = sub.add_parser("fsl-eval", help="few-shot episode evaluation")
    e.add_argument("--graph", default=None, help="backbone manifest (unused for feature datasets)")
    e.add_argument("--blob", default=None)
    e.add_argument("--dataset", required=True,
                   help="directory of CIFAR-10 .bin batches, or features.bin + labels.bin")
    e.add_argument("--way", type=_positive("way"), default=5)
    e.add_argument("--shot", type=_positive("shot"), default=5)
    e.add_argument("--queries", type=_positive("queries"), default=15)
    e.add_argument("--episodes", type=_positive("episodes"), default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None, help="also write the JSON report here")

    s = sub.add_parser("estimate", help="analytic cost report for a compiled model")
    s.add_argument("--graph", required=True)
    s.add_argument("--blob", default=None)
    s.add_argument("--profile", required=True, help="device profile JSON")
    s.add_argument("--arch", choices=("streaming", "systolic"), required=True)
    s.add_argument("--out", default=None, help="also write the JSON report here")
    return p


def cmd_compile(args) -> int:
    g = _load_graph(args)
    if args.passes is None:
        passes = list(transforms.DEFAULT_PIPELINE)
    elif args.passes.strip() == "":
        passes = []
    else:
        passes = [name.strip() for name in args.passes.split(",") if name.strip()]
    quant = transforms.QuantConfig.parse_flag(args.quant) if args.quant else None
    cfg = BuildConfig(
        passes=passes,
        quant=quant,
        manifest_out=args.out + ".json",
        blob_out=args.out + ".bin",
    )
    if cfg.quant is not None:
        g = transforms.quantize_graph(g, cfg.quant)
    g, log = transforms.run_pipeline(g, cfg.passes)
    for name, n in log:
        sys.stdout.write(f"{name}: {n} change(s)\n")
    data_io.save_model(g, cfg.manifest_out, cfg.blob_out)
    return 0


def cmd_run(args) -> int:
    g = _load_graph(args)
    if len(g.inputs) != 1 or len(g.outputs) != 1:
        raise CliError("run expects a single-input, single-output model")
    in_spec = g.inputs[0]
    file_spec, data = data_io.load_tensor(args.input)
    if tuple(file_spec.shape) != in_spec.shape:
        raise CliError(f"input tensor {file_spec.shape} does not match graph input {in_spec.shape}")

    if args.mode == "fixed":
        if file_spec.dtype == "fixed":
            if in_spec.qformat is None or file_spec.qformat != in_spec.qformat:
                raise CliError(
                    f"input codes are {file_spec.qformat}, graph input wants {in_spec.qformat}"
                )
            codes = data
        else:
            if in_spec.qformat is None:
                # let the executor produce its UnquantizedNode diagnostic
                codes = data
            else:
                codes = quantize_array(data.astype(np.float64), in_spec.qformat)
        tv = executor.TensorValue(in_spec, codes)
        outputs = executor.run_fixed(g, {in_spec.name: tv})
    else:
        from dataclasses import replace

        if file_spec.dtype == "fixed":
            reals = data.astype(np.float64) * file_spec.qformat.step
        else:
            reals = data.astype(np.float64)
        f_spec = replace(in_spec, dtype="float32", qformat=None)
        outputs = executor.run_float(g, {in_spec.name: executor.TensorValue(f_spec, reals)})

    out = outputs[g.outputs[0].name]
    data_io.save_tensor(args.out, out.spec, out.data)
    return 0


def cmd_fsl_eval(args) -> int:
    if data_io.is_feature_dataset(args.dataset):
        xs, labels = data_io.load_feature_dataset(args.dataset)
        g = None
        mode = "float"
        if args.graph:
            sys.stderr.write("note: dataset is pre-extracted features; --graph is not used\n")
    else:
        if not args.graph:
            raise CliError("--graph is required for image datasets")
        g = _load_graph(args)
        xs, labels = data_io.load_image_dataset(args.dataset)
        mode = "fixed" if g.inputs[0].dtype == "fixed" else "float"

    report = few_shot.evaluate(
        g,
        xs,
        labels,
        way=args.way,
        shot=args.shot,
        queries_per_class=args.queries,
        episodes=args.episodes,
        seed=args.seed,
        mode=mode,
    )
    _emit_json(report.to_dict(), args.out)
    return 0


def cmd_estimate(args) -> int:
    g = _load_graph(args)
    profile = cost_model.load_profile(args.profile)
    arch = cost_model.arch_from_profile(profile, args.arch)
    report = cost_model.estimate(g, arch)
    fits, margin = cost_model.fits_onchip(report, arch)
    payload = report.to_dict()
    payload["fits_onchip"] = fits
    payload["onchip_margin_bits"] = margin
    _emit_json(payload, args.out)
    return 0


_COMMANDS = {
    "compile": cmd_compile,
    "run": cmd_run,
    "fsl-eval": cmd_fsl_eval,
    "estimate": cmd_estimate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise CliError("a command is required (compile, run, fsl-eval, estimate)")
        return _COMMANDS[args.command](args)
    except CliError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except (
        data_io.ManifestError,
        data_io.BlobBounds,
        data_io.TruncatedFile,
        data_io.BadLabel,
        transforms.UnknownPass,
        transforms.ConfigError,
        transforms.NonPositiveScale,
        transforms.UnsupportedLayoutPair,
        transforms.UnsupportedReduction,
        cost_model.UnquantizedGraph,
        cost_model.ProfileError,
        executor.InputMismatch,
        executor.UnquantizedNode,
        executor.UnsortedThresholds,
        few_shot.InsufficientData,
        few_shot.EmptyClass,
        few_shot.DimMismatch,
        ValidationError,
        OSError,
        ValueError,
    ) as e:
        sys.stderr.write(f"{type(e).__name__}: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
