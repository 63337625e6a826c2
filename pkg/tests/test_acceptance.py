"""Acceptance suite: one test per shipped guarantee.

Each test prints a single ``[PASS]``/``[FAIL]`` verdict line (bypassing
capture) so the suite doubles as a checklist when run with ``pytest -v``.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

import gengraphs
from qdfc.backbone import build_reference_backbone, build_tiny_backbone, make_synthetic_fsl_dataset
from qdfc.cost_model import arch_from_profile, estimate, fits_onchip, load_profile
from qdfc.data_io import (
    BadLabel,
    CIFAR10_RECORD_BYTES,
    Cifar10Record,
    TruncatedFile,
    load_cifar10_batch,
    save_cifar10_batch,
    save_feature_dataset,
    save_model,
    save_tensor,
)
from qdfc.executor import TensorValue, compare_runs, run_fixed, run_float
from qdfc.few_shot import classify_ncm, evaluate
from qdfc.fixed_point import QFormat, quantize_array
from qdfc.graph_ir import GraphBuilder, Layout, TensorSpec
from qdfc.transforms import (
    PASS_REGISTRY,
    QuantConfig,
    convert_reduce_mean_to_gap,
    quantize_graph,
    run_pipeline,
)

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PROFILE = os.path.join(REPO, "profiles", "pynq_z1.json")
CFG = QuantConfig(QFormat.parse("s:1.5"), QFormat.parse("u:2.2"))


def _verdict(capsys, label: str, ok: bool, detail: str = "") -> None:
    tail = f": {detail}" if detail else ""
    with capsys.disabled():
        print(f"[{'PASS' if ok else 'FAIL'}] {label}{tail}", flush=True)
    assert ok, f"{label}{tail}"


def test_transform_equivalence_suite(capsys):
    """Every rewrite preserves behaviour on 100 seeded pattern graphs each."""
    t0 = time.monotonic()
    worst_rel = 0.0
    fixed_bad = 0
    graphs = 0
    for name, gen in gengraphs.PASS_PATTERNS.items():
        pass_fn = PASS_REGISTRY[name].apply
        for seed in range(100):
            g = gen(seed)
            g2, changes = pass_fn(g)
            assert changes >= 1, f"{name} seed {seed}: pattern did not match"
            rep = compare_runs(g, g2, n=2, seed=seed)
            worst_rel = max(worst_rel, rep.float_max_rel)
            fixed_bad += rep.fixed_mismatches
            graphs += 1
    elapsed = time.monotonic() - t0
    ok = fixed_bad == 0 and worst_rel <= 1e-5 and elapsed < 60.0
    _verdict(
        capsys,
        "transform equivalence",
        ok,
        f"{graphs} graphs across {len(gengraphs.PASS_PATTERNS)} passes, "
        f"{fixed_bad} fixed mismatches, max float rel {worst_rel:.2e}, {elapsed:.1f}s",
    )


def test_threshold_unit_equals_quantized_relu(capsys):
    """MultiThreshold reproduces quantize(relu(x)) on every half-step point."""
    formats = [
        QFormat(False, i, t - i)
        for t in range(1, 9)
        for i in range(0, t + 1)
    ]
    assert any(str(f) == "u:2.2" for f in formats)
    mismatches = 0
    points = 0
    for fmt in formats:
        # take the thresholds the quantizer actually constructs
        b = GraphBuilder("g")
        b.input("x", (1, 4), "NC")
        b.node("Relu", ["x"], out="y")
        b.output("y")
        gq = quantize_graph(b.build(), QuantConfig(QFormat.parse("s:1.5"), fmt))
        (mt,) = [n for n in gq.nodes if n.kind == "MultiThreshold"]
        t_data = gq.initializers[mt.inputs[1]].data

        half = fmt.step / 2.0
        k_hi = 2 * (fmt.max_code + 2)
        grid = np.arange(-k_hi, k_hi + 1, dtype=np.float64) * half

        b2 = GraphBuilder("probe")
        b2.input("x", (1, grid.size), "NC")
        b2.init("t", t_data, "NC")
        b2.node("MultiThreshold", ["x", "t"], dict(mt.attrs), out="y")
        b2.output("y")
        probe = b2.build()
        got = run_float(
            probe, {"x": TensorValue(TensorSpec("x", (1, grid.size), Layout.NC), grid.reshape(1, -1))}
        )["y"].data.ravel()
        want = quantize_array(np.maximum(grid, 0.0), fmt) * fmt.step
        mismatches += int(np.sum(got != want))
        points += grid.size
    _verdict(
        capsys,
        "threshold unit vs quantized relu",
        mismatches == 0,
        f"{len(formats)} formats, {points} grid points, {mismatches} mismatches",
    )


def test_reduce_mean_conversion_accuracy(capsys):
    """Pool+scale path tracks the mean in float and matches the fixed rule."""
    rng = np.random.default_rng(31)
    worst_rel = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 9))
        h = int(rng.integers(1, 7))
        w = int(rng.integers(1, 7))
        b = GraphBuilder("g")
        b.input("x", (n, c, h, w), "NCHW")
        b.node("ReduceMean", ["x"], {"axes": [2, 3]}, out="y")
        b.output("y")
        g = b.build()
        g2, changes = convert_reduce_mean_to_gap(g)
        assert changes == 1
        x = TensorValue(TensorSpec("x", (n, c, h, w), Layout.NCHW), rng.normal(size=(n, c, h, w)))
        a = run_float(g, {"x": x})["y"].data
        bb = run_float(g2, {"x": x})["y"].data
        denom = np.maximum(np.abs(a), 1e-12)
        worst_rel = max(worst_rel, float(np.max(np.abs(a - bb) / denom)))

    # fixed mode: both the direct node and the converted pair must implement
    # exact-integer-sum x float32(1/HW) -> requantize, code for code
    act = QFormat.parse("u:2.2")
    out_fmt = QFormat.parse("u:2.2")
    fixed_bad = 0
    for _ in range(200):
        c = int(rng.integers(1, 9))
        h = int(rng.integers(1, 7))
        w = int(rng.integers(1, 7))
        b = GraphBuilder("g")
        b.input("x", (1, c, h, w), "NCHW", "fixed", act)
        b.node("ReduceMean", ["x"], {"axes": [2, 3], "out_qformat": str(out_fmt)}, out="y")
        b.output("y")
        g = b.build()
        g2, _ = convert_reduce_mean_to_gap(g)
        codes = rng.integers(act.min_code, act.max_code + 1, size=(1, c, h, w))
        x = TensorValue(g.inputs[0], codes.astype(np.int64))
        got_direct = run_fixed(g, {"x": x})["y"].data
        got_pair = run_fixed(g2, {"x": x})["y"].data
        sums = codes.reshape(1, c, -1).sum(axis=2, dtype=np.int64)
        reals = sums.astype(np.float64) * act.step * np.float64(np.float32(1.0 / (h * w)))
        want = quantize_array(reals, out_fmt)
        fixed_bad += int(np.sum(got_direct != want)) + int(np.sum(got_pair != want))
    ok = worst_rel <= 1e-6 and fixed_bad == 0
    _verdict(
        capsys,
        "reduce-mean to pool conversion",
        ok,
        f"1000 float tensors max rel {worst_rel:.2e}, 200 fixed tensors {fixed_bad} code mismatches",
    )


def test_fixed_point_round_trip_and_monotonicity(capsys):
    """Every code survives dequantize/quantize; quantize never decreases."""
    formats = []
    for total in range(1, 13):
        for i in range(0, total + 1):
            formats.append(QFormat(False, i, total - i))
        for i in range(1, total + 1):
            formats.append(QFormat(True, i, total - i))
    violations = 0
    for fmt in formats:
        codes = np.arange(fmt.min_code, fmt.max_code + 1, dtype=np.int64)
        reals = codes.astype(np.float64) * fmt.step
        back = quantize_array(reals, fmt)
        violations += int(np.sum(back != codes))
        # monotonicity over a grid three times finer than the code grid,
        # extending one code past each end of the representable range
        fine = np.arange(3 * (fmt.min_code - 1), 3 * (fmt.max_code + 1) + 1, dtype=np.float64)
        grid = fine * (fmt.step / 3.0)
        q = quantize_array(grid, fmt)
        violations += int(np.sum(np.diff(q) < 0))
    _verdict(
        capsys,
        "fixed-point round-trip and monotonicity",
        violations == 0,
        f"{len(formats)} formats exhaustively checked, {violations} violations",
    )


def test_nearest_class_mean_against_scan(capsys):
    """Vectorized classifier agrees with a literal first-minimum scan."""
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(10_000):
        way = int(rng.integers(2, 11))
        dim = int(rng.integers(1, 33))
        protos = rng.normal(size=(way, dim))
        q = rng.normal(size=dim)
        d = ((protos - q) ** 2).sum(axis=1)
        best = 0
        for i in range(1, way):
            if d[i] < d[best]:
                best = i
        if classify_ncm(q, protos) != best:
            mismatches += 1
    _verdict(
        capsys,
        "nearest-class-mean vs brute-force scan",
        mismatches == 0,
        f"10000 instances, {mismatches} label mismatches",
    )


def test_synthetic_few_shot_end_to_end(capsys):
    """Compiled fixed-point pipeline scores 1.0 and never diverges from float."""
    g, _ = run_pipeline(quantize_graph(build_tiny_backbone(), CFG))
    xs, labels = make_synthetic_fsl_dataset()
    fx = evaluate(g, xs, labels, way=5, shot=5, queries_per_class=15, episodes=100, seed=0, mode="fixed")
    fl = evaluate(g, xs, labels, way=5, shot=5, queries_per_class=15, episodes=100, seed=0, mode="float")
    ok = (
        fx.mean_accuracy == 1.0
        and fl.mean_accuracy == 1.0
        and fx.per_episode == fl.per_episode
    )
    _verdict(
        capsys,
        "synthetic few-shot end to end",
        ok,
        f"fixed acc {fx.mean_accuracy:.3f}, float acc {fl.mean_accuracy:.3f}, "
        f"100 episodes, per-episode identical: {fx.per_episode == fl.per_episode}",
    )


def test_compiled_backbone_structure(capsys):
    """Default pipeline leaves no transposes and one accumulate-pool tail."""
    g, _ = run_pipeline(quantize_graph(build_reference_backbone(seed=0), CFG))
    kinds = [n.kind for n in g.nodes]
    transposes = kinds.count("Transpose")
    relus = kinds.count("Relu")
    standalone_mt = kinds.count("MultiThreshold")
    mvaus = kinds.count("MVAU")
    gaps = [n for n in g.nodes if n.kind == "GlobalAccPool"]
    tail_ok = False
    if len(gaps) == 1:
        (gap,) = gaps
        tails = [n for n in g.nodes if gap.outputs[0] in n.inputs]
        tail_ok = len(tails) == 1 and tails[0].kind == "Mul" and tails[0].outputs[0] == "features"
    ok = (
        transposes == 0
        and relus == 0
        and mvaus + standalone_mt >= 8
        and len(gaps) == 1
        and tail_ok
    )
    _verdict(
        capsys,
        "compiled backbone structure",
        ok,
        f"{transposes} transposes, {relus} relus, {mvaus} fused stages, "
        f"{len(gaps)} accumulate pool(s), scale tail: {tail_ok}",
    )


def test_cost_model_orderings(capsys):
    """Streaming wins on latency; widths scale bit counts and unit classes."""
    profile = load_profile(PROFILE)
    streaming = arch_from_profile(profile, "streaming")
    systolic = arch_from_profile(profile, "systolic")

    g6, _ = run_pipeline(quantize_graph(build_reference_backbone(seed=0), CFG))
    cfg16 = QuantConfig(QFormat.parse("s:6.10"), QFormat.parse("u:8.8"))
    g16, _ = run_pipeline(quantize_graph(build_reference_backbone(seed=0), cfg16))

    r6s = estimate(g6, streaming)
    r6y = estimate(g6, systolic)
    r16s = estimate(g16, streaming)

    latency_ok = r6s.latency_s < r6y.latency_s
    ratio_ok = r6s.weight_bits * 16 == r16s.weight_bits * 6
    dsp_ok = r6s.estimated_dsp_like_units < r16s.estimated_dsp_like_units
    fit6, _ = fits_onchip(r6s, streaming)
    fit16, _ = fits_onchip(r16s, streaming)
    fit_ok = fit6 and not fit16
    ok = latency_ok and ratio_ok and dsp_ok and fit_ok
    _verdict(
        capsys,
        "cost model orderings",
        ok,
        f"streaming {r6s.latency_s * 1e3:.2f}ms < systolic {r6y.latency_s * 1e3:.2f}ms, "
        f"bit ratio exact: {ratio_ok}, dsp-like {r6s.estimated_dsp_like_units} < "
        f"{r16s.estimated_dsp_like_units}, on-chip 6-bit fits / 16-bit does not: {fit_ok}",
    )


def test_cifar10_loader_round_trip(capsys, tmp_path):
    """Binary batches survive write-read-write and malformed files are caught."""
    rng = np.random.default_rng(7)
    recs = [
        Cifar10Record(int(rng.integers(0, 10)), rng.integers(0, 256, 3072).astype(np.uint8))
        for _ in range(20)
    ]
    p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    save_cifar10_batch(p1, recs)
    save_cifar10_batch(p2, load_cifar10_batch(p1))
    round_trip_ok = open(p1, "rb").read() == open(p2, "rb").read()

    trunc = str(tmp_path / "t.bin")
    open(trunc, "wb").write(b"\x00" * (CIFAR10_RECORD_BYTES - 1))
    try:
        load_cifar10_batch(trunc)
        trunc_ok = False
    except TruncatedFile:
        trunc_ok = True

    bad = str(tmp_path / "l.bin")
    open(bad, "wb").write(bytes([200]) + b"\x00" * (CIFAR10_RECORD_BYTES - 1))
    try:
        load_cifar10_batch(bad)
        label_ok = False
    except BadLabel:
        label_ok = True

    ok = round_trip_ok and trunc_ok and label_ok
    _verdict(
        capsys,
        "CIFAR-10 loader",
        ok,
        f"round trip bit-exact: {round_trip_ok}, truncation rejected: {trunc_ok}, "
        f"bad label rejected: {label_ok}",
    )


def test_cli_determinism(capsys, tmp_path):
    """Each command run twice with the same inputs produces identical bytes."""

    def run_cli(*argv):
        r = subprocess.run(
            [sys.executable, "-m", "qdfc", *argv], capture_output=True, text=True
        )
        assert r.returncode == 0, r.stderr
        return r.stdout

    model = str(tmp_path / "tiny")
    save_model(build_tiny_backbone(), model + ".json", model + ".bin")
    x = np.random.default_rng(0).uniform(0, 1, size=(1, 4, 4, 8)).astype(np.float32)
    xp = str(tmp_path / "x.bin")
    save_tensor(xp, TensorSpec("image", (1, 4, 4, 8), Layout.NHWC), x)
    xs, labels = make_synthetic_fsl_dataset(seed=1)
    feats = str(tmp_path / "feats")
    os.makedirs(feats)
    save_feature_dataset(feats, xs.reshape(len(xs), -1), labels.astype(np.int32))

    identical = True
    sides = {}
    for rep in ("one", "two"):
        d = str(tmp_path / rep)
        os.makedirs(d)
        out = {}
        cq = os.path.join(d, "q")
        out["compile"] = run_cli("compile", "--graph", model + ".json", "--quant",
                                 "conv=s:1.5,act=u:2.2", "--out", cq)
        out["compile_json"] = open(cq + ".json", "rb").read()
        out["compile_bin"] = open(cq + ".bin", "rb").read()
        yp = os.path.join(d, "y.bin")
        out["run"] = run_cli("run", "--graph", cq + ".json", "--input", xp,
                             "--mode", "fixed", "--out", yp)
        out["run_bin"] = open(yp, "rb").read()
        out["run_json"] = open(yp + ".json", "rb").read()
        out["fsl"] = run_cli("fsl-eval", "--dataset", feats, "--episodes", "20", "--seed", "5")
        out["estimate"] = run_cli("estimate", "--graph", cq + ".json", "--profile",
                                  PROFILE, "--arch", "systolic")
        sides[rep] = out
    for key in sides["one"]:
        if sides["one"][key] != sides["two"][key]:
            identical = False
    _verdict(
        capsys,
        "CLI determinism",
        identical,
        f"compile/run/fsl-eval/estimate each run twice, "
        f"{len(sides['one'])} artifacts compared, all identical: {identical}",
    )
