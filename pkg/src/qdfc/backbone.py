"""Reference feature-extractor graphs.

``build_reference_backbone`` is the full-size model used for compilation,
cost estimation and the structural checks: an eight-conv residual network
from 32x32x3 images to a 128-dim feature vector, exported the way a
training-framework export looks (channel-last input, an immediate transpose
to channel-first, leftover affine folding constants between the stem conv
and its activation).

``build_tiny_backbone`` is a one-conv miniature with hand-picked exact
weights, small enough that end-to-end fixed-vs-float behaviour can be
reasoned about channel by channel.  ``make_synthetic_fsl_dataset`` fabricates
a matching labelled image set whose classes are separated by which channel
carries signal.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .graph_ir import Graph, GraphBuilder

REFERENCE_INPUT_SHAPE = (1, 32, 32, 3)
REFERENCE_FEATURE_DIM = 128

TINY_INPUT_SHAPE = (1, 4, 4, 8)
TINY_FEATURE_DIM = 8


def _conv_weight(rng: np.random.Generator, k: int, cin: int, cout: int) -> np.ndarray:
    """He-style float weights in the flattened (k*k*cin, cout) layout."""
    fan_in = k * k * cin
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, cout))
    return np.clip(w, -1.9, 1.9).astype(np.float32)


def build_reference_backbone(seed: int = 0, batch: int = 1) -> Graph:
    """Eight-conv residual backbone: 32x32x3 -> 128-dim features.

    Structure: stem conv (3->64, with a leftover scalar Mul and per-channel
    Add before the ReLU), conv+pool to 16x16, a two-conv residual block at 64
    channels, conv+pool to 8x8 at 128 channels, a second residual block,
    conv+pool to 4x4, then a spatial ReduceMean.  628,416 weights in total.
    Weights are drawn from a seeded generator, so the graph is reproducible.
    """
    rng = np.random.default_rng(seed)
    b = GraphBuilder("reference_backbone")

    img = b.input("image", (batch,) + REFERENCE_INPUT_SHAPE[1:], "NHWC")
    x = b.node("Transpose", [img], {"perm": [0, 3, 1, 2]}, out="image_nchw", name="to_nchw")

    def conv(x: str, tag: str, cin: int, cout: int) -> str:
        w = b.init(f"{tag}_w", _conv_weight(rng, 3, cin, cout), "NC")
        return b.node("Conv", [x, w], {"kernel": 3, "stride": 1, "pad": 1},
                      out=f"{tag}_out", name=tag)

    def relu(x: str, tag: str) -> str:
        return b.node("Relu", [x], out=f"{tag}_out", name=tag)

    def pool(x: str, tag: str) -> str:
        return b.node("MaxPool", [x], {"kernel": 2, "stride": 2}, out=f"{tag}_out", name=tag)

    # stem with export-leftover affine constants
    x = conv(x, "stem", 3, 64)
    scale = b.init("stem_scale", np.asarray([1.25], dtype=np.float32), "N")
    shift = b.init("stem_shift", rng.normal(0.0, 0.1, size=64).astype(np.float32), "N")
    x = b.node("Mul", [x, scale], out="stem_scaled", name="stem_mul")
    x = b.node("Add", [x, shift], out="stem_shifted", name="stem_add")
    x = relu(x, "stem_relu")

    x = conv(x, "conv1", 64, 64)
    x = relu(x, "relu1")
    x = pool(x, "pool1")

    skip = x
    x = relu(conv(x, "res1_conv1", 64, 64), "res1_relu1")
    x = relu(conv(x, "res1_conv2", 64, 64), "res1_relu2")
    x = b.node("Add", [skip, x], out="res1_out", name="res1_add")

    x = conv(x, "conv2", 64, 128)
    x = relu(x, "relu2")
    x = pool(x, "pool2")

    skip = x
    x = relu(conv(x, "res2_conv1", 128, 128), "res2_relu1")
    x = relu(conv(x, "res2_conv2", 128, 128), "res2_relu2")
    x = b.node("Add", [skip, x], out="res2_out", name="res2_add")

    x = conv(x, "conv3", 128, 128)
    x = relu(x, "relu3")
    x = pool(x, "pool3")

    b.node("ReduceMean", [x], {"axes": [2, 3]}, out="features", name="gap_mean")
    b.output("features")
    return b.build()


def build_tiny_backbone(batch: int = 1) -> Graph:
    """One-conv miniature: 4x4x8 -> 8-dim features.

    The conv is a 1x1 with weights 0.5 * identity, which is representable
    exactly in every weight format down to 2 fractional bits, so fixed and
    float execution can be compared value by value.
    """
    b = GraphBuilder("tiny_backbone")
    img = b.input("image", (batch,) + TINY_INPUT_SHAPE[1:], "NHWC")
    x = b.node("Transpose", [img], {"perm": [0, 3, 1, 2]}, out="image_nchw", name="to_nchw")
    w = b.init("mix_w", (0.5 * np.eye(TINY_FEATURE_DIM)).astype(np.float32), "NC")
    x = b.node("Conv", [x, w], {"kernel": 1, "stride": 1, "pad": 0}, out="mix_out", name="mix")
    x = b.node("Relu", [x], out="act_out", name="act")
    b.node("ReduceMean", [x], {"axes": [2, 3]}, out="features", name="gap_mean")
    b.output("features")
    return b.build()


def make_synthetic_fsl_dataset(
    n_classes: int = 5,
    per_class: int = 30,
    seed: int = 7,
) -> Tuple[np.ndarray, np.ndarray]:
    """Labelled 4x4x8 images for the tiny backbone, one signal channel per
    class.

    Class c paints channel c solid 1.0; a small amount of noise sets up to
    four pixels of one other channel to 0.25.  Both levels sit on the
    quarter grid, so a 2-fractional-bit unsigned input format loses nothing,
    and the per-channel feature margin (0.5 signal vs at most 0.0625 noise
    after the mean) keeps nearest-class-mean decisions identical between
    fixed and float execution.

    Returns (images, labels): float32 (N, 4, 4, 8) NHWC and int64 (N,).
    """
    if n_classes > TINY_FEATURE_DIM:
        raise ValueError(f"at most {TINY_FEATURE_DIM} classes, got {n_classes}")
    rng = np.random.default_rng(seed)
    n = n_classes * per_class
    images = np.zeros((n, 4, 4, 8), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    i = 0
    for c in range(n_classes):
        for _ in range(per_class):
            img = np.zeros((4, 4, 8), dtype=np.float32)
            img[:, :, c] = 1.0
            other = int(rng.integers(0, TINY_FEATURE_DIM))
            if other != c:
                k = int(rng.integers(1, 5))
                flat = rng.choice(16, size=k, replace=False)
                img[flat // 4, flat % 4, other] = 0.25
            images[i] = img
            labels[i] = c
            i += 1
    return images, labels
