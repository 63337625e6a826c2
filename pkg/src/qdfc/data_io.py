"""Bits on disk: model manifests and weight blobs, tensor files, feature
datasets, CIFAR-10 binary batches, and quantization-config files.

Everything is little-endian and row-major.  The model format is a JSON
manifest (object keys sorted, arrays in declaration order, two-space indent,
trailing newline) plus a raw blob holding initializer payloads back to back:
float32 for real-valued tensors, two's-complement int32 codes for
fixed-point ones.  Canonical serialization means save(load(save(g))) is
byte-identical to save(g).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fixed_point import QFormat
from .graph_ir import (
    NODE_KINDS,
    Graph,
    Initializer,
    Layout,
    Node,
    TensorSpec,
    ValidationError,
    infer_shapes,
    validate,
)
from .transforms import QuantConfig

CIFAR10_RECORD_BYTES = 3073
CIFAR10_PIXEL_BYTES = 3072


class ManifestError(Exception):
    pass


class BlobBounds(Exception):
    pass


class TruncatedFile(Exception):
    pass


class BadLabel(Exception):
    pass


# ---------------------------------------------------------------------------
# model manifest + blob


def _spec_entry(spec: TensorSpec) -> dict:
    e = {
        "name": spec.name,
        "shape": [int(d) for d in spec.shape],
        "layout": spec.layout.value,
        "dtype": spec.dtype,
    }
    if spec.qformat is not None:
        e["qformat"] = str(spec.qformat)
    return e


def _spec_from_entry(e: dict, where: str) -> TensorSpec:
    try:
        name = e["name"]
        shape = tuple(int(d) for d in e["shape"])
        layout = Layout(e["layout"])
        dtype = e["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: bad tensor entry ({exc})")
    qf = None
    if "qformat" in e:
        try:
            qf = QFormat.parse(e["qformat"])
        except ValueError as exc:
            raise ManifestError(f"{where}: {exc}")
    try:
        return TensorSpec(name, shape, layout, dtype, qf)
    except ValueError as exc:
        raise ManifestError(f"{where}: {exc}")


def graph_manifest(g: Graph) -> Tuple[dict, bytes]:
    """Serialize a graph to (manifest dict, weight blob bytes)."""
    inits = []
    blob = bytearray()
    for name, init in g.initializers.items():
        if init.spec.dtype == "fixed":
            payload = init.data.astype("<i4").tobytes()
        else:
            payload = init.data.astype("<f4").tobytes()
        entry = _spec_entry(init.spec)
        entry["blob_offset"] = len(blob)
        entry["blob_len"] = len(payload)
        inits.append(entry)
        blob.extend(payload)
    manifest = {
        "name": g.name,
        "inputs": [_spec_entry(s) for s in g.inputs],
        "outputs": [_spec_entry(s) for s in g.outputs],
        "nodes": [
            {
                "name": n.name,
                "kind": n.kind,
                "inputs": list(n.inputs),
                "outputs": list(n.outputs),
                "attrs": n.attrs,
            }
            for n in g.nodes
        ],
        "initializers": inits,
    }
    return manifest, bytes(blob)


def save_model(g: Graph, manifest_path: str, blob_path: str) -> None:
    manifest, blob = graph_manifest(g)
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write(text)
    with open(blob_path, "wb") as f:
        f.write(blob)


def load_model(manifest_path: str, blob_path: str) -> Graph:
    """Load and validate a model; malformed manifests never drive allocation.

    Raises ManifestError for structural problems in the JSON, BlobBounds for
    offsets or lengths outside the blob file, and ValidationError if the
    reconstructed graph fails validation.
    """
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}")
    try:
        with open(blob_path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise BlobBounds(f"cannot read blob {blob_path}: {exc}")
    return model_from_manifest(manifest, blob)


def model_from_manifest(manifest: dict, blob: bytes) -> Graph:
    if not isinstance(manifest, dict):
        raise ManifestError("manifest root must be an object")
    for key in ("name", "inputs", "outputs", "nodes", "initializers"):
        if key not in manifest:
            raise ManifestError(f"manifest missing field {key!r}")

    inputs = [_spec_from_entry(e, "inputs") for e in manifest["inputs"]]
    outputs = [_spec_from_entry(e, "outputs") for e in manifest["outputs"]]

    nodes: List[Node] = []
    for e in manifest["nodes"]:
        try:
            kind = e["kind"]
            node = Node(e["name"], kind, tuple(e["inputs"]), tuple(e["outputs"]), dict(e.get("attrs", {})))
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"bad node entry ({exc})")
        if kind not in NODE_KINDS:
            raise ManifestError(f"node {node.name!r}: unknown kind {kind!r}")
        nodes.append(node)

    inits: Dict[str, Initializer] = {}
    for e in manifest["initializers"]:
        spec = _spec_from_entry(e, "initializers")
        try:
            offset = int(e["blob_offset"])
            length = int(e["blob_len"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"initializer {spec.name!r}: bad blob reference ({exc})")
        expected = spec.size * 4
        if length != expected:
            raise ManifestError(
                f"initializer {spec.name!r}: blob_len {length} != {expected} for shape {spec.shape}"
            )
        if offset < 0 or length < 0 or offset + length > len(blob):
            raise BlobBounds(
                f"initializer {spec.name!r}: [{offset}, {offset + length}) outside blob of {len(blob)} bytes"
            )
        raw = blob[offset : offset + length]
        if spec.dtype == "fixed":
            data = np.frombuffer(raw, dtype="<i4").astype(np.int64).reshape(spec.shape)
        else:
            data = np.frombuffer(raw, dtype="<f4").reshape(spec.shape).copy()
        try:
            inits[spec.name] = Initializer(spec, data)
        except ValueError as exc:
            raise ManifestError(f"initializer {spec.name!r}: {exc}")

    g = Graph(
        name=manifest["name"],
        inputs=inputs,
        outputs=outputs,
        nodes=nodes,
        initializers=inits,
    )
    g = infer_shapes(g)
    diags = validate(g)
    if diags:
        raise ValidationError(diags)
    return g


# ---------------------------------------------------------------------------
# tensor files


def save_tensor(path: str, spec: TensorSpec, data: np.ndarray) -> None:
    """Write a tensor payload at ``path`` and its JSON sidecar at
    ``path + ".json"``: float32 payload for real tensors, int32 codes for
    fixed-point ones."""
    arr = np.asarray(data)
    if spec.dtype == "fixed":
        payload = arr.astype("<i4").tobytes()
    else:
        payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(payload)
    with open(path + ".json", "w", encoding="utf-8") as f:
        f.write(json.dumps(_spec_entry(spec), indent=2, sort_keys=True) + "\n")


def load_tensor(path: str) -> Tuple[TensorSpec, np.ndarray]:
    try:
        with open(path + ".json", "r", encoding="utf-8") as f:
            entry = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read tensor sidecar {path}.json: {exc}")
    spec = _spec_from_entry(entry, "tensor")
    with open(path, "rb") as f:
        raw = f.read()
    expected = spec.size * 4
    if len(raw) != expected:
        raise TruncatedFile(f"tensor {path}: {len(raw)} bytes, expected {expected}")
    if spec.dtype == "fixed":
        data = np.frombuffer(raw, dtype="<i4").astype(np.int64).reshape(spec.shape)
    else:
        data = np.frombuffer(raw, dtype="<f4").reshape(spec.shape).copy()
    return spec, data


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches


@dataclass(frozen=True)
class Cifar10Record:
    """One record of a CIFAR-10 binary batch: a label byte followed by 3072
    pixel bytes (1024 red, 1024 green, 1024 blue, each plane row-major)."""

    label: int
    pixels: bytes

    def __post_init__(self) -> None:
        if not 0 <= self.label <= 9:
            raise BadLabel(f"label {self.label} out of range 0..9")
        if len(self.pixels) != CIFAR10_PIXEL_BYTES:
            raise ValueError(f"expected {CIFAR10_PIXEL_BYTES} pixel bytes, got {len(self.pixels)}")


def load_cifar10_batch(path: str) -> List[Cifar10Record]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % CIFAR10_RECORD_BYTES != 0:
        raise TruncatedFile(
            f"{path}: {len(raw)} bytes is not a multiple of {CIFAR10_RECORD_BYTES}"
        )
    records = []
    for i in range(0, len(raw), CIFAR10_RECORD_BYTES):
        label = raw[i]
        if label > 9:
            raise BadLabel(f"{path}: record {i // CIFAR10_RECORD_BYTES} has label {label}")
        records.append(Cifar10Record(label, raw[i + 1 : i + CIFAR10_RECORD_BYTES]))
    return records


def save_cifar10_batch(path: str, records: Sequence[Cifar10Record]) -> None:
    with open(path, "wb") as f:
        for rec in records:
            f.write(bytes([rec.label]))
            f.write(rec.pixels)


def record_to_tensor(rec: Cifar10Record) -> np.ndarray:
    """(1, 32, 32, 3) NHWC float32 with values pixel/255 in [0, 1]."""
    planes = np.frombuffer(rec.pixels, dtype=np.uint8).reshape(3, 32, 32)
    img = np.transpose(planes, (1, 2, 0)).astype(np.float32) / np.float32(255.0)
    return img[None, :, :, :]


# ---------------------------------------------------------------------------
# feature datasets


def save_feature_dataset(dir_path: str, features: np.ndarray, labels: np.ndarray) -> None:
    """Write ``features.bin`` (float32, N x D row-major) and ``labels.bin``
    (int32, N) into a directory."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.ndim != 2 or labels.ndim != 1 or features.shape[0] != labels.shape[0]:
        raise ValueError(f"features {features.shape} and labels {labels.shape} do not pair up")
    os.makedirs(dir_path, exist_ok=True)
    with open(os.path.join(dir_path, "features.bin"), "wb") as f:
        f.write(features.astype("<f4").tobytes())
    with open(os.path.join(dir_path, "labels.bin"), "wb") as f:
        f.write(labels.astype("<i4").tobytes())


def load_feature_dataset(dir_path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read a features.bin/labels.bin pair; the feature dimension is inferred
    from the two file sizes."""
    feat_path = os.path.join(dir_path, "features.bin")
    label_path = os.path.join(dir_path, "labels.bin")
    with open(label_path, "rb") as f:
        raw_labels = f.read()
    if len(raw_labels) % 4 != 0:
        raise TruncatedFile(f"{label_path}: size {len(raw_labels)} is not a multiple of 4")
    labels = np.frombuffer(raw_labels, dtype="<i4").astype(np.int64)
    n = labels.shape[0]
    with open(feat_path, "rb") as f:
        raw_feats = f.read()
    if n == 0:
        if raw_feats:
            raise TruncatedFile(f"{feat_path}: nonempty features with empty labels")
        return np.zeros((0, 0), dtype=np.float32), labels
    if len(raw_feats) % (4 * n) != 0:
        raise TruncatedFile(
            f"{feat_path}: size {len(raw_feats)} does not divide into {n} rows of float32"
        )
    d = len(raw_feats) // (4 * n)
    features = np.frombuffer(raw_feats, dtype="<f4").reshape(n, d).copy()
    return features, labels


def is_feature_dataset(dir_path: str) -> bool:
    return os.path.isfile(os.path.join(dir_path, "features.bin")) and os.path.isfile(
        os.path.join(dir_path, "labels.bin")
    )


def load_image_dataset(dir_path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Load every CIFAR-10 ``*.bin`` batch in a directory (sorted by name)
    into (images NHWC float32 in [0,1], labels int64)."""
    batch_files = sorted(
        os.path.join(dir_path, f)
        for f in os.listdir(dir_path)
        if f.endswith(".bin") and f not in ("features.bin", "labels.bin")
    )
    if not batch_files:
        raise TruncatedFile(f"{dir_path}: no .bin batch files found")
    images = []
    labels = []
    for path in batch_files:
        for rec in load_cifar10_batch(path):
            images.append(record_to_tensor(rec)[0])
            labels.append(rec.label)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# quantization config files


def load_quant_config(path: str) -> QuantConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read quant config {path}: {exc}")
    return QuantConfig.from_dict(d)
