"""Serialization round-trips and rejection of malformed files."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdfc.backbone import build_reference_backbone, build_tiny_backbone
from qdfc.data_io import (
    CIFAR10_RECORD_BYTES,
    BadLabel,
    BlobBounds,
    Cifar10Record,
    ManifestError,
    TruncatedFile,
    graph_manifest,
    is_feature_dataset,
    load_cifar10_batch,
    load_feature_dataset,
    load_model,
    load_quant_config,
    load_tensor,
    model_from_manifest,
    save_cifar10_batch,
    save_feature_dataset,
    save_model,
    save_tensor,
)
from qdfc.fixed_point import QFormat
from qdfc.graph_ir import CycleError, Layout, ShapeMismatch, TensorSpec, ValidationError, same_graph
from qdfc.transforms import QuantConfig, quantize_graph, run_pipeline

CFG = QuantConfig(QFormat.parse("s:1.5"), QFormat.parse("u:2.2"))


@pytest.fixture()
def compiled_tiny():
    g, _ = run_pipeline(quantize_graph(build_tiny_backbone(), CFG))
    return g


class TestModelRoundTrip:
    def test_graph_survives(self, tmp_path, compiled_tiny):
        m = str(tmp_path / "m.json")
        b = str(tmp_path / "m.bin")
        save_model(compiled_tiny, m, b)
        g2 = load_model(m, b)
        assert same_graph(compiled_tiny, g2)

    def test_save_load_save_byte_identical(self, tmp_path, compiled_tiny):
        m1, b1 = str(tmp_path / "a.json"), str(tmp_path / "a.bin")
        m2, b2 = str(tmp_path / "b.json"), str(tmp_path / "b.bin")
        save_model(compiled_tiny, m1, b1)
        save_model(load_model(m1, b1), m2, b2)
        assert open(m1, "rb").read() == open(m2, "rb").read()
        assert open(b1, "rb").read() == open(b2, "rb").read()

    def test_float_graph_round_trip(self, tmp_path):
        g = build_reference_backbone(seed=1)
        m, b = str(tmp_path / "r.json"), str(tmp_path / "r.bin")
        save_model(g, m, b)
        assert same_graph(g, load_model(m, b))

    def test_manifest_is_sorted_json(self, tmp_path, compiled_tiny):
        manifest, _ = graph_manifest(compiled_tiny)
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        m, b = str(tmp_path / "m.json"), str(tmp_path / "m.bin")
        save_model(compiled_tiny, m, b)
        assert open(m).read() == text


class TestModelRejection:
    def make_saved(self, tmp_path, g):
        m, b = str(tmp_path / "m.json"), str(tmp_path / "m.bin")
        save_model(g, m, b)
        return m, b

    def test_blob_bounds(self, tmp_path, compiled_tiny):
        m, b = self.make_saved(tmp_path, compiled_tiny)
        manifest = json.load(open(m))
        manifest["initializers"][0]["blob_offset"] = 10**9
        json.dump(manifest, open(m, "w"))
        with pytest.raises(BlobBounds):
            load_model(m, b)

    def test_wrong_blob_len(self, tmp_path, compiled_tiny):
        m, b = self.make_saved(tmp_path, compiled_tiny)
        manifest = json.load(open(m))
        manifest["initializers"][0]["blob_len"] += 4
        json.dump(manifest, open(m, "w"))
        with pytest.raises((ManifestError, BlobBounds)):
            load_model(m, b)

    def test_unknown_node_kind(self, tmp_path, compiled_tiny):
        m, b = self.make_saved(tmp_path, compiled_tiny)
        manifest = json.load(open(m))
        manifest["nodes"][0]["kind"] = "Softmax"
        json.dump(manifest, open(m, "w"))
        with pytest.raises(ManifestError):
            load_model(m, b)

    def test_missing_section(self, tmp_path, compiled_tiny):
        m, b = self.make_saved(tmp_path, compiled_tiny)
        manifest = json.load(open(m))
        del manifest["nodes"]
        json.dump(manifest, open(m, "w"))
        with pytest.raises(ManifestError):
            load_model(m, b)

    def test_not_json(self, tmp_path, compiled_tiny):
        m, b = self.make_saved(tmp_path, compiled_tiny)
        open(m, "w").write("not json{")
        with pytest.raises(ManifestError):
            load_model(m, b)

    def test_inconsistent_graph_rejected(self, tmp_path, compiled_tiny):
        m, b = self.make_saved(tmp_path, compiled_tiny)
        manifest = json.load(open(m))
        manifest["nodes"][0]["inputs"][0] = "ghost"
        json.dump(manifest, open(m, "w"))
        with pytest.raises((ManifestError, ValidationError, ShapeMismatch)):
            load_model(m, b)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**9))
    def test_field_fuzz_never_crashes_uncontrolled(self, seed):
        g, _ = run_pipeline(quantize_graph(build_tiny_backbone(), CFG))
        manifest, blob = graph_manifest(g)
        rng = np.random.default_rng(seed)
        text = json.dumps(manifest)
        # flip one character somewhere in the serialized form
        i = int(rng.integers(0, len(text)))
        mutated = text[:i] + chr(int(rng.integers(32, 127))) + text[i + 1 :]
        try:
            parsed = json.loads(mutated)
        except json.JSONDecodeError:
            return
        try:
            model_from_manifest(parsed, blob)
        except (
            ManifestError,
            BlobBounds,
            ValidationError,
            ShapeMismatch,
            CycleError,
            ValueError,
            KeyError,
            TypeError,
        ):
            pass


class TestTensorFiles:
    def test_round_trip(self, tmp_path):
        spec = TensorSpec("t", (2, 3), Layout.NC, "fixed", QFormat.parse("s:4.4"))
        data = np.asarray([[1, -2, 3], [4, 5, -6]], dtype=np.int64)
        p = str(tmp_path / "t.bin")
        save_tensor(p, spec, data)
        spec2, data2 = load_tensor(p)
        assert spec2 == spec
        np.testing.assert_array_equal(data2, data)

    def test_float_round_trip(self, tmp_path):
        spec = TensorSpec("t", (4,), Layout.N)
        data = np.asarray([0.5, -1.25, 3.0, 0.0], dtype=np.float32)
        p = str(tmp_path / "t.bin")
        save_tensor(p, spec, data)
        spec2, data2 = load_tensor(p)
        assert spec2.shape == (4,)
        np.testing.assert_array_equal(data2, data)

    def test_truncated_payload(self, tmp_path):
        spec = TensorSpec("t", (4,), Layout.N)
        p = str(tmp_path / "t.bin")
        save_tensor(p, spec, np.zeros(4, dtype=np.float32))
        open(p, "wb").write(b"\x00" * 7)
        with pytest.raises(TruncatedFile):
            load_tensor(p)


class TestCifar10:
    def test_round_trip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        recs = [
            Cifar10Record(int(rng.integers(0, 10)), rng.integers(0, 256, 3072).astype(np.uint8))
            for _ in range(5)
        ]
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        save_cifar10_batch(p1, recs)
        save_cifar10_batch(p2, load_cifar10_batch(p1))
        assert open(p1, "rb").read() == open(p2, "rb").read()
        assert len(open(p1, "rb").read()) == 5 * CIFAR10_RECORD_BYTES

    def test_truncated_rejected(self, tmp_path):
        p = str(tmp_path / "bad.bin")
        open(p, "wb").write(b"\x00" * (CIFAR10_RECORD_BYTES + 17))
        with pytest.raises(TruncatedFile):
            load_cifar10_batch(p)

    def test_bad_label_rejected(self, tmp_path):
        p = str(tmp_path / "bad.bin")
        open(p, "wb").write(bytes([11]) + b"\x00" * (CIFAR10_RECORD_BYTES - 1))
        with pytest.raises(BadLabel):
            load_cifar10_batch(p)

    def test_record_validation(self):
        with pytest.raises(BadLabel):
            Cifar10Record(10, np.zeros(3072, dtype=np.uint8))
        with pytest.raises(ValueError):
            Cifar10Record(0, np.zeros(100, dtype=np.uint8))

    def test_record_to_tensor_plane_order(self, tmp_path):
        from qdfc.data_io import record_to_tensor

        # one bright pixel per plane at distinct positions
        pixels = np.zeros(3072, dtype=np.uint8)
        pixels[0] = 255            # R plane, row 0, col 0
        pixels[1024 + 33] = 128    # G plane, row 1, col 1
        pixels[2048 + 66] = 64     # B plane, row 2, col 2
        x = record_to_tensor(Cifar10Record(3, pixels))
        assert x.shape == (1, 32, 32, 3)
        assert x[0, 0, 0, 0] == np.float32(1.0)
        assert x[0, 1, 1, 1] == np.float32(128 / 255)
        assert x[0, 2, 2, 2] == np.float32(64 / 255)
        assert float(x.sum()) == pytest.approx(1.0 + 128 / 255 + 64 / 255)


class TestFeatureDataset:
    def test_round_trip(self, tmp_path):
        feats = np.arange(12, dtype=np.float32).reshape(3, 4)
        labels = np.asarray([0, 1, 0], dtype=np.int32)
        d = str(tmp_path)
        save_feature_dataset(d, feats, labels)
        f2, l2 = load_feature_dataset(d)
        np.testing.assert_array_equal(f2, feats)
        np.testing.assert_array_equal(l2, labels)
        assert is_feature_dataset(d)

    def test_dim_inference_requires_divisibility(self, tmp_path):
        d = str(tmp_path)
        feats = np.zeros((3, 4), dtype=np.float32)
        labels = np.asarray([0, 1, 2], dtype=np.int32)
        save_feature_dataset(d, feats, labels)
        with open(str(tmp_path / "features.bin"), "ab") as fh:
            fh.write(struct.pack("<f", 0.0))
        with pytest.raises(TruncatedFile):
            load_feature_dataset(d)

    def test_not_a_feature_dir(self, tmp_path):
        assert not is_feature_dataset(str(tmp_path))


class TestQuantConfigFile:
    def test_load(self, tmp_path):
        p = str(tmp_path / "q.json")
        json.dump({"conv": "s:1.5", "act": "u:2.2"}, open(p, "w"))
        cfg = load_quant_config(p)
        assert cfg.conv_weight_fmt == QFormat.parse("s:1.5")
        assert cfg.act_fmt == QFormat.parse("u:2.2")
