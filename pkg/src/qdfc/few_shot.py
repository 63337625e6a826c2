"""Few-shot episode evaluation with a nearest-class-mean classifier.

The flow mirrors the classic three-stage protocol: a frozen backbone turns
images into feature vectors, per-class prototypes are the means of the
support features, and queries take the label of the nearest prototype.
Features are L2-normalized (zero vectors stay zero).  Episode sampling and
evaluation are driven by numpy's default PCG64 generator seeded explicitly,
so identical seeds give identical episodes and identical reports on any
platform.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .executor import TensorValue, run_fixed, run_float
from .fixed_point import quantize_array
from .graph_ir import Graph, ShapeMismatch, infer_shapes


class EmptyClass(Exception):
    pass


class DimMismatch(Exception):
    pass


class InsufficientData(Exception):
    pass


@dataclass(frozen=True)
class Episode:
    way: int
    shot: int
    queries_per_class: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray

    def __post_init__(self) -> None:
        if self.support_x.shape[0] != self.way * self.shot:
            raise ValueError(
                f"support has {self.support_x.shape[0]} items, expected way*shot = {self.way * self.shot}"
            )
        if self.query_x.shape[0] != self.way * self.queries_per_class:
            raise ValueError(
                f"query has {self.query_x.shape[0]} items, expected "
                f"way*queries = {self.way * self.queries_per_class}"
            )
        for y in (self.support_y, self.query_y):
            if y.size and (y.min() < 0 or y.max() >= self.way):
                raise ValueError(f"class indices must lie in [0, {self.way})")


@dataclass(frozen=True)
class EpisodeResult:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


@dataclass(frozen=True)
class EvalReport:
    way: int
    shot: int
    queries_per_class: int
    episodes: int
    seed: int
    mean_accuracy: float
    ci95: float
    per_episode: Tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "way": self.way,
            "shot": self.shot,
            "queries_per_class": self.queries_per_class,
            "episodes": self.episodes,
            "seed": self.seed,
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
        }


def l2_normalize(features: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; all-zero rows are returned unchanged."""
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=-1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return features / safe


def _with_batch(g: Graph, n: int) -> Graph:
    """Re-specialize a graph's batch dimension; shapes re-infer downstream."""
    if g.inputs[0].shape[0] == n:
        return infer_shapes(g) if not g.value_info else g
    new_inputs = [replace(s, shape=(n,) + s.shape[1:]) for s in g.inputs]
    g2 = replace(g, inputs=new_inputs, outputs=[], value_info={})
    g2 = infer_shapes(g2)
    return replace(g2, outputs=[g2.spec_of(s.name) for s in g.outputs])


def extract_features(g: Graph, images: np.ndarray, mode: str = "float") -> np.ndarray:
    """Run a batch of images through the backbone and L2-normalize the rows.

    The graph must have a single input and a single rank-2 (N, C) output.  In
    fixed mode the real-valued images are first quantized to the input's
    format, execution is bit-exact on codes, and the resulting codes are
    scaled back to reals before normalization.
    """
    if mode not in ("float", "fixed"):
        raise ValueError(f"mode must be 'float' or 'fixed', got {mode!r}")
    images = np.asarray(images)
    if len(g.inputs) != 1 or len(g.outputs) != 1:
        raise ShapeMismatch("feature extraction expects a single-input, single-output graph")
    g = _with_batch(g, images.shape[0])
    in_spec = g.inputs[0]
    out_spec = g.outputs[0]
    if len(out_spec.shape) != 2:
        raise ShapeMismatch(f"backbone output {out_spec.shape} is not a rank-2 feature tensor")
    if images.shape != in_spec.shape:
        raise ShapeMismatch(f"images {images.shape} do not match graph input {in_spec.shape}")

    if mode == "fixed":
        if in_spec.dtype != "fixed" or in_spec.qformat is None:
            raise ValueError("fixed-mode extraction needs a quantized graph input")
        codes = quantize_array(images.astype(np.float64), in_spec.qformat)
        out = run_fixed(g, {in_spec.name: TensorValue(in_spec, codes)})
        tv = out[out_spec.name]
        feats = tv.data.astype(np.float64) * tv.spec.qformat.step
    else:
        f_spec = replace(in_spec, dtype="float32", qformat=None)
        out = run_float(g, {in_spec.name: TensorValue(f_spec, images.astype(np.float64))})
        feats = out[out_spec.name].data
    return l2_normalize(feats)


def build_prototypes(features: np.ndarray, labels: np.ndarray, way: int) -> np.ndarray:
    """Per-class arithmetic means of the support features, shape (way, D)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    protos = np.zeros((way, features.shape[1]), dtype=np.float64)
    for c in range(way):
        mask = labels == c
        if not mask.any():
            raise EmptyClass(f"class {c} has no support examples")
        protos[c] = features[mask].mean(axis=0)
    return protos


def classify_ncm(query: np.ndarray, prototypes: np.ndarray) -> Union[int, np.ndarray]:
    """Nearest prototype by squared Euclidean distance, ties to the lowest
    class index.  Accepts a single (D,) query or a (M, D) batch."""
    query = np.asarray(query, dtype=np.float64)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    single = query.ndim == 1
    q = query[None, :] if single else query
    if q.ndim != 2 or prototypes.ndim != 2 or q.shape[1] != prototypes.shape[1]:
        raise DimMismatch(
            f"query dim {query.shape} does not match prototypes {prototypes.shape}"
        )
    d2 = ((q[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)  # argmin returns the first minimum: lowest index wins ties
    return int(labels[0]) if single else labels


def sample_episode(
    xs: np.ndarray,
    labels: np.ndarray,
    way: int,
    shot: int,
    queries_per_class: int,
    seed,
) -> Episode:
    """Draw a way-class episode without replacement from a labelled pool.

    Classes are chosen among the sorted unique labels, then shot + queries
    items per class; support and query sets are disjoint by construction.
    Labels are remapped to episode-local indices 0..way-1 in draw order.
    """
    xs = np.asarray(xs)
    labels = np.asarray(labels)
    if way < 1 or shot < 1 or queries_per_class < 1:
        raise InsufficientData(
            f"way={way}, shot={shot}, queries_per_class={queries_per_class} must all be >= 1"
        )
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    if classes.size < way:
        raise InsufficientData(f"pool has {classes.size} classes, episode needs {way}")
    picked = rng.choice(classes.size, size=way, replace=False)
    need = shot + queries_per_class
    sup_idx: List[np.ndarray] = []
    qry_idx: List[np.ndarray] = []
    for episode_c, ci in enumerate(picked):
        members = np.flatnonzero(labels == classes[ci])
        if members.size < need:
            raise InsufficientData(
                f"class {classes[ci]} has {members.size} items, episode needs {need}"
            )
        chosen = rng.choice(members, size=need, replace=False)
        sup_idx.append(chosen[:shot])
        qry_idx.append(chosen[shot:])
    sup = np.concatenate(sup_idx)
    qry = np.concatenate(qry_idx)
    sup_y = np.repeat(np.arange(way), shot)
    qry_y = np.repeat(np.arange(way), queries_per_class)
    return Episode(way, shot, queries_per_class, xs[sup], sup_y, xs[qry], qry_y)


def run_episode(features_support: np.ndarray, support_y: np.ndarray,
                features_query: np.ndarray, query_y: np.ndarray, way: int) -> EpisodeResult:
    protos = build_prototypes(features_support, support_y, way)
    predicted = classify_ncm(features_query, protos)
    correct = int(np.count_nonzero(predicted == query_y))
    return EpisodeResult(correct=correct, total=int(query_y.size))


def _thread_count() -> int:
    raw = os.environ.get("QDFC_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = min(8, os.cpu_count() or 1)
    return n


def evaluate(
    g: Optional[Graph],
    xs: np.ndarray,
    labels: np.ndarray,
    way: int = 5,
    shot: int = 5,
    queries_per_class: int = 15,
    episodes: int = 100,
    seed: int = 0,
    mode: str = "float",
) -> EvalReport:
    """Mean episode accuracy with a 1.96 * sigma / sqrt(episodes) half-width.

    With a graph, the pool is mapped through it once up front (feature
    extraction is per-image, so extracting before or after sampling is
    equivalent); with g=None the pool is treated as pre-extracted features
    and only L2-normalized.  Episodes get independent child seeds from one
    SeedSequence, are classified in a worker pool capped by QDFC_THREADS,
    and are aggregated in episode-index order, so the report is independent
    of the parallelism level.
    """
    if g is not None:
        feats = extract_features(g, xs, mode=mode)
    else:
        feats = l2_normalize(np.asarray(xs, dtype=np.float64))
    children = np.random.SeedSequence(seed).spawn(episodes)

    def one(child) -> float:
        ep = sample_episode(feats, labels, way, shot, queries_per_class, child)
        res = run_episode(ep.support_x, ep.support_y, ep.query_x, ep.query_y, way)
        return res.accuracy

    if episodes == 0:
        accs = np.zeros(0, dtype=np.float64)
    else:
        with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
            accs = np.fromiter(pool.map(one, children), dtype=np.float64, count=episodes)
    mean = float(accs.mean()) if episodes else 0.0
    ci = float(1.96 * accs.std(ddof=0) / np.sqrt(episodes)) if episodes else 0.0
    return EvalReport(
        way=way,
        shot=shot,
        queries_per_class=queries_per_class,
        episodes=episodes,
        seed=seed,
        mean_accuracy=mean,
        ci95=ci,
        per_episode=tuple(accs.tolist()),
    )
