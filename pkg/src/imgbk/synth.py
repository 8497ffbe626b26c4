"""Stochastic-block-model graphs with controllable homophily and imbalance."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import DatasetBundle, build_graph, split_random
from .seeding import make_rng


@dataclass(frozen=True)
class SbmSpec:
    class_sizes: tuple
    p_in: tuple
    p_out: float
    feature_dim: int
    class_mean_separation: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_sizes", tuple(int(s) for s in self.class_sizes))
        p_in = self.p_in
        if np.isscalar(p_in):
            p_in = [p_in] * len(self.class_sizes)
        object.__setattr__(self, "p_in", tuple(float(p) for p in p_in))
        if len(self.p_in) != len(self.class_sizes):
            raise ValueError("p_in needs one probability per class")
        if any(s < 1 for s in self.class_sizes):
            raise ValueError("class sizes must be >= 1")
        if not all(0.0 <= p <= 1.0 for p in (*self.p_in, self.p_out)):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.feature_dim < len(self.class_sizes):
            raise ValueError("feature_dim must be at least the number of classes")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def n_nodes(self) -> int:
        return sum(self.class_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_sizes"] = list(self.class_sizes)
        d["p_in"] = list(self.p_in)
        return d

    @classmethod
    def from_json(cls, path) -> "SbmSpec":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def _pair_counts(spec: SbmSpec):
    sizes = np.asarray(spec.class_sizes, dtype=np.float64)
    within = sizes * (sizes - 1) / 2
    total = sizes.sum()
    cross = (total * total - (sizes * sizes).sum()) / 2
    return within, cross


def expected_homophily(spec: SbmSpec) -> float:
    """Expected same-label edges over expected edges."""
    within, cross = _pair_counts(spec)
    e_same = float(np.dot(spec.p_in, within))
    e_all = e_same + spec.p_out * cross
    if e_all == 0:
        raise ValueError("spec produces no edges in expectation")
    return e_same / e_all


def _decode_triangular(t: np.ndarray):
    """Map ``t`` in [0, C(n,2)) to pairs ``i < j`` enumerated column by column."""
    j = np.floor((1 + np.sqrt(1 + 8 * t.astype(np.float64))) / 2).astype(np.int64)
    # guard against float rounding at block boundaries
    j = np.where(j * (j - 1) // 2 > t, j - 1, j)
    j = np.where((j + 1) * j // 2 <= t, j + 1, j)
    i = t - j * (j - 1) // 2
    return i, j


def _sample_edges(spec: SbmSpec, rng: np.random.Generator) -> np.ndarray:
    sizes = spec.class_sizes
    starts = np.concatenate([[0], np.cumsum(sizes)])
    chunks = []
    m = len(sizes)
    for a in range(m):
        for b in range(a, m):
            if a == b:
                pairs, p = sizes[a] * (sizes[a] - 1) // 2, spec.p_in[a]
            else:
                pairs, p = sizes[a] * sizes[b], spec.p_out
            if pairs == 0 or p == 0:
                continue
            k = int(rng.binomial(pairs, p))
            if k == 0:
                continue
            pick = rng.choice(pairs, size=k, replace=False).astype(np.int64)
            if a == b:
                i, j = _decode_triangular(pick)
                chunks.append(np.stack([starts[a] + i, starts[a] + j], axis=1))
            else:
                chunks.append(np.stack([starts[a] + pick // sizes[b], starts[b] + pick % sizes[b]], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(chunks)


def sbm_generate(spec: SbmSpec, name: str = "sbm") -> DatasetBundle:
    """Sample a graph, Gaussian class-mean features and a 60/20/20 split."""
    sizes = np.asarray(spec.class_sizes)
    n = int(sizes.sum())
    exp_deg = np.asarray(spec.p_in) * (sizes - 1) + spec.p_out * (n - sizes)
    if np.any(exp_deg == 0):
        warnings.warn(
            f"classes {np.flatnonzero(exp_deg == 0).tolist()} have expected degree 0",
            RuntimeWarning,
            stacklevel=2,
        )
    edges = _sample_edges(spec, make_rng(spec.seed, "sbm.edges"))
    labels = np.repeat(np.arange(len(sizes)), sizes)
    means = np.zeros((len(sizes), spec.feature_dim))
    means[np.arange(len(sizes)), np.arange(len(sizes))] = spec.class_mean_separation
    noise = make_rng(spec.seed, "sbm.features").normal(0.0, spec.noise_std, size=(n, spec.feature_dim))
    features = means[labels] + noise
    graph = build_graph(edges, features, labels, n_classes=len(sizes))
    masks = split_random(graph, (0.6, 0.2, 0.2), seed=spec.seed)
    provenance = "synthetic SBM " + json.dumps(spec.to_dict(), sort_keys=True)
    return DatasetBundle(graph, masks, name, provenance)
