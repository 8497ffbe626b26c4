"""Graph data model, GraphText on-disk format and split generation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DatasetError
from .seeding import make_rng

log = logging.getLogger(__name__)

MASK_NAMES = ("train", "val", "test", "none")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph in CSR form.

    Each undirected edge is stored twice in ``csr_neighbors`` (once per
    direction). Rows are sorted ascending, carry no self-loops and no
    duplicates.
    """

    n_nodes: int
    n_edges: int
    csr_offsets: np.ndarray
    csr_neighbors: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_edge_directions(self) -> int:
        return int(self.csr_neighbors.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    @property
    def edge_sources(self) -> np.ndarray:
        """Row (source) node of every CSR slot, aligned with ``csr_neighbors``."""
        return np.repeat(np.arange(self.n_nodes), self.degrees)

    def neighbors(self, i: int) -> np.ndarray:
        return self.csr_neighbors[self.csr_offsets[i] : self.csr_offsets[i + 1]]

    def undirected_edges(self) -> np.ndarray:
        """``(n_edges, 2)`` array of canonical ``u < v`` pairs, lexicographically sorted."""
        src = self.edge_sources
        keep = src < self.csr_neighbors
        return np.stack([src[keep], self.csr_neighbors[keep]], axis=1)

    def reverse_slots(self) -> np.ndarray:
        """Index of the opposite direction for every CSR slot."""
        src = self.edge_sources
        dst = self.csr_neighbors
        key = src * self.n_nodes + dst
        rkey = dst * self.n_nodes + src
        # key is globally sorted because rows are sorted and stored in order
        return np.searchsorted(key, rkey)

    def validate(self) -> None:
        """Full scan of the structural invariants; raises DatasetError."""
        n = self.n_nodes
        off, nb = self.csr_offsets, self.csr_neighbors
        if off.shape != (n + 1,) or off[0] != 0 or off[-1] != nb.shape[0]:
            raise DatasetError("csr_offsets inconsistent with csr_neighbors")
        if np.any(np.diff(off) < 0):
            raise DatasetError("csr_offsets must be nondecreasing")
        if nb.shape[0] != 2 * self.n_edges:
            raise DatasetError("csr_neighbors must hold every edge in both directions")
        if nb.size and (nb.min() < 0 or nb.max() >= n):
            raise DatasetError("neighbor id out of range")
        src = self.edge_sources
        if np.any(src == nb):
            raise DatasetError("self-loop in adjacency")
        key = src * n + nb
        if np.any(np.diff(key) <= 0):
            raise DatasetError("neighbor rows must be strictly ascending")
        rkey = np.sort(nb * n + src)
        if not np.array_equal(key, rkey):
            raise DatasetError("adjacency is not symmetric")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError("features must be an n_nodes x d matrix")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain non-finite values")
        if self.labels.shape != (n,):
            raise DatasetError("labels must have one entry per node")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DatasetError("label out of range")
        missing = np.flatnonzero(np.bincount(self.labels, minlength=self.n_classes) == 0)
        if missing.size:
            raise DatasetError(f"classes with no nodes: {missing.tolist()}")

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n_nodes == other.n_nodes
            and self.n_edges == other.n_edges
            and self.n_classes == other.n_classes
            and np.array_equal(self.csr_offsets, other.csr_offsets)
            and np.array_equal(self.csr_neighbors, other.csr_neighbors)
            and self.features.dtype == other.features.dtype
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=bool)))
        if not (self.train.shape == self.val.shape == self.test.shape):
            raise DatasetError("masks must share one shape")
        overlap = (self.train & self.val) | (self.train & self.test) | (self.val & self.test)
        if overlap.any():
            raise DatasetError("masks must be pairwise disjoint")

    @property
    def n_nodes(self) -> int:
        return int(self.train.shape[0])

    def names(self) -> list:
        """Per-node mask name, one of MASK_NAMES."""
        out = np.full(self.n_nodes, "none", dtype=object)
        out[self.train] = "train"
        out[self.val] = "val"
        out[self.test] = "test"
        return out.tolist()

    def __eq__(self, other):
        if not isinstance(other, SplitMasks):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("train", "val", "test")
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    graph: Graph
    masks: Optional[SplitMasks]
    name: str
    provenance: str = ""

    def __post_init__(self):
        if self.masks is not None and self.masks.n_nodes != self.graph.n_nodes:
            raise DatasetError("masks are not sized to the graph")

    def with_masks(self, masks: SplitMasks) -> "DatasetBundle":
        return DatasetBundle(self.graph, masks, self.name, self.provenance)

    def __eq__(self, other):
        if not isinstance(other, DatasetBundle):
            return NotImplemented
        return (
            self.name == other.name
            and self.provenance == other.provenance
            and self.graph == other.graph
            and self.masks == other.masks
        )

    __hash__ = None


def build_graph(edge_list, features, labels, n_classes: Optional[int] = None) -> Graph:
    """Build a canonical CSR graph.

    Edges are symmetrized; self-loops are dropped and duplicates merged.
    ``n_classes`` defaults to ``max(labels) + 1``.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DatasetError("labels must be one-dimensional")
    n = int(labels.shape[0])
    if n == 0:
        raise DatasetError("empty graph")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.mod(labels, 1) == 0):
            raise DatasetError("labels must be integers")
    labels = labels.astype(np.int64)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features.reshape(n, -1) if features.size else np.zeros((n, 0))
    if features.ndim != 2 or features.shape[0] != n:
        raise DatasetError(
            f"features have {features.shape[0] if features.ndim else 0} rows, labels have {n}"
        )

    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2) if len(edge_list) else np.zeros((0, 2), np.int64)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))[0]
        raise DatasetError(f"edge {tuple(edges[bad])} references a node outside [0, {n})")
    edges = edges[edges[:, 0] != edges[:, 1]]
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    key = np.unique(src * n + dst)
    src, dst = key // n, key % n
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])

    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n else 0
    g = Graph(
        n_nodes=n,
        n_edges=int(key.shape[0] // 2),
        csr_offsets=_frozen(offsets),
        csr_neighbors=_frozen(dst.astype(np.int64)),
        features=_frozen(features),
        labels=_frozen(labels),
        n_classes=int(n_classes),
    )
    g.validate()
    return g


def permute_graph(graph: Graph, perm: np.ndarray) -> Graph:
    """Relabel nodes so that old node ``i`` becomes ``perm[i]``."""
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.shape[0])
    edges = perm[graph.undirected_edges()]
    return build_graph(edges, graph.features[inv], graph.labels[inv], graph.n_classes)


# ---------------------------------------------------------------------------
# splits


def _check_train_classes(graph: Graph, train: np.ndarray) -> None:
    present = np.bincount(graph.labels[train], minlength=graph.n_classes)
    absent = np.flatnonzero(present == 0)
    if absent.size:
        raise DatasetError(f"classes absent from the train split: {absent.tolist()}")


def split_random(graph: Graph, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> SplitMasks:
    """Seeded global random split.

    Validation and test sizes are ``floor(f * n)``; the remainder goes to train.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = graph.n_nodes
    if n == 0:
        raise DatasetError("empty graph")
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    n_test = int(math.floor(fractions[2] * n + 1e-9))
    n_train = n - n_val - n_test
    perm = make_rng(seed, "split").permutation(n)
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][perm[:n_train]] = True
    masks[1][perm[n_train : n_train + n_val]] = True
    masks[2][perm[n_train + n_val :]] = True
    _check_train_classes(graph, masks[0])
    return SplitMasks(*masks)


def make_extreme_split(
    graph: Graph,
    masks: SplitMasks,
    minority_classes: Iterable[int],
    k: int = 5,
    seed: int = 0,
) -> SplitMasks:
    """Keep exactly ``k`` train nodes of every minority class.

    The dropped train nodes leave every mask; val and test are untouched.
    """
    rng = make_rng(seed, "extreme")
    train = masks.train.copy()
    for c in sorted(set(int(c) for c in minority_classes)):
        if not 0 <= c < graph.n_classes:
            raise DatasetError(f"minority class {c} out of range")
        idx = np.flatnonzero(train & (graph.labels == c))
        if idx.shape[0] < k:
            raise DatasetError(f"class {c} has {idx.shape[0]} train nodes, fewer than k={k}")
        keep = rng.choice(idx, size=k, replace=False)
        train[idx] = False
        train[keep] = True
    return SplitMasks(train, masks.val, masks.test)


def smallest_classes(graph: Graph, count: int) -> list:
    """Ids of the ``count`` least frequent classes (ties broken by id)."""
    counts = np.bincount(graph.labels, minlength=graph.n_classes)
    order = np.lexsort((np.arange(graph.n_classes), counts))
    return sorted(order[:count].tolist())


# ---------------------------------------------------------------------------
# GraphText I/O


def _read_lines(path: Path) -> list:
    if not path.is_file():
        raise DatasetError("missing file", path=path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _parse_int(tok: str, path: Path, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DatasetError(f"expected an integer, got {tok!r}", path=path, line=lineno) from None


def _read_meta(d: Path) -> dict:
    path = d / "meta.json"
    if not path.is_file():
        raise DatasetError("missing file", path=path)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DatasetError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from None
    for key in ("name", "n_nodes", "n_edges", "n_features", "n_classes"):
        if key not in meta:
            raise DatasetError(f"meta.json lacks {key!r}", path=path)
    return meta


def _read_edges(path: Path, n: int) -> np.ndarray:
    lines = _read_lines(path)
    edges = np.empty((len(lines), 2), dtype=np.int64)
    for i, line in enumerate(lines):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"expected 'u<TAB>v', got {line!r}", path=path, line=i + 1)
        u, v = (_parse_int(p, path, i + 1) for p in parts)
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"node id out of range [0, {n})", path=path, line=i + 1)
        edges[i] = (u, v)
    return edges


def _read_labels(path: Path, n: int, m: int) -> np.ndarray:
    lines = _read_lines(path)
    if len(lines) != n:
        raise DatasetError(f"{len(lines)} labels for {n} nodes", path=path)
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines):
        y = _parse_int(line.strip(), path, i + 1)
        if not 0 <= y < m:
            raise DatasetError(f"label {y} outside [0, {m})", path=path, line=i + 1)
        labels[i] = y
    return labels


def _read_features(path: Path, n: int, d: int) -> np.ndarray:
    lines = _read_lines(path)
    if len(lines) != n:
        raise DatasetError(f"{len(lines)} feature rows for {n} nodes", path=path)
    feats = np.empty((n, d), dtype=np.float64)
    for i, line in enumerate(lines):
        parts = line.split("\t") if d else ([] if line == "" else [line])
        if len(parts) != d:
            raise DatasetError(f"expected {d} values, got {len(parts)}", path=path, line=i + 1)
        try:
            feats[i] = [float(p) for p in parts]
        except ValueError:
            raise DatasetError("malformed float", path=path, line=i + 1) from None
    return feats


def _read_masks(path: Path, n: int) -> SplitMasks:
    lines = _read_lines(path)
    if len(lines) != n:
        raise DatasetError(f"{len(lines)} mask entries for {n} nodes", path=path)
    names = np.array([s.strip() for s in lines], dtype=object)
    for i, s in enumerate(names):
        if s not in MASK_NAMES:
            raise DatasetError(f"unknown mask {s!r}", path=path, line=i + 1)
    return SplitMasks(names == "train", names == "val", names == "test")


def load_dataset(directory, load_features: bool = True) -> DatasetBundle:
    """Read a GraphText directory.

    With ``load_features=False`` the feature matrix is replaced by an
    ``n x 0`` placeholder, which is enough for structural statistics.
    """
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError("not a dataset directory", path=d)
    meta = _read_meta(d)
    n, m, nf = int(meta["n_nodes"]), int(meta["n_classes"]), int(meta["n_features"])
    edges = _read_edges(d / "edges.tsv", n)
    labels = _read_labels(d / "labels.tsv", n, m)
    if load_features:
        feats = _read_features(d / "features.tsv", n, nf)
    else:
        if not (d / "features.tsv").is_file():
            raise DatasetError("missing file", path=d / "features.tsv")
        feats = np.zeros((n, 0))
    graph = build_graph(edges, feats, labels, n_classes=m)
    if graph.n_edges != int(meta["n_edges"]):
        raise DatasetError(
            f"meta.json declares {meta['n_edges']} edges, edges.tsv yields {graph.n_edges}",
            path=d / "meta.json",
        )
    masks = _read_masks(d / "masks.tsv", n) if (d / "masks.tsv").is_file() else None
    return DatasetBundle(graph, masks, str(meta["name"]), str(meta.get("provenance", "")))


def save_dataset(bundle: DatasetBundle, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    meta = {
        "name": bundle.name,
        "n_nodes": g.n_nodes,
        "n_edges": g.n_edges,
        "n_features": g.n_features,
        "n_classes": g.n_classes,
        "provenance": bundle.provenance,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    _write_lines(d / "edges.tsv", (f"{u}\t{v}" for u, v in g.undirected_edges().tolist()))
    _write_lines(d / "features.tsv", ("\t".join(map(repr, row)) for row in g.features.tolist()))
    _write_lines(d / "labels.tsv", map(str, g.labels.tolist()))
    mask_path = d / "masks.tsv"
    if bundle.masks is not None:
        _write_lines(mask_path, bundle.masks.names())
    elif mask_path.exists():
        mask_path.unlink()


def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line)
            f.write("\n")
