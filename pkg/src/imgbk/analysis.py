"""Homophily and class-imbalance statistics."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import DatasetBundle, Graph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray
    class_homophily: np.ndarray
    imbalance_ratio: float
    graph_homophily: float
    node_homophily: float

    @property
    def class_mean_homophily(self) -> float:
        return float(np.nanmean(self.class_homophily))


def class_counts(graph: Graph) -> np.ndarray:
    return np.bincount(graph.labels, minlength=graph.n_classes)


def imbalance_ratio(counts) -> float:
    """Largest class size divided by the smallest."""
    counts = np.asarray(counts)
    if counts.size == 0 or np.any(counts <= 0):
        raise ValueError("imbalance ratio needs strictly positive class counts")
    return float(counts.max() / counts.min())


def node_homophily_values(graph: Graph) -> np.ndarray:
    """Per-node share of neighbours carrying the node's own label (NaN when isolated)."""
    deg = graph.degrees
    same = (graph.labels[graph.edge_sources] == graph.labels[graph.csr_neighbors]).astype(np.int64)
    same_count = np.bincount(graph.edge_sources, weights=same, minlength=graph.n_nodes)
    out = np.full(graph.n_nodes, np.nan)
    nz = deg > 0
    out[nz] = same_count[nz] / deg[nz]
    return out


def _warn_isolated(graph: Graph, nodes: np.ndarray) -> None:
    if nodes.size:
        warnings.warn(
            f"{nodes.size} isolated node(s) excluded from homophily means", RuntimeWarning, stacklevel=3
        )


def class_homophily(graph: Graph, y: int) -> float:
    """Mean over nodes labelled ``y`` of the same-label neighbour share.

    Isolated nodes are skipped with a RuntimeWarning.
    """
    members = np.flatnonzero(graph.labels == y)
    if members.size == 0:
        raise ValueError(f"class {y} has no nodes")
    vals = node_homophily_values(graph)[members]
    iso = members[np.isnan(vals)]
    _warn_isolated(graph, iso)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        return float("nan")
    return float(vals.mean())


def all_class_homophily(graph: Graph) -> np.ndarray:
    vals = node_homophily_values(graph)
    _warn_isolated(graph, np.flatnonzero(np.isnan(vals)))
    ok = ~np.isnan(vals)
    totals = np.bincount(graph.labels[ok], weights=vals[ok], minlength=graph.n_classes)
    counts = np.bincount(graph.labels[ok], minlength=graph.n_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, totals / np.maximum(counts, 1), np.nan)


def graph_homophily(graph: Graph, edge_mask=None) -> float:
    """Fraction of undirected edges whose endpoints share a label.

    ``edge_mask`` optionally restricts the count to a subset of the
    canonical ``u < v`` edges returned by ``Graph.undirected_edges``.
    """
    edges = graph.undirected_edges()
    if edge_mask is not None:
        edges = edges[np.asarray(edge_mask, dtype=bool)]
    if edges.shape[0] == 0:
        raise ValueError("homophily of an empty edge set is undefined")
    same = graph.labels[edges[:, 0]] == graph.labels[edges[:, 1]]
    return float(same.mean())


def class_stats(graph: Graph) -> ClassStats:
    counts = class_counts(graph)
    vals = node_homophily_values(graph)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        per_class = all_class_homophily(graph)
    iso = int(np.isnan(vals).sum())
    if iso:
        warnings.warn(f"{iso} isolated node(s) excluded from homophily means", RuntimeWarning, stacklevel=2)
    return ClassStats(
        counts=counts,
        class_homophily=per_class,
        imbalance_ratio=imbalance_ratio(counts),
        graph_homophily=graph_homophily(graph) if graph.n_edges else float("nan"),
        node_homophily=float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else float("nan"),
    )


def _clean(x):
    x = float(x)
    return None if np.isnan(x) else x


def profile(bundle: DatasetBundle, out_dir=None):
    """Dataset statistics in the layout of a summary-table row.

    ``hom_ratio`` is the edge-level homophily; node- and class-averaged
    variants are reported next to it. When ``out_dir`` is given, writes
    ``stats.json`` and ``per_class.csv`` there.
    """
    g = bundle.graph
    stats = class_stats(g)
    report = {
        "name": bundle.name,
        "n_nodes": g.n_nodes,
        "n_edges": g.n_edges,
        "n_edge_directions": g.n_edge_directions,
        "n_features": g.n_features,
        "n_classes": g.n_classes,
        "imbalance_ratio": stats.imbalance_ratio,
        "hom_ratio": _clean(stats.graph_homophily),
        "edge_homophily": _clean(stats.graph_homophily),
        "node_homophily": _clean(stats.node_homophily),
        "class_mean_homophily": _clean(stats.class_mean_homophily),
        "n_isolated": int((g.degrees == 0).sum()),
        "counts": stats.counts.tolist(),
        "class_homophily": [_clean(h) for h in stats.class_homophily],
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        with open(out / "per_class.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["class", "count", "homophily"])
            for c in range(g.n_classes):
                h = stats.class_homophily[c]
                w.writerow([c, int(stats.counts[c]), "" if np.isnan(h) else repr(float(h))])
    return stats, report
