"""Per-dialogue discourse graphs and their structural statistics.

Edges always point from an earlier utterance to a later one, so the
adjacency matrix (rows = source) is strictly upper-triangular and each
node's neighbourhood is a set of past utterances. Graphs are immutable
after construction.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Invalid edge list for a discourse graph."""


@dataclass(frozen=True, eq=False)
class DiscourseGraph:
    n: int
    adjacency: np.ndarray                       # (n, n) uint8, adjacency[src, tgt]
    predecessors: tuple[tuple[int, ...], ...]   # sorted earlier neighbours per node


@dataclass(frozen=True)
class GraphStats:
    n: int
    edge_count: int
    complete_graph_edges: int   # n*(n-1)/2
    density: float              # edge_count / complete_graph_edges, 0.0 when n == 1


def build_graph(n: int, edges: Iterable[tuple[int, int]]) -> DiscourseGraph:
    """Build the binary adjacency and predecessor sets from an edge list.

    Edge-list order and duplicates do not matter (set semantics); an edge
    must satisfy 0 <= src < tgt < n.
    """
    if n < 1:
        raise GraphError(f"graph needs at least one node, got n={n}")
    unique: set[tuple[int, int]] = set()
    for src, tgt in edges:
        src, tgt = int(src), int(tgt)
        if not (0 <= src < n and 0 <= tgt < n):
            raise GraphError(f"edge ({src}, {tgt}) out of range for n={n}")
        if src >= tgt:
            raise GraphError(f"edge ({src}, {tgt}): src must precede tgt")
        unique.add((src, tgt))

    adjacency = np.zeros((n, n), dtype=np.uint8)
    preds: list[list[int]] = [[] for _ in range(n)]
    for src, tgt in unique:
        adjacency[src, tgt] = 1
        preds[tgt].append(src)
    return DiscourseGraph(
        n=n,
        adjacency=adjacency,
        predecessors=tuple(tuple(sorted(p)) for p in preds),
    )


def edge_stats(g: DiscourseGraph) -> GraphStats:
    edge_count = int(g.adjacency.sum())
    complete = g.n * (g.n - 1) // 2
    density = edge_count / complete if complete > 0 else 0.0
    return GraphStats(n=g.n, edge_count=edge_count,
                      complete_graph_edges=complete, density=density)


def summarize_densities(stats: Sequence[GraphStats]) -> dict[str, float]:
    """Corpus-level aggregates over per-dialogue stats."""
    if not stats:
        return {"dialogues": 0, "mean_density": 0.0, "median_density": 0.0}
    densities = [s.density for s in stats]
    return {
        "dialogues": len(stats),
        "mean_density": statistics.fmean(densities),
        "median_density": statistics.median(densities),
    }
