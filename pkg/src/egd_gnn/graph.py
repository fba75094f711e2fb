"""Undirected item-link graph over consecutive training pairs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalGraph:
    """Simple undirected graph on items 1..n_items (index 0 is unused padding)."""

    n_items: int
    adjacency: tuple[tuple[int, ...], ...]
    edge_count: int

    def neighbors_of(self, item: int) -> list[int]:
        if not 1 <= item <= self.n_items:
            raise GraphError(f"item {item} outside [1, {self.n_items}]")
        return list(self.adjacency[item])

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i in range(1, self.n_items + 1) for j in self.adjacency[i] if i < j]

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every edge, sorted by source: (src, dst)."""
        src = [i for i in range(self.n_items + 1) for _ in self.adjacency[i]]
        dst = [j for i in range(self.n_items + 1) for j in self.adjacency[i]]
        return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    def to_tsv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"#items={self.n_items} #edges={self.edge_count}\n")
            for i, j in self.edges():
                fh.write(f"{i}\t{j}\n")

    @classmethod
    def from_tsv(cls, path) -> "GlobalGraph":
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#items="):
            raise GraphError(f"{path}: missing '#items=N #edges=E' header")
        head = dict(tok[1:].split("=") for tok in lines[0].split())
        n_items, n_edges = int(head["items"]), int(head["edges"])
        pairs = []
        for lineno, line in enumerate(lines[1:], 2):
            i, j = (int(x) for x in line.split("\t"))
            if not (1 <= i < j <= n_items):
                raise GraphError(f"{path}:{lineno}: bad edge {i} {j}")
            pairs.append((i, j))
        graph = _from_pairs(pairs, n_items)
        if graph.edge_count != n_edges:
            raise GraphError(f"{path}: header says {n_edges} edges, found {graph.edge_count}")
        return graph


def _from_pairs(pairs: Iterable[tuple[int, int]], n_items: int) -> GlobalGraph:
    nbrs: list[set[int]] = [set() for _ in range(n_items + 1)]
    for a, b in pairs:
        if a != b:
            nbrs[a].add(b)
            nbrs[b].add(a)
    adjacency = tuple(tuple(sorted(s)) for s in nbrs)
    return GlobalGraph(n_items, adjacency, sum(len(a) for a in adjacency) // 2)


def build_global_graph(
    sequences: Iterable[Sequence[int]],
    n_items: int,
    max_degree: int | None = None,
    seed: int = 0,
) -> GlobalGraph:
    """Link every pair of items that appear next to each other in a sequence.

    With ``max_degree`` set, each over-full neighbour list is subsampled
    (seeded, uniform) and the result re-symmetrized by keeping an edge only
    if both endpoints kept it.
    """
    pairs = []
    for seq in sequences:
        for v in seq:
            if not 1 <= v <= n_items:
                raise GraphError(f"item index {v} outside [1, {n_items}]")
        pairs.extend(zip(seq[:-1], seq[1:]))
    graph = _from_pairs(pairs, n_items)
    if max_degree is None:
        return graph
    rng = np.random.default_rng(seed)
    kept: list[set[int]] = []
    for nb in graph.adjacency:
        if len(nb) > max_degree:
            kept.append(set(rng.choice(np.asarray(nb), size=max_degree, replace=False).tolist()))
        else:
            kept.append(set(nb))
    pairs = [(i, j) for i in range(n_items + 1) for j in kept[i] if i < j and i in kept[j]]
    return _from_pairs(pairs, n_items)


def neighbors_of(graph: GlobalGraph, item: int) -> list[int]:
    return graph.neighbors_of(item)
