"""Synthetic clustered interaction data with a known item partition."""

from __future__ import annotations

import numpy as np

from .corpus import InteractionCorpus


def clustered_sequences(
    n_users: int = 300,
    n_clusters: int = 3,
    items_per_cluster: int = 60,
    length: int | tuple[int, int] = (12, 25),
    stay: float = 0.9,
    seed: int = 0,
) -> tuple[list[list[int]], np.ndarray]:
    """Random walks that stay inside the current item cluster with probability ``stay``.

    Returns (sequences over items 1..N, cluster label per item with index 0
    unused and set to -1). Items are not repeated within a sequence.
    """
    rng = np.random.default_rng(seed)
    n_items = n_clusters * items_per_cluster
    labels = np.concatenate([[-1], np.repeat(np.arange(n_clusters), items_per_cluster)])
    members = [np.arange(1, n_items + 1)[labels[1:] == k] for k in range(n_clusters)]
    lo, hi = (length, length) if isinstance(length, int) else length
    seqs = []
    for _ in range(n_users):
        n = int(rng.integers(lo, hi + 1))
        cluster = int(rng.integers(n_clusters))
        seen: set[int] = set()
        seq = []
        while len(seq) < n:
            if seq and rng.random() >= stay:
                cluster = int(rng.choice([k for k in range(n_clusters) if k != cluster]))
            pool = [v for v in members[cluster] if v not in seen]
            if not pool:
                break
            v = int(rng.choice(pool))
            seen.add(v)
            seq.append(v)
        seqs.append(seq)
    return seqs, labels


def as_corpus(sequences: list[list[int]], n_items: int | None = None) -> InteractionCorpus:
    """Wrap index sequences as a corpus whose raw ids equal the indices."""
    n_items = n_items or max(max(s) for s in sequences if s)
    item_ids = tuple(str(i) for i in range(1, n_items + 1))
    user_ids = tuple(str(u) for u in range(len(sequences)))
    seqs = tuple(tuple((v, t) for t, v in enumerate(s)) for s in sequences)
    return InteractionCorpus(user_ids, item_ids, seqs)
