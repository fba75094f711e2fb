"""Ranking metrics, the 1-positive/100-negative protocol and the POP baseline."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .corpus import InteractionCorpus, Splits, pad_left, sample_negatives, user_seed

CUTOFFS = (5, 10)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RankedList:
    items: tuple[int, ...]
    relevant: tuple[bool, ...]


def rank_candidates(candidates: Sequence[int], scores: Sequence[float], positives: Iterable[int]) -> RankedList:
    """Sort by descending score; equal scores go to the smaller item id first."""
    cands = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((cands, -np.asarray(scores, dtype=np.float64)))
    pos = set(int(p) for p in positives)
    items = tuple(int(v) for v in cands[order])
    return RankedList(items, tuple(v in pos for v in items))


def dcg_at_k(relevant: Sequence[bool], k: int) -> float:
    return sum((2.0 ** float(r) - 1.0) / math.log2(i + 2) for i, r in enumerate(relevant[:k]))


def ndcg_at_k(ranked: RankedList, k: int) -> float:
    if k < 1:
        raise EvaluationError("K must be >= 1")
    n_rel = sum(ranked.relevant)
    if n_rel == 0:
        raise EvaluationError("no relevant item in ranked list")
    ideal = sum(1.0 / math.log2(i + 2) for i in range(n_rel))
    return dcg_at_k(ranked.relevant, k) / ideal


def recall_at_k(ranked: RankedList, k: int) -> float:
    if k < 1:
        raise EvaluationError("K must be >= 1")
    n_rel = sum(ranked.relevant)
    if n_rel == 0:
        raise EvaluationError("no relevant item in ranked list")
    return sum(ranked.relevant[:k]) / n_rel


def positive_rank(scores: np.ndarray, candidates: np.ndarray, pos_col: int = 0) -> np.ndarray:
    """1-based rank of the positive in each row under the tie-break rule.

    Vectorised equivalent of :func:`rank_candidates` for one relevant item.
    """
    s_pos = scores[np.arange(len(scores)), pos_col][:, None]
    c_pos = candidates[np.arange(len(scores)), pos_col][:, None]
    ahead = (scores > s_pos) | ((scores == s_pos) & (candidates < c_pos))
    return 1 + ahead.sum(axis=1)


def metrics_from_rank(rank: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    hit = rank <= k
    return np.where(hit, 1.0 / np.log2(rank + 1.0), 0.0), hit.astype(np.float64)


# ---------------------------------------------------------------- scorers


class Scorer(Protocol):
    def score(self, histories: Sequence[Sequence[int]], candidates: np.ndarray) -> np.ndarray:
        """(U, C) scores for each user's history against its candidate row."""


class PopScorer:
    """Ranks by training-split interaction count; identical for every user."""

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.float64)

    def score(self, histories, candidates):
        return self.counts[np.asarray(candidates)]


def pop_baseline(train_sequences: Iterable[Sequence[int]] | Splits, n_items: int) -> PopScorer:
    if isinstance(train_sequences, Splits):
        train_sequences = train_sequences.train_sequences()
    counts = np.zeros(n_items + 1)
    for item, c in Counter(v for seq in train_sequences for v in seq).items():
        counts[item] = c
    return PopScorer(counts)


class RandomScorer:
    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def score(self, histories, candidates):
        return self.rng.random(np.shape(candidates))


class OracleScorer:
    """Scores the first column highest; used to sanity-check the pipeline."""

    def score(self, histories, candidates):
        s = np.zeros(np.shape(candidates))
        s[:, 0] = 1.0
        return s


class ModelScorer:
    """Dot-product scores z^T h_i of a trained network (softmax skipped)."""

    def __init__(self, net, params, batch_size: int = 256):
        self.net = net
        self.params = params
        self.batch_size = batch_size
        self._zg = net.global_table(params)

    def represent(self, histories):
        T = self.net.hp.T
        idx = np.array([pad_left(list(h), T) for h in histories], dtype=np.int64)
        out = []
        for start in range(0, len(idx), self.batch_size):
            out.append(self.net.represent(self.params, idx[start : start + self.batch_size], self._zg))
        return np.concatenate(out) if out else np.zeros((0, self.net.hp.d_in))

    def score(self, histories, candidates):
        z = self.represent(histories)
        H = self.params["item_embed"][np.asarray(candidates)]
        return np.einsum("ud,ucd->uc", z, H)


# ---------------------------------------------------------------- protocol


@dataclass
class MetricsReport:
    split: str
    n_users: int
    metrics: dict[str, float]
    seeds: list[int]
    n_skipped: int = 0
    config_digest: str = ""
    per_seed: list[dict] = field(default_factory=list)

    def __getitem__(self, key):
        return self.metrics[key]

    def to_dict(self) -> dict:
        d = {"split": self.split, "n_users": self.n_users, "n_skipped": self.n_skipped}
        d.update(self.metrics)
        d["seeds"] = list(self.seeds)
        d["config_digest"] = self.config_digest
        if self.per_seed:
            d["per_seed"] = self.per_seed
        return d


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def candidate_matrix(corpus: InteractionCorpus, splits: Splits, split: str, seed: int, n_negatives: int = 100):
    users, histories, rows = [], [], []
    for u, view in splits.items():
        hist = view.history_for(split)
        if not hist:
            continue
        sample = sample_negatives(corpus, u, view.target_for(split), n_negatives, user_seed(seed, u))
        users.append(u)
        histories.append(hist)
        rows.append(sample.candidates)
    return users, histories, np.array(rows, dtype=np.int64).reshape(len(rows), n_negatives + 1)


def evaluate(
    scorer: Scorer,
    corpus: InteractionCorpus,
    splits: Splits,
    split: str = "test",
    seed: int = 0,
    n_negatives: int = 100,
    digest: str = "",
) -> MetricsReport:
    """Score the positive against ``n_negatives`` sampled items for every user."""
    if split not in ("valid", "test"):
        raise EvaluationError(f"split must be 'valid' or 'test', got {split!r}")
    users, histories, cands = candidate_matrix(corpus, splits, split, seed, n_negatives)
    skipped = len(splits) - len(users)
    if not users:
        raise EvaluationError("no users to evaluate")
    scores = np.asarray(scorer.score(histories, cands), dtype=np.float64)
    rank = positive_rank(scores, cands)
    metrics = {}
    for k in CUTOFFS:
        ndcg, rec = metrics_from_rank(rank, k)
        metrics[f"ndcg@{k}"] = float(ndcg.mean())
        metrics[f"recall@{k}"] = float(rec.mean())
    return MetricsReport(split, len(users), metrics, [seed], skipped, digest)


def evaluate_seeds(scorer_factory, corpus, splits, split, seeds, digest="") -> MetricsReport:
    """Mean of :func:`evaluate` over several seeds, with a per-seed breakdown.

    ``scorer_factory(seed)`` returns the scorer for that seed.
    """
    rows = []
    for s in seeds:
        rep = evaluate(scorer_factory(s), corpus, splits, split, s, digest=digest)
        rows.append({"seed": s, **rep.metrics})
    keys = [f"{m}@{k}" for k in CUTOFFS for m in ("ndcg", "recall")]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    return MetricsReport(split, rep.n_users, mean, list(seeds), rep.n_skipped, digest, rows)
