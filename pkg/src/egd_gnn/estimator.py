"""scikit-learn style wrappers around the training loop and the POP baseline."""

from __future__ import annotations

from numbers import Integral

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import pad_left
from .evaluation import ModelScorer, pop_baseline
from .graph import build_global_graph
from .model import HyperParams, global_aggregate
from .training import TrainConfig, fit_sequences


def check_sequences(X, n_items: int | None = None, min_length: int = 0) -> list[list[int]]:
    """Validate a ragged collection of item-index sequences.

    Items must be integers in [1, n_items] (0 is reserved for padding).
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [row[row != 0] for row in X]
    try:
        seqs = [[int(v) for v in seq] for seq in X]
    except TypeError:
        raise ValueError("X must be a sequence of item-index sequences") from None
    for i, seq in enumerate(seqs):
        if len(seq) < min_length:
            raise ValueError(f"sequence {i} has length {len(seq)} < {min_length}")
        for v in seq:
            if v < 1 or (n_items is not None and v > n_items):
                raise ValueError(f"sequence {i}: item {v} outside [1, {n_items}]")
    return seqs


class EGDGNNRecommender(BaseEstimator):
    """Next-item recommender over global item links and local sequence windows.

    ``fit`` takes training sequences of item indices (1..n_items). Scores are
    the dot products ``z^T h_i`` between a history's representation and the
    item embeddings.
    """

    def __init__(
        self,
        n_channels=5,
        dim=100,
        channel_dim=20,
        max_len=200,
        window=4,
        beta=0.1,
        dropout=0.5,
        lr=0.002,
        batch_size=128,
        epochs=10,
        seed=0,
        activation="tanh",
        ablation="full",
        max_degree=None,
        grad_clip=None,
    ):
        self.n_channels = n_channels
        self.dim = dim
        self.channel_dim = channel_dim
        self.max_len = max_len
        self.window = window
        self.beta = beta
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.activation = activation
        self.ablation = ablation
        self.max_degree = max_degree
        self.grad_clip = grad_clip

    def _hyperparams(self) -> HyperParams:
        return HyperParams(
            K=self.n_channels, d_in=self.dim, d_channel=self.channel_dim, T=self.max_len,
            L=self.window, beta=self.beta, dropout=self.dropout, lr=self.lr,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            activation=self.activation, ablation=self.ablation,
        )

    def fit(self, X, y=None, n_items=None):
        seqs = check_sequences(X, n_items)
        if n_items is None:
            n_items = max((max(s) for s in seqs if s), default=0)
        if not isinstance(n_items, Integral) or n_items < 1:
            raise ValueError("could not determine n_items")
        hp = self._hyperparams()
        config = TrainConfig(hp=hp, max_degree=self.max_degree, grad_clip=self.grad_clip)
        self.graph_ = build_global_graph(seqs, n_items, self.max_degree, self.seed) if hp.uses_global else None
        result = fit_sequences(seqs, n_items, self.graph_, config)
        self.n_items_ = int(n_items)
        self.params_ = result.params
        self.net_ = result.net
        self.history_ = result.history
        return self

    def _scorer(self) -> ModelScorer:
        check_is_fitted(self, "params_")
        return ModelScorer(self.net_, self.params_)

    def represent(self, histories) -> np.ndarray:
        """Combined representation z of each history, shape (n, dim)."""
        return self._scorer().represent(check_sequences(histories, self.n_items_, min_length=1))

    def decision_function(self, histories, candidates=None) -> np.ndarray:
        """Scores for every catalogue item (n, N), or for ``candidates`` (n, C)."""
        z = self.represent(histories)
        E = self.params_["item_embed"]
        if candidates is None:
            return z @ E[1:].T
        return np.einsum("ud,ucd->uc", z, E[np.asarray(candidates)])

    def predict(self, histories, k: int = 10) -> np.ndarray:
        """Top-``k`` item indices per history (ties to the smaller index)."""
        scores = self.decision_function(histories)
        order = np.lexsort((np.broadcast_to(np.arange(scores.shape[1]), scores.shape), -scores), axis=1)
        return order[:, :k] + 1

    def predict_proba(self, histories) -> np.ndarray:
        s = self.decision_function(histories)
        s = s - s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def score(self, histories, targets) -> float:
        """Mean full-catalogue NDCG@10 of ``targets``."""
        scores = self.decision_function(histories)
        targets = np.asarray(targets)
        rows = np.arange(len(targets))
        s_pos = scores[rows, targets - 1][:, None]
        items = np.arange(1, scores.shape[1] + 1)[None]
        rank = 1 + ((scores > s_pos) | ((scores == s_pos) & (items < targets[:, None]))).sum(axis=1)
        return float(np.mean(np.where(rank <= 10, 1.0 / np.log2(rank + 1.0), 0.0)))

    def transform(self, items=None) -> np.ndarray:
        """Global representations z_g of ``items`` (default: all, rows 1..N)."""
        check_is_fitted(self, "params_")
        table = self.global_embeddings_
        return table[1:] if items is None else table[np.asarray(items)]

    @property
    def global_embeddings_(self) -> np.ndarray:
        check_is_fitted(self, "params_")
        if self.graph_ is None:
            raise AttributeError("global representations are unavailable under ablation 'local-only'")
        return global_aggregate(self.graph_, self.params_["item_embed"], self.params_["channel_W"], activation=self.activation)

    def windows(self, histories) -> np.ndarray:
        return np.array([pad_left(h, self.max_len) for h in check_sequences(histories)], dtype=np.int64)


class PopularityRecommender(BaseEstimator):
    """Ranks every item by its training interaction count."""

    def fit(self, X, y=None, n_items=None):
        seqs = check_sequences(X, n_items)
        if n_items is None:
            n_items = max((max(s) for s in seqs if s), default=0)
        self.n_items_ = int(n_items)
        self.scorer_ = pop_baseline(seqs, self.n_items_)
        self.counts_ = self.scorer_.counts
        return self

    def decision_function(self, histories, candidates=None) -> np.ndarray:
        check_is_fitted(self, "counts_")
        n = len(histories)
        if candidates is None:
            return np.broadcast_to(self.counts_[1:], (n, self.n_items_)).copy()
        return self.counts_[np.asarray(candidates)]

    def predict(self, histories, k: int = 10) -> np.ndarray:
        check_is_fitted(self, "counts_")
        order = np.lexsort((np.arange(self.n_items_), -self.counts_[1:]))[:k] + 1
        return np.broadcast_to(order, (len(histories), len(order))).copy()
