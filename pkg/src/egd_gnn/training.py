"""Adam, the mini-batch training loop and the full-model gradient check."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as num
from .checkpoint import save_checkpoint
from .corpus import training_arrays
from .graph import GlobalGraph, build_global_graph
from .model import (
    GLOBAL_PARAMS,
    LOCAL_PARAMS,
    EGDGNNNet,
    HyperParams,
    init_params,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, names: Sequence[str] | None = None) -> None:
    """One bias-corrected Adam update, in place. Only ``names`` are touched."""
    names = list(params) if names is None else list(names)
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name in names:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    if "item_embed" in params:
        params["item_embed"][0] = 0.0


def active_params(hp: HyperParams) -> list[str]:
    names = ["item_embed", "channel_W"]
    if hp.uses_global:
        names += list(GLOBAL_PARAMS)
    if hp.uses_local:
        local = ["pos_embed", "combine_Wl"]
        if hp.uses_savae:
            local = [n for n in LOCAL_PARAMS]
        names += local
    return names


def clip_by_global_norm(grads: dict, names: Sequence[str], max_norm: float) -> float:
    total = float(np.sqrt(sum(np.sum(grads[n] ** 2) for n in names)))
    if total > max_norm:
        scale = max_norm / total
        for n in names:
            grads[n] *= scale
    return total


@dataclass
class TrainConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    eval_every: int = 0
    patience: int | None = None
    grad_clip: float | None = None
    max_degree: int | None = None

    def to_dict(self) -> dict:
        d = self.hp.to_dict()
        d.update(eval_every=self.eval_every, patience=self.patience, grad_clip=self.grad_clip, max_degree=self.max_degree)
        return d


@dataclass
class TrainResult:
    params: dict
    history: list[dict]
    batch_log: list[tuple[float, float, float, float]]  # loss, recon, kl, beta
    best_params: dict | None = None
    best_metric: float | None = None
    net: EGDGNNNet | None = None


def fit_sequences(
    sequences: Sequence[Sequence[int]],
    n_items: int,
    graph: GlobalGraph | None,
    config: TrainConfig,
    params: dict | None = None,
    on_epoch: Callable[[int, dict, dict], dict | None] | None = None,
) -> TrainResult:
    """Train on every prefix window of ``sequences``.

    ``on_epoch(epoch, params, row)`` may return extra fields (e.g. validation
    metrics) to merge into the epoch's log row.
    """
    hp = config.hp
    if graph is None and hp.uses_global:
        graph = build_global_graph(sequences, n_items, config.max_degree, hp.seed)
    net = EGDGNNNet(hp, n_items, graph)
    params = init_params(hp, n_items) if params is None else params
    idx_all, tgt_all = training_arrays(sequences, hp.T)
    names = active_params(hp)
    state = AdamState(lr=hp.lr)
    shuffle_ss, eps_ss, drop_ss = np.random.SeedSequence(hp.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    eps_rng = np.random.default_rng(eps_ss)
    drop_rng = np.random.default_rng(drop_ss)

    history, batch_log = [], []
    best = (None, None)
    stale = 0
    n = len(tgt_all)
    for epoch in range(1, hp.epochs + 1):
        if n == 0:
            raise TrainingError("no training windows (every training sequence has length < 2)")
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, hp.batch_size)):
            sel = order[start : start + hp.batch_size]
            idx, tgt = idx_all[sel], tgt_all[sel]
            shape = (len(sel), hp.T, hp.d_in)
            eps = eps_rng.standard_normal(shape) if hp.uses_savae else None
            masks = {}
            if hp.dropout > 0 and hp.uses_local:
                masks["H"] = num.dropout_mask(drop_rng, shape, hp.dropout)
                if hp.uses_savae:
                    masks["D"] = num.dropout_mask(drop_rng, shape, hp.dropout)
            try:
                parts, grads = net.loss_and_grads(params, idx, tgt, eps, masks)
                if config.grad_clip:
                    clip_by_global_norm(grads, names, config.grad_clip)
                adam_step(params, grads, state, names)
            except (num.NumericsError, TrainingError, FloatingPointError) as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            batch_log.append((parts.loss, parts.recon, parts.kl, hp.beta))
            sums += np.array([parts.loss, parts.recon, parts.kl]) * len(sel)
        loss, recon, kl = sums / n
        row = {"epoch": epoch, "loss": loss, "recon": recon, "kl": kl, "wall_time": time.perf_counter() - t0}
        if on_epoch is not None:
            extra = on_epoch(epoch, params, row)
            if extra:
                row.update(extra)
        history.append(row)
        log.info("epoch %d loss %.5f recon %.5f kl %.5f", epoch, loss, recon, kl)
        metric = row.get("valid_ndcg@10")
        if metric is not None:
            if best[1] is None or metric > best[1]:
                best = ({k: v.copy() for k, v in params.items()}, metric)
                stale = 0
            else:
                stale += 1
                if config.patience is not None and stale >= config.patience:
                    break
    return TrainResult(params, history, batch_log, best[0], best[1], net)


def train(corpus, splits, graph, config: TrainConfig, out_dir=None) -> TrainResult:
    """Train on the leave-one-out training split, with optional validation and checkpoints.

    With ``out_dir`` set, writes ``train_log.jsonl``, ``checkpoint/`` (final
    parameters) and, when validation ran, ``best/``.
    """
    from .evaluation import ModelScorer, evaluate

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")

    def on_epoch(epoch, params, row):
        extra = {}
        if config.eval_every and epoch % config.eval_every == 0:
            rep = evaluate(ModelScorer(net_holder[0], params), corpus, splits, "valid", config.hp.seed)
            extra = {f"valid_{k}": v for k, v in rep.metrics.items()}
        if log_fh is not None:
            log_fh.write(json.dumps({**row, **extra}, sort_keys=True) + "\n")
            log_fh.flush()
        return extra

    hp = config.hp
    sequences = splits.train_sequences()
    if graph is None and hp.uses_global:
        graph = build_global_graph(sequences, corpus.n_items, config.max_degree, hp.seed)
    net_holder = [EGDGNNNet(hp, corpus.n_items, graph)]
    try:
        result = fit_sequences(sequences, corpus.n_items, graph, config, on_epoch=on_epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        epochs_run = len(result.history)
        save_checkpoint(out / "checkpoint", result.params, config.to_dict(), epochs_run, {"n_items": corpus.n_items})
        if result.best_params is not None:
            save_checkpoint(
                out / "best", result.best_params, config.to_dict(), epochs_run,
                {"n_items": corpus.n_items, "valid_ndcg@10": result.best_metric},
            )
    return result


# ---------------------------------------------------------------- gradient check


TINY = dict(K=2, d_in=8, d_channel=4, T=8, L=4, dropout=0.0)


@dataclass
class TinyInstance:
    net: EGDGNNNet
    params: dict
    idx: np.ndarray
    targets: np.ndarray
    eps: np.ndarray | None

    def loss(self, params) -> float:
        return self.net.loss(params, self.idx, self.targets, self.eps)


def tiny_instance(hp: HyperParams | None = None, n_items: int = 20, batch: int = 6, seed: int = 0) -> TinyInstance:
    """A small random problem with a frozen noise sample and no dropout.

    Embeddings are drawn at unit-ish scale rather than the training init so
    that gradient entries sit well above finite-difference round-off.
    """
    hp = hp or HyperParams(**TINY)
    rng = np.random.default_rng(seed)
    seqs = [list(rng.integers(1, n_items + 1, size=rng.integers(4, 12))) for _ in range(8)]
    graph = build_global_graph(seqs, n_items)
    net = EGDGNNNet(hp, n_items, graph)
    params = init_params(hp, n_items, seed=seed)
    params["item_embed"][1:] = rng.normal(0.0, 0.5, size=(n_items, hp.d_in))
    params["pos_embed"][:] = rng.normal(0.0, 0.5, size=(hp.T, hp.d_in))
    params["vae_logvar_b"][:] = rng.normal(-1.0, 0.3, size=hp.d_in)
    idx = np.zeros((batch, hp.T), dtype=np.int64)
    for b in range(batch):
        length = rng.integers(1, hp.T + 1)
        idx[b, hp.T - length :] = rng.integers(1, n_items + 1, size=length)
    idx[0, :] = rng.integers(1, n_items + 1, size=hp.T)  # one full window
    targets = rng.integers(1, n_items + 1, size=batch)
    eps = rng.standard_normal((batch, hp.T, hp.d_in)) if hp.uses_savae else None
    return TinyInstance(net, params, idx, targets, eps)


def check_model_gradients(
    hp: HyperParams | None = None, h: float = 1e-5, tol: float = 1e-5, seed: int = 0
) -> num.GradCheckReport:
    """Central-difference check of every parameter of the full loss on a tiny instance."""
    inst = tiny_instance(hp, seed=seed)
    _, grads = inst.net.loss_and_grads(inst.params, inst.idx, inst.targets, inst.eps)
    report = num.finite_diff_check(inst.loss, inst.params, grads, h=h)
    report.tolerance = tol
    return report
