"""Forward pass, loss and hand-derived backward pass of the recommender.

Shapes used throughout: ``B`` windows, ``T`` positions, ``d`` = d_in,
``K`` channels of width ``c`` = d_channel, ``N`` catalogue items (row 0 of
the item table is the padding row).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as num
from .graph import GlobalGraph

ABLATIONS = ("full", "global-only", "local-only", "sa-vae-only", "sliwin-only")
ACTIVATIONS = ("tanh", "sigmoid", "identity")
PROB_FLOOR = 1e-12

GLOBAL_PARAMS = ("combine_Wg",)
LOCAL_PARAMS = (
    "pos_embed",
    "attn_WQ",
    "attn_WK",
    "attn_WV",
    "vae_mu_W",
    "vae_mu_b",
    "vae_logvar_W",
    "vae_logvar_b",
    "ln_gain",
    "ln_bias",
    "combine_Wl",
)
SHARED_PARAMS = ("item_embed", "channel_W")
PARAM_NAMES = SHARED_PARAMS + GLOBAL_PARAMS + LOCAL_PARAMS


class ModelError(ValueError):
    pass


@dataclass
class HyperParams:
    K: int = 5
    d_in: int = 100
    d_channel: int = 20
    T: int = 200
    L: int = 4
    beta: float = 0.1
    dropout: float = 0.5
    lr: float = 0.002
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    activation: str = "tanh"
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ModelError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"activation must be one of {ACTIVATIONS}")
        if self.K < 1 or self.d_in < 2 or self.d_channel < 1 or self.T < 1:
            raise ModelError("K, d_channel, T must be >= 1 and d_in >= 2")
        if self.L < 1:
            raise ModelError("sliding window length L must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def uses_global(self) -> bool:
        return self.ablation != "local-only"

    @property
    def uses_local(self) -> bool:
        return self.ablation != "global-only"

    @property
    def uses_savae(self) -> bool:
        return self.ablation in ("full", "local-only", "sa-vae-only")

    @property
    def uses_sliwin(self) -> bool:
        return self.ablation in ("full", "local-only", "sliwin-only")

    @property
    def local_dim(self) -> int:
        return self.K * self.d_channel if self.uses_sliwin else self.d_in


# ---------------------------------------------------------------- activations


def activate(x: np.ndarray, kind: str = "tanh") -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    return x


def activate_backward(y: np.ndarray, dy: np.ndarray, kind: str = "tanh") -> np.ndarray:
    if kind == "tanh":
        return dy * (1.0 - y * y)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    return dy


# ---------------------------------------------------------------- parameters


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_params(hp: HyperParams, n_items: int, seed: int | None = None) -> dict[str, np.ndarray]:
    """Fresh parameters; row 0 of ``item_embed`` is the zero padding row."""
    rng = np.random.default_rng(hp.seed if seed is None else seed)
    d, K, c = hp.d_in, hp.K, hp.d_channel
    item = rng.normal(0.0, 0.01, size=(n_items + 1, d))
    item[0] = 0.0
    params = {
        "item_embed": item,
        "channel_W": _glorot(rng, d, c, shape=(K, d, c)),
        "combine_Wg": _glorot(rng, K * c, d),
        "pos_embed": rng.normal(0.0, 0.01, size=(hp.T, d)),
        "attn_WQ": _glorot(rng, d, d),
        "attn_WK": _glorot(rng, d, d),
        "attn_WV": _glorot(rng, d, d),
        "vae_mu_W": _glorot(rng, d, d),
        "vae_mu_b": np.zeros(d),
        "vae_logvar_W": _glorot(rng, d, d),
        "vae_logvar_b": np.full(d, -2.0),
        "ln_gain": np.ones(d),
        "ln_bias": np.zeros(d),
        "combine_Wl": _glorot(rng, hp.local_dim, d),
    }
    return {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------- channel mechanism


def channel_project(x: np.ndarray, channel_W: np.ndarray, activation: str = "tanh") -> np.ndarray:
    """act(W_k^T x) for every channel: (..., d) -> (..., K, c)."""
    return activate(np.einsum("...d,kdc->...kc", x, channel_W), activation)


def edge_channel_probs(
    h_i: np.ndarray, h_j: np.ndarray, channel_W: np.ndarray, activation: str = "tanh"
) -> np.ndarray:
    """Softmax over channels of the per-channel similarity of two items."""
    u_i = channel_project(h_i, channel_W, activation)
    u_j = channel_project(h_j, channel_W, activation)
    return num.softmax(np.sum(u_i * u_j, axis=-1), axis=-1)


@dataclass
class GlobalCache:
    rows: np.ndarray  # item ids whose z_g was produced
    support: np.ndarray  # rows plus their neighbours (sorted item ids)
    row_pos: np.ndarray  # position of each row inside ``support``
    src_pos: np.ndarray
    dst_pos: np.ndarray
    edge_row: np.ndarray  # which output row each edge feeds
    U: np.ndarray  # (|support|, K, c)
    alpha: np.ndarray  # (n_edges, K)
    A: np.ndarray  # pre-normalisation aggregate, (|rows|, K, c)
    activation: str


class GraphIndex:
    """CSR view of a :class:`GlobalGraph` for vectorised aggregation."""

    def __init__(self, graph: GlobalGraph):
        self.n_items = graph.n_items
        self.src, self.dst = graph.directed_edges()
        deg = graph.degrees()
        self.indptr = np.concatenate([[0], np.cumsum(deg)])

    def edges_from(self, rows: np.ndarray) -> np.ndarray:
        starts, stops = self.indptr[rows], self.indptr[rows + 1]
        counts = stops - starts
        if counts.sum() == 0:
            return np.zeros(0, dtype=np.int64)
        offsets = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        return np.arange(counts.sum()) + offsets


def global_forward(
    index: GraphIndex,
    item_embed: np.ndarray,
    channel_W: np.ndarray,
    rows: np.ndarray | None = None,
    activation: str = "tanh",
) -> tuple[np.ndarray, GlobalCache]:
    """Channel-aware neighbourhood aggregation for ``rows`` (default: all items).

    Returns (|rows|, K, c) unit-norm channel blocks.
    """
    if rows is None:
        rows = np.arange(index.n_items + 1)
    rows = np.asarray(rows, dtype=np.int64)
    eids = index.edges_from(rows)
    src, dst = index.src[eids], index.dst[eids]
    support = np.unique(np.concatenate([rows, dst]))
    U = channel_project(item_embed[support], channel_W, activation)
    src_pos = np.searchsorted(support, src)
    dst_pos = np.searchsorted(support, dst)
    row_pos = np.searchsorted(support, rows)
    edge_row = np.searchsorted(rows, src) if np.all(np.diff(rows) > 0) else _edge_rows(rows, src)

    alpha = num.softmax(np.sum(U[src_pos] * U[dst_pos], axis=-1), axis=-1)
    A = U[row_pos].copy()
    np.add.at(A, edge_row, alpha[:, :, None] * U[dst_pos])
    Z = num.l2_normalize(A, axis=-1)
    cache = GlobalCache(rows, support, row_pos, src_pos, dst_pos, edge_row, U, alpha, A, activation)
    return Z, cache


def _edge_rows(rows, src):
    lookup = {int(r): i for i, r in enumerate(rows)}
    return np.array([lookup[int(s)] for s in src], dtype=np.int64)


def global_backward(
    cache: GlobalCache, dZ: np.ndarray, item_embed: np.ndarray, channel_W: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (support item ids, d item_embed rows for them, d channel_W)."""
    dA = num.l2_normalize_backward(cache.A, dZ, axis=-1)
    U, alpha = cache.U, cache.alpha
    dU = np.zeros_like(U)
    np.add.at(dU, cache.row_pos, dA)
    dA_e = dA[cache.edge_row]
    U_dst, U_src = U[cache.dst_pos], U[cache.src_pos]
    dalpha = np.sum(dA_e * U_dst, axis=-1)
    np.add.at(dU, cache.dst_pos, alpha[:, :, None] * dA_e)
    ds = num.softmax_backward(alpha, dalpha, axis=-1)[:, :, None]
    np.add.at(dU, cache.src_pos, ds * U_dst)
    np.add.at(dU, cache.dst_pos, ds * U_src)
    dX = activate_backward(U, dU, cache.activation)
    E_s = item_embed[cache.support]
    dE_s = np.einsum("skc,kdc->sd", dX, channel_W)
    dW = np.einsum("sd,skc->kdc", E_s, dX)
    return cache.support, dE_s, dW


def global_aggregate(
    graph: GlobalGraph | GraphIndex,
    item_embed: np.ndarray,
    channel_W: np.ndarray,
    K: int | None = None,
    activation: str = "tanh",
    return_raw: bool = False,
):
    """z_g for every item, shape (N+1, K*c); row 0 is the zero padding row.

    With ``return_raw`` also returns the pre-normalisation (N+1, K, c)
    aggregates, whose per-channel norms drive channel assignment.
    """
    index = graph if isinstance(graph, GraphIndex) else GraphIndex(graph)
    if K is not None and K != channel_W.shape[0]:
        raise ModelError(f"K={K} but channel_W has {channel_W.shape[0]} channels")
    Z, cache = global_forward(index, item_embed, channel_W, None, activation)
    flat = Z.reshape(Z.shape[0], -1)
    return (flat, cache.A) if return_raw else flat


# ---------------------------------------------------------------- sliding window


@dataclass
class LocalWindowCache:
    zv_slice: np.ndarray  # (B, Tw, d) latent rows that were projected
    lo: int
    U: np.ndarray  # (B, Tw, K, c)
    targets: np.ndarray  # positions (absolute) aggregated
    pairs: list  # per offset: (alpha (B, nt, K), valid (B, nt))
    A: np.ndarray  # (B, nt, K, c)
    activation: str


def local_window_forward(
    z_v: np.ndarray,
    valid: np.ndarray,
    channel_W: np.ndarray,
    L: int,
    positions: np.ndarray | None = None,
    activation: str = "tanh",
) -> tuple[np.ndarray, LocalWindowCache]:
    """Channel-aware aggregation of each position from its L-1 predecessors.

    ``valid`` marks non-padding positions (padding is a left prefix). Padding
    targets come out as zero blocks. Returns (B, len(positions), K, c).
    """
    B, T, _ = z_v.shape
    targets = np.arange(T) if positions is None else np.asarray(positions, dtype=np.int64)
    lo = max(int(targets.min()) - (L - 1), 0)
    zs = z_v[:, lo:]
    U = channel_project(zs, channel_W, activation)
    rel = targets - lo
    U_t = U[:, rel]
    A = U_t.copy()
    pairs = []
    for o in range(1, L):
        src = rel - o
        ok_pos = src >= 0
        src_c = np.where(ok_pos, src, 0)
        U_j = U[:, src_c]
        ok = valid[:, targets] & valid[:, lo + src_c] & ok_pos[None, :]
        alpha = num.softmax(np.sum(U_t * U_j, axis=-1), axis=-1)
        A += np.where(ok[:, :, None, None], alpha[..., None] * U_j, 0.0)
        pairs.append((o, src_c, alpha, ok))
    A = np.where(valid[:, targets][:, :, None, None], A, 0.0)
    Z = num.l2_normalize(A, axis=-1)
    return Z, LocalWindowCache(zs, lo, U, targets, pairs, A, activation)


def local_window_backward(
    cache: LocalWindowCache, dZ: np.ndarray, channel_W: np.ndarray, valid: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (d z_v for the projected slice (B, Tw, d), d channel_W)."""
    dA = num.l2_normalize_backward(cache.A, dZ, axis=-1)
    dA = np.where(valid[:, cache.targets][:, :, None, None], dA, 0.0)
    U = cache.U
    rel = cache.targets - cache.lo
    U_t = U[:, rel]
    dU = np.zeros_like(U)
    dU_t = dA.copy()
    for o, src_c, alpha, ok in cache.pairs:
        U_j = U[:, src_c]
        g = np.where(ok[:, :, None, None], dA, 0.0)
        dalpha = np.sum(g * U_j, axis=-1)
        dU_j = alpha[..., None] * g
        ds = num.softmax_backward(alpha, dalpha, axis=-1)[..., None]
        dU_t += ds * U_j
        dU_j += ds * U_t
        np.add.at(dU, (slice(None), src_c), dU_j)
    np.add.at(dU, (slice(None), rel), dU_t)
    dX = activate_backward(U, dU, cache.activation)
    dz = np.einsum("btkc,kdc->btd", dX, channel_W)
    dW = np.einsum("btd,btkc->kdc", cache.zv_slice, dX)
    return dz, dW


def local_window_aggregate(
    z_v: np.ndarray,
    channel_W: np.ndarray,
    K: int | None = None,
    L: int = 4,
    valid: np.ndarray | None = None,
    activation: str = "tanh",
) -> np.ndarray:
    """z_l for every position; accepts (T, d) or (B, T, d). Output (..., T, K*c)."""
    single = z_v.ndim == 2
    zb = z_v[None] if single else z_v
    if valid is None:
        valid = np.ones(zb.shape[:2], dtype=bool)
    valid = np.atleast_2d(valid)
    if K is not None and K != channel_W.shape[0]:
        raise ModelError(f"K={K} but channel_W has {channel_W.shape[0]} channels")
    Z, _ = local_window_forward(zb, valid, channel_W, L, None, activation)
    out = Z.reshape(Z.shape[0], Z.shape[1], -1)
    return out[0] if single else out


# ---------------------------------------------------------------- prediction & loss


def catalog_log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def combine_and_score(
    z_g: np.ndarray | None,
    z_l: np.ndarray | None,
    combine_Wg: np.ndarray,
    combine_Wl: np.ndarray,
    item_embed: np.ndarray,
) -> np.ndarray:
    """Catalogue distribution over items 1..N for combined representations."""
    z = _combine(z_g, z_l, combine_Wg, combine_Wl)
    return num.softmax(z @ item_embed[1:].T, axis=-1)


def _combine(z_g, z_l, Wg, Wl):
    parts = []
    if z_g is not None:
        parts.append(z_g @ Wg)
    if z_l is not None:
        parts.append(z_l @ Wl)
    if not parts:
        raise ModelError("need at least one of z_g, z_l")
    return parts[0] if len(parts) == 1 else parts[0] + parts[1]


def kl_standard_normal(mu: np.ndarray, log_var: np.ndarray) -> np.ndarray:
    """Elementwise 0.5 (mu^2 + sigma^2 - log sigma^2 - 1)."""
    return 0.5 * (mu * mu + np.exp(log_var) - log_var - 1.0)


def recon_from_probs(y_hat: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Binary cross-entropy of a one-hot target against the catalogue distribution.

    ``target`` holds 1-based item ids; one value per row of ``y_hat``.
    """
    y_hat = np.atleast_2d(y_hat)
    col = np.atleast_1d(target) - 1
    onehot = np.zeros_like(y_hat, dtype=bool)
    onehot[np.arange(y_hat.shape[0]), col] = True
    pos = np.log(np.maximum(y_hat, PROB_FLOOR))
    neg = np.log(np.maximum(1.0 - y_hat, PROB_FLOOR))
    return -np.sum(np.where(onehot, pos, neg), axis=-1)


def elbo_loss(y_hat, target, mu, sigma_or_log_var, beta, log_var: bool = True):
    """(loss, recon, kl) for a single prediction.

    The KL term is summed over every entry of ``mu``. Pass
    ``log_var=False`` to supply sigma directly.
    """
    mu = np.asarray(mu, dtype=np.float64)
    s = np.asarray(sigma_or_log_var, dtype=np.float64)
    lv = s if log_var else np.log(s * s)
    recon = float(recon_from_probs(np.asarray(y_hat), np.asarray([target]))[0])
    kl = float(np.sum(kl_standard_normal(mu, lv)))
    return recon + beta * kl, recon, kl


# ---------------------------------------------------------------- full model


@dataclass
class LossParts:
    loss: float
    recon: float
    kl: float
    recon_per_window: np.ndarray = field(repr=False, default=None)
    kl_per_window: np.ndarray = field(repr=False, default=None)


@dataclass
class ForwardTrace:
    z_g: np.ndarray | None
    h_s: np.ndarray | None
    mu_v: np.ndarray | None
    sigma_v: np.ndarray | None
    z_v: np.ndarray | None
    z_l: np.ndarray | None
    z: np.ndarray
    y_hat: np.ndarray | None
    attn_weights: np.ndarray | None = None


class EGDGNNNet:
    """The network as a pure function of (params, batch, noise).

    ``forward`` returns the loss and a cache; ``backward`` turns the cache
    into gradients for every parameter.
    """

    def __init__(self, hp: HyperParams, n_items: int, graph: GlobalGraph | None):
        self.hp = hp
        self.n_items = n_items
        if hp.uses_global and graph is None:
            raise ModelError(f"ablation {hp.ablation!r} needs the global graph")
        self.index = GraphIndex(graph) if graph is not None else None

    # -- local encoder --------------------------------------------------

    def _encode_local(self, params, idx, eps, masks):
        hp = self.hp
        act = hp.activation
        B, T = idx.shape
        if T != params["pos_embed"].shape[0]:
            raise ModelError(f"window length {T} != position table {params['pos_embed'].shape[0]}")
        valid = idx != 0
        if not np.all(valid[:, -1]):
            raise ModelError("window is entirely padding")
        c = {"valid": valid, "idx": idx}
        H = params["item_embed"][idx] + params["pos_embed"][None]
        mH = masks.get("H")
        Hd = H * mH if mH is not None else H
        c["mH"], c["Hd"] = mH, Hd
        if hp.uses_savae:
            Q = Hd @ params["attn_WQ"]
            Kk = Hd @ params["attn_WK"]
            V = Hd @ params["attn_WV"]
            causal = np.triu(np.ones((T, T), dtype=bool), k=1)
            mask = causal[None] | ~valid[:, None, :]
            D, acache = num.scaled_dot_attention(Q, Kk, V, mask, query_mask=~valid)
            mD = masks.get("D")
            Dd = D * mD if mD is not None else D
            hs, lncache = num.layer_norm(Dd + Hd, params["ln_gain"], params["ln_bias"])
            mu = hs @ params["vae_mu_W"] + params["vae_mu_b"]
            lv = hs @ params["vae_logvar_W"] + params["vae_logvar_b"]
            sample = num.GaussianSample(eps if eps is not None else np.zeros_like(mu))
            zv = num.reparameterize(mu, lv, sample)
            c.update(acache=acache, mD=mD, hs=hs, lncache=lncache, mu=mu, lv=lv, sample=sample)
        else:
            zv = Hd
        c["zv"] = zv
        if hp.uses_sliwin:
            Zl, lcache = local_window_forward(zv, valid, params["channel_W"], hp.L, np.array([T - 1]), act)
            zl_last = Zl[:, 0].reshape(B, -1)
            c["lcache"] = lcache
        else:
            zl_last = zv[:, -1]
        c["zl_last"] = zl_last
        return c

    def _kl(self, c):
        valid = c["valid"]
        n_valid = valid.sum(axis=1)
        per_pos = kl_standard_normal(c["mu"], c["lv"]).sum(axis=-1)
        return np.where(valid, per_pos, 0.0).sum(axis=1) / n_valid

    # -- forward ---------------------------------------------------------

    def forward(self, params, idx, targets, eps=None, masks=None):
        """Mean batch loss over windows ``idx`` (B, T) predicting ``targets`` (B,)."""
        hp = self.hp
        masks = masks or {}
        idx = np.asarray(idx, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        B = idx.shape[0]
        cache = {"idx": idx, "targets": targets}
        zg_last = zl_last = None
        if hp.uses_global:
            last = idx[:, -1]
            rows, inv = np.unique(last, return_inverse=True)
            Zg, gcache = global_forward(self.index, params["item_embed"], params["channel_W"], rows, hp.activation)
            zg_last = Zg.reshape(len(rows), -1)[inv]
            cache.update(gcache=gcache, g_inv=inv, zg_last=zg_last)
        if hp.uses_local:
            lc = self._encode_local(params, idx, eps, masks)
            zl_last = lc["zl_last"]
            cache["local"] = lc
        z = _combine(zg_last, zl_last, params["combine_Wg"], params["combine_Wl"])
        scores = z @ params["item_embed"][1:].T
        logp = catalog_log_softmax(scores)
        y_hat = np.exp(logp)
        recon = recon_from_probs(y_hat, targets)
        if hp.uses_local and hp.uses_savae:
            kl = self._kl(cache["local"])
        else:
            kl = np.zeros(B)
        cache.update(z=z, y_hat=y_hat)
        parts = LossParts(
            loss=float(np.mean(recon + hp.beta * kl)),
            recon=float(np.mean(recon)),
            kl=float(np.mean(kl)),
            recon_per_window=recon,
            kl_per_window=kl,
        )
        return parts, cache

    def loss(self, params, idx, targets, eps=None, masks=None) -> float:
        return self.forward(params, idx, targets, eps, masks)[0].loss

    # -- backward --------------------------------------------------------

    def backward(self, params, cache) -> dict[str, np.ndarray]:
        hp = self.hp
        grads = zeros_like_params(params)
        E = params["item_embed"]
        idx, targets = cache["idx"], cache["targets"]
        B = idx.shape[0]
        y_hat = cache["y_hat"]
        cols = targets - 1

        # d recon / d y_hat, with zero slope where the log argument was floored
        g = np.where(1.0 - y_hat > PROB_FLOOR, 1.0 / np.maximum(1.0 - y_hat, PROB_FLOOR), 0.0)
        tgt_p = y_hat[np.arange(B), cols]
        g[np.arange(B), cols] = np.where(tgt_p > PROB_FLOOR, -1.0 / np.maximum(tgt_p, PROB_FLOOR), 0.0)
        dscores = num.softmax_backward(y_hat, g, axis=-1) / B
        z = cache["z"]
        dz = dscores @ E[1:]
        grads["item_embed"][1:] += dscores.T @ z

        if hp.uses_global:
            zg_last = cache["zg_last"]
            grads["combine_Wg"] += zg_last.T @ dz
            dzg = dz @ params["combine_Wg"].T
            gcache = cache["gcache"]
            dZ = np.zeros((len(gcache.rows), zg_last.shape[1]))
            np.add.at(dZ, cache["g_inv"], dzg)
            dZ = dZ.reshape(len(gcache.rows), hp.K, hp.d_channel)
            support, dE_s, dW = global_backward(gcache, dZ, E, params["channel_W"])
            np.add.at(grads["item_embed"], support, dE_s)
            grads["channel_W"] += dW

        if hp.uses_local:
            self._backward_local(params, cache["local"], dz, grads, B)

        grads["item_embed"][0] = 0.0
        return grads

    def _backward_local(self, params, c, dz, grads, B):
        hp = self.hp
        zl_last = c["zl_last"]
        grads["combine_Wl"] += zl_last.T @ dz
        dzl = dz @ params["combine_Wl"].T
        valid = c["valid"]
        T = valid.shape[1]
        dzv = np.zeros_like(c["zv"])
        if hp.uses_sliwin:
            lcache = c["lcache"]
            dZl = dzl.reshape(B, 1, hp.K, hp.d_channel)
            dz_slice, dW = local_window_backward(lcache, dZl, params["channel_W"], valid)
            dzv[:, lcache.lo:] += dz_slice
            grads["channel_W"] += dW
        else:
            dzv[:, -1] += dzl

        if hp.uses_savae:
            mu, lv, sample = c["mu"], c["lv"], c["sample"]
            dmu, dlv = num.reparameterize_backward(lv, sample, dzv)
            w = (valid / valid.sum(axis=1, keepdims=True))[..., None] * (hp.beta / B)
            dmu = dmu + w * mu
            dlv = dlv + w * 0.5 * (np.exp(lv) - 1.0)
            hs = c["hs"]
            grads["vae_mu_W"] += np.einsum("btd,bte->de", hs, dmu)
            grads["vae_mu_b"] += dmu.sum(axis=(0, 1))
            grads["vae_logvar_W"] += np.einsum("btd,bte->de", hs, dlv)
            grads["vae_logvar_b"] += dlv.sum(axis=(0, 1))
            dhs = dmu @ params["vae_mu_W"].T + dlv @ params["vae_logvar_W"].T
            dR, dgain, dbias = num.layer_norm_backward(c["lncache"], dhs)
            grads["ln_gain"] += dgain
            grads["ln_bias"] += dbias
            dD = dR * c["mD"] if c["mD"] is not None else dR
            dQ, dK, dV = num.scaled_dot_attention_backward(c["acache"], dD)
            Hd = c["Hd"]
            grads["attn_WQ"] += np.einsum("btd,bte->de", Hd, dQ)
            grads["attn_WK"] += np.einsum("btd,bte->de", Hd, dK)
            grads["attn_WV"] += np.einsum("btd,bte->de", Hd, dV)
            dHd = (
                dR
                + dQ @ params["attn_WQ"].T
                + dK @ params["attn_WK"].T
                + dV @ params["attn_WV"].T
            )
        else:
            dHd = dzv
        dH = dHd * c["mH"] if c["mH"] is not None else dHd
        grads["pos_embed"] += dH.sum(axis=0)
        np.add.at(grads["item_embed"], c["idx"], dH)

    def loss_and_grads(self, params, idx, targets, eps=None, masks=None):
        parts, cache = self.forward(params, idx, targets, eps, masks)
        grads = self.backward(params, cache)
        return parts, grads

    # -- inference -------------------------------------------------------

    def global_table(self, params) -> np.ndarray | None:
        if not self.hp.uses_global:
            return None
        return global_aggregate(self.index, params["item_embed"], params["channel_W"], activation=self.hp.activation)

    def represent(self, params, idx, zg_table=None) -> np.ndarray:
        """Combined sequence representation z (B, d) in evaluation mode (mu, no dropout)."""
        hp = self.hp
        idx = np.asarray(idx, dtype=np.int64)
        zg = zl = None
        if hp.uses_global:
            table = zg_table if zg_table is not None else self.global_table(params)
            zg = table[idx[:, -1]]
        if hp.uses_local:
            zl = self._encode_local(params, idx, None, {})["zl_last"]
        return _combine(zg, zl, params["combine_Wg"], params["combine_Wl"])

    def trace(self, params, idx, targets=None, eps=None) -> ForwardTrace:
        """All intermediate tensors for ``idx`` with every position of z_l."""
        hp = self.hp
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        zg_all = self.global_table(params)
        zg = zg_all[idx[:, -1]] if zg_all is not None else None
        hs = mu = sigma = zv = zl_all = weights = None
        zl_last = None
        if hp.uses_local:
            c = self._encode_local(params, idx, eps, {})
            zv = c["zv"]
            if hp.uses_savae:
                hs, mu = c["hs"], c["mu"]
                sigma = np.exp(0.5 * c["lv"])
                weights = c["acache"].weights
            if hp.uses_sliwin:
                zl_all = local_window_aggregate(zv, params["channel_W"], L=hp.L, valid=c["valid"], activation=hp.activation)
            zl_last = c["zl_last"]
        z = _combine(zg, zl_last, params["combine_Wg"], params["combine_Wl"])
        y_hat = num.softmax(z @ params["item_embed"][1:].T, axis=-1)
        return ForwardTrace(zg_all, hs, mu, sigma, zv, zl_all, z, y_hat, weights)
