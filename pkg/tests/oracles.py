"""Literal loop implementations used as independent references.

Written against the defining formulas with plain Python floats and the
``math`` module; nothing here calls into the package's vectorised code.
"""

import math


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _project(h, W_k):
    # tanh(W_k^T h) for one channel; W_k is a d x c nested list
    d, c = len(W_k), len(W_k[0])
    return [math.tanh(sum(W_k[r][col] * h[r] for r in range(d))) for col in range(c)]


def _softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def _normalize(v):
    n = math.sqrt(sum(x * x for x in v))
    return list(v) if n < 1e-12 else [x / n for x in v]


def edge_probs(h_i, h_j, W):
    scores = [_dot(_project(h_i, W_k), _project(h_j, W_k)) for W_k in W]
    return _softmax(scores)


def channel_aware_loops(E, W, adjacency):
    """Channel-aware aggregation: self term plus alpha-weighted neighbour terms,
    then per-channel normalisation and concatenation. Neighbour terms use the
    initial channel projections."""
    K = len(W)
    n = len(E)
    init = [[_project(E[i], W[k]) for k in range(K)] for i in range(n)]
    out = []
    for i in range(n):
        z = [list(init[i][k]) for k in range(K)]
        for j in adjacency[i]:
            logits = [_dot(init[i][k], init[j][k]) for k in range(K)]
            alpha = _softmax(logits)
            for k in range(K):
                for col in range(len(z[k])):
                    z[k][col] += alpha[k] * init[j][k][col]
        row = []
        for k in range(K):
            row.extend(_normalize(z[k]))
        out.append(row)
    return out


def window_aggregate_loops(zv, W, L, first_valid=0):
    """For each target i >= first_valid, aggregate from positions
    max(first_valid, i-L+1) <= j < i."""
    K = len(W)
    T = len(zv)
    c = len(W[0][0])
    out = []
    for i in range(T):
        if i < first_valid:
            out.append([0.0] * (K * c))
            continue
        proj_i = [_project(zv[i], W[k]) for k in range(K)]
        z = [list(p) for p in proj_i]
        for j in range(max(first_valid, i - L + 1), i):
            proj_j = [_project(zv[j], W[k]) for k in range(K)]
            alpha = _softmax([_dot(proj_i[k], proj_j[k]) for k in range(K)])
            for k in range(K):
                for col in range(c):
                    z[k][col] += alpha[k] * proj_j[k][col]
        row = []
        for k in range(K):
            row.extend(_normalize(z[k]))
        out.append(row)
    return out


def attention_loops(Q, K, V, allowed):
    """D[t] = sum_j softmax_j(q_t . k_j / sqrt(d)) v_j over allowed[t][j]."""
    d = len(Q[0])
    out = []
    for t in range(len(Q)):
        logits = [(_dot(Q[t], K[j]) / math.sqrt(d), j) for j in range(len(K)) if allowed[t][j]]
        m = max(l for l, _ in logits)
        w = [(math.exp(l - m), j) for l, j in logits]
        s = sum(x for x, _ in w)
        row = [0.0] * len(V[0])
        for x, j in w:
            for col in range(len(row)):
                row[col] += x / s * V[j][col]
        out.append(row)
    return out


def dcg_brute(ranked_items, relevant, k):
    return sum(1.0 / math.log2(pos + 1) for pos, v in enumerate(ranked_items[:k], 1) if v in relevant)


def ndcg_brute(ranked_items, relevant, k):
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, len(relevant) + 1))
    return dcg_brute(ranked_items, relevant, k) / ideal


def recall_brute(ranked_items, relevant, k):
    return len(set(ranked_items[:k]) & set(relevant)) / len(relevant)


def graph_edges_brute(sequences):
    edges = set()
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            if a != b:
                edges.add((min(a, b), max(a, b)))
    return edges
