"""Self-checks run by ``egd-gnn verify``: gradients and structural properties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import build_global_graph
from .model import ABLATIONS, HyperParams, edge_channel_probs, global_aggregate, local_window_aggregate
from .training import TINY, check_model_gradients


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def gradient_checks(tol: float = 1e-5) -> list[CheckResult]:
    out = []
    for ablation in ABLATIONS:
        rep = check_model_gradients(HyperParams(**TINY, ablation=ablation))
        bad = rep.failing(tol)
        out.append(CheckResult(
            f"gradient[{ablation}]", not bad,
            f"max rel err {rep.max_error:.2e} (tol {tol:g})" + (f"; failing {bad}" if bad else ""),
        ))
    return out


def property_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    K, d, c = 4, 12, 5
    W = rng.normal(0, 0.5, size=(K, d, c))
    h = rng.normal(0, 1.0, size=(1000, 2, d))
    alphas = np.array([edge_channel_probs(a, b, W) for a, b in h])
    back = np.array([edge_channel_probs(b, a, W) for a, b in h])
    simplex = float(np.abs(alphas.sum(axis=1) - 1).max())
    results = [
        CheckResult("channel simplex", simplex < 1e-9, f"max |sum-1| = {simplex:.1e}"),
        CheckResult("edge symmetry", bool(np.array_equal(alphas, back)), "alpha(i,j) == alpha(j,i)"),
    ]
    n_items = 60
    seqs = [list(rng.integers(1, n_items + 1, size=rng.integers(2, 15))) for _ in range(40)]
    graph = build_global_graph(seqs, n_items)
    E = rng.normal(0, 1.0, size=(n_items + 1, d))
    zg = global_aggregate(graph, E, W).reshape(n_items + 1, K, c)[1:]
    zv = rng.normal(0, 1.0, size=(20, 10, d))
    zl = local_window_aggregate(zv, W, L=4).reshape(20, 10, K, c)
    dev = max(np.abs(np.linalg.norm(zg, axis=-1) - 1).max(), np.abs(np.linalg.norm(zl, axis=-1) - 1).max())
    results.append(CheckResult("unit channel norms", dev < 1e-9, f"max |norm-1| = {dev:.1e}"))
    bumped = zv.copy()
    bumped[:, 4] += 1.0
    zl2 = local_window_aggregate(bumped, W, L=4).reshape(20, 10, K, c)
    causal = bool(np.array_equal(zl[:, :4], zl2[:, :4]) and not np.allclose(zl[:, 4:7], zl2[:, 4:7]))
    results.append(CheckResult("window causality", causal, "position 4 perturbation only moves positions >= 4"))
    return results


def run_all(include_gradients: bool = True) -> list[CheckResult]:
    results = gradient_checks() if include_gradients else []
    return results + property_checks()
