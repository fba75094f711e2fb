"""Plot-ready exports: global item embeddings, channel assignment, 2-D PCA."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def channel_assignment(raw_blocks: np.ndarray) -> np.ndarray:
    """Index of the channel block with the largest l2 norm, per row.

    ``raw_blocks`` is (n, K, c), taken before per-channel normalisation.
    """
    return np.argmax(np.linalg.norm(raw_blocks, axis=-1), axis=-1)


def pca_2d(X: np.ndarray, n_components: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project mean-centred rows onto the top principal axes.

    Each axis is signed so that its largest-magnitude entry is positive.
    Returns (projection (n, n_components), axes (n_components, d)).
    """
    X = np.asarray(X, dtype=np.float64)
    centered = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:n_components].copy()
    for row in axes:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return centered @ axes.T, axes


def write_exports(out_dir, item_ids, z_g: np.ndarray, raw_blocks: np.ndarray) -> dict[str, Path]:
    """Write embeddings.tsv, channels.tsv and pca2d.tsv for items 1..N.

    ``z_g`` and ``raw_blocks`` include the padding row 0, which is skipped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    Z = z_g[1:]
    channels = channel_assignment(raw_blocks[1:])
    proj, _ = pca_2d(Z)
    paths = {name: out / f"{name}.tsv" for name in ("embeddings", "channels", "pca2d")}
    with open(paths["embeddings"], "w") as fh:
        for i, (raw, row) in enumerate(zip(item_ids, Z), 1):
            fh.write(f"{raw}\t{i}\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    with open(paths["channels"], "w") as fh:
        fh.write("item\tindex\tchannel\n")
        for i, (raw, ch) in enumerate(zip(item_ids, channels), 1):
            fh.write(f"{raw}\t{i}\t{int(ch)}\n")
    with open(paths["pca2d"], "w") as fh:
        fh.write("item\tindex\tx\ty\tchannel\n")
        for i, (raw, (x, y), ch) in enumerate(zip(item_ids, proj, channels), 1):
            fh.write(f"{raw}\t{i}\t{x!r}\t{y!r}\t{int(ch)}\n")
    return paths
