import numpy as np

from egd_gnn.export import channel_assignment, pca_2d, write_exports


def test_single_channel_assignment():
    raw = np.random.default_rng(0).normal(size=(30, 1, 4))
    assert np.all(channel_assignment(raw) == 0)


def test_assignment_picks_largest_block():
    raw = np.zeros((2, 3, 2))
    raw[0, 2] = [3.0, 4.0]
    raw[0, 0] = [1.0, 1.0]
    raw[1, 1] = [-9.0, 0.0]
    assert channel_assignment(raw).tolist() == [2, 1]


def test_pca_of_2d_data_is_an_isometry():
    X = np.random.default_rng(1).normal(size=(40, 2)) @ np.array([[3.0, 1.0], [0.0, 0.5]])
    proj, axes = pca_2d(X)
    d0 = np.linalg.norm(X[:, None] - X[None], axis=-1)
    d1 = np.linalg.norm(proj[:, None] - proj[None], axis=-1)
    assert np.abs(d0 - d1).max() < 1e-9
    np.testing.assert_allclose(axes @ axes.T, np.eye(2), atol=1e-12)


def test_pca_matches_covariance_eigendecomposition():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 6)) * np.array([5.0, 3.0, 1.0, 0.5, 0.2, 0.1])
    X = X @ np.linalg.qr(rng.normal(size=(6, 6)))[0]
    proj, axes = pca_2d(X)
    vals, vecs = np.linalg.eigh(np.cov(X, rowvar=False))
    top = vecs[:, np.argsort(vals)[::-1][:2]].T
    for a, b in zip(axes, top):
        assert min(np.abs(a - b).max(), np.abs(a + b).max()) < 1e-9
    for a in axes:
        assert a[np.argmax(np.abs(a))] > 0


def test_write_exports(tmp_path):
    rng = np.random.default_rng(3)
    raw = rng.normal(size=(6, 2, 3))
    z = raw.reshape(6, -1)
    paths = write_exports(tmp_path, ["a", "b", "c", "d", "e"], z, raw)
    emb = paths["embeddings"].read_text().splitlines()
    assert len(emb) == 5 and emb[0].split("\t")[:2] == ["a", "1"]
    assert np.allclose([float(x) for x in emb[0].split("\t")[2:]], z[1])
    ch = paths["channels"].read_text().splitlines()
    assert ch[1].split("\t")[2] == str(channel_assignment(raw[1:])[0])
