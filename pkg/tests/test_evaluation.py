import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaze_ssl.evaluation import (
    export_embeddings, extract_features, parameter_hash, read_embeddings, train_probe,
)
from gaze_ssl.nn.layers import Encoder

SMALL = dict(widths=(8, 16), groups=4)


def images(n, seed=0, size=16):
    return np.random.default_rng(seed).integers(0, 256, size=(n, size, size, 3), dtype=np.uint8)


class TestExtractFeatures:
    def test_deterministic_rows(self):
        enc = Encoder(**SMALL, seed=1)
        x = images(3)
        x[2] = x[0]
        f = extract_features(enc, x)
        np.testing.assert_array_equal(f[0], f[2])
        np.testing.assert_array_equal(f, extract_features(enc, x))

    def test_encoder_untouched(self):
        enc = Encoder(**SMALL, seed=1)
        before = parameter_hash(enc)
        extract_features(enc, images(5))
        assert parameter_hash(enc) == before

    def test_default_width(self):
        f = extract_features(Encoder(seed=0), images(2, size=32))
        assert f.shape == (2, 128) and f.dtype == np.float32

    def test_batching_is_invisible(self):
        enc = Encoder(**SMALL, seed=2)
        x = images(7)
        np.testing.assert_allclose(extract_features(enc, x, batch_size=2), extract_features(enc, x), rtol=1e-6, atol=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            extract_features(Encoder(**SMALL), np.zeros((2, 16, 16), np.uint8))


def clusters(n_per, k, d=6, spread=0.05, seed=0):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0, 3, size=(k, d))
    x = np.concatenate([c + rng.normal(0, spread, size=(n_per, d)) for c in centres])
    y = np.repeat(np.arange(k), n_per)
    return x, y


class TestProbe:
    def test_separable_clusters(self):
        x, y = clusters(40, 2)
        idx = np.random.default_rng(1).permutation(len(y))
        res = train_probe(x, y, idx[:60], idx[60:])
        assert res.accuracy == 1.0

    def test_shuffled_labels_are_at_chance(self):
        accs = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(1600, 16))
            y = rng.permutation(np.repeat(np.arange(8), 200))
            accs.append(train_probe(x, y, np.arange(800), np.arange(800, 1600)).accuracy)
        assert abs(np.mean(accs) - 1 / 8) <= 0.05

    def test_duplicated_rows_give_same_predictions(self):
        x, y = clusters(30, 3, spread=1.5, seed=4)
        tr, te = np.arange(0, 90, 2), np.arange(1, 90, 2)
        a = train_probe(x, y, tr, te)
        x2 = np.concatenate([x, x[tr]])
        y2 = np.concatenate([y, y[tr]])
        b = train_probe(x2, y2, np.concatenate([tr, np.arange(90, 90 + len(tr))]), te)
        np.testing.assert_array_equal(a.predictions, b.predictions)

    def test_confusion_invariants(self):
        x, y = clusters(25, 4, spread=2.0, seed=2)
        idx = np.random.default_rng(0).permutation(len(y))
        res = train_probe(x, y, idx[:70], idx[70:])
        assert res.confusion.sum() == res.n_test == 30
        np.testing.assert_array_equal(res.confusion.sum(axis=1), np.bincount(y[idx[70:]], minlength=4))
        assert res.accuracy == pytest.approx(np.trace(res.confusion) / 30)
        assert 0.0 <= res.accuracy <= 1.0

    def test_stops_on_small_gradient(self):
        x, y = clusters(20, 2, spread=0.01)
        res = train_probe(x, y, np.arange(0, 40, 2), np.arange(1, 40, 2), tol=10.0)
        assert res.epochs_run == 1

    def test_single_class_rejected(self):
        x, y = clusters(10, 2)
        with pytest.raises(ValueError):
            train_probe(x, y, np.arange(10), np.arange(10, 20))

    def test_overlap_rejected(self):
        x, y = clusters(10, 2)
        with pytest.raises(ValueError):
            train_probe(x, y, np.arange(15), np.arange(10, 20))

    def test_non_integer_labels(self):
        x, y = clusters(20, 2)
        names = np.array(["cup", "duck"])[y]
        res = train_probe(x, names, np.arange(0, 40, 2), np.arange(1, 40, 2))
        assert set(res.predictions) <= {"cup", "duck"}


class TestEmbeddings:
    def test_shape(self, tmp_path):
        path = export_embeddings(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), np.array([0, 1, 2]), tmp_path / "e.csv")
        rows = path.read_text().strip().splitlines()
        assert len(rows) == 4 and all(len(r.split(",")) == 3 for r in rows)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 40), st.integers(1, 8), st.integers(0, 10_000))
    def test_round_trip(self, tmp_path_factory, n, d, seed):
        rng = np.random.default_rng(seed)
        f = (rng.normal(size=(n, d)) * 10.0 ** rng.integers(-4, 5, size=(n, d))).astype(np.float32)
        y = rng.integers(0, 8, n)
        path = export_embeddings(f, y, tmp_path_factory.mktemp("emb") / "e.csv")
        g, z = read_embeddings(path)
        assert len(g) == n
        if n:
            np.testing.assert_allclose(g, f, rtol=1e-7)
            np.testing.assert_array_equal(z, y)

    def test_misaligned(self, tmp_path):
        with pytest.raises(ValueError):
            export_embeddings(np.zeros((2, 2)), np.zeros(3), tmp_path / "e.csv")
