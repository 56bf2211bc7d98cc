import numpy as np
import pytest

from ltvrank.pdq import PageGroupSpec, TABLE4_BOUNDARIES
from ltvrank.predictor import (
    FEATURE_FIELDS,
    HashConfig,
    PredictorParams,
    StreamData,
    TrainConfig,
    TrainingDiverged,
    encode_features,
    forward,
    gradient_check,
    hybrid_loss,
    load_params,
    mse_loss,
    predict,
    save_params,
    train,
    tweedie_loss,
)

from conftest import make_session


def random_features(rng, n, hc=None):
    hc = hc or HashConfig()
    cols = [rng.integers(0, hc.vocab[f] + 1, size=n) for f in FEATURE_FIELDS]
    return np.column_stack(cols).astype(np.int64)


class TestEncodeFeatures:
    def test_shape_and_determinism(self):
        sess = make_session([1.0] * 6)
        spec = PageGroupSpec(ranges=TABLE4_BOUNDARIES)
        f1 = encode_features(sess.records, spec)
        f2 = encode_features(sess.records, spec)
        assert f1.shape == (6, 5)
        np.testing.assert_array_equal(f1, f2)

    def test_missing_id_uses_reserved_bucket(self):
        hc = HashConfig()
        assert hc.encode("category", None) == hc.vocab["category"]

    def test_indices_within_vocab(self):
        sess = make_session([1.0] * 8)
        spec = PageGroupSpec(ranges=TABLE4_BOUNDARIES)
        feats = encode_features(sess.records, spec)
        hc = HashConfig()
        for i, f in enumerate(FEATURE_FIELDS):
            assert feats[:, i].max() <= hc.vocab[f]


class TestForward:
    def test_zero_init_head_values(self):
        config = TrainConfig(seed=0)
        params = PredictorParams.init(config)
        for name in params.arrays:
            params.arrays[name][:] = 0.0
        feats = random_features(np.random.default_rng(0), 4)
        preds, _ = forward(params, feats)
        np.testing.assert_allclose(preds["pdq"], 0.5)          # squash(0)
        np.testing.assert_allclose(preds["watch"], 1.0)        # exp(0)
        np.testing.assert_allclose(preds["slide"], 0.0)        # identity(0)

    def test_determinism(self):
        params = PredictorParams.init(TrainConfig(seed=3))
        feats = random_features(np.random.default_rng(1), 16)
        p1, _ = forward(params, feats)
        p2, _ = forward(params, feats)
        for h in p1:
            np.testing.assert_array_equal(p1[h], p2[h])

    def test_head_ranges(self):
        params = PredictorParams.init(TrainConfig(seed=4))
        feats = random_features(np.random.default_rng(2), 64)
        preds, _ = forward(params, feats)
        assert np.all((preds["pdq"] > 0) & (preds["pdq"] < 1))
        assert np.all(preds["watch"] > 0)
        assert np.all(preds["attr"] > 0)

    def test_predict_matches_forward_chunked(self):
        params = PredictorParams.init(TrainConfig(seed=5))
        feats = random_features(np.random.default_rng(3), 50)
        whole, _ = forward(params, feats)
        chunked = predict(params, feats, batch_size=7)
        for h in whole:
            # BLAS may block the matmuls differently per batch shape, so
            # agreement is to rounding, not bitwise
            np.testing.assert_allclose(whole[h], chunked[h],
                                       rtol=1e-12, atol=1e-12)


class TestLosses:
    def test_tweedie_zero_label(self):
        assert tweedie_loss(np.array([1.0]), np.array([0.0]), rho=1.5) == 2.0

    def test_tweedie_unit_label(self):
        assert tweedie_loss(np.array([1.0]), np.array([1.0]), rho=1.5) == 4.0

    def test_tweedie_rejects_nonpositive_mu(self):
        with pytest.raises(ValueError, match="mu > 0"):
            tweedie_loss(np.array([0.0]), np.array([1.0]))

    def test_tweedie_rejects_bad_rho(self):
        for rho in (1.0, 2.0, 0.5):
            with pytest.raises(ValueError, match="rho"):
                tweedie_loss(np.array([1.0]), np.array([1.0]), rho=rho)

    def test_mse_zero_on_match(self):
        x = np.array([1.0, 2.0, 3.0])
        assert mse_loss(x, x) == 0.0

    def test_hybrid_lambda_zero_is_mse(self):
        p = np.array([1.0, 2.0])
        y = np.array([0.5, 2.5])
        assert hybrid_loss(p, y, lam=0.0) == mse_loss(p, y)

    def test_hybrid_composed_oracle(self):
        # unit gap MSE (1.0) plus 0.1 times the zero-label Tweedie value (2.0)
        p = np.array([1.0])
        y = np.array([0.0])
        assert hybrid_loss(p, y, lam=0.1, rho=1.5) == pytest.approx(1.2)

    def test_hybrid_rejects_negative_lambda(self):
        with pytest.raises(ValueError, match="lam"):
            hybrid_loss(np.array([1.0]), np.array([1.0]), lam=-0.1)


class TestTrainConfig:
    def test_validate_bounds(self):
        with pytest.raises(ValueError, match="rho"):
            TrainConfig(rho=2.5).validate()
        with pytest.raises(ValueError, match="lam"):
            TrainConfig(lam=-1.0).validate()
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=0).validate()

    def test_loss_override(self):
        cfg = TrainConfig(head_losses={"watch": "mse"})
        assert cfg.loss_for("watch") == "mse"
        assert cfg.loss_for("attr") == "hybrid"
        assert cfg.loss_for("pdq") == "mse"


class TestTraining:
    def make_day(self, rng, n=256, heads=("slide",)):
        feats = random_features(rng, n)
        labels = {h: rng.gamma(1.0, 10.0, size=n) for h in heads}
        return StreamData(features=feats, labels=labels)

    def test_lr_zero_leaves_params_unchanged(self):
        rng = np.random.default_rng(0)
        cfg = TrainConfig(epochs=2, learning_rate=0.0, seed=1)
        init = PredictorParams.init(cfg, heads=("slide",))
        before = {k: v.copy() for k, v in init.arrays.items()}
        out, _ = train([(self.make_day(rng), None)], cfg, heads=("slide",),
                       params=init)
        for k in before:
            np.testing.assert_array_equal(before[k], out.arrays[k])

    def test_author_step_stop_gradient(self):
        rng = np.random.default_rng(1)
        cfg = TrainConfig(epochs=1, seed=2)
        init = PredictorParams.init(cfg, heads=("author",))
        before = {k: v.copy() for k, v in init.arrays.items()}
        delayed = StreamData(features=random_features(rng, 128),
                             labels={"author": rng.gamma(1.0, 10.0, size=128)})
        empty_std = StreamData(features=np.empty((0, 5), dtype=np.int64), labels={})
        out, _ = train([(empty_std, delayed)], cfg, heads=("author",), params=init)
        for k in before:
            if k.startswith("tower/author/"):
                assert not np.array_equal(before[k], out.arrays[k]), k
            else:
                np.testing.assert_array_equal(before[k], out.arrays[k])

    def test_toy_regression_loss_decreases(self):
        # labels are a deterministic function of one id column, so the
        # embeddings can memorize them and the loss must come down
        rng = np.random.default_rng(2)
        feats = random_features(rng, 512)
        labels = {"slide": (feats[:, 0] % 7).astype(float)}
        day = StreamData(features=feats, labels=labels)
        cfg = TrainConfig(epochs=5, seed=3, learning_rate=0.05)
        _, trace = train([(day, None)], cfg, heads=("slide",))
        losses = [row["slide"] for row in trace]
        assert losses[-1] < 0.6 * losses[0]

    def test_determinism(self):
        rng = np.random.default_rng(3)
        day = self.make_day(rng, n=300, heads=("slide", "watch"))
        cfg = TrainConfig(epochs=2, seed=4)
        p1, t1 = train([(day, None)], cfg, heads=("slide", "watch"))
        p2, t2 = train([(day, None)], cfg, heads=("slide", "watch"))
        assert t1 == t2
        for k in p1.arrays:
            np.testing.assert_array_equal(p1.arrays[k], p2.arrays[k])

    def test_divergence_names_head(self):
        rng = np.random.default_rng(4)
        feats = random_features(rng, 256)
        labels = {"slide": rng.gamma(1.0, 10.0, size=256)}
        day = StreamData(features=feats, labels=labels)
        cfg = TrainConfig(epochs=5, seed=5, learning_rate=1e40)
        with np.errstate(over="ignore", invalid="ignore"), \
                pytest.raises(TrainingDiverged, match="slide"):
            train([(day, None)], cfg, heads=("slide",))


class TestGradientCheck:
    @pytest.mark.parametrize("head,loss", [
        ("slide", "mse"), ("watch", "tweedie"), ("attr", "hybrid"),
        ("pdq", "mse"), ("completion", "mse"),
    ])
    def test_all_losses(self, head, loss):
        rng = np.random.default_rng(7)
        params = PredictorParams.init(TrainConfig(seed=7), heads=(head,))
        feats = random_features(rng, 32)
        if head in ("pdq", "completion"):
            labels = rng.random(32)
        else:
            labels = rng.gamma(1.0, 5.0, size=32)
        err = gradient_check(params, head, loss, feats, labels,
                             n_probes=25, seed=11)
        assert err < 1e-4


class TestPersistence:
    def test_round_trip_bitwise(self, tmp_path):
        params = PredictorParams.init(TrainConfig(seed=9))
        path = tmp_path / "params.txt"
        save_params(path, params, meta="config=x seed=9")
        back = load_params(path)
        assert back.heads == params.heads
        assert back.hash_config.vocab == params.hash_config.vocab
        assert sorted(back.arrays) == sorted(params.arrays)
        for k in params.arrays:
            np.testing.assert_array_equal(params.arrays[k], back.arrays[k])

    def test_bad_header(self, tmp_path):
        path = tmp_path / "params.txt"
        path.write_text("#nope\n")
        with pytest.raises(ValueError, match="bad header"):
            load_params(path)
