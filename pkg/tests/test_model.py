import numpy as np
import pytest

from alorat import attention, data, embedding, linalg, model
from alorat.attention import AttentionLayerParams, AttentionTrace
from alorat.data import DataError, TimeSeriesFrame
from alorat.embedding import EmbeddingKernels
from alorat.model import ModelParams, Thresholds, TrainConfig


def tiny_cfg(**over):
    base = dict(
        t_window=8,
        d_model=4,
        heads=2,
        layers=2,
        lambda_reg=2.0,
        learning_rate=1e-3,
        max_epochs=3,
        patience=3,
        k_pairs=4,
        seed=0,
        batch_size=16,
    )
    base.update(over)
    return TrainConfig(**base)


def random_params(cfg, d, seed):
    values = np.random.default_rng(seed).normal(size=(50, d))
    params, _ = model.init_params(values, cfg, np.random.default_rng(seed + 1))
    return params


def zero_params(cfg, d):
    kernels = EmbeddingKernels(
        n_series=d,
        pairs=np.tile([0, 1], (cfg.d_model, 1)),
        weights=np.zeros((cfg.d_model, 2, cfg.kernel_size)),
    )
    dh = cfg.d_model // cfg.heads
    layers = [
        AttentionLayerParams(
            w_q=np.zeros((cfg.heads, cfg.d_model, dh)),
            w_k=np.zeros((cfg.heads, cfg.d_model, dh)),
            w_v=np.zeros((cfg.heads, cfg.d_model, dh)),
            w_proj=np.zeros((cfg.d_model, cfg.d_model)),
            layer_index=l,
        )
        for l in range(cfg.layers)
    ]
    return ModelParams(kernels=kernels, layers=layers, w_out=np.zeros((cfg.d_model, d)))


class TestForward:
    def test_zero_everything_reconstructs_zero(self):
        cfg = tiny_cfg()
        params = zero_params(cfg, 3)
        recon, trace = model.forward(np.zeros((8, 3)), params, cfg)
        np.testing.assert_array_equal(recon, np.zeros((8, 3)))
        assert len(trace.s_layers) == 2

    def test_identity_pipeline(self):
        # one channel per series through a lag-0 impulse, zero value path,
        # identity output projection: the window passes through untouched
        cfg = tiny_cfg(layers=1, d_model=2, heads=1, skip=True)
        kernels = EmbeddingKernels(
            n_series=2,
            pairs=np.array([[0, 1], [0, 1]]),
            weights=np.array(
                [[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]]
            ),
        )
        layer = AttentionLayerParams(
            w_q=np.random.default_rng(0).normal(size=(1, 2, 2)),
            w_k=np.random.default_rng(1).normal(size=(1, 2, 2)),
            w_v=np.zeros((1, 2, 2)),
            w_proj=np.zeros((2, 2)),
        )
        params = ModelParams(kernels=kernels, layers=[layer], w_out=np.eye(2))
        window = np.random.default_rng(2).normal(size=(8, 2))
        recon, trace = model.forward(window, params, cfg)
        np.testing.assert_allclose(recon, window, atol=1e-12)
        # with perfect reconstruction the objective is the penalty term alone
        terms = model.total_loss(window, params, cfg)
        reg = cfg.lambda_reg * linalg.geman_loss_grad(trace.s_layers[0], cfg.r)[0]
        assert terms.recon == pytest.approx(0.0, abs=1e-20)
        assert terms.total == pytest.approx(reg, rel=1e-12, abs=1e-15)

    def test_against_module_chain_oracle(self):
        cfg = tiny_cfg(mask="causal")
        params = random_params(cfg, 3, seed=5)
        window = np.random.default_rng(6).normal(size=(8, 3))
        recon, trace = model.forward(window, params, cfg)

        z = embedding.embed(window, params.kernels)
        mask = cfg.mask_matrix()
        for p, s_expected in zip(params.layers, trace.s_layers):
            z, s_avg = attention.layer_forward(
                z, p, skip=cfg.skip, activation=cfg.activation, mask=mask
            )
            np.testing.assert_allclose(s_avg, s_expected, atol=1e-10)
        np.testing.assert_allclose(recon, z @ params.w_out, atol=1e-10)
        np.testing.assert_allclose(
            trace.final_sigma, linalg.svd(trace.s_layers[-1]).sigma, atol=1e-10
        )

    def test_shape_mismatch(self):
        cfg = tiny_cfg()
        params = random_params(cfg, 3, seed=7)
        with pytest.raises(ValueError):
            model.forward(np.zeros((8, 4)), params, cfg)
        with pytest.raises(ValueError):
            model.forward(np.zeros((9, 3)), params, cfg)


class TestTotalLoss:
    def test_lambda_zero_is_reconstruction_error(self):
        cfg = tiny_cfg(lambda_reg=0.0)
        params = random_params(cfg, 3, seed=8)
        batch = np.random.default_rng(9).normal(size=(4, 8, 3))
        terms = model.total_loss(batch, params, cfg)
        recon, _, _ = model.batch_forward(batch, params, cfg)
        assert terms.reg == 0.0
        assert terms.total == pytest.approx(np.sum((batch - recon) ** 2))

    def test_termwise_oracle(self):
        cfg = tiny_cfg(lambda_reg=3.5)
        params = random_params(cfg, 3, seed=10)
        batch = np.random.default_rng(11).normal(size=(5, 8, 3))
        terms = model.total_loss(batch, params, cfg)

        expected_recon = 0.0
        expected_reg = 0.0
        for window in batch:
            recon, trace = model.forward(window, params, cfg)
            expected_recon += np.sum((window - recon) ** 2)
            for s in trace.s_layers:
                expected_reg += cfg.lambda_reg * linalg.geman_loss_grad(s, cfg.r)[0]
        assert terms.recon == pytest.approx(expected_recon, rel=1e-10)
        assert terms.reg == pytest.approx(expected_reg, rel=1e-10)
        assert terms.total == pytest.approx(expected_recon + expected_reg, rel=1e-10)


class TestCalibration:
    def test_max_rule(self):
        fourth = [0.01, 0.03, 0.02]
        fifth = [0.005, 0.01, 0.002]
        assert model.calibrate_h1(fourth, fifth) == 0.03

    def test_degenerate_zeros(self):
        assert model.calibrate_h1(np.zeros(5), np.zeros(5)) == 0.0

    def test_fifth_can_dominate(self):
        assert model.calibrate_h1([0.1, 0.2], [0.5, 0.0]) == 0.5

    @pytest.mark.parametrize("t_window", [3, 4, 8])
    def test_trained_h1_matches_trajectory_max(self, t_window):
        # windows narrower than 5 fall back to the available trailing
        # singular values
        rng = np.random.default_rng(30 + t_window)
        frame = TimeSeriesFrame(values=rng.normal(size=(60, 2)), names=("a", "b"))
        cfg = tiny_cfg(t_window=t_window, d_model=2, heads=1, layers=1,
                       max_epochs=1, k_pairs=1)
        result = model.train(frame, cfg)
        win = data.windows(frame.values, t_window, 1)
        _, _, sigma = model.batch_forward(win, result.params, cfg)
        idx = [i for i in (3, 4) if i < t_window] or [t_window - 1]
        assert result.thresholds.h1 == np.max(sigma[:, idx])


class TestScores:
    def test_alora_score_identity_attention(self):
        trace = AttentionTrace(s_layers=[np.eye(8)], final_sigma=np.ones(8))
        assert model.alora_t_score(trace, 0.5) == 8

    def test_alora_score_rank_one(self):
        sigma = np.zeros(8)
        sigma[0] = 1.0
        trace = AttentionTrace(s_layers=[], final_sigma=sigma)
        assert model.alora_t_score(trace, 0.5) == 1

    def test_alora_score_monotone_in_h1(self):
        sigma = np.array([1.0, 0.6, 0.3, 0.05])
        trace = AttentionTrace(s_layers=[], final_sigma=sigma)
        counts = [model.alora_t_score(trace, h) for h in (0.0, 0.1, 0.5, 0.9, 2.0)]
        assert counts == sorted(counts, reverse=True)

    def test_alora_score_recount_oracle(self):
        cfg = tiny_cfg()
        params = random_params(cfg, 3, seed=12)
        window = np.random.default_rng(13).normal(size=(8, 3))
        _, trace = model.forward(window, params, cfg)
        h1 = 0.01
        recount = int(np.sum(linalg.svd(trace.s_layers[-1]).sigma > h1))
        assert model.alora_t_score(trace, h1) == recount

    def test_anomaly_score(self):
        assert model.anomaly_score([1.0, 2.0], [1.0, 2.0], 5) == 0.0
        assert model.anomaly_score([1.0, 1.0], [0.0, 0.0], 3) == pytest.approx(6.0)

    def test_anomaly_score_nonnegative_and_zero_iff(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            y = rng.normal(size=4)
            r = rng.normal(size=4)
            score = int(rng.integers(0, 5))
            val = model.anomaly_score(y, r, score)
            assert val >= 0.0
            assert (val == 0.0) == (np.allclose(y, r) or score == 0)


class TestScoreFrame:
    def test_each_timestep_scored_from_its_window(self):
        cfg = tiny_cfg()
        params = random_params(cfg, 3, seed=15)
        values = np.random.default_rng(16).normal(size=(20, 3))
        frame = TimeSeriesFrame(values=values, names=("a", "b", "c"))
        series = model.score_frame(frame, params, cfg, h1=0.01)

        t_len = cfg.t_window
        for t in (t_len - 1, t_len + 3, 19):
            window = values[t - t_len + 1 : t + 1]
            recon, trace = model.forward(window, params, cfg)
            expected = model.anomaly_score(
                values[t], recon[-1], model.alora_t_score(trace, 0.01)
            )
            assert series.anomaly_score[t] == pytest.approx(expected, rel=1e-10)
        # early timesteps come from the first window and are flagged
        recon0, trace0 = model.forward(values[:t_len], params, cfg)
        for t in range(t_len - 1):
            expected = model.anomaly_score(
                values[t], recon0[t], model.alora_t_score(trace0, 0.01)
            )
            assert series.anomaly_score[t] == pytest.approx(expected, rel=1e-10)
            assert series.from_first_window[t]
        assert not series.from_first_window[t_len - 1 :].any()

    def test_too_short(self):
        cfg = tiny_cfg()
        params = random_params(cfg, 3, seed=17)
        frame = TimeSeriesFrame(values=np.zeros((5, 3)), names=("a", "b", "c"))
        with pytest.raises(DataError):
            model.score_frame(frame, params, cfg, h1=0.0)


class TestDetect:
    def _series(self):
        cfg = tiny_cfg()
        params = random_params(cfg, 3, seed=18)
        values = np.random.default_rng(19).normal(size=(30, 3))
        frame = TimeSeriesFrame(values=values, names=("a", "b", "c"))
        return frame, params, cfg

    def test_infinite_threshold_silences(self):
        frame, params, cfg = self._series()
        out = model.detect(frame, params, cfg, Thresholds(h1=0.01, h2=np.inf))
        assert out.labels.sum() == 0

    def test_negative_threshold_alarms_everywhere(self):
        frame, params, cfg = self._series()
        out = model.detect(frame, params, cfg, Thresholds(h1=0.01, h2=-1.0))
        assert out.labels.sum() == frame.n

    def test_requires_complete_thresholds(self):
        frame, params, cfg = self._series()
        with pytest.raises(ValueError):
            model.detect(frame, params, cfg, Thresholds(h1=0.01))

    def test_scores_spike_inside_simulated_shift(self, pinned_sim_run):
        _, _, _, series = pinned_sim_run
        inside = np.median(series.anomaly_score[200:300])
        outside = np.percentile(
            np.concatenate([series.anomaly_score[:200], series.anomaly_score[300:]]), 95
        )
        assert inside > outside

    def test_alarms_cover_simulated_shift(self, pinned_sim_run):
        from alorat.metrics import best_f1_sweep

        cfg, result, shifted, series = pinned_sim_run
        _, _, _, h2 = best_f1_sweep(series.anomaly_score, shifted.labels)
        coverage = np.mean(series.anomaly_score[200:300] >= h2)
        assert coverage >= 0.8


class TestTrain:
    def test_too_short_series(self):
        cfg = tiny_cfg()
        frame = TimeSeriesFrame(values=np.zeros((4, 3)), names=("a", "b", "c"))
        with pytest.raises(DataError):
            model.train(frame, cfg)

    def test_loss_decreases_and_h1_set(self):
        rng = np.random.default_rng(20)
        t = np.arange(120)
        values = np.stack(
            [np.sin(t / 7.0) + 0.1 * rng.normal(size=120) for _ in range(3)], axis=1
        )
        frame, _ = data.normalize(TimeSeriesFrame(values=values, names=("a", "b", "c")))
        cfg = tiny_cfg(max_epochs=5, learning_rate=3e-3)
        result = model.train(frame, cfg)
        assert result.thresholds.h1 is not None and result.thresholds.h1 >= 0
        assert result.history[-1].val_total <= result.history[0].val_total
        assert result.selection is not None

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts(self):
        rng = np.random.default_rng(21)
        frame = TimeSeriesFrame(values=rng.normal(size=(60, 3)), names=("a", "b", "c"))
        cfg = tiny_cfg(learning_rate=1e160, max_epochs=3)
        with pytest.raises(model.NumericError):
            model.train(frame, cfg)

    def test_determinism(self):
        rng = np.random.default_rng(22)
        values = rng.normal(size=(80, 3))
        frame = TimeSeriesFrame(values=values, names=("a", "b", "c"))
        cfg = tiny_cfg(max_epochs=2)
        a = model.train(frame, cfg)
        b = model.train(frame, cfg)
        assert a.thresholds.h1 == b.thresholds.h1
        assert a.params.w_out.tobytes() == b.params.w_out.tobytes()
        assert a.params.kernels.weights.tobytes() == b.params.kernels.weights.tobytes()
        sa = model.score_frame(frame, a.params, cfg, a.thresholds.h1)
        sb = model.score_frame(frame, b.params, cfg, b.thresholds.h1)
        assert sa.anomaly_score.tobytes() == sb.anomaly_score.tobytes()

    def test_partial_freeze(self):
        rng = np.random.default_rng(23)
        frame = TimeSeriesFrame(values=rng.normal(size=(60, 2)), names=("a", "b"))
        cfg = tiny_cfg(d_model=2, heads=1, layers=1, max_epochs=2, k_pairs=1)
        init, _ = model.init_params(frame.values, cfg, np.random.default_rng(3))
        result = model.train(frame, cfg, init=init, trainable=("w_q", "w_k"))
        assert result.params.w_out.tobytes() == init.w_out.tobytes()
        assert result.params.kernels.weights.tobytes() == init.kernels.weights.tobytes()
        assert result.params.layers[0].w_q.tobytes() != init.layers[0].w_q.tobytes()


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = tiny_cfg(mask="causal", activation="gelu", pair_method="pearson")
        values = np.random.default_rng(24).normal(size=(50, 3))
        params, selection = model.init_params(values, cfg, np.random.default_rng(25))
        stats = data.NormStats(mean=values.mean(axis=0), std=values.std(axis=0))
        path = tmp_path / "model.alora"
        model.save_checkpoint(path, params, cfg, selection, h1=0.0123, norm_stats=stats)

        loaded, cfg2, sel2, h1, stats2 = model.load_checkpoint(path)
        assert cfg2 == cfg
        assert h1 == 0.0123
        assert sel2.pairs == selection.pairs
        np.testing.assert_array_equal(loaded.kernels.weights, params.kernels.weights)
        np.testing.assert_array_equal(loaded.kernels.pairs, params.kernels.pairs)
        for a, b in zip(loaded.layers, params.layers):
            for name in ("w_q", "w_k", "w_v", "w_proj"):
                np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        np.testing.assert_array_equal(loaded.w_out, params.w_out)
        np.testing.assert_array_equal(stats2.mean, stats.mean)
        np.testing.assert_array_equal(stats2.std, stats.std)
        assert (tmp_path / "model.alora.manifest.txt").exists()
        with open(path, "rb") as fh:
            assert fh.read(6) == b"ALORA1"

    def test_missing_h1_roundtrips_as_none(self, tmp_path):
        cfg = tiny_cfg()
        values = np.random.default_rng(26).normal(size=(50, 3))
        params, selection = model.init_params(values, cfg, np.random.default_rng(27))
        path = tmp_path / "m.alora"
        model.save_checkpoint(path, params, cfg, selection, h1=None)
        _, _, _, h1, stats = model.load_checkpoint(path)
        assert h1 is None
        assert stats is None

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.alora"
        path.write_bytes(b"NOTANALORA" * 20)
        with pytest.raises(ValueError):
            model.load_checkpoint(path)
