"""Architecture shape and parameter-count pins, init statistics, checkpoints."""

import numpy as np
import pytest

from parasnet import model as pm


class TestShapes:
    def test_layer_trace_at_eight_filters(self):
        shapes = pm.layer_shapes(8)
        assert shapes == [
            (242, 322, 8),
            (121, 161, 8),
            (119, 159, 8),
            (59, 79, 8),
            (57, 77, 8),
            (28, 38, 8),
            (26, 36, 8),
            (13, 18, 8),
            (11, 16, 8),
            (5, 8, 8),
            (128,),
            (3,),
        ]

    def test_flatten_is_forty_times_filters(self):
        for f in (1, 2, 4, 8, 16):
            assert pm.flatten_dim(f) == 40 * f

    def test_too_small_input_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            pm.layer_shapes(4, height=60, width=60)


class TestParamCounts:
    def test_eight_filter_totals(self):
        m = pm.build_model(8, seed=0)
        assert pm.layer_param_counts(m) == [80, 584, 584, 584, 584, 41088, 387]
        assert pm.param_count(m) == 43891

    def test_closed_form_matches_actual(self):
        for f in (1, 2, 4, 8, 16):
            m = pm.build_model(f, seed=1)
            assert pm.param_count(m) == pm.expected_param_count(f)

    def test_four_filter_total(self):
        assert pm.expected_param_count(4) == 21627

    def test_parameter_order_is_stable(self):
        m = pm.build_model(2, seed=3)
        shapes = [p.shape for p in pm.parameters(m)]
        assert shapes[0] == (3, 3, 1, 2)
        assert shapes[1] == (2,)
        assert shapes[2] == (3, 3, 2, 2)
        assert shapes[10] == (80, 128)
        assert shapes[13] == (3,)
        assert len(shapes) == 14


class TestInit:
    def test_same_seed_same_weights(self):
        a = pm.build_model(4, seed=11)
        b = pm.build_model(4, seed=11)
        for pa, pb in zip(pm.parameters(a), pm.parameters(b)):
            np.testing.assert_array_equal(pa, pb)

    def test_different_seed_different_weights(self):
        a = pm.build_model(4, seed=11)
        b = pm.build_model(4, seed=12)
        assert not np.array_equal(a.conv_kernels[0], b.conv_kernels[0])

    def test_biases_start_at_zero(self):
        m = pm.build_model(8, seed=5)
        for b in m.conv_biases:
            assert not b.any()
        assert not m.dense1_bias.any()
        assert not m.dense2_bias.any()

    def test_conv2_weights_respect_glorot_bound(self):
        # fan_in = fan_out = 9 * 8 for the middle conv layers
        bound = pm.glorot_bound(72, 72)
        assert abs(bound - 0.2041241) < 1e-6
        m = pm.build_model(8, seed=7, dtype=np.float64)
        w = m.conv_kernels[1]
        assert np.abs(w).max() <= bound
        # uniform on [-b, b]: mean 0, std b/sqrt(3); 576 draws is enough
        # to land within a loose window
        assert abs(w.mean()) < bound / 10
        assert abs(w.std() - bound / np.sqrt(3)) < bound / 10


class TestForward:
    def test_output_shapes_and_normalization(self):
        m = pm.build_model(2, seed=0)
        rng = np.random.default_rng(0)
        image = rng.random((244, 324, 1), dtype=np.float32)
        probs, hidden = pm.forward(m, image)
        assert probs.shape == (3,)
        assert hidden.shape == (128,)
        assert abs(probs.sum() - 1.0) < 1e-5
        assert (probs > 0).all()

    def test_batch_agrees_with_single(self):
        m = pm.build_model(2, seed=1)
        rng = np.random.default_rng(1)
        x = rng.random((3, 244, 324, 1), dtype=np.float32)
        probs, hidden = pm.forward_batch(m, x)
        # BLAS may sum in a different order for different batch sizes,
        # so this is close, not bitwise
        for i in range(3):
            p, h = pm.forward(m, x[i])
            np.testing.assert_allclose(probs[i], p, rtol=1e-4, atol=1e-6)
            np.testing.assert_allclose(hidden[i], h, rtol=1e-4, atol=1e-5)

    def test_train_mode_requires_rng(self):
        m = pm.build_model(2, seed=1)
        x = np.zeros((1, 244, 324, 1), dtype=np.float32)
        with pytest.raises(ValueError, match="RNG"):
            pm.forward_batch(m, x, mode="train")

    def test_infer_ignores_dropout_rng(self):
        m = pm.build_model(2, seed=1)
        rng = np.random.default_rng(4)
        x = rng.random((2, 244, 324, 1), dtype=np.float32)
        a, _ = pm.forward_batch(m, x)
        b, _ = pm.forward_batch(m, x)
        np.testing.assert_array_equal(a, b)

    def test_wrong_rank_rejected(self):
        m = pm.build_model(2, seed=1)
        with pytest.raises(ValueError, match="shape"):
            pm.forward(m, np.zeros((244, 324)))


class TestBackward:
    def test_gradients_match_finite_differences(self):
        # smallest input that survives all five stages is 94x94
        m = pm.build_model(2, seed=9, dtype=np.float64, height=94, width=94)
        rng = np.random.default_rng(9)
        x = rng.random((2, 94, 94, 1))
        weight = rng.standard_normal((2, 3))

        def loss_and_kinks():
            probs, _, cache = pm.forward_batch(m, x, want_cache=True)
            pattern = (
                tuple((a > 0).tobytes() for a in cache.conv_pre),
                tuple(w.tobytes() for w in cache.winners),
                (cache.dense1_pre > 0).tobytes(),
            )
            return float(np.sum(probs * weight)), pattern

        _, _, cache = pm.forward_batch(m, x, want_cache=True)
        grads = pm.backward_batch(m, cache, weight.copy())

        params = pm.parameters(m)
        checked = 0
        picker = np.random.default_rng(10)
        step = 1e-5
        for p, g in zip(params, grads):
            assert g.shape == p.shape
            flat = p.reshape(-1)
            flat_idx = picker.choice(p.size, size=min(6, p.size), replace=False)
            for idx in flat_idx:
                orig = flat[idx]
                flat[idx] = orig + step
                plus, pat_plus = loss_and_kinks()
                flat[idx] = orig - step
                minus, pat_minus = loss_and_kinks()
                flat[idx] = orig
                if pat_plus != pat_minus:
                    # perturbation crossed a ReLU or pooling kink where
                    # the finite difference is meaningless
                    continue
                fd = (plus - minus) / (2 * step)
                got = g.reshape(-1)[int(idx)]
                denom = max(abs(fd), abs(got), 1e-8)
                assert abs(fd - got) / denom < 1e-4, (p.shape, idx, fd, got)
                checked += 1
        assert checked >= 40

    def test_dropout_gradient_uses_saved_mask(self):
        m = pm.build_model(2, seed=9, dtype=np.float64, height=94, width=94)
        x = np.random.default_rng(2).random((1, 94, 94, 1))
        rng = np.random.default_rng(5)
        probs, _, cache = pm.forward_batch(m, x, mode="train", rng=rng, want_cache=True)
        assert cache.drop_mask is not None
        grads = pm.backward_batch(m, cache, np.ones_like(probs))
        assert len(grads) == 14


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        m = pm.build_model(8, seed=42)
        m.meta["note"] = "round trip"
        path = str(tmp_path / "model.pnet")
        pm.save_checkpoint(m, path)
        loaded = pm.load_checkpoint(path)
        assert loaded.filters == 8
        assert loaded.init_seed == 42
        assert loaded.meta == {"note": "round trip"}
        for a, b in zip(pm.parameters(m), pm.parameters(loaded)):
            assert a.tobytes() == b.tobytes()

    def test_save_load_save_is_stable(self, tmp_path):
        m = pm.build_model(4, seed=3)
        p1 = str(tmp_path / "a.pnet")
        p2 = str(tmp_path / "b.pnet")
        pm.save_checkpoint(m, p1)
        pm.save_checkpoint(pm.load_checkpoint(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pnet"
        path.write_bytes(b"XXXX" + b"\0" * 100)
        with pytest.raises(pm.CheckpointMagicError, match="magic"):
            pm.load_checkpoint(str(path))

    def test_unknown_version_rejected(self, tmp_path):
        m = pm.build_model(1, seed=0)
        path = str(tmp_path / "v9.pnet")
        pm.save_checkpoint(m, path)
        blob = bytearray(open(path, "rb").read())
        blob[4] = 9
        open(path, "wb").write(bytes(blob))
        with pytest.raises(pm.CheckpointVersionError, match="version 9"):
            pm.load_checkpoint(str(path))

    def test_truncation_reports_missing_bytes(self, tmp_path):
        m = pm.build_model(2, seed=0)
        path = str(tmp_path / "cut.pnet")
        pm.save_checkpoint(m, path)
        blob = open(path, "rb").read()
        for cut in (2, 6, 40, len(blob) - 3):
            open(path, "wb").write(blob[:cut])
            with pytest.raises(pm.CheckpointTruncatedError, match=r"\d+ bytes missing"):
                pm.load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        m = pm.build_model(1, seed=0)
        path = str(tmp_path / "extra.pnet")
        pm.save_checkpoint(m, path)
        with open(path, "ab") as fh:
            fh.write(b"junk")
        with pytest.raises(pm.CheckpointError, match="trailing"):
            pm.load_checkpoint(path)

    def test_truncated_errors_are_checkpoint_errors(self):
        assert issubclass(pm.CheckpointTruncatedError, pm.CheckpointError)
        assert issubclass(pm.CheckpointMagicError, pm.CheckpointError)
        assert issubclass(pm.CheckpointVersionError, pm.CheckpointError)
