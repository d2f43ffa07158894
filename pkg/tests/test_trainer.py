"""Optimizer arithmetic, training-loop behavior, checkpoint serialization."""

import numpy as np
import pytest

from lucentvision.losses import ExposureTarget
from lucentvision.network import CurveNetConfig, build, forward
from lucentvision.tensor import Tensor
from lucentvision.trainer import (
    AdamState,
    CheckpointError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    TrainConfig,
    adam_step,
    clip_gradients,
    global_grad_norm,
    history_csv,
    load_checkpoint,
    restore,
    save_checkpoint,
    train,
)

def tiny_config(**overrides):
    base = dict(
        epochs=1,
        batch_size=1,
        image_size=16,
        exposure=ExposureTarget(patch=8),
        seed=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_net(seed=5):
    return build(CurveNetConfig(branch_layers=1, width=3, iterations=2, seed=seed))


def gray_corpus(rng, n=2, level_lo=0.05, level_hi=0.3, size=16):
    return [np.full((3, size, size), rng.uniform(level_lo, level_hi)) for _ in range(n)]


class TestAdam:
    def test_single_step_hand_computed(self):
        # One step from fresh moments at lr=0.1, wd=0: the bias-corrected
        # update is g / (|g| + eps) elementwise.
        p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        g = np.array([0.5, -1.0, 0.25])
        state = AdamState(m={"p": np.zeros(3)}, v={"p": np.zeros(3)})
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0)
        adam_step([("p", p)], [g], state, cfg)
        m_hat = g  # (1-b1)*g / (1-b1)
        v_hat = g * g
        want = np.array([1.0, -2.0, 3.0]) - 0.1 * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        assert np.allclose(p.data, want, rtol=0, atol=1e-15)
        assert state.step == 1

    def test_two_steps_track_reference_formula(self):
        rng = np.random.default_rng(7)
        x0 = rng.standard_normal(4)
        p = Tensor(x0.copy(), requires_grad=True)
        state = AdamState(m={"p": np.zeros(4)}, v={"p": np.zeros(4)})
        cfg = TrainConfig(learning_rate=0.01, weight_decay=0.0)
        g1, g2 = rng.standard_normal(4), rng.standard_normal(4)

        # Reference implementation, written straight from the update rule.
        m = v = np.zeros(4)
        ref = x0.copy()
        for t, g in ((1, g1), (2, g2)):
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            ref = ref - cfg.learning_rate * (m / (1 - cfg.beta1**t)) / (
                np.sqrt(v / (1 - cfg.beta2**t)) + cfg.epsilon
            )

        adam_step([("p", p)], [g1], state, cfg)
        adam_step([("p", p)], [g2], state, cfg)
        assert np.allclose(p.data, ref, rtol=0, atol=1e-15)

    def test_decoupled_weight_decay_shrinks_parameters(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        state = AdamState(m={"p": np.zeros(1)}, v={"p": np.zeros(1)})
        cfg = TrainConfig(learning_rate=0.5, weight_decay=0.1)
        adam_step([("p", p)], [np.zeros(1)], state, cfg)
        # Zero gradient: the only movement is -lr * wd * p = -0.1.
        assert p.data[0] == pytest.approx(2.0 - 0.5 * 0.1 * 2.0, abs=1e-15)

    def test_zero_grad_zero_decay_leaves_parameters(self):
        p = Tensor(np.array([1.5, -0.5]), requires_grad=True)
        state = AdamState(m={"p": np.zeros(2)}, v={"p": np.zeros(2)})
        cfg = TrainConfig(weight_decay=0.0)
        before = p.data.copy()
        for _ in range(3):
            adam_step([("p", p)], [np.zeros(2)], state, cfg)
        assert np.array_equal(p.data, before)

    def test_nonfinite_gradient_names_parameter(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        state = AdamState(m={"late.bias": np.zeros(2)}, v={"late.bias": np.zeros(2)})
        bad = np.array([0.0, np.nan])
        with pytest.raises(ValueError, match="late.bias"):
            adam_step([("late.bias", p)], [bad], state, TrainConfig())
        with pytest.raises(ValueError, match="late.bias"):
            adam_step([("late.bias", p)], [np.array([np.inf, 0.0])], state, TrainConfig())

    def test_mismatched_lengths_rejected(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        with pytest.raises(ValueError, match="gradients"):
            adam_step([("p", p)], [], AdamState(), TrainConfig())


class TestClipping:
    def test_norm_below_threshold_untouched(self):
        grads = [np.array([0.03, 0.04])]  # norm 0.05
        clipped, norm = clip_gradients(grads, 0.1)
        assert norm == pytest.approx(0.05)
        assert clipped[0] is grads[0]

    def test_norm_above_threshold_scaled_globally(self):
        grads = [np.array([3.0, 4.0]), np.array([12.0])]  # norm 13
        clipped, norm = clip_gradients(grads, 0.1)
        assert norm == pytest.approx(13.0)
        post = global_grad_norm(clipped)
        assert post <= 0.1 + 1e-9
        assert post == pytest.approx(0.1, rel=1e-12)
        # Direction preserved: all entries scaled by the same factor.
        assert np.allclose(clipped[0] / grads[0], clipped[1] / grads[1], rtol=1e-12)

    def test_zero_gradients_pass_through(self):
        clipped, norm = clip_gradients([np.zeros(3)], 0.1)
        assert norm == 0.0
        assert np.array_equal(clipped[0], np.zeros(3))


class TestTrainingLoop:
    def test_loss_decreases_on_constant_dark_image(self):
        net = tiny_net()
        corpus = [np.full((3, 16, 16), 0.1)]
        cfg = tiny_config(epochs=40)
        result = train(net, corpus, cfg)
        assert len(result.history) == 40
        early = np.mean([r.total for r in result.history[:5]])
        late = np.mean([r.total for r in result.history[-5:]])
        assert late < early

    def test_history_records_breakdown(self):
        net = tiny_net()
        result = train(net, gray_corpus(np.random.default_rng(1)), tiny_config())
        row = result.history[0]
        assert row.step == 1
        assert row.epoch == 0
        for attr in ("total", "grad_norm", "tv", "spa", "color", "exposure", "seg", "nr"):
            assert np.isfinite(getattr(row, attr))
        assert row.seg == 0.0 and row.nr == 0.0

    def test_max_steps_caps_run(self):
        net = tiny_net()
        corpus = gray_corpus(np.random.default_rng(2), n=4)
        result = train(net, corpus, tiny_config(epochs=10, max_steps=3))
        assert len(result.history) == 3
        assert result.state.step == 3

    def test_identical_seeds_identical_runs(self):
        corpus = gray_corpus(np.random.default_rng(5), n=3)
        runs = []
        for _ in range(2):
            net = tiny_net(seed=11)
            result = train(net, [c.copy() for c in corpus], tiny_config(epochs=2))
            runs.append((
                [r.total for r in result.history],
                {name: p.data.copy() for name, p in net.parameters()},
            ))
        assert runs[0][0] == runs[1][0]
        for name in runs[0][1]:
            assert np.array_equal(runs[0][1][name], runs[1][1][name]), name

    def test_different_seed_changes_visit_order(self):
        corpus = gray_corpus(np.random.default_rng(9), n=6)
        totals = []
        for seed in (1, 2):
            net = tiny_net(seed=7)
            result = train(net, [c.copy() for c in corpus], tiny_config(seed=seed, epochs=1))
            totals.append([r.total for r in result.history])
        assert totals[0] != totals[1]

    def test_empty_corpus_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            train(tiny_net(), [], tiny_config())
        tmp_path.mkdir(exist_ok=True)
        with pytest.raises(ValueError, match="empty"):
            train(tiny_net(), tmp_path, tiny_config())

    def test_undecodable_files_skipped_with_warning(self, tmp_path):
        from lucentvision.imaging import ImageBuffer, encode_png

        rng = np.random.default_rng(3)
        good = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        (tmp_path / "good.png").write_bytes(
            encode_png(ImageBuffer(width=16, height=16, data=good))
        )
        (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\nbroken")
        with pytest.warns(UserWarning, match="bad.png"):
            result = train(tiny_net(), tmp_path, tiny_config())
        assert len(result.history) == 1

    def test_corpus_resized_to_training_resolution(self):
        net = tiny_net()
        corpus = [np.full((3, 24, 20), 0.2)]
        result = train(net, corpus, tiny_config())
        assert len(result.history) == 1

    def test_batch_mean_equals_average_of_singles(self):
        # A batch of two images steps with the mean loss; the recorded
        # breakdown must be the average of the two per-image values.
        corpus = gray_corpus(np.random.default_rng(13), n=2)
        net_a = tiny_net(seed=21)
        res_batch = train(net_a, [c.copy() for c in corpus], tiny_config(batch_size=2))
        row = res_batch.history[0]

        from lucentvision.enhancer import EnhanceSpec, enhance
        from lucentvision.losses import composite_loss

        net_b = tiny_net(seed=21)
        per_image = []
        for img in corpus:
            x = Tensor(img)
            curves = forward(net_b, x)
            enhanced = enhance(x, curves, EnhanceSpec(iterations=2))
            total, _ = composite_loss(
                x, enhanced, curves, exposure_target=ExposureTarget(patch=8)
            )
            per_image.append(total.item())
        assert row.total == pytest.approx(np.mean(per_image), rel=1e-12)

    def test_history_csv_shape(self):
        result = train(tiny_net(), gray_corpus(np.random.default_rng(17)), tiny_config())
        text = history_csv(result.history)
        lines = text.strip().split("\n")
        assert lines[0] == "step,epoch,total,grad_norm,tv,spa,color,exposure,seg,nr"
        assert len(lines) == len(result.history) + 1
        assert len(lines[1].split(",")) == 10


class TestCheckpointFormat:
    def roundtrip(self, tmp_path, net=None, state=None):
        net = net or tiny_net()
        state = state or AdamState.for_net(net)
        path = tmp_path / "model.ckpt"
        save_checkpoint(net, state, path, epoch=4, train_seed=9)
        return path, load_checkpoint(path)

    def test_save_load_save_bit_identical(self, tmp_path):
        net = tiny_net()
        state = AdamState.for_net(net)
        state.step = 12
        rng = np.random.default_rng(31)
        for name in state.m:
            state.m[name] = rng.standard_normal(state.m[name].shape)
            state.v[name] = np.abs(rng.standard_normal(state.v[name].shape))
        p1 = tmp_path / "a.ckpt"
        save_checkpoint(net, state, p1, epoch=2, train_seed=5)
        net2, state2 = restore(load_checkpoint(p1))
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(net2, state2, p2, epoch=2, train_seed=5)
        assert p1.read_bytes() == p2.read_bytes()

    def test_restored_forward_bit_identical(self, tmp_path):
        net = tiny_net(seed=43)
        x = Tensor(np.random.default_rng(3).uniform(0, 1, (3, 8, 8)))
        before = forward(net, x).values.data
        path = tmp_path / "model.ckpt"
        save_checkpoint(net, AdamState.for_net(net), path)
        net2, _ = restore(load_checkpoint(path))
        after = forward(net2, x).values.data
        assert np.array_equal(before, after)

    def test_metadata_round_trips(self, tmp_path):
        _, ckpt = self.roundtrip(tmp_path)
        assert ckpt.version == 1
        assert ckpt.epoch == 4
        assert ckpt.metadata["train_seed"] == "9"
        cfg = ckpt.net_config
        assert cfg.branch_layers == 1
        assert cfg.width == 3
        assert cfg.iterations == 2

    def test_optimizer_moments_round_trip(self, tmp_path):
        net = tiny_net()
        state = AdamState.for_net(net)
        state.step = 7
        rng = np.random.default_rng(37)
        for name in state.m:
            state.m[name] = rng.standard_normal(state.m[name].shape)
        path = tmp_path / "m.ckpt"
        save_checkpoint(net, state, path)
        _, state2 = restore(load_checkpoint(path))
        assert state2.step == 7
        for name in state.m:
            assert np.array_equal(state.m[name], state2.m[name])
            assert np.array_equal(state.v[name], state2.v[name])

    def test_bad_magic(self, tmp_path):
        path, _ = self.roundtrip(tmp_path)
        blob = path.read_bytes()
        (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(CheckpointMagicError):
            load_checkpoint(tmp_path / "bad.ckpt")

    def test_unsupported_version(self, tmp_path):
        path, _ = self.roundtrip(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        (tmp_path / "v99.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(tmp_path / "v99.ckpt")

    def test_truncation(self, tmp_path):
        path, _ = self.roundtrip(tmp_path)
        blob = path.read_bytes()
        for cut in (6, len(blob) // 2, len(blob) - 3):
            (tmp_path / "cut.ckpt").write_bytes(blob[:cut])
            with pytest.raises(CheckpointTruncatedError):
                load_checkpoint(tmp_path / "cut.ckpt")

    def test_trailing_garbage_rejected(self, tmp_path):
        path, _ = self.roundtrip(tmp_path)
        (tmp_path / "g.ckpt").write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(CheckpointTruncatedError, match="trailing"):
            load_checkpoint(tmp_path / "g.ckpt")

    def test_error_kinds_share_base(self):
        assert issubclass(CheckpointMagicError, CheckpointError)
        assert issubclass(CheckpointVersionError, CheckpointError)
        assert issubclass(CheckpointTruncatedError, CheckpointError)

    def test_missing_tensor_detected(self, tmp_path):
        net = tiny_net()
        state = AdamState.for_net(net)
        path = tmp_path / "full.ckpt"
        save_checkpoint(net, state, path)
        ckpt = load_checkpoint(path)
        first = next(iter(ckpt.tensors))
        del ckpt.tensors[first]
        with pytest.raises(CheckpointError, match="missing tensor"):
            restore(ckpt)


class TestResume:
    def test_resumed_run_matches_uninterrupted(self, tmp_path):
        corpus = gray_corpus(np.random.default_rng(51), n=3)

        # Uninterrupted: 4 epochs straight through.
        net_full = tiny_net(seed=33)
        train(net_full, [c.copy() for c in corpus], tiny_config(epochs=4))

        # Interrupted: 2 epochs, checkpoint, restore, 2 more.
        net_half = tiny_net(seed=33)
        res1 = train(net_half, [c.copy() for c in corpus], tiny_config(epochs=2))
        path = tmp_path / "mid.ckpt"
        save_checkpoint(net_half, res1.state, path, epoch=res1.epochs_completed)
        ckpt = load_checkpoint(path)
        net_resumed, state = restore(ckpt)
        train(
            net_resumed,
            [c.copy() for c in corpus],
            tiny_config(epochs=2),
            state=state,
            start_epoch=ckpt.epoch,
        )

        for (name, pa), (_, pb) in zip(net_full.parameters(), net_resumed.parameters()):
            assert np.allclose(pa.data, pb.data, rtol=0, atol=1e-15), name
