import math

import numpy as np
import pytest

from oracles import conv1d_backward_loops, conv1d_forward_loops
from wfaug.nn import (
    CheckpointError,
    Conv1D,
    ConvBlock,
    Dense,
    GlobalAvgPool,
    MaxPool2,
    Model,
    ModelConfig,
    TrainConfig,
    TrainingDiverged,
    cross_entropy,
    dataset_accuracy,
    decide,
    default_model_config,
    load_checkpoint,
    make_optimizer,
    predict,
    save_checkpoint,
    softmax,
    train,
    write_history,
)
from wfaug.augment import AugConfig
from wfaug.traces import SplitSpec, make_splits, synth_dataset

TINY = ModelConfig(64, 3, (ConvBlock(8, dilation=1, pool="max2"),
                           ConvBlock(16, dilation=2)), fc=(3,))


def tiny_task():
    d = synth_dataset(3, 15, 64, 0.05, seed=11)
    return make_splits(d, SplitSpec(10, 3, 2, seed=0))


def lattice_model(cfg, seed=0):
    """Model whose conv parameters sit on a dyadic lattice.

    With +-1 inputs every pre-activation is then an exact multiple of a
    power of two, bounded away from the ReLU kink, so finite-difference
    probes at eps=1e-4 cannot flip any activation sign.
    """
    m = Model(cfg, seed)
    convs = [l for l in m.layers if l.name.startswith("conv")]
    for depth, layer in enumerate(convs):
        w = layer.params["w"]
        w[...] = np.round(w / 0.25) * 0.25
        layer.params["b"][...] = 0.125 if depth == 0 else 0.015625
    return m


def fd_worst_rel_err(model, x, targets, n_coords, eps, probe_seed):
    probs, _ = model.forward(x, train=True)
    model.backward(probs, targets)
    rng = np.random.default_rng(probe_seed)
    tensors = list(model.param_grad_items())
    worst = 0.0
    for _ in range(n_coords):
        name, p, g = tensors[rng.integers(0, len(tensors))]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        orig = p[idx]
        p[idx] = orig + eps
        up = cross_entropy(model.forward(x)[0], targets)
        p[idx] = orig - eps
        down = cross_entropy(model.forward(x)[0], targets)
        p[idx] = orig
        fd = (up - down) / (2 * eps)
        worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    return worst


class TestConvLayer:
    @pytest.mark.parametrize("dilation,stride,causal",
                             [(1, 1, True), (2, 1, True), (3, 1, False),
                              (1, 2, False), (2, 2, True)])
    def test_forward_matches_loop_oracle(self, dilation, stride, causal):
        rng = np.random.default_rng(0)
        conv = Conv1D("c", 3, 5, kernel=3, dilation=dilation, stride=stride,
                      causal=causal, rng=rng)
        x = rng.normal(size=(4, 3, 17))
        want = conv1d_forward_loops(x, conv.params["w"], conv.params["b"],
                                    dilation, stride, conv.pad_l, conv.pad_r)
        assert np.allclose(conv.forward(x), want, atol=1e-12)

    @pytest.mark.parametrize("dilation,causal", [(1, True), (2, False), (4, True)])
    def test_backward_matches_loop_oracle(self, dilation, causal):
        rng = np.random.default_rng(1)
        conv = Conv1D("c", 2, 4, dilation=dilation, causal=causal, rng=rng)
        x = rng.normal(size=(3, 2, 15))
        dy = rng.normal(size=conv.forward(x, train=True).shape)
        dx = conv.backward(dy)
        dw, db, dx_want = conv1d_backward_loops(x, conv.params["w"], dy,
                                                dilation, 1, conv.pad_l,
                                                conv.pad_r)
        assert np.allclose(conv.grads["w"], dw, atol=1e-12)
        assert np.allclose(conv.grads["b"], db, atol=1e-12)
        assert np.allclose(dx, dx_want, atol=1e-12)

    def test_causal_outputs_ignore_future_inputs(self):
        rng = np.random.default_rng(2)
        stack = [Conv1D("c0", 1, 3, dilation=1, causal=True, rng=rng),
                 Conv1D("c1", 3, 2, dilation=2, causal=True, rng=rng)]
        x1 = rng.normal(size=(1, 1, 20))
        for t in (5, 12, 19):
            x2 = x1.copy()
            x2[0, 0, t] += 1.0
            h1, h2 = x1, x2
            for conv in stack:
                h1, h2 = conv.forward(h1), conv.forward(h2)
            assert np.array_equal(h1[:, :, :t], h2[:, :, :t])
            assert not np.array_equal(h1[:, :, t:], h2[:, :, t:])

    def test_plain_conv_uses_both_sides(self):
        rng = np.random.default_rng(3)
        conv = Conv1D("c", 1, 2, causal=False, rng=rng)
        x1 = rng.normal(size=(1, 1, 10))
        x2 = x1.copy()
        x2[0, 0, 5] += 1.0
        y1, y2 = conv.forward(x1), conv.forward(x2)
        assert not np.array_equal(y1[:, :, 4], y2[:, :, 4])

    def test_rejects_wrong_channel_count(self):
        conv = Conv1D("c", 2, 3, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="expected"):
            conv.forward(np.zeros((1, 5, 8)))


class TestPoolingLayers:
    def test_maxpool_values_and_routing(self):
        x = np.array([[[1.0, 3.0, 2.0, 2.0, 5.0, 4.0]]])
        pool = MaxPool2()
        assert pool.forward(x, train=True).tolist() == [[[3.0, 2.0, 5.0]]]
        dx = pool.backward(np.array([[[10.0, 20.0, 30.0]]]))
        # ties (the 2,2 pair) route to the first element
        assert dx.tolist() == [[[0.0, 10.0, 20.0, 0.0, 30.0, 0.0]]]

    def test_maxpool_drops_odd_tail(self):
        pool = MaxPool2()
        y = pool.forward(np.array([[[1.0, 3.0, 9.0]]]), train=True)
        assert y.tolist() == [[[3.0]]]
        assert pool.backward(np.array([[[7.0]]])).tolist() == [[[0.0, 7.0, 0.0]]]

    def test_gap_mean_and_backward(self):
        gap = GlobalAvgPool()
        x = np.arange(12.0).reshape(1, 3, 4)
        assert np.array_equal(gap.forward(x, train=True), x.mean(axis=2))
        dx = gap.backward(np.array([[4.0, 8.0, 12.0]]))
        assert np.allclose(dx, np.repeat([[1.0, 2.0, 3.0]], 4).reshape(1, 3, 4))

    def test_dense_shape_check(self):
        dense = Dense("fc", 4, 2, rng=np.random.default_rng(0))
        with pytest.raises(ValueError, match="expected"):
            dense.forward(np.zeros((1, 5)))


class TestModelConfig:
    def test_default_architecture(self):
        cfg = default_model_config(1000, 21)
        assert [b.out_channels for b in cfg.blocks] == [32, 64, 64, 128]
        assert [b.dilation for b in cfg.blocks] == [1, 2, 4, 8]
        assert [b.pool for b in cfg.blocks] == ["max2", "max2", "none", "none"]
        assert all(b.causal and b.kernel == 3 for b in cfg.blocks)
        assert cfg.fc == (21,)

    def test_rejects_even_kernel(self):
        with pytest.raises(ValueError, match="odd"):
            ConvBlock(8, kernel=4)

    def test_rejects_bad_dilation_and_pool(self):
        with pytest.raises(ValueError):
            ConvBlock(8, dilation=0)
        with pytest.raises(ValueError):
            ConvBlock(8, pool="avg3")

    def test_requires_conv_block_and_matching_head(self):
        with pytest.raises(ValueError):
            ModelConfig(64, 3, (), fc=(3,))
        with pytest.raises(ValueError, match="num_classes"):
            ModelConfig(64, 3, (ConvBlock(4),), fc=(5,))


class TestForward:
    def test_zero_head_gives_uniform_probs(self):
        model = Model(TINY, seed=0)
        head = model.layers[-1]
        head.params["w"][...] = 0.0
        head.params["b"][...] = 0.0
        probs, _ = model.forward(np.random.default_rng(0).normal(size=(5, 64)))
        assert np.array_equal(probs, np.full((5, 3), 1.0 / 3.0))

    def test_probs_are_distributions(self):
        model = Model(TINY, seed=1)
        x = np.random.default_rng(1).choice([-1.0, 1.0], size=(9, 64))
        probs, feats = model.forward(x)
        assert np.all((probs > 0) & (probs < 1))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert feats.shape == (9, 16)

    def test_identity_kernel_features_are_input_means(self):
        cfg = ModelConfig(32, 2, (ConvBlock(1, causal=False),), fc=(2,))
        model = Model(cfg, seed=0)
        conv = model.layers[0]
        conv.params["w"][...] = np.array([[[0.0, 1.0, 0.0]]])
        conv.params["b"][...] = 0.0
        # non-negative input passes the ReLU untouched
        x = np.random.default_rng(2).random((6, 32))
        _, feats = model.forward(x)
        assert np.array_equal(feats[:, 0], x.mean(axis=1))

    def test_rejects_wrong_length(self):
        model = Model(TINY, seed=0)
        with pytest.raises(ValueError, match="expected"):
            model.forward(np.zeros((2, 65)))


class TestLossFunction:
    def test_perfect_one_hot_is_zero(self):
        y = np.array([[0.0, 1.0, 0.0]])
        assert cross_entropy(y, y) == 0.0

    def test_uniform_probs_analytic(self):
        probs = np.full((2, 4), 0.25)
        targets = np.eye(4)[:2]
        assert math.isclose(cross_entropy(probs, targets), math.log(4))

    def test_mixed_target_analytic(self):
        probs = np.array([[0.5, 0.5, 0.0, 0.0]])
        target = np.array([[0.5, 0.5, 0.0, 0.0]])
        assert math.isclose(cross_entropy(probs, target), math.log(2))

    def test_mixing_linearity_in_target(self):
        rng = np.random.default_rng(3)
        probs = softmax(rng.normal(size=(4, 5)))
        yi, yj = np.eye(5)[rng.integers(0, 5, 4)], np.eye(5)[rng.integers(0, 5, 4)]
        for lam in (0.0, 0.3, 0.77, 1.0):
            mixed = lam * yi + (1 - lam) * yj
            want = lam * cross_entropy(probs, yi) + (1 - lam) * cross_entropy(probs, yj)
            assert math.isclose(cross_entropy(probs, mixed), want, rel_tol=1e-10)

    def test_self_entropy_nonnegative(self):
        one_hot = np.array([[1.0, 0.0]])
        assert cross_entropy(one_hot, one_hot) == 0.0
        soft = np.array([[0.5, 0.5]])
        assert cross_entropy(soft, soft) > 0.0

    def test_zero_prob_is_floored(self):
        probs = np.array([[1.0, 0.0]])
        target = np.array([[0.0, 1.0]])
        assert cross_entropy(probs, target) == pytest.approx(-math.log(1e-12))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            cross_entropy(np.zeros((2, 3)), np.zeros((2, 4)))


class TestBackward:
    def test_gradcheck_on_lattice_network(self):
        cfg = ModelConfig(32, 3, (ConvBlock(4, causal=False),
                                  ConvBlock(6, dilation=2)), fc=(3,))
        model = lattice_model(cfg, seed=0)
        rng = np.random.default_rng(5)
        x = rng.choice([-1.0, 1.0], size=(6, 32))
        targets = np.eye(3)[rng.integers(0, 3, 6)]
        worst = fd_worst_rel_err(model, x, targets, n_coords=40, eps=1e-4,
                                 probe_seed=17)
        assert worst < 1e-3

    def test_zero_input_zero_bias_kills_conv_weight_grads(self):
        model = Model(TINY, seed=2)
        for layer in model.layers:
            if "b" in layer.params:
                layer.params["b"][...] = 0.0
        x = np.zeros((4, 64))
        targets = np.eye(3)[[0, 1, 2, 0]]
        probs, _ = model.forward(x, train=True)
        model.backward(probs, targets)
        for layer in model.layers:
            if layer.name.startswith("conv"):
                assert np.array_equal(layer.grads["w"], np.zeros_like(layer.grads["w"]))

    def test_mean_loss_grads_are_linear_in_samples(self):
        model = Model(TINY, seed=3)
        rng = np.random.default_rng(4)
        a, b = rng.choice([-1.0, 1.0], size=(2, 64))
        ya, yb = np.eye(3)[0], np.eye(3)[2]

        def grads(x, y):
            probs, _ = model.forward(x, train=True)
            model.backward(probs, y)
            return {n: g.copy() for n, _, g in model.param_grad_items()}

        g_a = grads(a[None], ya[None])
        g_dup = grads(np.stack([a, a]), np.stack([ya, ya]))
        g_ab = grads(np.stack([a, b]), np.stack([ya, yb]))
        g_b = grads(b[None], yb[None])
        for name in g_a:
            assert np.allclose(g_dup[name], g_a[name], atol=1e-12)
            assert np.allclose(g_ab[name], (g_a[name] + g_b[name]) / 2, atol=1e-12)

    def test_non_finite_gradient_names_layer(self):
        model = Model(TINY, seed=0)
        model.layers[-1].params["w"][...] = np.inf
        x = np.ones((2, 64))
        with np.errstate(invalid="ignore"):
            probs, _ = model.forward(x, train=True)
            with pytest.raises(FloatingPointError, match="fc0"):
                model.backward(probs, np.eye(3)[[0, 1]])


class TestPredict:
    def test_decide_tie_breaks_to_lowest_index(self):
        labels, conf = decide(np.array([[0.25, 0.25, 0.25, 0.25]]))
        assert labels.tolist() == [0]
        assert conf.tolist() == [0.25]

    def test_decide_reports_argmax_and_confidence(self):
        labels, conf = decide(np.array([[0.1, 0.7, 0.2]]))
        assert labels.tolist() == [1] and conf.tolist() == [0.7]

    def test_batch_partition_invariance(self):
        model = Model(TINY, seed=4)
        x = np.random.default_rng(6).choice([-1, 1], size=(10, 64)).astype(np.int8)
        full_lab, full_conf = predict(model, x)
        lab3, conf3 = predict(model, x, batch_size=3)
        assert np.array_equal(full_lab, lab3)
        assert np.array_equal(full_conf, conf3)


class TestOptimizers:
    class OneTensor:
        def __init__(self, grad):
            self.p = np.array([1.0, -2.0, 3.0])
            self.g = np.asarray(grad, dtype=np.float64)

        def param_items(self):
            yield "p", self.p

        def param_grad_items(self):
            yield "p", self.p, self.g

    def test_sgd_first_step_is_lr_times_grad(self):
        holder = self.OneTensor([0.5, -1.0, 0.0])
        opt = make_optimizer("sgd-momentum", holder, lr=0.1)
        opt.step()
        assert np.allclose(holder.p, [1.0 - 0.05, -2.0 + 0.1, 3.0])

    def test_sgd_momentum_accumulates(self):
        holder = self.OneTensor([1.0, 0.0, 0.0])
        opt = make_optimizer("sgd-momentum", holder, lr=0.1, momentum=0.5)
        opt.step()
        opt.step()  # velocity: -0.1, then -0.15
        assert np.allclose(holder.p, [1.0 - 0.1 - 0.15, -2.0, 3.0])

    def test_adam_first_step_is_signed_lr(self):
        holder = self.OneTensor([0.5, -3.0, 0.0])
        opt = make_optimizer("adam", holder, lr=0.01)
        opt.step()
        # bias-corrected first step moves each coordinate by ~lr*sign(g)
        assert np.allclose(holder.p, [1.0 - 0.01, -2.0 + 0.01, 3.0], atol=1e-6)

    def test_unknown_optimizer_rejected(self):
        with pytest.raises(ValueError, match="unknown optimizer"):
            make_optimizer("rmsprop", self.OneTensor([1.0, 1.0, 1.0]), lr=0.1)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 150 and cfg.optimizer == "adam" and cfg.lr == 1e-3

    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0),
                                    dict(lr=0.0), dict(optimizer="newton")])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestTraining:
    def test_overfits_small_task(self):
        train_set, _, _ = tiny_task()
        model, history = train(TINY, TrainConfig(epochs=40, batch_size=64,
                                                 lr=1e-2, seed=0),
                               train_set, train_set)
        assert dataset_accuracy(model, train_set) >= 0.99
        assert len(history) == 40

    def test_disabled_augmentation_equals_none(self):
        train_set, val_set, _ = tiny_task()
        cfg = TrainConfig(epochs=5, batch_size=16, seed=1)
        m1, h1 = train(TINY, cfg, train_set, val_set, aug_cfg=None)
        m2, h2 = train(TINY, cfg, train_set, val_set,
                       aug_cfg=AugConfig.disabled())
        assert h1 == h2
        for (n1, p1), (n2, p2) in zip(m1.param_items(), m2.param_items()):
            assert n1 == n2 and np.array_equal(p1, p2)

    def test_same_seed_is_bitwise_reproducible(self):
        train_set, val_set, _ = tiny_task()
        cfg = TrainConfig(epochs=6, batch_size=16, seed=7)
        aug = AugConfig(r_max=5, m_len=8, alpha=0.5)
        m1, h1 = train(TINY, cfg, train_set, val_set, aug_cfg=aug)
        m2, h2 = train(TINY, cfg, train_set, val_set, aug_cfg=aug)
        assert h1 == h2
        for (_, p1), (_, p2) in zip(m1.param_items(), m2.param_items()):
            assert np.array_equal(p1, p2)

    def test_returns_best_validation_checkpoint(self):
        train_set, val_set, _ = tiny_task()
        model, history = train(TINY, TrainConfig(epochs=12, batch_size=16,
                                                 lr=1e-2, seed=2),
                               train_set, val_set)
        best = max(h.val_acc for h in history)
        assert dataset_accuracy(model, val_set) == best

    def test_loss_monotone_after_warmup_on_overfit_task(self):
        train_set, _, _ = tiny_task()
        violations = 0
        for seed in range(10):
            _, history = train(TINY, TrainConfig(epochs=20, batch_size=64,
                                                 seed=seed),
                               train_set, train_set)
            losses = [h.train_loss for h in history]
            ok = all(losses[i + 1] <= losses[i] + 1e-9
                     for i in range(5, len(losses) - 1))
            violations += not ok
        assert violations <= 1

    def test_divergence_aborts_with_history(self):
        train_set, val_set, _ = tiny_task()
        cfg = TrainConfig(epochs=5, batch_size=64, lr=1e155,
                          optimizer="sgd-momentum", seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDiverged) as err:
                train(TINY, cfg, train_set, val_set)
        assert len(err.value.history) == err.value.epoch

    def test_rejects_class_count_mismatch(self):
        train_set, val_set, _ = tiny_task()
        bad = ModelConfig(64, 4, (ConvBlock(8),), fc=(4,))
        with pytest.raises(ValueError, match="classes"):
            train(bad, TrainConfig(epochs=1), train_set, val_set)

    def test_rejects_length_mismatch(self):
        train_set, val_set, _ = tiny_task()
        bad = ModelConfig(128, 3, (ConvBlock(8),), fc=(3,))
        with pytest.raises(ValueError, match="length"):
            train(bad, TrainConfig(epochs=1), train_set, val_set)

    def test_history_csv_layout(self, tmp_path):
        from wfaug.nn import HistoryRow
        path = tmp_path / "history.csv"
        write_history(path, [HistoryRow(0, 1.5, 0.25), HistoryRow(1, 0.75, 0.5)])
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_acc"
        assert lines[1] == "0,1.5,0.25"
        assert lines[2] == "1,0.75,0.5"


class TestCheckpoint:
    def roundtrip(self, tmp_path, model):
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        return path, load_checkpoint(path)

    def test_roundtrip_bitwise(self, tmp_path):
        model = Model(TINY, seed=9)
        path, loaded = self.roundtrip(tmp_path, model)
        assert loaded.cfg == model.cfg and loaded.seed == model.seed
        for (n1, p1), (n2, p2) in zip(model.param_items(), loaded.param_items()):
            assert n1 == n2 and np.array_equal(p1, p2)
        x = np.random.default_rng(8).choice([-1.0, 1.0], size=(4, 64))
        assert np.array_equal(model.forward(x)[0], loaded.forward(x)[0])

    def test_save_is_canonical(self, tmp_path):
        model = Model(TINY, seed=9)
        path, loaded = self.roundtrip(tmp_path, model)
        again = tmp_path / "again.ckpt"
        save_checkpoint(loaded, again)
        assert path.read_bytes() == again.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_unknown_version_rejected(self, tmp_path):
        model = Model(TINY, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        model = Model(TINY, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        model = Model(TINY, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)
