import numpy as np
import pytest

from aird import tensor as T
from aird.errors import BatchSizeError, DimensionError, NormalizationError
from aird.layers import (
    BatchNorm2d,
    Conv2d,
    Network,
    cross_entropy,
    load_checkpoint,
    margin_softmax_logits,
    save_checkpoint,
)
from aird.tensor import Tensor

from conftest import max_rel_err, numeric_gradient

ARCH = {
    "input_hw": 8,
    "in_channels": 1,
    "blocks": [3, 4],
    "kernel": 3,
    "pool": 2,
    "embed_dim": 10,
    "num_classes": 4,
    "margin": 0.35,
    "scale": 16.0,
}


def small_net(seed=0):
    return Network(ARCH, rng=np.random.default_rng(seed))


class TestConv:
    def test_one_by_one_identity(self):
        conv = Conv2d(2, 2, 1, rng=np.random.default_rng(0))
        conv.weight.data = np.eye(2).reshape(2, 2, 1, 1)
        conv.bias.data = np.zeros(2)
        x = np.random.default_rng(1).normal(size=(2, 2, 5, 5))
        out = conv.forward(Tensor(x))
        np.testing.assert_allclose(out.data, x, atol=1e-15)

    def test_zero_weights_zero_output(self):
        conv = Conv2d(1, 3, 3, pad=1, rng=np.random.default_rng(0))
        conv.weight.data[:] = 0.0
        conv.bias.data[:] = 0.0
        out = conv.forward(Tensor(np.random.default_rng(2).normal(size=(1, 1, 4, 4))))
        np.testing.assert_array_equal(out.data, np.zeros_like(out.data))

    def test_geometry_error(self):
        conv = Conv2d(1, 1, 7, rng=np.random.default_rng(0))
        with pytest.raises(DimensionError):
            conv.forward(Tensor(np.zeros((1, 1, 4, 4))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 2, 5, 5))
        conv = Conv2d(2, 3, 3, stride=1, pad=1, rng=rng)

        def loss_fn():
            return float(T.tsum(T.mul(conv.forward(Tensor(x)), Tensor(weights))).data)

        weights = rng.normal(size=(1, 3, 5, 5))
        xt = Tensor(x, requires_grad=True)
        out = conv.forward(xt)
        T.backward(T.tsum(T.mul(out, Tensor(weights))))

        fd_x = numeric_gradient(lambda: loss_fn(), x)
        assert max_rel_err(fd_x, xt.grad) < 1e-4
        fd_w = numeric_gradient(lambda: loss_fn(), conv.weight.data)
        assert max_rel_err(fd_w, conv.weight.grad) < 1e-4


class TestBatchNorm:
    def test_eval_identity_stats(self):
        bn = BatchNorm2d(3)
        x = np.random.default_rng(0).normal(size=(4, 3, 2, 2))
        out = bn.forward(Tensor(x), mode="eval")
        np.testing.assert_allclose(out.data, x, atol=1e-4)

    def test_train_normalizes_to_shift_and_scale(self):
        bn = BatchNorm2d(2)
        bn.scale.data = np.array([2.0, 0.5])
        bn.shift.data = np.array([1.0, -1.0])
        rng = np.random.default_rng(1)
        x = rng.normal(loc=[3.0, -2.0], scale=[2.0, 0.7], size=(64, 16, 2)).transpose(0, 2, 1).reshape(64, 2, 4, 4)
        out = bn.forward(Tensor(x), mode="train").data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), bn.shift.data, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), bn.scale.data**2, atol=1e-4)

    def test_eval_mutates_nothing(self):
        bn = BatchNorm2d(3)
        bn.running_mean = np.array([1.0, 2.0, 3.0])
        before = (bn.running_mean.copy(), bn.running_var.copy())
        bn.forward(Tensor(np.random.default_rng(2).normal(size=(1, 3, 2, 2))), mode="eval")
        np.testing.assert_array_equal(bn.running_mean, before[0])
        np.testing.assert_array_equal(bn.running_var, before[1])

    def test_train_updates_running_stats(self):
        bn = BatchNorm2d(1)
        x = np.random.default_rng(3).normal(loc=5.0, size=(32, 1, 4, 4))
        bn.forward(Tensor(x), mode="train")
        expect_mean = 0.9 * 0.0 + 0.1 * x.mean()
        np.testing.assert_allclose(bn.running_mean, [expect_mean], atol=1e-12)

    def test_small_batch_rejected(self):
        bn = BatchNorm2d(1)
        with pytest.raises(BatchSizeError):
            bn.forward(Tensor(np.zeros((1, 1, 2, 2))), mode="train")
        bn.forward(Tensor(np.zeros((1, 1, 2, 2))), mode="eval")  # any batch size is fine

    def test_train_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(4, 2, 3, 3))
        weights = rng.normal(size=(4, 2, 3, 3))

        def fresh_loss():
            bn = BatchNorm2d(2)
            bn.scale.data = np.array([1.3, 0.7])
            bn.shift.data = np.array([0.2, -0.1])
            return bn, T.tsum(T.mul(bn.forward(Tensor(x), mode="train"), Tensor(weights)))

        xt = Tensor(x, requires_grad=True)
        bn = BatchNorm2d(2)
        bn.scale.data = np.array([1.3, 0.7])
        bn.shift.data = np.array([0.2, -0.1])
        T.backward(T.tsum(T.mul(bn.forward(xt, mode="train"), Tensor(weights))))
        fd = numeric_gradient(lambda: float(fresh_loss()[1].data), x)
        assert max_rel_err(fd, xt.grad) < 1e-4


class TestMarginSoftmax:
    def test_aligned_cosine_is_one(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0]])
        f = np.array([[2.0, 0.0]])  # aligned with class 0 up to scale
        logits = margin_softmax_logits(Tensor(f), Tensor(w), None, 0.0, 1.0)
        np.testing.assert_allclose(logits.data, [[1.0, 0.0]], atol=1e-12)

    def test_margin_decreases_only_label_logit(self):
        rng = np.random.default_rng(5)
        f = rng.normal(size=(3, 6))
        w = rng.normal(size=(4, 6))
        labels = np.array([0, 2, 3])
        base = margin_softmax_logits(Tensor(f), Tensor(w), labels, 0.0, 16.0).data
        marg = margin_softmax_logits(Tensor(f), Tensor(w), labels, 0.5, 16.0).data
        onehot = np.zeros((3, 4))
        onehot[np.arange(3), labels] = 1
        assert np.all(marg[onehot == 1] < base[onehot == 1])
        np.testing.assert_allclose(marg[onehot == 0], base[onehot == 0], atol=1e-12)

    def test_zero_margin_matches_plain_cosine(self):
        rng = np.random.default_rng(6)
        f = rng.normal(size=(3, 6))
        w = rng.normal(size=(4, 6))
        with_labels = margin_softmax_logits(Tensor(f), Tensor(w), np.array([0, 1, 2]), 0.0, 16.0).data
        plain = margin_softmax_logits(Tensor(f), Tensor(w), None, 0.0, 16.0).data
        np.testing.assert_allclose(with_labels, plain, atol=1e-12)

    def test_zero_norm_embedding_rejected(self):
        with pytest.raises(NormalizationError):
            margin_softmax_logits(Tensor(np.zeros((1, 4))), Tensor(np.eye(4)), None, 0.0, 16.0)

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(7)
        f = rng.normal(size=(3, 5))
        w = rng.normal(size=(4, 5))
        labels = np.array([1, 0, 3])

        ft = Tensor(f, requires_grad=True)
        wt = Tensor(w, requires_grad=True)
        T.backward(cross_entropy(margin_softmax_logits(ft, wt, labels, 0.35, 16.0), labels))

        def loss_fn():
            logits = margin_softmax_logits(Tensor(f), Tensor(w), labels, 0.35, 16.0)
            return float(cross_entropy(logits, labels).data)

        assert max_rel_err(numeric_gradient(loss_fn, f), ft.grad) < 1e-4
        assert max_rel_err(numeric_gradient(loss_fn, w), wt.grad) < 1e-4


class TestNetwork:
    def test_forward_deterministic(self):
        net = small_net()
        x = np.random.default_rng(8).uniform(size=(3, 1, 8, 8))
        f1, l1 = net.forward_embed(Tensor(x), mode="eval")
        f2, l2 = net.forward_embed(Tensor(x), mode="eval")
        np.testing.assert_array_equal(f1.data, f2.data)
        np.testing.assert_array_equal(l1.data, l2.data)

    def test_eval_has_no_side_effects(self):
        net = small_net()
        before = net.state_signature()
        net.forward_embed(Tensor(np.random.default_rng(9).uniform(size=(4, 1, 8, 8))), mode="eval")
        assert net.state_signature() == before

    def test_batch_equals_concat_of_singles_in_eval(self):
        net = small_net()
        x = np.random.default_rng(10).uniform(size=(4, 1, 8, 8))
        fb, _ = net.forward_embed(Tensor(x), mode="eval")
        singles = [net.forward_embed(Tensor(x[i : i + 1]), mode="eval")[0].data for i in range(4)]
        np.testing.assert_allclose(fb.data, np.vstack(singles), atol=1e-10)

    def test_resolution_mismatch_message(self):
        net = small_net()
        with pytest.raises(DimensionError, match="expected 8x8, got 6x6"):
            net.forward_embed(Tensor(np.zeros((1, 1, 6, 6))))

    def test_parameter_names_unique_and_stable(self):
        names = list(small_net().parameters().keys())
        assert len(names) == len(set(names))
        assert names == list(small_net(seed=3).parameters().keys())

    def test_embedding_and_logit_shapes(self):
        net = small_net()
        f, logits = net.forward_embed(Tensor(np.random.default_rng(11).uniform(size=(5, 1, 8, 8))))
        assert f.data.shape == (5, ARCH["embed_dim"])
        assert logits.data.shape == (5, ARCH["num_classes"])


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        net = small_net(seed=12)
        for bn in net.bn_layers().values():
            bn.running_mean = np.random.default_rng(13).normal(size=bn.channels)
            bn.running_var = np.random.default_rng(14).uniform(0.5, 2.0, size=bn.channels)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        loaded = load_checkpoint(path)
        assert loaded.state_signature() == net.state_signature()

        x = np.random.default_rng(15).uniform(size=(2, 1, 8, 8))
        f1, _ = net.forward_embed(Tensor(x))
        f2, _ = loaded.forward_embed(Tensor(x))
        np.testing.assert_array_equal(f1.data, f2.data)

        resaved = tmp_path / "net2.ckpt"
        save_checkpoint(loaded, resaved)
        assert path.read_bytes() == resaved.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(path)
