import numpy as np
import pytest

import glyphgen.numerics.tensor as T
from glyphgen.numerics import (
    Graph,
    NonDifferentiableError,
    ShapeError,
    Tensor,
    evaluate,
    finite_difference_check,
    gradient,
)


def t64(x, rg=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


class TestForward:
    def test_softmax_symmetry(self):
        out = T.softmax(t64([0.0, 0.0]))
        assert np.allclose(out.data, [0.5, 0.5])

    def test_sigmoid_zero(self):
        assert T.sigmoid(t64(0.0)).item() == 0.5

    def test_layer_norm_constant_vector(self):
        # zero variance is epsilon-guarded: output is the zero vector
        out = T.layer_norm(t64([3.0, 3.0, 3.0, 3.0]))
        assert np.allclose(out.data, 0.0)

    def test_evaluate_referentially_transparent(self):
        g = Graph(lambda xs: T.softmax(T.matmul(xs["a"], xs["b"])), ["a", "b"])
        a = np.arange(6, dtype=np.float64).reshape(2, 3)
        b = np.ones((3, 2), dtype=np.float64)
        o1 = evaluate(g, {"a": a, "b": b})["out"].data
        o2 = evaluate(g, {"a": a, "b": b})["out"].data
        assert o1.tobytes() == o2.tobytes()

    def test_shape_mismatch_names_node(self):
        with pytest.raises(ShapeError, match="matmul"):
            T.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))
        with pytest.raises(ShapeError, match="add"):
            T.add(t64(np.ones((2, 3))), t64(np.ones((4,))))


class TestBackward:
    def test_square_gradient(self):
        x = t64(3.0, rg=True)
        y = T.mul(x, x)
        y.backward()
        assert x.grad == pytest.approx(6.0)

    def test_detached_gradient_is_exact_zero(self):
        x = t64([1.0, 2.0], rg=True)
        y = T.mul(x.detach(), t64([3.0, 4.0], rg=True))
        loss = T.tsum(y)
        loss.backward()
        assert x.grad is None  # no flow at all through detach

    def test_softmax_xent_optimum_gradient_zero(self):
        # logits already one-hot optimal: pushing them to +inf on the true
        # class; at a symmetric finite optimum gradient is p - y
        logits = t64([10.0, -10.0, -10.0], rg=True)
        p = T.softmax(logits)
        loss = -T.log(p[0])
        loss.backward()
        p_np = p.data
        expect = p_np - np.array([1.0, 0.0, 0.0])
        assert np.allclose(logits.grad, expect, atol=1e-12)

    def test_nondifferentiable_path_raises(self):
        x = t64([1.0, -1.0], rg=True)
        y = T.poisoned(np.sign(x.data), "sign")
        loss = T.tsum(T.mul(y, t64([1.0, 1.0])))
        with pytest.raises(NonDifferentiableError):
            loss.backward()

    def test_gradient_seed_shape_checked(self):
        g = Graph(lambda xs: T.relu(xs["x"]), ["x"])
        with pytest.raises(ShapeError):
            gradient(g, {"x": np.ones(3)}, seed=np.ones(4))


class TestFiniteDifference:
    def rng(self):
        return np.random.default_rng(11)

    def test_linear_layer(self):
        r = self.rng()
        w = t64(r.normal(size=(4, 3)))
        fn = lambda xs: T.add(T.matmul(xs["x"], xs["w"]), xs["b"])
        inputs = {"x": t64(r.normal(size=(2, 4))), "w": w, "b": t64(r.normal(size=3))}
        assert finite_difference_check(fn, inputs, eps=1e-5) <= 1e-6

    def test_softmax(self):
        r = self.rng()
        fn = lambda xs: T.softmax(xs["x"], axis=-1)
        assert finite_difference_check(fn, {"x": t64(r.normal(size=(3, 5)))}) <= 1e-5

    def test_layer_norm(self):
        r = self.rng()
        fn = lambda xs: T.layer_norm(xs["x"], xs["g"], xs["b"])
        inputs = {"x": t64(r.normal(size=(2, 8))), "g": t64(r.normal(size=8)), "b": t64(r.normal(size=8))}
        assert finite_difference_check(fn, inputs) <= 1e-5

    @pytest.mark.parametrize("name,fn", [
        ("sigmoid", lambda xs: T.sigmoid(xs["x"])),
        ("gelu", lambda xs: T.gelu(xs["x"])),
        ("silu", lambda xs: T.silu(xs["x"])),
        ("tanh", lambda xs: T.tanh(xs["x"])),
        ("exp", lambda xs: T.exp(xs["x"])),
        ("mean", lambda xs: T.mean(xs["x"])),
        ("square", lambda xs: T.mul(xs["x"], xs["x"])),
    ])
    def test_elementwise(self, name, fn):
        r = self.rng()
        assert finite_difference_check(fn, {"x": t64(r.normal(size=(4, 4)))}) <= 1e-5

    def test_relu_away_from_kink(self):
        r = self.rng()
        x = r.normal(size=(4, 4))
        x = np.where(np.abs(x) < 1e-3, 0.5, x)  # kink bounded away per contract
        assert finite_difference_check(lambda xs: T.relu(xs["x"]), {"x": t64(x)}) <= 1e-5

    def test_conv2d(self):
        r = self.rng()
        inputs = {"x": t64(r.normal(size=(2, 6, 6, 3))), "w": t64(r.normal(size=(3, 3, 3, 4)))}
        fn = lambda xs: T.conv2d(xs["x"], xs["w"], stride=1, padding=1)
        assert finite_difference_check(fn, inputs) <= 1e-6
        fn2 = lambda xs: T.conv2d(xs["x"], xs["w"], stride=2, padding=1)
        assert finite_difference_check(fn2, inputs) <= 1e-6

    def test_upsample_avgpool_pad(self):
        r = self.rng()
        x = {"x": t64(r.normal(size=(2, 4, 4, 3)))}
        assert finite_difference_check(lambda xs: T.upsample2(xs["x"]), x) <= 1e-6
        assert finite_difference_check(lambda xs: T.avg_pool(xs["x"], 2), x) <= 1e-6
        assert finite_difference_check(lambda xs: T.pad2d(xs["x"], 2), x) <= 1e-6

    def test_bce_with_logits(self):
        r = self.rng()
        targets = r.integers(0, 2, size=(3, 4)).astype(np.float64)
        fn = lambda xs: T.bce_with_logits(xs["x"], targets)
        assert finite_difference_check(fn, {"x": t64(r.normal(size=(3, 4)))}) <= 1e-5

    def test_concat_slice_transpose(self):
        r = self.rng()
        inputs = {"a": t64(r.normal(size=(2, 3))), "b": t64(r.normal(size=(2, 5)))}
        fn = lambda xs: T.concat([xs["a"], xs["b"]], axis=1)[0:1, 2:6]
        assert finite_difference_check(fn, inputs) <= 1e-6


class TestGatedAttention:
    def test_all_ones_gate_reduces_to_standard(self):
        r = np.random.default_rng(3)
        q, k, v = (t64(r.normal(size=s)) for s in [(5, 8), (7, 8), (7, 6)])
        gate = t64(np.ones((5, 7)))
        a = T.gated_attention(q, k, v, gate)
        b = T.gated_attention(q, k, v, None)
        assert a.data.tobytes() == b.data.tobytes()

    def test_single_key_returns_value_row(self):
        r = np.random.default_rng(4)
        q, k, v = t64(r.normal(size=(3, 8))), t64(r.normal(size=(1, 8))), t64(r.normal(size=(1, 6)))
        gate = t64(r.normal(size=(3, 1)))
        out = T.gated_attention(q, k, v, gate)
        assert np.allclose(out.data, np.repeat(v.data, 3, axis=0))

    def test_zero_gate_gives_uniform_attention(self):
        r = np.random.default_rng(5)
        q, k, v = t64(r.normal(size=(2, 8))), t64(r.normal(size=(4, 8))), t64(r.normal(size=(4, 3)))
        out = T.gated_attention(q, k, v, t64(np.zeros((2, 4))))
        assert np.allclose(out.data, np.repeat(v.data.mean(axis=0, keepdims=True), 2, axis=0))

    def test_rows_sum_to_one(self):
        r = np.random.default_rng(6)
        q, k = t64(r.normal(size=(4, 8))), t64(r.normal(size=(6, 8)))
        gate = t64(r.normal(size=(4, 6)))
        scale = 1.0 / np.sqrt(8)
        logits = (q.data @ k.data.T) * scale * gate.data
        p = T.softmax(t64(logits)).data
        assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-6)

    def test_dk_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.gated_attention(t64(np.ones((2, 4))), t64(np.ones((3, 5))), t64(np.ones((3, 2))))

    def test_gradcheck(self):
        r = np.random.default_rng(7)
        inputs = {
            "q": t64(r.normal(size=(3, 8))),
            "k": t64(r.normal(size=(5, 8))),
            "v": t64(r.normal(size=(5, 4))),
            "g": t64(r.normal(size=(3, 5))),
        }
        fn = lambda xs: T.gated_attention(xs["q"], xs["k"], xs["v"], xs["g"])
        assert finite_difference_check(fn, inputs) <= 1e-5
