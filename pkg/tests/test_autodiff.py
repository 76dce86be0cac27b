import numpy as np
import pytest

from radmatch.autodiff import (
    Adam,
    ParameterStore,
    Sgd,
    Tensor,
    affine_sample,
    attention,
    concat,
    conv2d,
    grad_check,
    init_array,
    l2_normalize_rows,
    layer_norm,
    linear,
    logsumexp,
    maxpool2x2,
    no_grad,
    sample_bilinear,
    softmax,
    take_pixels,
    upsample_bilinear2x,
)
from radmatch.errors import ContractError


class TestBackwardBasics:
    def test_square_gradient(self):
        x = Tensor(3.0, requires_grad=True)
        y = x * x
        y.backward()
        assert x.grad == pytest.approx(6.0)

    def test_softmax_sum_has_zero_gradient(self):
        x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
        y = softmax(x, axis=-1).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)

    def test_backward_nonscalar_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ContractError, match="scalar"):
            (x * 2).backward()

    def test_reused_subexpression_accumulates(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x + x * x  # d/dx = 8x? no: 2*(2x) = 4x = 8
        y.backward()
        assert x.grad == pytest.approx(8.0)

    def test_no_grad_suppresses_graph(self):
        x = Tensor(1.5, requires_grad=True)
        with no_grad():
            y = x * x
        assert not y.requires_grad

    def test_mlp_gradcheck(self):
        # random 3-layer MLP against central differences
        rng = np.random.default_rng(0)
        w1 = Tensor(rng.normal(size=(4, 8)) * 0.5, requires_grad=True)
        b1 = Tensor(rng.normal(size=(8,)) * 0.1, requires_grad=True)
        w2 = Tensor(rng.normal(size=(8, 6)) * 0.5, requires_grad=True)
        b2 = Tensor(rng.normal(size=(6,)) * 0.1, requires_grad=True)
        w3 = Tensor(rng.normal(size=(6, 1)) * 0.5, requires_grad=True)
        x = np.asarray(rng.normal(size=(3, 4)))

        def f(w1, b1, w2, b2, w3):
            h1 = linear(Tensor(x), w1, b1).relu()
            h2 = linear(h1, w2, b2).sigmoid()
            return (h2 @ w3).sum()

        report = grad_check(f, {"w1": w1, "b1": b1, "w2": w2, "b2": b2, "w3": w3})
        assert report.passed(1e-4), (report.worst_input, report.max_rel_err)


class TestLayerContracts:
    def test_conv_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 5, 7)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        out = conv2d(x, w)
        np.testing.assert_array_equal(out.data, x.data)

    def test_maxpool_simple(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = maxpool2x2(x)
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 4.0

    def test_maxpool_odd_dims_rejected(self):
        with pytest.raises(ContractError, match="even"):
            maxpool2x2(Tensor(np.zeros((1, 3, 4))))

    def test_conv_shape_mismatch_names_shapes(self):
        with pytest.raises(ContractError, match=r"\(2, 4, 4\)"):
            conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((3, 5, 3, 3))))

    def test_attention_orthogonal_onehot_dominant_diagonal(self):
        d = 6
        q = Tensor(np.eye(d) * 4.0)  # strong one-hot rows
        out = attention(q, q, q, num_heads=1)
        # dense oracle
        s = (q.data @ q.data.T) / np.sqrt(d)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        expected = a @ q.data
        np.testing.assert_allclose(out.data, expected, atol=1e-12)
        # dominant self-weight: output rows close to V rows
        assert np.all(np.diag(a) > 0.9)

    def test_attention_head_count_must_divide(self):
        x = Tensor(np.zeros((3, 6)))
        with pytest.raises(ContractError, match="heads"):
            attention(x, x, x, num_heads=4)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(11, 13)) * 30)
        s = softmax(x, axis=-1)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_layernorm_moments(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(2.0, 5.0, size=(9, 16)))
        g = Tensor(np.ones(16))
        b = Tensor(np.zeros(16))
        y = layer_norm(x, g, b).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)

    def test_upsample_doubles_and_keeps_constant(self):
        x = Tensor(np.full((2, 4, 6), 0.7))
        out = upsample_bilinear2x(x)
        assert out.shape == (2, 8, 12)
        np.testing.assert_allclose(out.data, 0.7, atol=1e-12)

    def test_logsumexp_matches_dense(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 7)) * 50
        got = logsumexp(Tensor(x), axis=-1).data
        np.testing.assert_allclose(got, np.log(np.exp(x - x.max(-1, keepdims=True)).sum(-1)) + x.max(-1), atol=1e-12)


class TestLayerGradients:
    """Every shipped layer passes grad_check at 1e-4 over 20 random seeds."""

    @pytest.mark.parametrize("seed", range(20))
    def test_all_layers_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 6, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.4, requires_grad=True)
        b = Tensor(rng.normal(size=(3,)) * 0.1, requires_grad=True)

        def f_conv(x, w, b):
            return conv2d(x, w, b).sum()

        rep = grad_check(f_conv, {"x": x, "w": w, "b": b})
        assert rep.passed(1e-4), ("conv", rep.max_rel_err)

        xp = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
        probe_p = rng.normal(size=(2, 2, 2))

        def f_pool(xp):
            return (maxpool2x2(xp) * Tensor(probe_p)).sum()

        rep = grad_check(f_pool, {"xp": xp})
        assert rep.passed(1e-4), ("pool", rep.max_rel_err)

        xu = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        wu = Tensor(rng.normal(size=(2, 6, 8)))

        def f_up(xu):
            return (upsample_bilinear2x(xu) * wu).sum()

        rep = grad_check(f_up, {"xu": xu})
        assert rep.passed(1e-4), ("upsample", rep.max_rel_err)

        q = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
        k = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        v = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
        wo = Tensor(rng.normal(size=(8, 8)) * 0.3, requires_grad=True)
        probe = rng.normal(size=(3, 8))

        def f_attn(q, k, v, wo):
            return (attention(q, k, v, num_heads=2, w_out=wo) * Tensor(probe)).sum()

        rep = grad_check(f_attn, {"q": q, "k": k, "v": v, "wo": wo})
        assert rep.passed(1e-4), ("attention", rep.max_rel_err)

        xl = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        gl = Tensor(rng.uniform(0.5, 1.5, size=(6,)), requires_grad=True)
        bl = Tensor(rng.normal(size=(6,)) * 0.2, requires_grad=True)
        probe_l = rng.normal(size=(3, 6))

        def f_ln(xl, gl, bl):
            return (layer_norm(xl, gl, bl) * Tensor(probe_l)).sum()

        rep = grad_check(f_ln, {"xl": xl, "gl": gl, "bl": bl})
        assert rep.passed(1e-4), ("layernorm", rep.max_rel_err)

    @pytest.mark.parametrize("seed", range(5))
    def test_sampling_ops_gradcheck(self, seed):
        rng = np.random.default_rng(100 + seed)
        fmap = Tensor(rng.normal(size=(3, 6, 7)), requires_grad=True)
        pts = rng.uniform(0.6, 4.4, size=(5, 2))  # away from integer kinks
        pts += 0.3 * (np.abs(pts - np.round(pts)) < 0.05)
        probe = rng.normal(size=(5, 3))

        def f_sample(fmap):
            return (sample_bilinear(fmap, pts) * Tensor(probe)).sum()

        rep = grad_check(f_sample, {"fmap": fmap})
        assert rep.passed(1e-4), ("sample_bilinear", rep.max_rel_err)

        xs = rng.integers(0, 7, size=4)
        ys = rng.integers(0, 6, size=4)
        probe2 = rng.normal(size=(4, 3))

        def f_take(fmap):
            return (take_pixels(fmap, xs, ys) * Tensor(probe2)).sum()

        rep = grad_check(f_take, {"fmap": fmap})
        assert rep.passed(1e-4), ("take_pixels", rep.max_rel_err)

        img = Tensor(rng.uniform(size=(8, 9)), requires_grad=True)
        theta = Tensor(np.array([1.02, 0.03, -0.04, 0.97, 0.31, -0.22]), requires_grad=True)
        probe_w = rng.normal(size=(8, 9))

        def f_warp(img, theta):
            return (affine_sample(img, theta, center=(4.0, 3.5)) * Tensor(probe_w)).sum()

        rep = grad_check(f_warp, {"img": img, "theta": theta}, h=1e-5)
        assert rep.passed(1e-4), ("affine_sample", rep.max_rel_err)

    def test_l2_normalize_rows_unit_norm_and_grad(self):
        rng = np.random.default_rng(200)
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        out = l2_normalize_rows(x)
        np.testing.assert_allclose((out.data ** 2).sum(-1), 1.0, atol=1e-9)
        probe = rng.normal(size=(4, 5))

        def f(x):
            return (l2_normalize_rows(x) * Tensor(probe)).sum()

        rep = grad_check(f, {"x": x})
        assert rep.passed(1e-4)


class TestOptimizers:
    def test_sgd_quadratic_converges(self):
        x = Tensor(np.array([4.0, -3.0]), requires_grad=True)
        opt = Sgd({"x": x}, lr=0.2)
        for _ in range(100):
            opt.zero_grad()
            loss = (x * x).sum()
            loss.backward()
            opt.step()
        np.testing.assert_allclose(x.data, 0.0, atol=1e-6)

    def test_adam_quadratic_converges(self):
        x = Tensor(np.array([4.0, -3.0]), requires_grad=True)
        opt = Adam({"x": x}, lr=0.3)
        for _ in range(300):
            opt.zero_grad()
            loss = (x * x).sum()
            loss.backward()
            opt.step()
        np.testing.assert_allclose(x.data, 0.0, atol=1e-4)


class TestParameterStore:
    def test_deterministic_init_independent_of_order(self):
        s1 = ParameterStore(seed=5)
        a1 = s1.parameter("alpha", (3, 4))
        b1 = s1.parameter("beta", (2,), kind="zeros")
        s2 = ParameterStore(seed=5)
        b2 = s2.parameter("beta", (2,), kind="zeros")
        a2 = s2.parameter("alpha", (3, 4))
        np.testing.assert_array_equal(a1.data, a2.data)
        np.testing.assert_array_equal(b1.data, b2.data)

    def test_different_names_different_values(self):
        s = ParameterStore(seed=5)
        a = s.parameter("a", (4, 4))
        b = s.parameter("b", (4, 4))
        assert not np.array_equal(a.data, b.data)

    def test_f64_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        s = ParameterStore(seed=1, hyper={"lr": 0.01})
        s.put("w", rng.normal(size=(5, 3)), trainable=True)
        s.put("b", rng.normal(size=(3,)), trainable=True)
        path = tmp_path / "w.rkw"
        s.save(path, dtype="f64")
        back = ParameterStore.load(path)
        assert back.names() == s.names()
        for n in s.names():
            assert np.array_equal(back[n].data, s[n].data)
        assert back.hyper == {"lr": 0.01}

    def test_f32_file_level_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        s = ParameterStore(seed=2)
        s.put("w", rng.normal(size=(4, 4)))
        p1 = tmp_path / "a.rkw"
        p2 = tmp_path / "b.rkw"
        s.save(p1, dtype="f32")
        ParameterStore.load(p1).save(p2, dtype="f32")
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_checked(self, tmp_path):
        p = tmp_path / "bad.rkw"
        p.write_bytes(b"NOPE manifest=2\n{}")
        with pytest.raises(Exception, match="RKW1"):
            ParameterStore.load(p)

    def test_resume_reproduces_next_loss_bit_exactly(self, tmp_path):
        def build(seed):
            s = ParameterStore(seed=seed)
            w = s.parameter("w", (3, 3))
            b = s.parameter("b", (3,), kind="zeros")
            return s

        data = np.asarray(np.random.default_rng(8).normal(size=(5, 3)))
        target = np.asarray(np.random.default_rng(9).normal(size=(5, 3)))

        def loss_of(s):
            out = linear(Tensor(data), s["w"], s["b"])
            d = out - Tensor(target)
            return (d * d).sum()

        def train(s, opt, steps):
            last = None
            for _ in range(steps):
                opt.zero_grad()
                loss = loss_of(s)
                loss.backward()
                opt.step()
                last = loss.item()
            return last

        # run A: 5 steps, checkpoint, then one more step
        sa = build(3)
        oa = Adam(dict(sa.trainable_items()), lr=0.05)
        train(sa, oa, 5)
        ckpt = tmp_path / "ckpt.rkw"
        sa.save(ckpt, dtype="f64")
        opt_state = oa.state_arrays()
        state_store = ParameterStore(seed=0)
        for name, arr in opt_state.items():
            state_store.put(name, arr)
        state_store.save(tmp_path / "opt.rkw", dtype="f64")
        loss_a = train(sa, oa, 1)

        # run B: resume from the checkpoint
        sb = ParameterStore.load(ckpt)
        ob = Adam(dict(sb.trainable_items()), lr=0.05)
        loaded = ParameterStore.load(tmp_path / "opt.rkw")
        ob.load_state_arrays({n: loaded[n].data for n in loaded.names()})
        loss_b = train(sb, ob, 1)
        assert loss_a == loss_b  # bit-exact


class TestConcat:
    def test_concat_grad(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones((2, 2)), requires_grad=True)
        out = concat([a, b], axis=1)
        assert out.shape == (2, 5)
        (out * Tensor(np.arange(10.0).reshape(2, 5))).sum().backward()
        np.testing.assert_array_equal(a.grad, [[0, 1, 2], [5, 6, 7]])
        np.testing.assert_array_equal(b.grad, [[3, 4], [8, 9]])
