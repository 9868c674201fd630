import time

import numpy as np
import pytest

from ignition import autodiff as ad
from ignition.autodiff import Tensor, Graph


def rt(rng, *shape, shift=0.0):
    """Random float64 tensor, optionally shifted away from 0 (relu kinks)."""
    data = rng.standard_normal(shape)
    if shift:
        data = data + shift * np.sign(data)
    return Tensor(data)


def scalarize(op_fn, tensors, rng):
    """Reduce an op's output to a scalar via mse against a random target.

    A random target matters: against zeros some ops (batchnorm) are nearly
    invariant in their input, leaving a gradient too small to resolve with
    finite differences.
    """
    probe = op_fn(*tensors)
    target = rng.standard_normal(probe.data.shape)
    return lambda *ts: ad.mse(op_fn(*ts), target)


def all_op_cases(n_shapes=10, seed=0):
    """Yields (op_name, fn, tensors) gradient-check cases covering every op."""
    rng = np.random.default_rng(seed)
    for k in range(n_shapes):
        n = int(rng.integers(1, 4))
        c = int(rng.integers(1, 4))
        h = 2 * int(rng.integers(1, 4))
        w = 2 * int(rng.integers(1, 4))

        ts = [rt(rng, n, c, h, w), rt(rng, n, c, h, w)]
        yield "add", scalarize(ad.add, ts, rng), ts

        ts = [rt(rng, n, c, h, w)]
        cc = float(rng.uniform(-2, 2))
        yield "scale", scalarize(lambda a: ad.scale(a, cc), ts, rng), ts

        ts = [rt(rng, n, c, h, w, shift=0.2)]
        yield "relu", scalarize(ad.relu, ts, rng), ts

        din, dout = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        ts = [rt(rng, n, din), rt(rng, dout, din), rt(rng, dout)]
        yield "linear", scalarize(ad.linear, ts, rng), ts

        ts = [rt(rng, n, c, h, w), rt(rng, n, c + 1, h, w)]
        yield "concat", scalarize(lambda a, b: ad.concat(a, b, axis=1), ts, rng), ts

        co = int(rng.integers(1, 4))
        kh = kw = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        pad = kh // 2
        ts = [rt(rng, n, h + 2, w + 2, c), rt(rng, co, c, kh, kw), rt(rng, co)]
        yield ("conv2d",
               scalarize(lambda x, wt, bs: ad.conv2d(x, wt, bs, stride=stride, padding=pad),
                         ts, rng),
               ts)

        x = rt(rng, n, h, w, c)
        # spread values so 2x2 windows have clear maxima (FD-safe)
        x.data *= 100.0
        ts = [x]
        yield "max_pool2d", scalarize(ad.max_pool2d, ts, rng), ts

        ts = [rt(rng, n, h, w, c)]
        yield "global_avg_pool", scalarize(ad.global_avg_pool, ts, rng), ts

        ts = [rt(rng, n + 1, h, w, c), rt(rng, c, shift=1.0), rt(rng, c)]
        rm, rv = np.zeros(c), np.ones(c)
        yield ("batchnorm2d_train",
               scalarize(lambda x, gamma, beta: ad.batchnorm2d(
                   x, gamma, beta, rm, rv, training=True), ts, rng),
               ts)

        ts = [rt(rng, n, h, w, c), rt(rng, c, shift=1.0), rt(rng, c)]
        rme = rng.standard_normal(c)
        rve = rng.uniform(0.5, 2.0, c)
        yield ("batchnorm2d_eval",
               scalarize(lambda x, gamma, beta: ad.batchnorm2d(
                   x, gamma, beta, rme, rve, training=False), ts, rng),
               ts)

        klass = int(rng.integers(2, 8))
        logits = rt(rng, n + 1, klass)
        targets = rng.integers(0, klass, n + 1)
        yield ("softmax_cross_entropy",
               lambda logits, t=targets: ad.softmax_cross_entropy(logits, t),
               [logits])

        ts = [rt(rng, n, c)]
        tgt = rng.standard_normal((n, c))
        yield "mse", lambda pred, t=tgt: ad.mse(pred, t), ts


def run_all_gradient_checks(n_shapes=10, seed=0, tol=1e-4):
    """Used by the acceptance suite too. Returns {op: worst_rel_err}."""
    worst: dict[str, float] = {}
    for name, fn, tensors in all_op_cases(n_shapes, seed):
        err = ad.check_gradients(fn, tensors)
        worst[name] = max(worst.get(name, 0.0), err)
    failures = {k: v for k, v in worst.items() if not v < tol}
    assert not failures, f"gradient check failures: {failures}"
    return worst


class TestGradients:
    def test_all_ops_ten_random_shapes(self):
        t0 = time.perf_counter()
        worst = run_all_gradient_checks(n_shapes=10, seed=0)
        elapsed = time.perf_counter() - t0
        assert len(worst) == 12  # every op covered
        assert elapsed < 60.0

    def test_rejects_float32(self):
        with pytest.raises(ValueError):
            ad.check_gradients(lambda a: ad.mse(a, np.zeros(3, np.float32)),
                               [Tensor(np.zeros(3, np.float32))])


class TestConvAgainstNaive:
    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_reference(self, stride, padding):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 9, 11, 3))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        fast = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        ref = ad.naive_conv2d(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(fast.data, ref, rtol=1e-10, atol=1e-10)

    def test_1x1_kernel(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((1, 4, 6, 5))
        w = rng.standard_normal((2, 5, 1, 1))
        b = rng.standard_normal(2)
        fast = ad.conv2d(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(fast.data, ad.naive_conv2d(x, w, b), rtol=1e-10)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ad.conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((1, 3, 3, 3))),
                      Tensor(np.zeros(1)))

    def test_speedup_at_least_20x(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((8, 36, 64, 16)).astype(np.float32)
        w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
        b = rng.standard_normal(16).astype(np.float32)
        xt, wt, bt = Tensor(x), Tensor(w), Tensor(b)
        ad.conv2d(xt, wt, bt, padding=1)  # warm up
        n_fast = 10
        t0 = time.perf_counter()
        for _ in range(n_fast):
            ad.conv2d(xt, wt, bt, padding=1)
        fast = (time.perf_counter() - t0) / n_fast
        t0 = time.perf_counter()
        ad.naive_conv2d(x, w, b, padding=1)
        slow = time.perf_counter() - t0
        assert slow / fast >= 20.0, f"speedup only {slow / fast:.1f}x"


class TestGraph:
    def test_backward_requires_scalar(self):
        with Graph() as g:
            t = ad.relu(Tensor(np.ones((2, 2))))
            with pytest.raises(ValueError):
                g.backward(t)

    def test_nested_graph_rejected(self):
        with Graph():
            with pytest.raises(RuntimeError):
                Graph().__enter__()
        # and the guard resets afterwards
        with Graph():
            pass

    def test_no_tracing_outside_graph(self):
        a = Tensor(np.ones(4), requires_grad=True)
        out = ad.relu(a)
        assert out._backward is None

    def test_gradient_accumulates_across_uses(self):
        a = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        with Graph() as g:
            y = ad.add(a, a)  # dy/da = 2
            loss = ad.mse(y, np.zeros(2))
            g.backward(loss)
        np.testing.assert_allclose(a.grad, 2.0 * 2.0 * a.data * 2.0 / 2.0)


class TestOptimizers:
    def test_sgd_quadratic_convergence(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = ad.SGD([p], lr=0.1, momentum=0.9)
        for _ in range(400):
            with Graph() as g:
                g.backward(ad.mse(p, np.array([1.0, 2.0])))
            opt.step()
            opt.zero_grad()
        np.testing.assert_allclose(p.data, [1.0, 2.0], atol=1e-6)

    def test_adam_quadratic_convergence(self):
        p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = ad.Adam([p], lr=0.05)
        for _ in range(2000):
            with Graph() as g:
                g.backward(ad.mse(p, np.array([1.0, 2.0])))
            opt.step()
            opt.zero_grad()
        np.testing.assert_allclose(p.data, [1.0, 2.0], atol=1e-4)

    def test_adam_first_step_magnitude(self):
        # after one step on any nonzero gradient, Adam moves each weight by
        # ~lr (bias-corrected moments cancel on the first step)
        p = Tensor(np.array([10.0]), requires_grad=True)
        opt = ad.Adam([p], lr=1e-3)
        p.grad = np.array([123.456])
        opt.step()
        assert p.data[0] == pytest.approx(10.0 - 1e-3, abs=1e-8)

    def test_invalid_lr(self):
        with pytest.raises(ValueError):
            ad.SGD([], lr=0.0)
        with pytest.raises(ValueError):
            ad.Adam([], lr=-1.0)


class TestCheckpoint:
    def config(self):
        return {"arch": "resnet", "base_channels": 16, "heads": [36, 3]}

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "stem.weight": rng.standard_normal((16, 1, 3, 3)).astype(np.float32),
            "fc.bias": rng.standard_normal(36).astype(np.float32),
            "scalar": np.float32(3.25),
        }
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, tensors, self.config(), {"normalization": {"mean": 0.5}})
        loaded, sidecar = ad.load_checkpoint(path)
        assert set(loaded) == set(tensors)
        for k in tensors:
            np.testing.assert_array_equal(loaded[k], np.asarray(tensors[k], np.float32))
        assert sidecar["config"] == self.config()
        assert sidecar["normalization"] == {"mean": 0.5}

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ad.save_checkpoint(path, {"a": np.zeros(2, np.float32)}, self.config())
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(path)

    def test_config_tamper_rejected(self, tmp_path):
        import json
        path = tmp_path / "m.ckpt"
        ad.save_checkpoint(path, {"a": np.zeros(2, np.float32)}, self.config())
        side = json.loads((tmp_path / "m.ckpt.json").read_text())
        side["config"]["base_channels"] = 32
        (tmp_path / "m.ckpt.json").write_text(json.dumps(side))
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ad.save_checkpoint(path, {"a": np.zeros(100, np.float32)}, self.config())
        raw = path.read_bytes()
        path.write_bytes(raw[:-50])
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(path)

    def test_hash_is_order_independent(self):
        a = ad.config_hash({"x": 1, "y": 2})
        b = ad.config_hash({"y": 2, "x": 1})
        assert a == b
        assert a != ad.config_hash({"x": 1, "y": 3})
