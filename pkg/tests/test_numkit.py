import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physlaw import numkit as nk
from physlaw.numkit import Tensor


# Plain float64 numpy versions of each op; the finite-difference oracle
# differentiates these, never the tape.
def ref_softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def ref_layer_norm(x, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def ref_gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def ref_silu(x):
    return x / (1 + np.exp(-x))


def central_fd(f, x, h):
    """Central differences with one Richardson step, so truncation error is O(h^4)."""
    return (4 * _central(f, x, h / 2) - _central(f, x, h)) / 3


def _central(f, x, h):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


# each case: (tape builder taking Tensors, numpy reference taking arrays, input shapes)
OP_CASES = {
    "matmul": (lambda a, b: nk.matmul(a, b), lambda a, b: a @ b, [(3, 4), (4, 5)]),
    "matmul_batched_shared": (lambda a, b: nk.matmul(a, b), lambda a, b: a @ b, [(2, 3, 4), (4, 5)]),
    "add_broadcast": (lambda a, b: a + b, lambda a, b: a + b, [(2, 3, 4), (4,)]),
    "mul_broadcast": (lambda a, b: a * b, lambda a, b: a * b, [(2, 3, 4), (3, 1)]),
    "scale": (lambda a: nk.scale(a, -2.5), lambda a: -2.5 * a, [(3, 4)]),
    "reshape": (lambda a: a.reshape(4, 3), lambda a: a.reshape(4, 3), [(3, 4)]),
    "transpose": (lambda a: a.transpose(2, 0, 1), lambda a: a.transpose(2, 0, 1), [(2, 3, 4)]),
    "softmax": (nk.softmax, ref_softmax, [(3, 5)]),
    "layer_norm": (nk.layer_norm, ref_layer_norm, [(2, 3, 5)]),
    "gelu": (nk.gelu, ref_gelu, [(3, 4)]),
    "silu": (nk.silu, ref_silu, [(3, 4)]),
}


def _probe_loss_ref(ref, probe):
    def loss(*arrays):
        out = ref(*arrays)
        return float((out * probe).sum())
    return loss


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-6), (np.float32, 1e-4)])
@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_match_finite_differences(name, dtype, tol):
    build, ref, shapes = OP_CASES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    inputs = [rng.standard_normal(s) for s in shapes]
    out_shape = ref(*inputs).shape
    probe = rng.standard_normal(out_shape)
    # seeding backward with `probe` differentiates sum(out * probe)
    tensors = [Tensor(x.astype(dtype), requires_grad=True) for x in inputs]
    out = build(*tensors)
    out.backward(probe.astype(dtype))
    loss = _probe_loss_ref(ref, probe)
    for k, x in enumerate(inputs):
        h = 1e-3 * max(1.0, float(np.abs(x).max()))
        def f(xk, k=k):
            args = list(inputs)
            args[k] = xk
            return loss(*args)
        fd = central_fd(f, x.copy(), h)
        assert rel_err(tensors[k].grad.astype(np.float64), fd) <= tol, name


def test_mse_gradient_and_weighting():
    rng = np.random.default_rng(3)
    p = rng.standard_normal((2, 3))
    t = rng.standard_normal((2, 3))
    w = np.array([[1.0], [0.0]])
    for dtype, tol in [(np.float64, 1e-6), (np.float32, 1e-4)]:
        pt = Tensor(p.astype(dtype), requires_grad=True)
        loss = nk.mse(pt, Tensor(t.astype(dtype)), weight=w)
        loss.backward()
        f = lambda x: float((w * (x - t) ** 2).sum() / np.broadcast_to(w, x.shape).sum())
        assert rel_err(pt.grad, central_fd(f, p.copy(), 1e-3)) <= tol
        assert abs(loss.item() - f(p)) < 1e-6


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    out = nk.matmul(Tensor(np.eye(3)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_softmax_uniform():
    out = nk.softmax(Tensor(np.zeros(3)))
    assert np.allclose(out.data, 1 / 3)


def test_mse_self_is_zero():
    x = Tensor(np.random.default_rng(1).standard_normal((4, 4)))
    assert nk.mse(x, x).item() == 0.0


def test_sum_of_squares_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = nk.scale(nk.mse(x, np.zeros(2)), 2.0)  # mean * n == sum(x^2)
    loss.backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_constant_loss_gives_zero_grad():
    x = Tensor(np.array([1.0, -3.0]), requires_grad=True)
    loss = nk.mse(nk.scale(x, 0.0), np.zeros(2))
    loss.backward()
    assert np.all(x.grad == 0)


def test_backward_accumulates_without_zeroing():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    for _ in range(2):
        nk.scale(nk.mse(x, np.zeros(2)), 2.0).backward()
    assert np.allclose(x.grad, [4.0, 8.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nk.ShapeError):
        nk.scale(x, 2.0).backward()


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(nk.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nk.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(nk.ShapeError, match=r"\(2, 3\).*\(4,\)"):
        nk.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_shared_subexpression_gradient():
    # x used twice: d/dx mean((x*x)^2) via the tape vs analytic 4x^3/n
    x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
    y = x * x
    nk.mse(y, np.zeros(3)).backward()
    assert np.allclose(x.grad, 4 * x.data ** 3 / 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(2, 16), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)).astype(np.float32) * 5
    s = nk.softmax(Tensor(x)).data
    assert np.all(np.abs(s.sum(-1) - 1) <= 1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(8, 64), st.integers(0, 2**31 - 1))
def test_layer_norm_moments(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 3 + 1
    y = nk.layer_norm(Tensor(x)).data
    assert np.all(np.abs(y.mean(-1)) <= 1e-5)
    assert np.all(np.abs(y.var(-1) - 1) <= 1e-4)


def test_forward_is_deterministic():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((16, 32)).astype(np.float32)
    b = rng.standard_normal((32, 8)).astype(np.float32)
    with nk.strict_mode():
        r1 = nk.softmax(nk.matmul(Tensor(a), Tensor(b))).data.tobytes()
        r2 = nk.softmax(nk.matmul(Tensor(a), Tensor(b))).data.tobytes()
    assert r1 == r2


# -- AdamW ------------------------------------------------------------------

def _single_param(value, grad):
    p = Tensor(np.array([value], dtype=np.float64), requires_grad=True)
    p.grad = np.array([grad], dtype=np.float64)
    return p


def test_adamw_zero_grad_no_decay_is_noop():
    p = _single_param(1.5, 0.0)
    opt = nk.AdamW({"p": p}, lr=1e-4, weight_decay=0.0, total_steps=10)
    assert opt.step()
    assert p.data[0] == 1.5


def test_adamw_first_step_moves_by_lr():
    p = _single_param(0.0, 1.0)
    opt = nk.AdamW({"p": p}, lr=1e-4, weight_decay=0.0, schedule="constant")
    opt.step()
    # m_hat = v_hat = 1 -> delta = -lr / (1 + eps)
    assert p.data[0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)


def test_adamw_decoupled_decay_only():
    p = _single_param(2.0, 0.0)
    opt = nk.AdamW({"p": p}, lr=1e-4, weight_decay=0.01, schedule="constant")
    opt.step()
    assert p.data[0] == pytest.approx(2.0 * (1 - 1e-4 * 0.01), rel=1e-14)


def test_adamw_refuses_nan_gradient(caplog):
    p = _single_param(1.0, float("nan"))
    opt = nk.AdamW({"p": p}, lr=1e-4)
    with caplog.at_level("WARNING"):
        assert opt.step() is False
    assert p.data[0] == 1.0
    assert opt.state.step_count == 0
    assert "non-finite" in caplog.text


def test_adamw_step_count_and_moment_shapes():
    p = Tensor(np.ones((3, 2)), requires_grad=True)
    opt = nk.AdamW({"w": p}, lr=1e-3, total_steps=5)
    for k in range(1, 4):
        p.grad = np.ones((3, 2))
        opt.step()
        assert opt.state.step_count == k
    assert opt.state.first_moment["w"].shape == p.shape
    assert opt.state.second_moment["w"].shape == p.shape


def test_cosine_schedule_endpoints():
    assert nk.cosine_lr(0, 1e-4, 100) == pytest.approx(1e-4)
    assert nk.cosine_lr(50, 1e-4, 100) == pytest.approx(5e-5)
    assert nk.cosine_lr(100, 1e-4, 100) == pytest.approx(0.0, abs=1e-20)
    lrs = [nk.cosine_lr(s, 1e-4, 100) for s in range(101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_adamw_minimises_quadratic():
    target = np.array([3.0, -2.0])
    x = Tensor(np.zeros(2), requires_grad=True)
    opt = nk.AdamW({"x": x}, lr=0.1, weight_decay=0.0, schedule="constant")
    for _ in range(300):
        opt.zero_grad()
        nk.mse(x, target).backward()
        opt.step()
    assert np.allclose(x.data, target, atol=1e-2)


# -- checkpoints and RNG ------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    arrays = {
        "w32": rng.standard_normal((3, 4)).astype(np.float32),
        "w64": rng.standard_normal(5),
        "step": np.array([7], dtype=np.int64),
        "scalar": np.array(1.25, dtype=np.float32),
        "meta": nk.checkpoint.encode_json({"layers": 2}),
    }
    path = tmp_path / "m.phyw"
    nk.save_arrays(path, arrays)
    raw = path.read_bytes()
    assert raw[:4] == b"PHYW" and int.from_bytes(raw[4:8], "little") == 1
    back = nk.load_arrays(path)
    assert list(back) == list(arrays)
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert back[k].tobytes() == v.tobytes()
    assert nk.checkpoint.decode_json(back["meta"]) == {"layers": 2}


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.phyw"
    nk.save_arrays(path, {"w": np.ones(10, dtype=np.float32)})
    raw = path.read_bytes()
    (tmp_path / "bad.phyw").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(nk.CheckpointError, match="magic"):
        nk.load_arrays(tmp_path / "bad.phyw")
    (tmp_path / "trunc.phyw").write_bytes(raw[:-3])
    with pytest.raises(nk.CheckpointError, match="truncated"):
        nk.load_arrays(tmp_path / "trunc.phyw")


def test_rng_streams_reproducible_and_independent():
    a = nk.stream(1, "train").standard_normal(5)
    b = nk.stream(1, "train").standard_normal(5)
    c = nk.stream(1, "eval").standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
