import numpy as np
import pytest

from jsslab import autodiff as ad
from jsslab.autodiff import ParamStore, ShapeError, Tensor

from gradcheck import grad_check, leaf

TOL = 1e-4


@pytest.fixture
def rng():
    return np.random.default_rng(1)


def test_elementwise_ops(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    assert grad_check(lambda: ad.mul(ad.add(a, b), a), [a, b]) < TOL
    assert grad_check(lambda: ad.exp(ad.neg(a)), [a]) < TOL
    p = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    assert grad_check(lambda: ad.log(p), [p]) < TOL
    assert grad_check(lambda: ad.square(a), [a]) < TOL
    assert grad_check(lambda: ad.leaky_relu(a, 0.1), [a]) < TOL


def test_shape_ops(rng):
    a = leaf(rng, 2, 3, 4)
    b = leaf(rng, 2, 3, 2)
    assert grad_check(lambda: ad.reshape(a, (6, 4)), [a]) < TOL
    assert grad_check(lambda: ad.transpose(a), [a]) < TOL
    assert grad_check(lambda: ad.concat([a, b], axis=-1), [a, b]) < TOL
    v = leaf(rng, 1, 3, 1)
    assert grad_check(lambda: ad.broadcast_to(v, (2, 3, 5)), [v]) < TOL
    idx = np.array([[[1], [0], [3]], [[2], [2], [0]]])
    assert grad_check(lambda: ad.take(a, idx, axis=-1), [a]) < TOL


def test_reductions(rng):
    a = leaf(rng, 3, 5)
    assert grad_check(lambda: ad.tsum(a, axis=1), [a]) < TOL
    assert grad_check(lambda: ad.tmean(a, axis=0, keepdims=True), [a]) < TOL
    assert grad_check(lambda: ad.tmean(a), [a]) < TOL


def test_linear_algebra(rng):
    x, W, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5), leaf(rng, 5)
    assert grad_check(lambda: ad.affine(x, W, b), [x, W, b]) < TOL
    q, k = leaf(rng, 3, 4), leaf(rng, 6, 4)
    assert grad_check(lambda: ad.matmul(q, ad.transpose(k)), [q, k]) < TOL
    v = leaf(rng, 4)
    assert grad_check(lambda: ad.matmul(v, W), [v, W]) < TOL


def test_layer_norm(rng):
    x, g, s = leaf(rng, 2, 3, 6), leaf(rng, 6), leaf(rng, 6)
    assert grad_check(lambda: ad.layer_norm(x, g, s), [x, g, s]) < TOL


def test_masked_softmaxes(rng):
    s = leaf(rng, 3, 5)
    mask = np.array([[1, 1, 0, 1, 0], [0, 1, 0, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    assert grad_check(lambda: ad.masked_softmax(s, mask), [s]) < TOL
    assert grad_check(lambda: ad.masked_log_softmax(s, mask), [s]) < TOL


def test_masked_softmax_values(rng):
    s = Tensor(rng.normal(size=(2, 4)))
    mask = np.array([[1, 0, 1, 1], [1, 1, 1, 1]], dtype=bool)
    p = ad.masked_softmax(s, mask).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert p[0, 1] == 0.0
    lp = ad.masked_log_softmax(s, mask).data
    np.testing.assert_allclose(np.exp(lp[mask]), p[mask])
    assert lp[0, 1] == 0.0


def test_masked_softmax_rejects_all_masked():
    with pytest.raises(ValueError):
        ad.masked_softmax(Tensor(np.zeros((1, 3))), np.zeros((1, 3), dtype=bool))


def test_graph_aggregation(rng):
    x = leaf(rng, 2, 4, 3)
    adj = (rng.random((2, 4, 4)) < 0.5).astype(float)
    adj[:, 3, :] = 0.0  # an isolated node
    assert grad_check(lambda: ad.mean_neighbors(x, adj), [x]) < TOL
    mask = np.array([[1, 1, 1, 0], [1, 0, 0, 0]], dtype=bool)
    assert grad_check(lambda: ad.masked_mean(x, mask), [x]) < TOL


def test_mean_neighbors_isolated_node_is_zero():
    x = Tensor(np.arange(6.0).reshape(1, 3, 2))
    adj = np.array([[[0, 1, 1], [1, 0, 0], [0, 0, 0]]], dtype=float)
    out = ad.mean_neighbors(x, adj).data[0]
    np.testing.assert_allclose(out[0], [3.0, 4.0])
    np.testing.assert_allclose(out[2], [0.0, 0.0])


def test_shared_leaf_accumulates(rng):
    a = leaf(rng, 3)
    out = ad.tsum(ad.add(ad.mul(a, a), a))
    ad.backward(out)
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


def test_no_grad_builds_no_graph(rng):
    a = leaf(rng, 3)
    with ad.no_grad():
        out = ad.mul(a, a)
    assert out._parents == () and not out.requires_grad


def test_backward_needs_scalar(rng):
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(leaf(rng, 3), 2.0))


def test_shape_mismatch_raises(rng):
    with pytest.raises(ShapeError):
        ad.matmul(leaf(rng, 2, 3), leaf(rng, 4, 2))
    with pytest.raises(ShapeError):
        ad.affine(leaf(rng, 2, 3), leaf(rng, 3, 4), leaf(rng, 5))


def test_nonfinite_forward_is_reported():
    x = Tensor(np.array([[1e308, -1e308]]))
    with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
        ad.affine(x, Tensor(np.full((2, 1), 10.0)), Tensor(np.zeros(1)))


def test_optimizer_bias_corrected_first_step():
    st = ParamStore()
    p = st.add("w", np.array([1.0, -2.0]))
    p.grad[...] = [0.1, -0.3]
    norm = ad.optimizer_step(st, lr=0.01, clip=None)
    # after one step with bias correction the update is lr * sign(g) (up to eps)
    np.testing.assert_allclose(p.data, [0.99, -1.99], atol=1e-6)
    assert norm == pytest.approx(np.sqrt(0.1))


def test_optimizer_clips_global_norm():
    st = ParamStore()
    p = st.add("w", np.zeros(2))
    p.grad[...] = [3.0, 4.0]
    assert ad.optimizer_step(st, lr=0.1, clip=0.5) == pytest.approx(5.0)
    assert st.m["w"] == pytest.approx(0.1 * np.array([0.3, 0.4]))


def test_checkpoint_roundtrip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 2)), "b/c": np.arange(4.0)}
    path = tmp_path / "m.ckpt"
    ad.save_checkpoint(path, arrays, {"note": "x"})
    back, meta = ad.load_checkpoint(path)
    assert meta["note"] == "x"
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    raw = path.read_bytes()
    assert raw[:8] == b"JSLCKPT1"
    ad.save_checkpoint(tmp_path / "m2.ckpt", arrays, {"note": "x"})
    assert (tmp_path / "m2.ckpt").read_bytes() == raw


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        ad.load_checkpoint(p)
