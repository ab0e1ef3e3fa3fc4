import numpy as np
import pytest

from lanetopo import tensor as T
from lanetopo.errors import NumericalError, ShapeError
from lanetopo.params import ParameterSet
from lanetopo.tensor import Tensor, backward, bilinear_sample, primitive_forward


def grads_of(f, arrays):
    ps = ParameterSet()
    ts = [ps.add(f"p{i}", a) for i, a in enumerate(arrays)]
    return backward(f(*ts), ps), ps


def test_construction_rejects_non_finite():
    with pytest.raises(NumericalError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericalError):
        Tensor([np.inf])


def test_softmax_symmetry_and_rows():
    out = T.softmax_lastdim(Tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.detach(), [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(scale=5, size=(4, 7))
        rows = T.softmax_lastdim(Tensor(x)).detach()
        np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(rows > 0) and np.all(rows < 1)


def test_matmul_identity():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 3))
    out = T.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_array_equal(out.detach(), a)


def test_sigmoid_zero():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5


def test_primitive_forward_dispatch_and_errors():
    out = primitive_forward("add", [Tensor([1.0]), Tensor([2.0])], {})
    assert out.item() == 3.0
    with pytest.raises(ShapeError):
        primitive_forward("does_not_exist", [Tensor([1.0])], {})
    with pytest.raises(ShapeError):
        primitive_forward("matmul", [Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3)))], {})
    bad = Tensor([1.0])
    bad.data[0] = np.nan  # bypass the constructor check
    with pytest.raises(NumericalError):
        primitive_forward("relu", [bad], {})


def test_primitive_forward_covers_spec_ops():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(2, 3)))
    cases = {
        "matmul": ([x, Tensor(rng.normal(size=(3, 2)))], {}),
        "add": ([x, x], {}),
        "mul": ([x, x], {}),
        "concat": ([x, x], {"axis": 0}),
        "slice": ([x], {"key": (slice(0, 1),)}),
        "reshape": ([x], {"shape": (3, 2)}),
        "transpose": ([x], {"axes": (1, 0)}),
        "softmax_lastdim": ([x], {}),
        "relu": ([x], {}),
        "sigmoid": ([x], {}),
        "layer_norm": ([x], {}),
        "exp": ([x], {}),
        "log": ([Tensor(np.abs(rng.normal(size=(2, 3))) + 1)], {}),
        "sqrt": ([Tensor(np.abs(rng.normal(size=(2, 3))) + 1)], {}),
        "sum": ([x], {"axis": 0}),
        "mean": ([x], {}),
        "broadcast": ([Tensor(rng.normal(size=(1, 3)))], {"shape": (4, 3)}),
    }
    for name, (inputs, attrs) in cases.items():
        out = primitive_forward(name, inputs, attrs)
        assert np.all(np.isfinite(out.detach())), name


def test_backward_sum_gives_ones():
    grads, _ = grads_of(lambda p: p.sum(), [np.ones((2, 2))])
    np.testing.assert_array_equal(grads["p0"], np.ones((2, 2)))


def test_backward_elementwise_square():
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    grads, _ = grads_of(lambda t: (t * t).sum(), [p])
    np.testing.assert_allclose(grads["p0"], 2 * p, atol=1e-12)


def test_backward_requires_scalar_and_tape():
    ps = ParameterSet()
    p = ps.add("p", np.ones(3))
    with pytest.raises(ShapeError):
        backward(p + p, ps)
    with pytest.raises(NumericalError):
        backward(Tensor(1.0), ps)


def test_backward_unreachable_params_get_zeros():
    ps = ParameterSet()
    a = ps.add("a", np.ones(2))
    ps.add("b", np.ones(3))
    grads = backward(a.sum(), ps)
    np.testing.assert_array_equal(grads["b"], np.zeros(3))


def test_tape_linearity():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 3))

    def run(f):
        ps = ParameterSet()
        p = ps.add("p", x)
        return backward(f(p), ps)["p"]

    g_sum = run(lambda p: (p * p).sum() + T.exp(p).mean())
    g_a = run(lambda p: (p * p).sum())
    g_b = run(lambda p: T.exp(p).mean())
    np.testing.assert_allclose(g_sum, g_a + g_b, rtol=1e-12)


def test_mlp_matches_finite_differences():
    rng = np.random.default_rng(4)
    shapes = [(5, 8), (8, 8), (8, 1), (1, 5)]
    arrays = [rng.normal(size=s) for s in shapes]

    def f(w1, w2, w3, x):
        h = T.relu(T.matmul(x, w1))
        h = T.relu(T.matmul(h, w2))
        return T.matmul(h, w3).sum()

    grads, ps = grads_of(f, arrays)
    for name, arr in zip(["p0", "p1", "p2", "p3"], arrays):
        p = ps[name]
        for ci in range(0, p.size, max(1, p.size // 6)):
            orig = p.data.reshape(-1)[ci]
            p.data.reshape(-1)[ci] = orig + 1e-5
            up = f(*[ps[n] for n in ps.names()]).item()
            p.data.reshape(-1)[ci] = orig - 1e-5
            down = f(*[ps[n] for n in ps.names()]).item()
            p.data.reshape(-1)[ci] = orig
            num = (up - down) / 2e-5
            ana = grads[name].reshape(-1)[ci]
            assert abs(ana - num) / max(1, abs(ana), abs(num)) < 1e-4


# ----------------------------------------------------------------------
# bilinear sampling
# ----------------------------------------------------------------------


def test_bilinear_integer_coordinates_exact():
    rng = np.random.default_rng(5)
    grid = rng.normal(size=(4, 5, 3))
    coords = np.array([[2.0, 3.0], [0.0, 0.0], [3.0, 4.0]])
    out = bilinear_sample(Tensor(grid), Tensor(coords)).detach()
    np.testing.assert_array_equal(out[0], grid[2, 3])
    np.testing.assert_array_equal(out[1], grid[0, 0])
    np.testing.assert_array_equal(out[2], grid[3, 4])


def test_bilinear_center_average():
    grid = np.array([[[1.0], [2.0]], [[3.0], [4.0]]])
    out = bilinear_sample(Tensor(grid), Tensor([[0.5, 0.5]])).detach()
    np.testing.assert_allclose(out, [[2.5]], atol=1e-15)


def test_bilinear_outside_is_zero():
    rng = np.random.default_rng(6)
    grid = rng.normal(size=(3, 3, 2))
    out = bilinear_sample(Tensor(grid), Tensor([[-5.0, -5.0], [10.0, 1.0]])).detach()
    np.testing.assert_array_equal(out, np.zeros((2, 2)))


def test_bilinear_rejects_non_finite_coords():
    grid = Tensor(np.zeros((3, 3, 1)))
    coords = Tensor([[0.0, 0.0]])
    coords.data[0, 0] = np.nan
    with pytest.raises(NumericalError):
        bilinear_sample(grid, coords)


def test_bilinear_continuity():
    # perturbing coords by delta moves the output by at most L * delta
    rng = np.random.default_rng(7)
    for _ in range(10):
        grid = rng.normal(size=(5, 6, 2))
        adjacent = max(
            np.abs(np.diff(grid, axis=0)).max(),
            np.abs(np.diff(grid, axis=1)).max(),
            np.abs(grid).max(),  # border cells fade to zero
        )
        lipschitz = 2 * adjacent  # row and column movement combine
        c0 = np.stack([rng.uniform(-1, 5, 8), rng.uniform(-1, 6, 8)], axis=1)
        delta = rng.uniform(-0.01, 0.01, size=c0.shape)
        v0 = bilinear_sample(Tensor(grid), Tensor(c0)).detach()
        v1 = bilinear_sample(Tensor(grid), Tensor(c0 + delta)).detach()
        step = np.abs(delta).sum(axis=1, keepdims=True)
        assert np.all(np.abs(v1 - v0) <= lipschitz * step + 1e-12)


def test_debug_mode_catches_overflow():
    with T.debug_checks():
        with pytest.raises(NumericalError):
            T.exp(Tensor([1000.0]))
