import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ncr import autodiff as ad

from conftest import central_diff


def test_record_add():
    tape = ad.Tape()
    x, y = tape.variable(2.0), tape.variable(3.0)
    node = ad.record("add", [x, y], x.value + y.value)
    assert node.value[0, 0] == 5.0
    assert all(p.id < node.id for p, _ in node.parents)


def test_record_rejects_foreign_nodes():
    a, b = ad.Tape().variable(1.0), ad.Tape().variable(2.0)
    with pytest.raises(ad.ContractError):
        ad.record("add", [a, b], 3.0)


def test_matmul_identity(rng):
    tape = ad.Tape()
    B = rng.normal(size=(3, 4))
    out = tape.variable(np.eye(3)) @ tape.variable(B)
    np.testing.assert_array_equal(out.value, B)


def test_tanh_zero():
    tape = ad.Tape()
    x = tape.variable(0.0)
    y = ad.tanh(x)
    assert y.value[0, 0] == 0.0
    assert ad.backward(y).wrt(x)[0, 0] == 1.0


def test_square_gradient():
    tape = ad.Tape()
    x = tape.variable(3.0)
    assert ad.backward(x * x).wrt(x)[0, 0] == 6.0


def test_shape_error_names_both_shapes():
    tape = ad.Tape()
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        tape.variable(np.ones((2, 3))) + tape.variable(np.ones((3, 2)))
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tape.variable(np.ones((2, 3))) @ tape.variable(np.ones((2, 3)))


def test_backward_requires_scalar_root():
    tape = ad.Tape()
    with pytest.raises(ad.ContractError):
        ad.backward(tape.variable(np.ones((2, 2))))


def test_unreachable_nodes_absent():
    tape = ad.Tape()
    x, y = tape.variable(1.0), tape.variable(2.0)
    root = x * 2.0
    grads = ad.backward(root)
    assert y.id not in grads
    assert grads.wrt(y)[0, 0] == 0.0


def test_sum_of_product_matches_fd(rng):
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    tape = ad.Tape()
    a = tape.variable(A)
    g = ad.backward(ad.total(a * B)).wrt(a)
    fd = central_diff(lambda X: np.sum(X * B), A)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)


def test_numpy_fallthrough():
    x = np.array([[0.3, -1.2]])
    np.testing.assert_array_equal(ad.cos(x), np.cos(x))
    np.testing.assert_array_equal(ad.absolute(x), np.abs(x))
    np.testing.assert_array_equal(ad.total(x), [[x.sum()]])


def test_abs_subgradient_at_zero():
    tape = ad.Tape()
    x = tape.variable([[0.0, 2.0, -1.0]])
    g = ad.backward(ad.total(ad.absolute(x))).wrt(x)
    np.testing.assert_array_equal(g, [[0.0, 1.0, -1.0]])


def test_grad_check_norm_squared():
    report = ad.grad_check(lambda x: ad.total(x * x), [1.0, 2.0, 3.0], step=1e-6, tol=1e-6)
    assert report.passed, report
    assert report.max_rel_error <= 1e-6
    np.testing.assert_allclose(report.analytic, [[2.0, 4.0, 6.0]])


def test_grad_check_flags_abs_kink():
    report = ad.grad_check(lambda x: ad.total(ad.absolute(x)), [0.0], tol=1e-4)
    assert report.nondifferentiable
    assert not report.passed


def test_row_broadcast_add_reduces_gradient(rng):
    tape = ad.Tape()
    X = tape.variable(rng.normal(size=(4, 3)))
    b = tape.variable(rng.normal(size=(1, 3)))
    g = ad.backward(ad.total((X + b) * (X + b))).wrt(b)
    np.testing.assert_allclose(g, 2 * (X.value + b.value).sum(axis=0, keepdims=True))


def test_ndarray_on_left_defers_to_node():
    tape = ad.Tape()
    x = tape.variable([[1.0, 2.0]])
    y = np.array([[3.0, 4.0]]) * x
    assert isinstance(y, ad.Node)
    z = np.float64(2.0) + x
    assert isinstance(z, ad.Node)


# --- every supported op against central differences ----------------------

def _unary_cases():
    return {
        "tanh": ad.tanh,
        "cos": ad.cos,
        "sin": ad.sin,
        "square": ad.square,
        "abs": ad.absolute,
        "neg": lambda x: -x,
        "scale": lambda x: 2.5 * x,
        "slice": lambda x: x[:, : max(1, x.shape[1] // 2)],
        "row": lambda x: x[0:1, :],
        "transpose": lambda x: x.T,
        "concat": lambda x: ad.concat([x, ad.sin(x)]),
        "concat_rows": lambda x: ad.concat([x, x * x], axis=0),
    }


@pytest.mark.parametrize("name", list(_unary_cases()))
def test_unary_ops_match_fd(name):
    op = _unary_cases()[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    worst = 0.0
    for _ in range(100):
        r, c = rng.integers(1, 9, size=2)
        X = rng.normal(size=(r, c))
        if name == "abs":
            X[np.abs(X) < 1e-3] = 0.5  # stay away from the kink
        W = rng.normal(size=np.shape(op(X)))

        def f_tape(x):
            return ad.total(op(x) * W)

        tape = ad.Tape()
        x = tape.variable(X)
        g = ad.backward(f_tape(x)).wrt(x)
        fd = central_diff(lambda Y: float(np.sum(op(Y) * W)), X)
        err = np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6))
        worst = max(worst, err)
    assert worst <= 1e-4, worst


@pytest.mark.parametrize("name", ["add", "sub", "mul", "matmul"])
def test_binary_ops_match_fd(name):
    rng = np.random.default_rng(len(name))
    worst = 0.0
    for _ in range(100):
        r, k, c = rng.integers(1, 9, size=3)
        if name == "matmul":
            A, B = rng.normal(size=(r, k)), rng.normal(size=(k, c))
            fn = lambda a, b: a @ b  # noqa: E731
        else:
            A, B = rng.normal(size=(r, c)), rng.normal(size=(r, c))
            fn = {"add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b}[name]
        W = rng.normal(size=np.shape(fn(A, B)))
        tape = ad.Tape()
        a, b = tape.variable(A), tape.variable(B)
        grads = ad.backward(ad.total(fn(a, b) * W))
        fa = central_diff(lambda X: float(np.sum(fn(X, B) * W)), A)
        fb = central_diff(lambda X: float(np.sum(fn(A, X) * W)), B)
        for g, fd in ((grads.wrt(a), fa), (grads.wrt(b), fb)):
            err = np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6))
            worst = max(worst, err)
    assert worst <= 1e-4, worst


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-3, 3, allow_nan=False)))
def test_backward_is_linear_in_summands(X):
    tape = ad.Tape()
    x = tape.variable(X)
    f1 = ad.total(ad.sin(x) * x)
    f2 = ad.total(ad.tanh(x))
    g_sum = ad.backward(f1 + f2).wrt(x)
    g_parts = ad.backward(f1).wrt(x) + ad.backward(f2).wrt(x)
    np.testing.assert_allclose(g_sum, g_parts, rtol=1e-12, atol=1e-12)


def test_forward_backward_bit_identical(rng):
    X = rng.normal(size=(5, 4))
    W = rng.normal(size=(4, 3))

    def run():
        tape = ad.Tape()
        x = tape.variable(X)
        y = ad.total(ad.tanh(x @ W) * ad.cos(x[:, :3]))
        return y.value.copy(), ad.backward(y).wrt(x)

    (v1, g1), (v2, g2) = run(), run()
    assert v1.tobytes() == v2.tobytes()
    assert g1.tobytes() == g2.tobytes()
