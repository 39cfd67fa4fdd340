import numpy as np
import pytest

from clbf.nets import (
    Adam,
    Mlp,
    backward,
    forward,
    forward_batch,
    forward_tape,
    ibp_bounds,
    init_mlp,
    lipschitz_upper_bound_l2,
    spectral_norm,
    spectral_norm_vectors,
)

from conftest import fd_param_grads, rel_err


def naive_forward(net, x):
    """Independent scalar-loop re-implementation of the forward pass."""
    a = [float(v) for v in x]
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        out = []
        for i in range(W.shape[0]):
            s = float(b[i])
            for j in range(W.shape[1]):
                s += float(W[i, j]) * a[j]
            out.append(max(s, 0.0) if k < last else s)
        a = out
    return np.array(a)


def test_forward_identity_layer():
    net = Mlp([np.eye(2)], [np.zeros(2)])
    assert np.allclose(forward(net, np.array([0.3, -0.5])), [0.3, -0.5])


def test_forward_hand_evaluation():
    net = Mlp(
        [np.array([[1.0, -1.0]]), np.array([[2.0]])],
        [np.zeros(1), np.zeros(1)],
    )
    assert forward(net, np.array([1.0, 0.0]))[0] == pytest.approx(2.0)


def test_forward_matches_naive_oracle(rng):
    net = init_mlp([4, 16, 8, 3], rng)
    for _ in range(5):
        x = rng.uniform(-1, 1, 4)
        assert np.allclose(forward(net, x), naive_forward(net, x), atol=1e-12)


def test_forward_dimension_mismatch():
    net = Mlp([np.eye(2)], [np.zeros(2)])
    with pytest.raises(ValueError):
        forward(net, np.array([1.0, 2.0, 3.0]))


def test_backward_affine_cases():
    net = Mlp([np.array([[3.0]])], [np.zeros(1)])
    tape = forward_tape(net, np.array([[1.0]]))
    _, gx = backward(net, tape, np.ones((1, 1)))
    assert gx[0, 0] == pytest.approx(3.0)

    net = Mlp([np.array([[0.0, 0.0]])], [np.zeros(1)])
    tape = forward_tape(net, np.array([[1.0, 2.0]]))
    grads, _ = backward(net, tape, np.ones((1, 1)))
    assert np.allclose(grads[0], [[1.0, 2.0]])


def test_backward_matches_finite_differences(rng):
    net = init_mlp([3, 64, 32, 16, 1], rng)
    X = rng.uniform(-1, 1, (4, 3))

    def f():
        return float(forward_batch(net, X).sum())

    tape = forward_tape(net, X)
    grads, gX = backward(net, tape, np.ones((4, 1)))
    fd = fd_param_grads(f, net.params())
    assert rel_err(grads, fd) < 1e-4

    gX_fd = np.zeros_like(X)
    h = 1e-5
    for idx in np.ndindex(*X.shape):
        orig = X[idx]
        X[idx] = orig + h
        fp = f()
        X[idx] = orig - h
        fm = f()
        X[idx] = orig
        gX_fd[idx] = (fp - fm) / (2 * h)
    assert rel_err([gX], [gX_fd]) < 1e-4


def test_backward_requires_tape():
    net = Mlp([np.eye(2)], [np.zeros(2)])
    with pytest.raises(ValueError):
        backward(net, None, np.ones((1, 2)))


def test_piecewise_affine_within_activation_pattern(rng):
    net = init_mlp([2, 16, 8, 1], rng)
    x = rng.uniform(-1, 1, 2)
    y = x + rng.uniform(-1e-4, 1e-4, 2)  # nearby points share the pattern

    def pattern(z):
        pats = []
        a = z[None, :]
        tape = forward_tape(net, a)
        return [p > 0 for p in tape.preacts[:-1]]

    if all(np.array_equal(p, q) for p, q in zip(pattern(x), pattern(y))):
        lam = 0.37
        mid = lam * x + (1 - lam) * y
        f = lambda z: forward(net, z)[0]
        assert f(mid) == pytest.approx(lam * f(x) + (1 - lam) * f(y), abs=1e-10)


def test_spectral_norm_basics():
    assert spectral_norm(np.eye(3)) == pytest.approx(1.0)
    assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        spectral_norm(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        spectral_norm(np.eye(2), iters=0)


def test_spectral_norm_matches_eigendecomposition(rng):
    # convergence rate depends on the top singular-value gap, so give the
    # random (possibly near-degenerate) cases plenty of iterations
    for _ in range(5):
        W = rng.normal(size=(20, 20))
        sigma_true = float(np.sqrt(np.linalg.eigvalsh(W.T @ W).max()))
        assert spectral_norm(W, iters=5000) == pytest.approx(sigma_true, abs=1e-5)


def test_spectral_norm_well_separated_converges_fast():
    rng = np.random.default_rng(3)
    U, _ = np.linalg.qr(rng.normal(size=(10, 10)))
    V, _ = np.linalg.qr(rng.normal(size=(10, 10)))
    W = U @ np.diag([5.0, 2.0, 1.0, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.01]) @ V.T
    assert spectral_norm(W, iters=50) == pytest.approx(5.0, abs=1e-6)


def test_spectral_norm_monotone_and_bounded(rng):
    W = rng.normal(size=(12, 9))
    sigma_true = float(np.linalg.svd(W, compute_uv=False)[0])
    prev = 0.0
    for iters in (1, 2, 5, 10, 30, 60):
        s = spectral_norm(W, iters=iters)
        assert s >= prev - 1e-12
        assert s <= sigma_true + 1e-12
        prev = s


def test_spectral_norm_scaling(rng):
    W = rng.normal(size=(7, 5))
    s = spectral_norm(W, iters=60)
    assert spectral_norm(-2.5 * W, iters=60) == pytest.approx(2.5 * s, abs=1e-8)


def test_spectral_norm_gradient_direction(rng):
    W = rng.normal(size=(6, 4))
    sigma, u, v = spectral_norm_vectors(W, iters=100)
    h = 1e-6
    G = np.outer(u, v)
    W2 = W + h * G
    assert spectral_norm(W2, iters=100) - sigma == pytest.approx(h, rel=1e-3)


def test_lipschitz_upper_bound_product():
    net = Mlp([2 * np.eye(2), 3 * np.eye(2)], [np.zeros(2), np.zeros(2)])
    assert lipschitz_upper_bound_l2(net) == pytest.approx(6.0)
    net = Mlp([np.diag([3.0, 1.0])], [np.zeros(2)])
    assert lipschitz_upper_bound_l2(net) == pytest.approx(3.0)


def test_lipschitz_bound_dominates_sampled_quotients(rng):
    net = init_mlp([3, 24, 12, 2], rng)
    bound = lipschitz_upper_bound_l2(net)
    X = rng.uniform(-2, 2, (100_000, 3))
    Y = rng.uniform(-2, 2, (100_000, 3))
    num = np.linalg.norm(forward_batch(net, X) - forward_batch(net, Y), axis=1)
    den = np.linalg.norm(X - Y, axis=1)
    keep = den > 1e-12
    assert np.all(num[keep] <= bound * den[keep] + 1e-12)


def test_ibp_bounds_sound_by_sampling(rng):
    net = init_mlp([3, 16, 8, 2], rng)
    for _ in range(20):
        center = rng.uniform(-1, 1, 3)
        rad = rng.uniform(0.01, 0.5, 3)
        lo, hi = center - rad, center + rad
        out_lo, out_hi = ibp_bounds(net, lo, hi)
        pts = rng.uniform(lo, hi, (2000, 3))
        Y = forward_batch(net, pts)
        assert np.all(Y >= out_lo - 1e-12) and np.all(Y <= out_hi + 1e-12)


def test_ibp_degenerate_box_is_point_evaluation(rng):
    net = init_mlp([2, 8, 1], rng)
    x = rng.uniform(-1, 1, 2)
    lo, hi = ibp_bounds(net, x, x)
    y = forward(net, x)
    assert np.allclose(lo, y) and np.allclose(hi, y)


def test_adam_reduces_simple_quadratic():
    p = [np.array([5.0])]
    opt = Adam(lr=0.1)
    for _ in range(200):
        opt.step(p, [2.0 * p[0]])
    assert abs(p[0][0]) < 1e-2


def test_init_mlp_deterministic_and_finite():
    a = init_mlp([2, 8, 1], np.random.default_rng(7))
    b = init_mlp([2, 8, 1], np.random.default_rng(7))
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert a.all_finite()
