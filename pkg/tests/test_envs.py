import numpy as np
import pytest

from clbf.boxes import Box
from clbf.envs import cos_range, docking_matrices, make_env, sin_range, trig_interval


# ---------------------------------------------------------------------------
# trig ranges


def test_trig_interval_quarter_period():
    (s_lo, s_hi), _ = trig_interval(0.0, np.pi / 2)
    assert s_lo == pytest.approx(0.0) and s_hi == pytest.approx(1.0)


def test_trig_interval_monotone_segment():
    (s_lo, s_hi), _ = trig_interval(-0.1, 0.1)
    assert s_lo == pytest.approx(-0.0998334, abs=1e-7)
    assert s_hi == pytest.approx(0.0998334, abs=1e-7)


def test_trig_interval_full_cos_swing():
    _, (c_lo, c_hi) = trig_interval(-np.pi, np.pi)
    assert c_lo == pytest.approx(-1.0) and c_hi == pytest.approx(1.0)


def test_trig_interval_rejects_reversed():
    with pytest.raises(ValueError):
        trig_interval(1.0, 0.0)


def test_trig_ranges_sound_by_sampling(rng):
    los = rng.uniform(-10, 10, 200)
    his = los + rng.uniform(0, 8, 200)
    s_lo, s_hi = sin_range(los, his)
    c_lo, c_hi = cos_range(los, his)
    for i in range(200):
        ts = np.linspace(los[i], his[i], 500)
        assert np.sin(ts).min() >= s_lo[i] - 1e-12
        assert np.sin(ts).max() <= s_hi[i] + 1e-12
        assert np.cos(ts).min() >= c_lo[i] - 1e-12
        assert np.cos(ts).max() <= c_hi[i] + 1e-12


# ---------------------------------------------------------------------------
# pendulum


def test_pendulum_equilibrium(pendulum):
    nxt = pendulum.step(np.zeros((1, 2)), np.zeros((1, 1)))
    assert np.array_equal(nxt, np.zeros((1, 2)))


def test_pendulum_reference_point(pendulum):
    nxt = pendulum.step(np.array([[0.1, 0.0]]), np.array([[0.0]]))
    # hand evaluation: thd' = 15*sin(0.1)*0.05, th' = 0.1 + thd'*0.05
    assert nxt[0, 1] == pytest.approx(0.0748751, abs=1e-7)
    assert nxt[0, 0] == pytest.approx(0.1037438, abs=1e-7)


def test_pendulum_odd_symmetry(pendulum, rng):
    X = rng.uniform(-0.7, 0.7, (50, 2))
    U = np.zeros((50, 1))
    plus = pendulum.step(X, U)
    minus = pendulum.step(-X, U)
    assert np.allclose(plus, -minus, atol=1e-14)


def test_pendulum_clamps_torque(pendulum):
    x = np.array([[0.1, 0.1]])
    big = pendulum.step(x, np.array([[10.0]]))
    one = pendulum.step(x, np.array([[1.0]]))
    assert np.allclose(big, one)


def test_pendulum_step_interval_reference(pendulum):
    B = Box(np.array([-0.1, 0.0]), np.array([0.1, 0.0]))
    U = Box(np.array([0.0]), np.array([0.0]))
    img = pendulum.step_interval(B, U)
    assert img.lo[1] == pytest.approx(-0.0748751, abs=1e-7)
    assert img.hi[1] == pytest.approx(0.0748751, abs=1e-7)


def test_pendulum_jacobian_matches_fd(pendulum, rng):
    X = rng.uniform(-0.6, 0.6, (10, 2))
    U = rng.uniform(-0.9, 0.9, (10, 1))
    A, B = pendulum.step_jac(X, U)
    h = 1e-6
    for d in range(2):
        dX = np.zeros_like(X)
        dX[:, d] = h
        fd = (pendulum.step(X + dX, U) - pendulum.step(X - dX, U)) / (2 * h)
        assert np.allclose(A[:, :, d], fd, atol=1e-6)
    dU = np.full_like(U, h)
    fd = (pendulum.step(X, U + dU) - pendulum.step(X, U - dU)) / (2 * h)
    assert np.allclose(B[:, :, 0], fd, atol=1e-6)


def test_pendulum_set_geometry(pendulum):
    env = pendulum
    # boundary points per the task definition
    assert env.in_goal(np.array([[0.2, 0.2]]))[0]
    assert not env.in_goal(np.array([[0.21, 0.0]]))[0]
    assert env.in_unsafe(np.array([[-0.65, -0.3]]))[0]
    assert env.in_unsafe(np.array([[0.65, 0.3]]))[0]
    assert not env.in_unsafe(np.array([[-0.65, 0.1]]))[0]  # wrong velocity sign
    assert not env.in_unsafe(np.array([[0.5, 0.5]]))[0]
    assert env.in_init(np.array([[0.3, -0.3]]))[0]
    assert not env.in_init(np.array([[0.31, 0.0]]))[0]


def test_goal_and_init_disjoint_from_unsafe(pendulum, docking, rng):
    for env in (pendulum, docking):
        init_pts = env.sample_init(rng, 2000)
        assert not np.any(env.in_unsafe(init_pts))
    # pendulum goal is disjoint from unsafe as well
    g = pendulum.goal_boxes[0].sample(rng, 2000)
    assert not np.any(pendulum.in_unsafe(g))


# ---------------------------------------------------------------------------
# docking


def docking_printed_equations(x, u, m=12.0, n=0.001027, T=1.0):
    """Term-by-term transcription of the closed-form update equations.

    The vx' line corrects the two corrupted factors in the extracted source
    (thrust constant pairs with Fy, and the cos term carries vx): without
    them the formula is not the flow of any Clohessy-Wiltshire system.
    """
    px, py, vx, vy = x
    Fx, Fy = u
    s, c = np.sin(n * T), np.cos(n * T)
    x_new = (
        (2 * vy / n + 4 * px + Fx / (m * n**2))
        + (2 * Fy / (m * n)) * T
        + (-Fx / (m * n**2) - 2 * vy / n - 3 * px) * c
        + (-2 * Fy / (m * n**2) + vx / n) * s
    )
    y_new = (
        (-2 * vx / n + py + 4 * Fy / (m * n**2))
        + (-2 * Fx / (m * n) - 3 * vy - 6 * n * px) * T
        - (3 * Fy / (2 * m)) * T**2
        + (-4 * Fy / (m * n**2) + 2 * vx / n) * c
        + (2 * Fx / (m * n**2) + 4 * vy / n + 6 * px) * s
    )
    vx_new = (
        (2 * Fy / (m * n))
        + (-2 * Fy / (m * n) + vx) * c
        + (Fx / (m * n) + 2 * vy + 3 * n * px) * s
    )
    vy_new = (
        (-2 * Fx / (m * n) - 3 * vy - 6 * n * px)
        + (-3 * Fy / m) * T
        + (2 * Fx / (m * n) + 4 * vy + 6 * n * px) * c
        + (4 * Fy / (m * n) - 2 * vx) * s
    )
    return np.array([x_new, y_new, vx_new, vy_new])


def test_docking_zero_fixed_point(docking):
    nxt = docking.step(np.zeros((1, 4)), np.zeros((1, 2)))
    assert np.allclose(nxt, 0.0, atol=1e-12)


def test_docking_matches_transcribed_equations(docking, rng):
    X = rng.uniform(-2, 2, (50, 4))
    U = rng.uniform(-1, 1, (50, 2))
    got = docking.step(X, U)
    want = np.stack([docking_printed_equations(x, u) for x, u in zip(X, U)])
    assert np.allclose(got, want, atol=1e-9)


def test_docking_matches_expm_oracle():
    from scipy.linalg import expm

    m, n, T = 12.0, 0.001027, 1.0
    A_c = np.array(
        [[0, 0, 1, 0], [0, 0, 0, 1], [3 * n * n, 0, 0, 2 * n], [0, 0, -2 * n, 0]],
        dtype=float,
    )
    B_c = np.array([[0, 0], [0, 0], [1 / m, 0], [0, 1 / m]])
    M = np.zeros((6, 6))
    M[:4, :4] = A_c
    M[:4, 4:] = B_c
    E = expm(M * T)
    A_d, B_d = docking_matrices(m, n, T)
    assert np.allclose(A_d, E[:4, :4], atol=1e-12)
    assert np.allclose(B_d, E[:4, 4:], atol=1e-12)


def test_docking_affinity(docking, rng):
    lam = 0.3
    Z1 = rng.uniform(-1, 1, (100, 6))
    Z2 = rng.uniform(-1, 1, (100, 6))
    Zm = lam * Z1 + (1 - lam) * Z2
    f = lambda Z: docking.step(Z[:, :4], Z[:, 4:])
    resid = f(Zm) - (lam * f(Z1) + (1 - lam) * f(Z2))
    assert np.abs(resid).max() < 1e-10


def test_docking_set_geometry(docking):
    env = docking
    assert env.in_goal(np.array([[0.35, -0.35, 0.7, -0.7]]))[0]  # any velocity
    assert not env.in_goal(np.array([[0.36, 0.0, 0.0, 0.0]]))[0]
    assert env.in_unsafe(np.array([[2.01, 0.0, 0.0, 0.0]]))[0]
    assert env.in_unsafe(np.array([[0.0, 0.0, 0.51, 0.0]]))[0]
    assert not env.in_unsafe(np.array([[2.0, 2.0, 0.5, 0.5]]))[0]  # safe boundary
    assert env.in_init(np.array([[1.0, -1.0, 0.0, 0.0]]))[0]
    assert not env.in_init(np.array([[0.5, 0.0, 0.1, 0.0]]))[0]


def test_docking_interval_is_exact_affine_image(docking, rng):
    A, Bu = docking_matrices(12.0, 0.001027, 1.0)
    for _ in range(20):
        c_x = rng.uniform(-1, 1, 4)
        r_x = rng.uniform(0, 0.3, 4)
        c_u = rng.uniform(-0.5, 0.5, 2)
        r_u = rng.uniform(0, 0.3, 2)
        B = Box(c_x - r_x, c_x + r_x)
        U = Box(c_u - r_u, c_u + r_u)
        img = docking.step_interval(B, U)
        want_width = np.abs(A) @ B.width + np.abs(Bu) @ U.width
        assert np.allclose(img.width, want_width, atol=1e-10)


def test_step_interval_soundness_dense_sampling(pendulum, docking, rng):
    for env in (pendulum, docking):
        for _ in range(100):
            c = rng.uniform(env.domain.lo, env.domain.hi)
            r = rng.uniform(0, 0.2, env.state_dim)
            B = Box(
                np.maximum(c - r, env.domain.lo), np.minimum(c + r, env.domain.hi)
            )
            cu = rng.uniform(-1, 1, env.control_dim)
            ru = rng.uniform(0, 0.5, env.control_dim)
            U = Box(np.clip(cu - ru, -1, 1), np.clip(cu + ru, -1, 1))
            img = env.step_interval(B, U)
            X = B.sample(rng, 100)
            Uc = U.sample(rng, 100)
            nxt = env.step(X, Uc)
            assert np.all(nxt >= img.lo - 1e-10) and np.all(nxt <= img.hi + 1e-10)


def test_degenerate_boxes_give_point_image(docking, rng):
    x = rng.uniform(-1, 1, 4)
    u = rng.uniform(-1, 1, 2)
    img = docking.step_interval(Box(x, x), Box(u, u))
    nxt = docking.step(x[None], u[None])[0]
    assert np.allclose(img.lo, nxt) and np.allclose(img.hi, nxt)


def test_make_env_rejects_unknown():
    with pytest.raises(ValueError):
        make_env("cartpole")


def test_constant_overrides():
    env = make_env("pendulum", {"b": 0.5})
    assert env.constants["b"] == 0.5
    nxt = env.step(np.array([[0.0, 1.0]]), np.zeros((1, 1)))
    assert nxt[0, 1] == pytest.approx(0.5)
