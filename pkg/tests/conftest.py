import numpy as np
import pytest

from clbf.certificate import ClbfParams, FilteredCertificate
from clbf.envs import make_env
from clbf.nets import init_mlp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pendulum():
    return make_env("pendulum")


@pytest.fixture(scope="session")
def docking():
    return make_env("docking2d")


def small_cert(env, seed=0, dims=(16, 8)):
    rng = np.random.default_rng(seed)
    net = init_mlp([env.state_dim, *dims, 1], rng)
    return FilteredCertificate(net, ClbfParams(), env)


def small_policy(env, seed=1, dims=(8, 8)):
    rng = np.random.default_rng(seed)
    return init_mlp([env.state_dim, *dims, env.control_dim], rng)


def fd_param_grads(f, params, h=1e-5):
    """Central finite differences of scalar f() over arrays mutated in place."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            fp = f()
            p[idx] = orig - h
            fm = f()
            p[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def fd_input_grads(f, X, h=1e-5):
    """Central finite differences of scalar f(X) w.r.t. every state entry."""
    g = np.zeros_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = X[idx]
        X[idx] = orig + h
        fp = f(X)
        X[idx] = orig - h
        fm = f(X)
        X[idx] = orig
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    """Block-wise relative error between gradient sets."""
    num = np.sqrt(sum(float(np.sum((x - y) ** 2)) for x, y in zip(a, b)))
    den = max(np.sqrt(sum(float(np.sum(y**2)) for y in b)), 1e-10)
    return num / den
