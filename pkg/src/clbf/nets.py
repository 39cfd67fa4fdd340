"""Minimal dense ReLU network engine.

Forward evaluation, exact reverse-mode gradients (parameters and inputs),
interval bound propagation, spectral-norm power iteration, and a first-order
adaptive-moment optimizer. Everything is float64 numpy; batches are (k, n)
arrays. No general computation graphs: the architecture is a fixed
affine/ReLU chain, so backprop is hand-chained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Mlp:
    """Feedforward net: ReLU after every layer except the last (affine)."""

    weights: list[np.ndarray]  # W_k with shape (n_out, n_in)
    biases: list[np.ndarray]   # b_k with shape (n_out,)

    def __post_init__(self):
        if not self.weights:
            raise ValueError("empty network")
        for k in range(len(self.weights) - 1):
            if self.weights[k + 1].shape[1] != self.weights[k].shape[0]:
                raise ValueError(
                    f"layer {k} outputs {self.weights[k].shape[0]} units but "
                    f"layer {k + 1} expects {self.weights[k + 1].shape[1]}"
                )
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[0],):
                raise ValueError("bias shape does not match weight rows")

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.n_in] + [W.shape[0] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def init_mlp(dims: list[int], rng: np.random.Generator) -> Mlp:
    """Uniform +-sqrt(6/(n_in+n_out)) init per layer (seeded)."""
    weights, biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(weights, biases)


def zero_grads(net: Mlp) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in net.params()]


def accumulate(grads: list[np.ndarray], incr: list[np.ndarray], scale: float = 1.0):
    for g, d in zip(grads, incr):
        g += scale * d


# ---------------------------------------------------------------------------
# forward / backward


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate one state; returns the output vector (shape (n_out,))."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_in,):
        raise ValueError(f"expected input of dim {net.n_in}, got shape {x.shape}")
    return forward_batch(net, x[None, :])[0]


def forward_batch(net: Mlp, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.n_in:
        raise ValueError(f"expected batch of dim {net.n_in}, got shape {X.shape}")
    a = X
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        a = z if k == last else np.maximum(z, 0.0)
    return a


def scalar_value(net: Mlp, X: np.ndarray) -> np.ndarray:
    """Batched evaluation of a scalar-output net; returns shape (k,)."""
    return forward_batch(net, X)[:, 0]


@dataclass
class Tape:
    """Recorded primal values of one forward pass, for reverse mode."""

    inputs: list[np.ndarray]      # a_{k-1}: input to layer k
    preacts: list[np.ndarray]     # z_k: pre-activation of layer k
    output: np.ndarray


def forward_tape(net: Mlp, X: np.ndarray) -> Tape:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.n_in:
        raise ValueError(f"expected batch of dim {net.n_in}, got shape {X.shape}")
    inputs, preacts = [], []
    a = X
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ W.T + b
        preacts.append(z)
        a = z if k == last else np.maximum(z, 0.0)
    return Tape(inputs, preacts, a)


def backward(net: Mlp, tape: Tape, gY: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse pass from upstream gradient gY (k, n_out).

    Returns (parameter gradients in net.params() order, input gradient (k, n_in)).
    ReLU subgradient at 0 is taken as 0. Parameter gradients are summed over
    the batch; the input gradient is per-row.
    """
    if tape is None:
        raise ValueError("no recorded forward pass")
    gY = np.asarray(gY, dtype=float)
    if gY.ndim == 1:
        gY = gY[:, None]
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    g = gY
    last = len(net.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * (tape.preacts[k] > 0.0)
        grads[2 * k] = g.T @ tape.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ net.weights[k]
    return grads, g


def value_and_input_grad(net: Mlp, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scalar-output convenience: values (k,) and dV/dx (k, n_in)."""
    tape = forward_tape(net, X)
    _, gX = backward(net, tape, np.ones((X.shape[0], 1)))
    return tape.output[:, 0], gX


def input_jacobian(net: Mlp, X: np.ndarray) -> np.ndarray:
    """Full Jacobian dy/dx, shape (k, n_out, n_in); one reverse pass per output."""
    k = X.shape[0]
    tape = forward_tape(net, X)
    J = np.empty((k, net.n_out, net.n_in))
    for j in range(net.n_out):
        gY = np.zeros((k, net.n_out))
        gY[:, j] = 1.0
        _, gX = backward(net, tape, gY)
        J[:, j, :] = gX
    return J


# ---------------------------------------------------------------------------
# interval bound propagation


def ibp_bounds(net: Mlp, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sound output bounds over input boxes; accepts (n,) or batched (k, n)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    single = lo.ndim == 1
    if single:
        lo, hi = lo[None, :], hi[None, :]
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        mid = mid @ W.T + b
        rad = rad @ np.abs(W).T
        if k != last:
            z_lo = np.maximum(mid - rad, 0.0)
            z_hi = np.maximum(mid + rad, 0.0)
            mid, rad = 0.5 * (z_lo + z_hi), 0.5 * (z_hi - z_lo)
    out_lo, out_hi = mid - rad, mid + rad
    if single:
        return out_lo[0], out_hi[0]
    return out_lo, out_hi


# ---------------------------------------------------------------------------
# spectral norms


def spectral_norm(W: np.ndarray, iters: int = 50, v0: np.ndarray | None = None) -> float:
    return spectral_norm_vectors(W, iters, v0)[0]


def spectral_norm_vectors(
    W: np.ndarray, iters: int = 50, v0: np.ndarray | None = None
) -> tuple[float, np.ndarray, np.ndarray]:
    """Power-iteration estimate of the top singular triple (sigma, u, v).

    The Rayleigh estimate sigma = |W v| for unit v is monotonically
    non-decreasing in the iteration count and never exceeds sigma_max.
    """
    W = np.asarray(W, dtype=float)
    if W.size == 0:
        raise ValueError("empty matrix")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n = W.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n)) if v0 is None else v0 / np.linalg.norm(v0)
    basis = 0
    for _ in range(iters):
        w = W.T @ (W @ v)
        nw = np.linalg.norm(w)
        if nw < 1e-30:
            # v fell in (or near) the null space; restart from a basis vector
            v = np.zeros(n)
            v[basis % n] = 1.0
            basis += 1
            continue
        v = w / nw
    u = W @ v
    sigma = np.linalg.norm(u)
    if sigma > 0:
        u = u / sigma
    return float(sigma), u, v


def lipschitz_upper_bound_l2(net: Mlp, iters: int = 50) -> float:
    """Product of layer spectral norms: global l2 Lipschitz upper bound."""
    prod = 1.0
    for W in net.weights:
        prod *= spectral_norm(W, iters)
    return prod


def spectral_product_grads(
    net: Mlp, iters: int = 50, vs: list[np.ndarray] | None = None
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Product of spectral norms with d(product)/dW_k via frozen u_k v_k^T.

    Passing previous right singular vectors in vs warm-starts power iteration
    (a few iterations then suffice per training step). Returns the product,
    per-weight gradients, and the updated vectors.
    """
    sigmas, grads, new_vs = [], [], []
    for k, W in enumerate(net.weights):
        v0 = vs[k] if vs is not None else None
        sigma, u, v = spectral_norm_vectors(W, iters, v0)
        sigmas.append(sigma)
        grads.append(np.outer(u, v))
        new_vs.append(v)
    prod = float(np.prod(sigmas))
    for k, sigma in enumerate(sigmas):
        rest = prod / sigma if sigma > 0 else 0.0
        grads[k] = rest * grads[k]
    return prod, grads, new_vs


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Adam:
    """Adaptive-moment gradient descent over a flat list of arrays."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
