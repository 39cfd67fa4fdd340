"""Filtered control Lyapunov-barrier certificate.

The certificate is a scalar ReLU network whose output is overridden on the
task sets: goal states evaluate to a fixed low mask, unsafe states to a fixed
high mask. Filtering discharges the barrier condition by construction, so no
training samples are needed inside the unsafe set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box
from .envs import EnvSpec
from .nets import Mlp, ibp_bounds, scalar_value


@dataclass
class ClbfParams:
    """Scalar parameters of the certificate and its robustness contract.

    alpha: threshold exceeded on unsafe states; beta: cap on initial states;
    epsilon: required per-step decrease; c: global lower bound (equals the
    goal mask); delta: perturbation radius; p: norm tag (only inf for now).
    """

    alpha: float = 1.2
    beta: float = 1.0
    epsilon: float = 5e-3
    c: float = -10.0
    delta: float = 0.0
    p: float = np.inf
    goal_mask: float = -10.0
    unsafe_mask: float = 1.2

    def validate(self):
        if not (self.alpha > self.beta > self.c):
            raise ValueError("need alpha > beta > c")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.unsafe_mask < self.alpha:
            raise ValueError("unsafe_mask must be >= alpha")
        if self.goal_mask != self.c:
            raise ValueError("goal_mask must equal the lower bound c")
        return self


@dataclass
class FilteredCertificate:
    """Certificate network with goal/unsafe masking over an environment."""

    net: Mlp
    params: ClbfParams
    env: EnvSpec

    def raw(self, X: np.ndarray) -> np.ndarray:
        """Unmasked network values, batched."""
        return scalar_value(self.net, np.atleast_2d(X))

    def value(self, X: np.ndarray) -> np.ndarray:
        """Masked values: goal_mask on the goal set (taking precedence),
        unsafe_mask on the unsafe set, network output elsewhere."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        v = scalar_value(self.net, X)
        v = np.where(self.env.in_unsafe(X), self.params.unsafe_mask, v)
        v = np.where(self.env.in_goal(X), self.params.goal_mask, v)
        return v

    def value_one(self, x: np.ndarray) -> float:
        return float(self.value(np.asarray(x)[None, :])[0])


def value_bounds(cert: FilteredCertificate, B: Box) -> tuple[float, float]:
    """Sound bounds on the filtered value over a box.

    Mask values of any intersected set are included, and unless the box is
    entirely masked the whole box is fed through the network. Conservative
    when the box straddles set boundaries; child boxes of a bisection never
    yield looser bounds than their parent.
    """
    lo, hi = value_bounds_arrays(cert, B.lo[None], B.hi[None])
    return float(lo[0]), float(hi[0])


def value_bounds_arrays(
    cert: FilteredCertificate, lo: np.ndarray, hi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched value_bounds over (k, n) box bounds."""
    env, p = cert.env, cert.params
    k = lo.shape[0]
    goal_hit = env.goal_intersects(lo, hi)
    goal_all = env.goal_contains(lo, hi)
    unsafe_hit = env.unsafe_intersects(lo, hi)
    unsafe_all = env.unsafe_contains(lo, hi)
    fully_masked = goal_all | unsafe_all

    out_lo = np.full(k, np.inf)
    out_hi = np.full(k, -np.inf)
    need_net = ~fully_masked
    if np.any(need_net):
        n_lo, n_hi = ibp_bounds(cert.net, lo[need_net], hi[need_net])
        out_lo[need_net] = n_lo[:, 0]
        out_hi[need_net] = n_hi[:, 0]
    out_lo = np.where(goal_hit, np.minimum(out_lo, p.goal_mask), out_lo)
    out_hi = np.where(goal_hit, np.maximum(out_hi, p.goal_mask), out_hi)
    out_lo = np.where(unsafe_hit, np.minimum(out_lo, p.unsafe_mask), out_lo)
    out_hi = np.where(unsafe_hit, np.maximum(out_hi, p.unsafe_mask), out_hi)
    return out_lo, out_hi


def filtered_bounds_clipped(cert: FilteredCertificate, B: Box) -> tuple[float, float]:
    """Tighter sound bounds: the network is only evaluated on the part of the
    box outside the masked sets (tiled exactly), masks cover the rest.

    Used by the verifier for next-state boxes, where the conservative
    whole-box treatment of value_bounds would otherwise drag goal-adjacent
    regions through the network.
    """
    env, p = cert.env, cert.params
    cands_lo, cands_hi = [], []
    if env.goal_intersects(B.lo[None], B.hi[None])[0]:
        cands_lo.append(p.goal_mask)
        cands_hi.append(p.goal_mask)
    if env.unsafe_intersects(B.lo[None], B.hi[None])[0]:
        cands_lo.append(p.unsafe_mask)
        cands_hi.append(p.unsafe_mask)
    pieces = env.unmasked_pieces(B)
    if pieces:
        lo = np.stack([b.lo for b in pieces])
        hi = np.stack([b.hi for b in pieces])
        n_lo, n_hi = ibp_bounds(cert.net, lo, hi)
        cands_lo.append(float(n_lo[:, 0].min()))
        cands_hi.append(float(n_hi[:, 0].max()))
    return min(cands_lo), max(cands_hi)
