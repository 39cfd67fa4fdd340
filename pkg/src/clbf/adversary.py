"""Projected gradient ascent on the certificate value inside an l-inf ball.

Used both to harden training (worst-case next states) and to attack trained
controllers during empirical evaluation. Ascent is on the raw network; the
best value seen across iterates and restarts is returned, so the result never
falls below the ball center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import Mlp, value_and_input_grad


@dataclass
class PgdConfig:
    steps: int = 20
    step_size: float | None = None  # defaults to delta / 4
    delta: float = 0.0
    restarts: int = 3  # first restart starts at the center, rest random

    def validate(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        return self


def pgd_maximize_batch(
    net: Mlp,
    centers: np.ndarray,
    cfg: PgdConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Approximate per-row maximizers of the net over l-inf balls.

    Sign-gradient ascent with exact projection onto [center - delta,
    center + delta]. Restarts draw their starting points sequentially from
    rng, so with a fixed generator seed the first restarts of a longer run
    coincide with a shorter one.
    """
    cfg.validate()
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if cfg.delta == 0.0:
        return centers.copy()
    if rng is None:
        rng = np.random.default_rng(0)
    step = cfg.step_size if cfg.step_size is not None else cfg.delta / 4.0
    lo = centers - cfg.delta
    hi = centers + cfg.delta

    best_x = centers.copy()
    best_v, _ = value_and_input_grad(net, centers)
    for restart in range(cfg.restarts):
        if restart == 0:
            x = centers.copy()
        else:
            x = rng.uniform(lo, hi)
        for _ in range(cfg.steps):
            v, g = value_and_input_grad(net, x)
            improve = v > best_v
            best_v = np.where(improve, v, best_v)
            best_x[improve] = x[improve]
            x = np.clip(x + step * np.sign(g), lo, hi)
        v, _ = value_and_input_grad(net, x)
        improve = v > best_v
        best_v = np.where(improve, v, best_v)
        best_x[improve] = x[improve]
    return best_x


def pgd_maximize(
    net: Mlp,
    center: np.ndarray,
    cfg: PgdConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Single-state convenience wrapper around pgd_maximize_batch."""
    return pgd_maximize_batch(net, np.asarray(center)[None, :], cfg, rng)[0]


def attack_step(cert, policy: Mlp, env, X: np.ndarray, delta: float,
                cfg: PgdConfig | None = None,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Worst-case realized next states: the certificate maximizer in the
    delta-ball around the nominal transition f(x, pi(x))."""
    from .nets import forward_batch

    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = env.clamp_control(forward_batch(policy, X))
    nxt = env.step(X, U)
    if delta == 0.0:
        return nxt
    pcfg = PgdConfig(delta=delta) if cfg is None else PgdConfig(
        steps=cfg.steps, step_size=cfg.step_size, delta=delta, restarts=cfg.restarts
    )
    return pgd_maximize_batch(cert.net, nxt, pcfg, rng)
