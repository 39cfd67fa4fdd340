"""Empirical robustness campaigns: perturbed rollouts and success tables.

A rollout applies either certificate-maximizing adversarial perturbations or
uniform random noise to each computed next state, and terminates on goal
entry (which takes precedence), unsafe entry, or the horizon. Campaigns are
vectorised across all rollouts and deterministic given their seed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .adversary import PgdConfig, pgd_maximize_batch
from .certificate import FilteredCertificate
from .envs import EnvSpec
from .nets import Mlp, forward_batch

OUTCOME_GOAL = "reached_goal"
OUTCOME_UNSAFE = "entered_unsafe"
OUTCOME_TIMEOUT = "timed_out"


@dataclass
class RolloutResult:
    outcome: str
    step: int  # step at which the outcome occurred (or the horizon)
    mode: str
    delta: float


@dataclass
class Campaign:
    n_states: int = 10_000
    horizon: int = 200
    modes: list[tuple[str, float]] = field(default_factory=lambda: [("adversarial", 0.01)])
    seed: int = 0
    pgd: PgdConfig = field(default_factory=PgdConfig)


def rollout_batch(policy: Mlp, cert: FilteredCertificate, env: EnvSpec,
                  X0: np.ndarray, mode: str, delta: float, horizon: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Simulate all rollouts together; returns (outcomes, steps) arrays.

    mode "adversarial": each next state is replaced by the certificate
    maximizer in its delta-ball. mode "random": uniform per-coordinate noise
    in [-delta, delta]. Goal entry is checked before unsafe entry.
    """
    if mode not in ("adversarial", "random"):
        raise ValueError(f"unknown perturbation mode {mode!r}")
    X = np.atleast_2d(np.asarray(X0, dtype=float)).copy()
    k = X.shape[0]
    outcome = np.full(k, -1, dtype=np.int8)  # -1 running, 0 goal, 1 unsafe
    steps = np.full(k, horizon, dtype=np.int64)
    active = np.arange(k)
    pgd_cfg = PgdConfig(delta=delta)
    for t in range(1, horizon + 1):
        if active.size == 0:
            break
        Xa = X[active]
        U = env.clamp_control(forward_batch(policy, Xa))
        nxt = env.step(Xa, U)
        if delta > 0.0:
            if mode == "adversarial":
                nxt = pgd_maximize_batch(cert.net, nxt, pgd_cfg, rng)
            else:
                nxt = nxt + rng.uniform(-delta, delta, nxt.shape)
        X[active] = nxt
        in_goal = env.in_goal(nxt)
        in_unsafe = env.in_unsafe(nxt) & ~in_goal
        done = in_goal | in_unsafe
        if np.any(done):
            idx = active[done]
            outcome[idx] = np.where(in_goal[done], 0, 1)
            steps[idx] = t
            active = active[~done]
    outcomes = np.where(outcome == 0, OUTCOME_GOAL,
                        np.where(outcome == 1, OUTCOME_UNSAFE, OUTCOME_TIMEOUT))
    return outcomes, steps


def rollout(policy: Mlp, cert: FilteredCertificate, env: EnvSpec,
            x0: np.ndarray, mode: str, delta: float, horizon: int = 200,
            rng: np.random.Generator | None = None) -> RolloutResult:
    """Single-trajectory wrapper around rollout_batch."""
    x0 = np.asarray(x0, dtype=float)
    if not env.in_init(x0[None])[0] or env.in_goal(x0[None])[0]:
        raise ValueError("x0 must lie in the initial set outside the goal")
    if rng is None:
        rng = np.random.default_rng(0)
    outcomes, steps = rollout_batch(policy, cert, env, x0[None], mode, delta,
                                    horizon, rng)
    return RolloutResult(str(outcomes[0]), int(steps[0]), mode, delta)


def sample_initial_states(env: EnvSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """States from the initial set but outside the goal, by rejection."""
    out = np.empty((0, env.state_dim))
    while out.shape[0] < n:
        cand = env.sample_init(rng, 2 * n)
        keep = ~env.in_goal(cand)
        out = np.concatenate([out, cand[keep]])
    return out[:n]


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """95 percent score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class CampaignRow:
    mode: str
    delta: float
    n: int
    successes: int
    rate: float
    wilson_lo: float
    wilson_hi: float


def run_campaign(policy: Mlp, cert: FilteredCertificate, env: EnvSpec,
                 campaign: Campaign) -> list[CampaignRow]:
    """Success rate per (mode, delta) over shared initial states."""
    root = np.random.SeedSequence(campaign.seed)
    init_ss, *mode_ss = root.spawn(1 + len(campaign.modes))
    X0 = sample_initial_states(env, campaign.n_states, np.random.default_rng(init_ss))
    rows = []
    for (mode, delta), ss in zip(campaign.modes, mode_ss):
        outcomes, _ = rollout_batch(policy, cert, env, X0, mode, delta,
                                    campaign.horizon, np.random.default_rng(ss))
        s = int(np.sum(outcomes == OUTCOME_GOAL))
        lo, hi = wilson_interval(s, campaign.n_states)
        rows.append(CampaignRow(mode, delta, campaign.n_states, s,
                                s / campaign.n_states, lo, hi))
    return rows


CAMPAIGN_CSV_HEADER = "mode,delta,n,successes,rate,wilson_lo,wilson_hi"


def campaign_csv(rows: list[CampaignRow]) -> str:
    out = io.StringIO()
    out.write(CAMPAIGN_CSV_HEADER + "\n")
    for r in rows:
        out.write(f"{r.mode},{r.delta!r},{r.n},{r.successes},"
                  f"{r.rate!r},{r.wilson_lo!r},{r.wilson_hi!r}\n")
    return out.getvalue()


def campaign_svg(rows: list[CampaignRow], title: str = "success rate") -> str:
    """Minimal dependency-free bar chart of success rates."""
    width, height, pad = 640, 360, 50
    n = max(1, len(rows))
    bar_w = (width - 2 * pad) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width/2:.0f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" '
        'stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
    ]
    for i, r in enumerate(rows):
        h = r.rate * (height - 2 * pad)
        x = pad + i * bar_w + 0.15 * bar_w
        y = height - pad - h
        parts.append(
            f'<rect x="{x:.1f}" y="{y:.1f}" width="{0.7*bar_w:.1f}" '
            f'height="{h:.1f}" fill="#4878a8"/>'
        )
        label = f"{r.mode[:3]} {r.delta:g}"
        parts.append(
            f'<text x="{x + 0.35*bar_w:.1f}" y="{height-pad+16}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">{label}</text>'
        )
        parts.append(
            f'<text x="{x + 0.35*bar_w:.1f}" y="{y-4:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{100*r.rate:.1f}%</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
