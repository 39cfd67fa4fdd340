"""Norm conversion and global Lipschitz reasoning for ReLU networks.

The l2 Lipschitz constant of an affine/ReLU chain is bounded by the product
of layer spectral norms; a dimension-dependent constant converts that bound
to other l_p norms. A bounded Lipschitz constant converts a nominal descent
margin into a robust one.
"""

from __future__ import annotations

import numpy as np

from .nets import Mlp, lipschitz_upper_bound_l2


def norm_conversion_constant(p: float, n: int, m: int) -> float:
    """K such that L_p <= K * L_2 for input dim n and output dim m.

    K = n^(1/2 - 1/p) * m^(1/p - 1/2); equals 1 at p = 2 and
    sqrt(n/m) at p = inf. Only p in {2, inf} is supported.
    """
    if n < 1 or m < 1:
        raise ValueError("dimensions must be >= 1")
    if p == 2:
        return 1.0
    if p == np.inf:
        return float(np.sqrt(n) / np.sqrt(m))
    raise ValueError(f"unsupported norm p={p!r}; use 2 or inf")


def lipschitz_bound_lp(net: Mlp, p: float, iters: int = 50) -> float:
    """Upper bound on the global l_p Lipschitz constant of the network."""
    K = norm_conversion_constant(p, net.n_in, net.n_out)
    return K * lipschitz_upper_bound_l2(net, iters)


def robust_margin(epsilon_r: float, L_p: float, delta: float) -> float:
    """Descent margin guaranteed over a delta-ball: epsilon_r - L_p * delta.

    A nominal certificate with margin epsilon_r and Lipschitz bound L_p
    satisfies the robust decrease condition with this margin; it only
    certifies robustness when positive, i.e. delta < epsilon_r / L_p.
    """
    return epsilon_r - L_p * delta
