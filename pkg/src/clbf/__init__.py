"""Robust neural Lyapunov-barrier certificates for reach-while-avoid control.

Train a controller and certificate jointly, verify the robust certificate
conditions with a sound interval branch-and-bound checker, and evaluate
empirical robustness under adversarial and random state perturbations.
"""

from .boxes import Box, subtract_box, subtract_boxes
from .certificate import ClbfParams, FilteredCertificate, value_bounds
from .envs import EnvSpec, docking_env, make_env, pendulum_env, trig_interval
from .lipschitz import lipschitz_bound_lp, norm_conversion_constant, robust_margin
from .nets import (
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
)
from .adversary import PgdConfig, attack_step, pgd_maximize
from .losses import (
    Batch,
    LossWeights,
    TotalLossConfig,
    loss_dec,
    loss_dec_adv,
    loss_dec_neighbor,
    loss_init,
    loss_lip_global,
    total_loss,
)

__version__ = "0.1.0"
