"""Certified bounds on the error of neural approximations to differential equations.

Networks are turned into property graphs (initial, boundary and residual
mismatch, with finite-difference derivatives), bounded over boxes with
CROWN and IBP, attacked with FGSM for lower bounds, and refined by
input-splitting branch and bound. For ODEs the certified bounds combine
into a time-dependent error envelope.
"""

from .attack import AttackResult, attack_abs, fgsm_maximize
from .bab import BabConfig, VerificationReport, split, verify
from .crown import Box, Interval, LinearBounds, abs_bound, crown_bounds, ibp, relax_node
from .graph import ComputeGraph, GraphBuilder, eval_graph, fd_first, fd_second, grad_graph, network_graph
from .fdquality import fd_mse, fd_sweep
from .ivp import (ErrorCurve, LipschitzSpec, ZetaSchedule, empirical_error, error_envelope, initial_mismatch,
                  smib_lipschitz, zeta_schedule)
from .network import (Layer, Network, WeightFileError, evaluate, generate_fixture, jacobian, load_network,
                      store_network, viscous_shock_network)
from .properties import (SMIBParams, build_boundary_property, build_initial_property, build_property, build_residual,
                         default_box)

__version__ = "0.1.0"
