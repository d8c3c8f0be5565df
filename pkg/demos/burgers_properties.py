"""Certify initial, boundary and residual bounds for a Burgers network.

Uses the exact viscous-shock solution written as a one-neuron tanh
network, so initial and boundary mismatches are tiny while the residual
bound has to fight a sharp gradient at x = 0.
"""

import sys

from pdecert import build_property, default_box, verify, viscous_shock_network

budget = float(sys.argv[1]) if len(sys.argv) > 1 else 30.0
net = viscous_shock_network()
for prop in ("initial", "boundary", "residual"):
    g = build_property(net, "burgers", prop)
    rep = verify(g, default_box("burgers", prop), theta_bar=1e-5, timeout=budget)
    print(f"{prop:9s} certified <= {rep.certified_upper:.4e}  attack >= {rep.attack_lower:.4e}  "
          f"[{rep.termination}, {rep.nodes_expanded} boxes, {rep.wall_time:.1f} s]")
