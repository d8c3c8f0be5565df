"""Certified error envelope for a swing-equation network, checked by RK4.

Writes smib_curve.csv (t, bound, one empirical column per initial angle)
next to this script.
"""

from pathlib import Path

import numpy as np

from pdecert import (BabConfig, SMIBParams, empirical_error, error_envelope, generate_fixture, initial_mismatch,
                     smib_lipschitz, zeta_schedule)

params = SMIBParams()
net = generate_fixture(42, [2, 16, 16, 2], "tanh")
cfg = BabConfig(theta_bar=1e-2, timeout=120)

delta, _ = initial_mismatch(net, params, cfg)
zeta = zeta_schedule(net, params, 4, cfg)
C = smib_lipschitz(params).C
print(f"C = {C:.6f}, delta = {delta:.4f}, zeta per slice = {np.round(zeta.values * zeta.scale, 4)}")

t = np.linspace(0.0, 2.0, 2000)
curve = error_envelope(delta, zeta, C, t, quad_points=10_000)
d0s = np.linspace(0.0, 1.0, 5)
curve.empirical = empirical_error(net, params, d0s, t)
curve.labels = [f"delta0={d:g}" for d in d0s]
print(f"envelope at t=2: {curve.bound[-1]:.4f}, worst empirical error: {curve.empirical.max():.4f}")
print("dominated:", curve.dominated())
curve.write_csv(Path(__file__).with_name("smib_curve.csv"))
