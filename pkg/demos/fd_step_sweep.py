"""Finite-difference derivative error against the step size.

Prints the mean squared error of a forward difference for a small tanh
network over a range of steps: truncation error dominates on the left,
floating-point cancellation on the right.
"""

from pdecert.fdquality import DEFAULT_HS, fd_sweep
from pdecert.network import generate_fixture

net = generate_fixture(42, [2, 16, 16, 1], "tanh")
print(f"{'h':>8}  {'mse':>10}")
for row in fd_sweep(net, 0, DEFAULT_HS, n=10_000):
    print(f"{row['h']:8.0e}  {row['mse']:10.3e}")
