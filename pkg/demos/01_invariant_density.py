"""Self-consistent invariant density of the quadratic model.

With V(x) = x^2/2 and W(x) = x^2/2 the limiting occupation measure is the
Gaussian N(0, sigma^2 / (2(rho + alpha))) = N(0, sigma^2 / 4).  The Picard
iteration on a grid recovers that variance, and a long single trajectory's
occupation measure concentrates around the same point.
"""

import numpy as np

from sidlab import potentials as P
from sidlab.invariant_density import FixedPointConfig, solve_fixed_point
from sidlab.sde import SimConfig, simulate_self_interacting

V = P.quadratic(1.0, [0.0])
W = P.quadratic(1.0, [0.0], role="W")

print("sigma   grid variance   closed form   trajectory variance (t=2000)")
for sigma in (1.0, 0.7, 0.5):
    rho, _ = solve_fixed_point(V, W, FixedPointConfig(sigma, -6.0, 6.0, 2001))
    tr = simulate_self_interacting(V, W, SimConfig(sigma, 0.01, 2000.0, [1.0], master_seed=1,
                                                   decimation_stride=10))
    mu = tr.occupation()
    mean = np.average(mu.points[:, 0], weights=mu.weights)
    var = np.average((mu.points[:, 0] - mean) ** 2, weights=mu.weights)
    print(f"{sigma:5.2f}   {rho.variance():13.8f}   {sigma**2 / 4:11.8f}   {var:19.5f}")
print("\nThe trajectory variance sits slightly above the fixed point: the occupation\n"
      "measure still carries the transient from x0 = 1 and the slow O(1/t) memory\n"
      "relaxation, so at finite t it is a little wider than the limiting density.")
