"""How fast the occupation measure settles, and how well a frozen diffusion tracks it.

For each sigma we estimate t_hat, the first checkpoint where the mean
W_2(mu_t, delta_m) drops below kappa, then switch a coupled frozen diffusion
(drift grad V + grad W(. - m)) on at t_hat and measure the sup-gap between the
two paths driven by the same noise.
"""

import numpy as np

from sidlab import potentials as P
from sidlab.occupation import estimate_stabilisation_time
from sidlab.sde import SimConfig, simulate_coupled

V = P.quadratic(1.0, [0.0])
W = P.quadratic(1.0, [0.0], role="W")
checkpoints = np.arange(0.5, 50.5, 0.5)

print("sigma   t_hat   median sup-gap   bound holds")
for sigma in (0.6, 0.45, 0.3):
    cfg = SimConfig(sigma, 0.01, 50.0, [0.0], master_seed=7)
    t_hat = estimate_stabilisation_time(V, W, cfg, 0.5, 100, checkpoints, tag="coupling").t_hat
    runs = [simulate_coupled(V, W, [0.0], cfg.replace(t_end=10 * t_hat), t_hat, replica=i,
                             tag="coupling") for i in range(100)]
    gaps = [r.sup_gap for r in runs]
    holds = np.mean([r.bound_holds for r in runs])
    print(f"{sigma:5.2f}   {t_hat:5.1f}   {np.median(gaps):14.4f}   {holds:10.0%}")
print("\nThe gap shrinks roughly linearly in sigma: once mu_t is close to delta_m, the\n"
      "self-interaction is nearly the frozen one and the remaining gap is noise-driven.")
