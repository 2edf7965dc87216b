"""Where the frozen diffusion leaves the unit disc.

With V = (x^2 + 4 y^2)/2 the effective cost on the unit circle is smallest at
(+-1, 0).  As sigma falls the exit points concentrate there and the fraction
landing in the high-cost set N (cost above H + margin) shrinks.
"""

import numpy as np

from sidlab import exit_lab as E
from sidlab import potentials as P

V = P.quadratic([1.0, 4.0], [0.0, 0.0])
W = P.quadratic(1.0, [0.0, 0.0], role="W")
D = E.ball([0.0, 0.0], 1.0)
details = E.exit_cost_details(D, V, W, [0.0, 0.0])
print(f"exit cost H = {details.H:.4f} attained near {np.round(details.argmin, 4)}")

res = E.kramers_sweep(V, W, D, [0.8, 0.65, 0.5], 200, delta=0.4, master_seed=2024)
loc = E.exit_location_stats(res.records, D, V, W, [0.0, 0.0], margin=0.5)
print("sigma   within 30 deg of (+-1,0)   fraction in N")
for row in loc.rows:
    pts = np.array([r.exit_point for r in res.records[row.sigma] if not r.timed_out])
    angle = np.degrees(np.arctan2(np.abs(pts[:, 1]), np.abs(pts[:, 0])))
    print(f"{row.sigma:5.2f}   {np.mean(angle <= 30):24.1%}   {row.frac_in_N:13.3f}")
