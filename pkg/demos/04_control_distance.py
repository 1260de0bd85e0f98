"""Control distance d_c and its comparison with the quasi-distance d.

d_c is the cheapest (1,3)-norm of a control steering dv = A(v) phi from x
to y in unit time.  Only upper bounds are certified.  rho_2 uses the best
constant control and always dominates the bound.
"""

import numpy as np

from hypotube.control_metric import dc_estimate, rho2_estimate
from hypotube.model import get_model
from hypotube.norms import quasi_distance

m = get_model("asian")
x = np.array([1.0, 1.0])
for label, u in (("sigma", (1.0, 0.0)), ("bracket", (0.0, 1.0)), ("diagonal", (0.7071, 0.7071))):
    for r in (1e-3, 1e-2, 1e-1):
        y = x + r * np.asarray(u)
        d = quasi_distance(m, x, y).value
        dc = dc_estimate(m, x, y, N=8, restarts=4)
        rho = rho2_estimate(m, x, y).value
        print(f"{label:8s} r={r:<6g} d={d:.4f} d_c<={dc.upper_bound:.4f} rho2={rho:.4f} d/d_c={d / dc.upper_bound:.3f}")
