"""Tube probabilities against the explicit bound formulas.

Paths of the Asian model must stay within norm 1 of the zero-control
skeleton for all t <= T.  Common random numbers make the estimates
monotone in R.  The bound exponentials use user-chosen constants K, q,
mu, h; the upper one only applies below R_*.
"""

from hypotube.bounds import BoundConstants, Profiles, build_grid, rate_f, tube_lower_bound, tube_upper_bound
from hypotube.errors import ValidityError
from hypotube.mc import SimConfig, tube_probabilities
from hypotube.model import get_model
from hypotube.skeleton import Control, r_star

m = get_model("asian")
T = 1.0
phi = Control.zero(T)
res = tube_probabilities(m, (1.0, 0.0), phi, [0.8, 0.4, 0.2], SimConfig(dt=1e-3, n_paths=20_000, seed=3, T=T))

c = BoundConstants(K=1.0, q=1.0, mu=1.0, h=1.2)
prof = Profiles.constant(3.0, 1.0, phi)
rs = r_star(phi, 3.0, 1.0, c.mu, c.h, c.K, c.q)
print(f"R_* = {rs:.3f}")
for r in res:
    lo = tube_lower_bound(c, r.R, prof, T)
    try:
        up = f"{tube_upper_bound(c, r.R, prof, T, rs):.3g}"
    except ValidityError:
        up = "n/a (R > R_*)"
    print(f"R={r.R}: p_hat={r.p_hat:.4f} [{r.ci_low:.4f}, {r.ci_high:.4f}]  lower={lo:.3g} upper={up}")

grid = build_grid(lambda t: rate_f(c, 0.4, prof, t), T)
print(f"unit-mass grid at R=0.4: {grid.n_complete} complete intervals, knots {grid.knots.round(4).tolist()}")
