"""Anisotropic frames on the Asian model.

The noise moves X1 directly while X2 only feels it through the drift, so a
ball of "radius R" is a box of width R^{1/2} along sigma and R^{3/2} along
the bracket.  This script prints the frame, a few norms, and the
quasi-distance d in both directions.
"""

import numpy as np

from hypotube.model import get_model
from hypotube.norms import frame, lemma_suite, norm, quasi_distance

m = get_model("asian")
x = np.array([1.0, 1.0])
print("A(x) columns sigma, [b, sigma]:\n", m.A(x))

for R in (1.0, 0.1, 0.01):
    fr = frame(m, x, R)
    print(f"R={R:5}: |(0.1, 0)|={norm(fr, (0.1, 0.0)):.3g}  |(0, 0.1)|={norm(fr, (0.0, 0.1)):.3g}")

# d grows like r along sigma but like r^{1/3} along the bracket
for r in (1e-3, 1e-2, 1e-1):
    d1 = quasi_distance(m, x, x + (r, 0.0)).value
    d2 = quasi_distance(m, x, x + (0.0, r)).value
    print(f"r={r:g}: d along sigma={d1:.4g}, along bracket={d2:.4g}")

for res in lemma_suite(m, n_cases=5000):
    print(f"{res.name:22s} violations={res.violations} constant={res.constant:.3g}")
