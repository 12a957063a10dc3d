"""Search for the cheapest neck and compare with the analytic lower bounds.

Run:  python demos/neck_search.py

For each dimension the search returns the smallest max(E1, E2) it found
over spline necks; any real minimal hypersphere must cost at least the
true infimum, which the estimate bounds from above.
"""
from ricci_af.c1_search import estimate_cn, lower_bound_witness
from ricci_af.functionals import detect_minimal_hyperspheres, e1_e2
from ricci_af.geometry import Grid, make_profile

for n in (2, 3, 4, 5):
    res = estimate_cn(n)
    rep = lower_bound_witness(res.best, n)
    print(f"n={n}: estimate {res.estimate:.4f}  sweep {res.sweep_min:.4f}  "
          f"margin {res.margin:.3f}  chains hold: {rep['holds']}")

# a Schwarzschild slice does carry a minimal sphere; its neck energies are large
p = make_profile("schwarzschild_slice", 3, Grid(20.0, 2000), m=1.0)
spheres = detect_minimal_hyperspheres(p)
print("schwarzschild stationary spheres at s =", [round(s, 5) for s in spheres])
print("E1, E2 at the innermost:", e1_e2(p, spheres[0]))
