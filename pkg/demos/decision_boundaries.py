"""Three single-point classes with 10000/100/1 copies: where does the
decision boundary between the head and the one-sample class end up?

Run: python3 demos/decision_boundaries.py
"""

from balms.toy2d import run_toy2d

runs = run_toy2d(iters=2000, every=500, seed=0)
print("distance from the tail anchor to its boundary with the head (segment length 1.732)")
for name, run in runs.items():
    trail = "  ".join(f"{t}: {p.distances[(2, 0)]:+.3f}" for t, p in run.probes)
    print(f"{name:22s} {trail}   tail area {run.final.area(2):.3f}")
