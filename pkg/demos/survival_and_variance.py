"""
Survival of a near-critical branching process
=============================================

With geometric offspring of parameter 1/2 + b/(4n) the process is slightly
supercritical. n P(alive after n delta generations) converges to the
limit computed by ``h_survival``. An exact recursion on the generating function gives the same
number without Monte Carlo noise.
"""
import numpy as np

from snakelab import branching as B
from snakelab import environment as E

n, delta = 1000, 0.5
gens = int(n * delta)
for b in (0.0, 1.0, 2.0):
    sched = B.fixed_geometric_schedule(b, n, gens)
    est = B.survival_estimate(sched, n, delta, 2 * 10 ** 5, seed=3)
    exact = n * B.survival_exact(sched)
    print(f"b={b}: MC {est.scaled:.3f} [{est.ci_low:.3f}, {est.ci_high:.3f}]  exact {exact:.3f}  "
          f"h {B.h_survival(b, delta):.3f}")

# the offspring variance functional V(t) tends to 2t in the dependent environment
for n in (10 ** 2, 10 ** 3, 10 ** 4):
    spec = E.EnvironmentSpec(kind="gaussian-hermite", length=n + 10, seed=2)
    renv = E.rescaled_environment(spec, n)
    print(f"n={n:6d}: V(1) = {B.variance_functional(renv, 1.0):.4f}")
