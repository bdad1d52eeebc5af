"""
Walk local times and a time-changed Feller diffusion
====================================================

The number of up-crossings of level ns by a reflected walk, divided by n,
is compared in law with a Feller diffusion. In a flat environment the
target is eta(2 s). In a random environment it is eta run on the clock
given by the scale function of the discrete potential.
"""
import numpy as np

from snakelab import diffusion as D
from snakelab import environment as E
from snakelab import stats as st
from snakelab import walk as Wk

n, reps, t0 = 200, 2000, 0.25
level = int(round(t0 * n))
K = (level + 1) / n

flat = E.constant_environment(0.5, 4 * n, n=n)
walk = np.array([Wk.reflected_upcounts(flat, K, n, 1, r)[level] / n for r in range(reps)])
eta = D.feller_marginal(1.0, 1.0, 2 * t0, reps, 1)
print("flat:", st.ks_two_sample(walk, eta, "walk vs eta(2 t0)").line())
print(f"  means {walk.mean():.3f} vs {eta.mean():.3f}, P(0) {np.mean(walk == 0):.3f} vs {np.mean(eta == 0):.3f}")

spec = E.EnvironmentSpec(kind="gaussian-hermite", length=4 * n, hurst=0.7, seed=5)
renv = E.rescaled_environment(spec, n)
pot = E.discrete_potential(renv, (0.0, K))
walk = np.array([Wk.reflected_upcounts(renv, K, n, 2, r)[level] / n for r in range(reps)])
h = D.sample_H(pot, t0, reps, 2)
print("dependent:", st.ks_two_sample(walk, h, "walk vs time-changed Feller").line())
