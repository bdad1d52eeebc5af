"""
From a walk in a random environment to a branching tree
=======================================================

A nearest-neighbour walk on {0..nK}, reflected at both ends, is run in a
long-range dependent environment. Counting its up-steps level by level
gives a branching process in random environment. The same contour drives
a Brownian snake, and the snake's particles sit on exactly that tree.
"""
import numpy as np

from snakelab import environment as E
from snakelab import snake as S
from snakelab import superprocess as SP
from snakelab import walk as Wk

n, K, seed = 60, 1.0, 11

# environment: Hermite transform of fractional Gaussian noise, H = 0.7
spec = E.EnvironmentSpec(kind="gaussian-hermite", length=4 * n, hurst=0.7, seed=seed)
renv = E.rescaled_environment(spec, n)
print(f"D_n = {renv.D_n:.3f}, first offspring means {np.round(renv.offspring_means(np.arange(1, 6)), 4)}")

# contour of n excursions from 0
path = Wk.simulate_reflected_walk(renv, K, n, seed)
print(f"contour has {len(path.sites) - 1} steps, max height {path.sites.max()}")

# up-crossing counts per level form the branching trajectory
tree = Wk.extract_bpre(path, K=K)
print("masses at levels 0, 10, 20, 30:", [round(float(tree.masses[i]), 4) for i in (0, 10, 20, 30)])

# the snake along the same contour
sn = S.build_snake(path, 2, seed)
ps = SP.particles_from_snake(sn)
for level in (0, 10, 20, 30):
    snake_mass = S.measure_from_snake(sn, level).mass
    print(f"level {level:2d}: extracted {tree.masses[level]:.4f}  snake {snake_mass:.4f}  particles {ps.measure(level).mass:.4f}")

# lineages: a particle at level 20 and its parent at level 19 share a label prefix
g = ps.generations[20]
if len(g.births):
    print("one level-20 label:", ps.label(20, 0))
