#!/usr/bin/env python
# coding: utf-8

# # Matrix pooling
#
# Lay n*n samples out in a square, test every row and every column. A
# positive sample lights up its row and its column; only the crossings of
# lit rows and lit columns need a second look.

# In[1]:


import numpy as np

from poolplan import InfectionVector, analytic, run_grid2d


# Two positives on different rows and columns: 10 line tests plus 4
# crossings to retest. On the same row the single lit row pins them down.

# In[2]:


diagonal = InfectionVector.from_positions(25, [12, 24])
same_row = InfectionVector.from_positions(25, [12, 14])
print(run_grid2d(diagonal, 5).tests, run_grid2d(same_row, 5).tests)


# The pessimistic closed form assumes every positive sits on its own row and
# column. It is only meaningful while p stays under a size-dependent bound.

# In[3]:


for n in (5, 10, 20):
    print(n, round(analytic.grid2d_validity_bound(n), 4))

for p in (0.01, 0.02, 0.03, 0.04, 0.05):
    r = analytic.grid2d_optimal_size(p, 400)
    print(f"p={p}: n={r.best_size} tpp={r.best_tpp:.4f}")


# Empirical cost on random 10x10 squares at 3% prevalence.

# In[4]:


rng = np.random.default_rng(0)
tests = [run_grid2d(InfectionVector(rng.random(100) < 0.03), 10).tests for _ in range(2000)]
print(np.mean(tests) / 100)
