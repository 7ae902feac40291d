#!/usr/bin/env python
# coding: utf-8

# # Single pooling
#
# Mix the samples of n people, run one test on the mix, and retest each
# member only if the mix comes back positive. At low prevalence most mixes
# are negative, so far fewer than one test per person is needed.

# In[1]:


import numpy as np

from poolplan import analytic


# Expected tests for 32 people in pools of 12 at 10% prevalence:

# In[2]:


print(analytic.dorfman_expected_tests(0.1, 12, 32))


# Tests per person as a function of pool size, at a few prevalences.
# The curve is flat near its minimum, so being off by one or two in pool
# size costs little.

# In[3]:


sizes = np.arange(2, 33)
for p in (0.01, 0.02, 0.05, 0.1):
    tpp = np.array([analytic.dorfman_tpp(p, n) for n in sizes])
    best = analytic.dorfman_optimal_size(p)
    print(f"p={p:<5} best n={best.best_size:>2}  tpp={best.best_tpp:.4f}  "
          f"n=best+/-2: {tpp[best.best_size - 4]:.4f} / {tpp[min(best.best_size, 30)]:.4f}")


# Above roughly 30% prevalence pooling stops paying off at any size.

# In[4]:


for p in (0.25, 0.30, 0.31, 0.35):
    r = analytic.dorfman_optimal_size(p)
    print(p, r.best_size, "pool" if r.pooling else "test individually")
