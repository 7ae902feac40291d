#!/usr/bin/env python
# coding: utf-8

# # Binary splitting
#
# A positive pool is split in halves and each half is tested again, down to
# single samples. Testing the left half first lets us skip the right half
# whenever the left one is negative, at the price of extra rounds.

# In[1]:


import numpy as np

from poolplan import InfectionVector, run_binary_tree
from poolplan.simulator import SimulationConfig, simulate


# One block of 16 with two positives, with and without the left-first trick.

# In[2]:


v = InfectionVector.from_positions(16, [3, 11])
for optimize in (False, True):
    out = run_binary_tree(v, 16, optimize)
    print(f"optimize={optimize}: tests={out.tests} rounds={out.rounds}")


# Monte Carlo mean tests for 32 people, at a handful of pool sizes.

# In[3]:


for n in (2, 4, 8, 16, 32):
    row = []
    for p in (0.05, 0.1, 0.2, 0.35):
        s = simulate(SimulationConfig("tree", p, 32, 20_000, master_seed=1, pool_size=n))
        row.append(f"{s.mean_tests:6.2f}")
    print(f"n={n:>2}", *row)


# Same seed, same answer, regardless of how many workers run the trials.

# In[4]:


cfg = SimulationConfig("tree", 0.05, 32, 50_000, master_seed=7, pool_size=16)
print(simulate(cfg, workers=1) == simulate(cfg, workers=2))
