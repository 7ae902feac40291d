#!/usr/bin/env python
# coding: utf-8

# # Double pooling
#
# Every sample goes into two pools drawn from two different partitions,
# all tested at once. Only samples whose two pools are both positive get an
# individual test, so results come back in two rounds.

# In[1]:


from poolplan import analytic
from poolplan.simulator import SimulationConfig, replicate_double_table, simulate, truncate2


# Closed-form optimum per prevalence, truncated to two decimals.

# In[2]:


rep = replicate_double_table()
for p, s, v in zip(rep.col_labels, rep.best_sizes[0], rep.values[0]):
    print(f"p={p}: s={s} tpp={v:.4f} -> {truncate2(v)}")


# The simulation draws a fresh second partition every trial. With enough
# first-partition pools no two members of one pool share a second pool, and
# the closed form is exact.

# In[3]:


s = 13
cfg = SimulationConfig("double", 0.03, s * (s + 2), 50_000, master_seed=3, pool_size=s)
sim = simulate(cfg)
print(sim.mean_tpp, analytic.double_pooling_tpp(0.03, s), sim.stderr_tests / cfg.m)
