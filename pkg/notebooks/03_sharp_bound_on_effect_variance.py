# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # How small can the effect variance be?
#
# The data identify the two marginals but not how they are paired. Among
# all pairings, sorting both marginals and pairing them in order minimises
# the variance of the differences (rearrangement inequality). That gives
# the sharpest lower bound on `Stausq` the data allow.

# %%
from itertools import permutations

import numpy as np

from designlab import FinitePopulation, sharp_Stau2_lower_bound, summarize
from designlab.estimator import coupling_variance_bound

# %%
y1 = [7, 3, 9, 4, 6]
y0 = [2, 8, 1, 5, 5]
bound = sharp_Stau2_lower_bound(y1, y0)
brute = min(summarize(FinitePopulation(y1, list(p))).Stausq for p in permutations(y0))
print("sorted pairing:", bound, " minimum over 5! pairings:", brute)

# %% [markdown]
# Any actual joint law with these marginals has `Stausq` at least as large.

# %%
rng = np.random.default_rng(3)
draws = [summarize(FinitePopulation(y1, list(rng.permutation(y0)))).Stausq for _ in range(10)]
print(min(draws) >= bound, [str(d) for d in draws[:5]])

# %% [markdown]
# In an experiment the arms usually differ in size. The plug-in bound then
# couples the two empirical quantile functions and subtracts the result
# from the Neyman estimate (`vhat_sharp`).

# %%
print(coupling_variance_bound([1, 2], [0, 0, 1, 1]), coupling_variance_bound([0, 5, 2], [1, 1]))
