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
# # Randomization test of the sharp null
#
# Under Y(1) = Y(0) for every unit, the observed outcomes are the full
# schedule. The test statistic can be recomputed for every assignment, and
# the p-value is the share of assignments at least as extreme as the one
# observed.

# %%
import numpy as np

from designlab import FinitePopulation, frt_exact, frt_monte_carlo, observe
from designlab.oracle import frt_rejection_rate

# %%
data = observe(FinitePopulation([1, 2, 3, 4], [0, 0, 0, 0]), [1, 1, 0, 0])
res = frt_exact(data)
print("exact p =", res.p_value, "over", res.count, "assignments")

# %% [markdown]
# When the support is too large we sample assignments instead. The sampled
# p-value lands within a few standard errors of the exact one.

# %%
mc = frt_monte_carlo(data, np.random.default_rng(1), draws=100_000)
print(f"Monte Carlo p = {mc.p_value:.4f} +- {mc.se:.4f}")

# %% [markdown]
# Validity: if every assignment is treated in turn as the realised one, the
# test rejects at level alpha for at most an alpha share of them.

# %%
y = [0.3, 1.7, 2.2, 4.1, 5.0, 6.6, 7.2, 9.9, 10.4, 12.0]
null = observe(FinitePopulation(y, y), [1, 0, 1, 0, 1, 0, 0, 1, 0, 0])
for alpha in (0.01, 0.05, 0.1):
    print(alpha, frt_rejection_rate(null, alpha))
