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
# # Stratified, paired and cluster designs
#
# Each block is randomised on its own, and the estimator weights block
# contrasts by n_h/n. The true variance is the weighted sum of per-block
# Neyman terms. Enumeration over the product support checks it exactly.

# %%
from fractions import Fraction

from designlab import Design, FinitePopulation, enumerate_moments, variance_by_design
from designlab.estimator import conservative_gap

# %%
strata = ["a", "a", "a", "b", "b", "b", "b", "b"]
pop = FinitePopulation([3, 5, 4, 10, 12, 9, 14, 11], [1, 2, 2, 6, 9, 8, 7, 9], strata=strata)
design = Design.stratified({"a": 1, "b": 2})
rep = enumerate_moments(pop, design)
print("support:", rep.support_size, "= C(3,1) x C(5,2)")
print("enumerated:", rep.var_tau_hat, " formula:", variance_by_design(pop, design))
print("complete randomisation, same n1:", variance_by_design(FinitePopulation(pop.y1, pop.y0), Design.complete(3)))

# %% [markdown]
# Matched pairs use the pair-difference variance estimator. Its expected
# excess is the spread of the pair-level effects.

# %%
pairs = FinitePopulation([5, 6, 2, 4, 9, 9], [3, 5, 1, 1, 6, 8], strata=["p", "p", "q", "q", "r", "r"])
rep = enumerate_moments(pairs, Design.matched_pairs())
print("Var:", rep.var_tau_hat, " E(vhat) - Var:", rep.mean_vhat_neyman - rep.var_tau_hat,
      " expected:", conservative_gap(pairs, Design.matched_pairs()))

# %% [markdown]
# Clusters are randomised whole, and the estimand is the mean of
# cluster-level effects. When clusters differ in size, that is not the
# unit-level `tau_S`.

# %%
cl = FinitePopulation([4, 4, 4, 1, 7, 7], [0, 0, 0, 0, 5, 5], clusters=list("xxxyzz"))
rep = enumerate_moments(cl, Design.cluster(1))
print("cluster-mean estimand:", rep.estimand, " unit-level tau_S:", Fraction(sum(cl.effects), 6))

# %% [markdown]
# With singleton clusters, or one stratum covering everyone, we are back to
# complete randomisation.

# %%
y1, y0 = [Fraction(k, 3) for k in (1, 5, 2, 8, 3)], [0, 1, 0, 2, 1]
base = variance_by_design(FinitePopulation(y1, y0), Design.complete(2))
print(base == variance_by_design(FinitePopulation(y1, y0, clusters=list("abcde")), Design.cluster(2)),
      base == variance_by_design(FinitePopulation(y1, y0, strata=["s"] * 5), Design.stratified({"s": 2})))
