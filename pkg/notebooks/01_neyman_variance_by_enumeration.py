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
# # Neyman variance by exhaustive enumeration
#
# With the potential outcomes of all n units held fixed, the only randomness
# is which n1 units are treated. For small n we can list every assignment,
# compute the difference in means for each, and compare its exact variance
# with `S1sq/n1 + S0sq/n0 - Stausq/n`.

# %%
from fractions import Fraction

import numpy as np

from designlab import Design, FinitePopulation, enumerate_moments, estimate, observe, summarize

# %% [markdown]
# Four units, effects 1 through 4, two treated.

# %%
pop = FinitePopulation([1, 2, 3, 4], [0, 0, 0, 0])
s = summarize(pop)
print("tau_S =", s.tau_S, " S1sq =", s.S1sq, " S0sq =", s.S0sq, " Stausq =", s.Stausq)

# %%
design = Design.complete(2)
rep = enumerate_moments(pop, design)
print("assignments:", rep.support_size)
print("Var(tau_hat | S) by enumeration:", rep.var_tau_hat)
print("formula:                        ", rep.neyman_formula_value)
print("f_S =", rep.f_S)

# %% [markdown]
# The usual estimator `s1sq/n1 + s0sq/n0` can't see `Stausq`. Its mean over
# the six assignments is larger than the true variance by exactly `Stausq/n`.

# %%
print("E(vhat) =", rep.mean_vhat_neyman, " Var =", rep.var_tau_hat,
      " gap =", rep.mean_vhat_neyman - rep.var_tau_hat, " Stausq/n =", s.Stausq / s.n)

# %% [markdown]
# One assignment at a time: the observed data and the report a practitioner sees.

# %%
r = estimate(observe(pop, [1, 1, 0, 0]))
print(r.to_record())

# %% [markdown]
# The identity holds for arbitrary rational outcomes, and every comparison
# uses exact `Fraction` arithmetic.

# %%
rng = np.random.default_rng(0)
for _ in range(5):
    n = int(rng.integers(5, 11))
    n1 = int(rng.integers(2, n - 1))
    pop = FinitePopulation([Fraction(int(k), 7) for k in rng.integers(-30, 30, n)],
                           [Fraction(int(k), 3) for k in rng.integers(-30, 30, n)])
    rep = enumerate_moments(pop, Design.complete(n1))
    print(f"n={n:2d} n1={n1}  Var={str(rep.var_tau_hat):>14}  f_S={rep.f_S}  checks={rep.ok}")
