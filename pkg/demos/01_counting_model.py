"""Why contaminated counts are noisier than Poisson.

Each region holds a Poisson number of true and false features; a counter
finds each with a per-region efficiency drawn from a Beta distribution.  The
spread of detected counts relative to sqrt(mean) shows the excess error.
"""
# %%
import numpy as np

from cratercount.counting_model import CountingModelParams, excess_error_ratio, simulate_arrays

# %% A perfect detector with no false features is a pure Poisson process.
pure = simulate_arrays(CountingModelParams(200, 0, alpha_t=1e6, beta_t=1), 50_000, seed=0)
print(f"pure Poisson: std/sqrt(mean) = {excess_error_ratio(pure['n_detected']):.3f}")

# %% Variable efficiencies inflate the scatter, and more so for larger counts.
for lam in (25, 100, 400, 1600):
    d = simulate_arrays(CountingModelParams(lam, lam / 4), 50_000, seed=1)
    print(f"lambda_true={lam:5d}  mean detected={d['n_detected'].mean():8.1f}  "
          f"std/sqrt(mean)={excess_error_ratio(d['n_detected']):6.2f}")

# %% A tighter efficiency distribution brings the ratio back towards 1.
for a in (2, 20, 200):
    d = simulate_arrays(CountingModelParams(400, 0, alpha_t=a, beta_t=a), 50_000, seed=2)
    print(f"Beta({a},{a}) efficiency: ratio {excess_error_ratio(d['n_detected']):.2f}")
