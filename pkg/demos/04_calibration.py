"""Scale corrected counts to a multi-counter reference.

Two independent counters mark the same area.  Craters found by one or both
give each counter's success probability, hence the uncertainty of the union
count.  The ratio of union to corrected count is a scale factor, overall or
per diameter band.
"""
# %%
import numpy as np

from cratercount.calibrate import (RepeatabilityData, apply_correction, band_scaling_factors,
                                   binomial_success_prob, conformity_report, ground_truth_variance,
                                   scaling_factor, synthetic_calibration_regions)

# %% 300 craters marked by one counter only, 700 by both.
P = binomial_success_prob(RepeatabilityData(300, 700))
u = 1000
print(f"per-counter success probability {P:.3f}; union count {u} +/- "
      f"{np.sqrt(ground_truth_variance(u, P)):.1f}")

# %% An automated count of 800 +/- 25 rescaled to the reference.
sf = scaling_factor(u, ground_truth_variance(u, P), 800, 625)
print(f"s = {sf.s:.3f} +/- {np.sqrt(sf.var_s):.3f}")
c, var_c = apply_correction(800, 625, sf)
print(f"calibrated count {c:.1f} +/- {np.sqrt(var_c):.1f}")

# %% Size-dependent misses: per-band factors fit better than one overall factor.
d = synthetic_calibration_regions(seed=3)
overall, per_band = band_scaling_factors(d["u"], d["var_u"], d["m"], d["var_m"])
print("per-band s:", [round(float(s.s), 3) for s in per_band], "overall:", round(float(overall.s), 3))
for k, v in conformity_report(d["u"], d["var_u"], d["m"], d["var_m"], overall, per_band).items():
    print(f"chi2/dof {k:12s} {v:6.2f}")
