"""Bootstrap validation of the corrected counts on a synthetic pool.

Training and test subsets are drawn from rectangles of one scored pool.  The
pull (estimate - truth) / sigma should have unit spread, and the predicted
error should shrink as the training set grows relative to the test set.
This small version runs in well under a minute; the acceptance test runs
the full 1,000-trial configuration.
"""
# %%
from cratercount.validate import ValidationConfig, run_validation

cfg = ValidationConfig(trials=40, ratios=(0.1, 1.0, 10.0), representations=("grey_dp", "grad_dp"),
                       scene_width=1200, scene_height=1200, n_features=600, train_quantity=600)
report = run_validation(cfg, progress=None)

# %%
print(f"{'representation':16s} {'ratio':>6s} {'pull mean':>10s} {'pull std':>9s} {'pred. err %':>12s}")
for row in report.summary:
    print(f"{row['representation']:16s} {row['ratio']:6g} {row['pull_mean']:10.2f} "
          f"{row['pull_std']:9.2f} {row['predicted_pct_error']:12.2f}")
