"""Train a linear Poisson model on labelled score histograms and decompose a mixed count.

Each class is a small mixture of histogram shapes; a contaminated histogram is
then explained as a non-negative sum of those shapes, with errors from both
the Poisson fluctuations of the data and the finite training sample.
"""
# %%
import numpy as np

from cratercount import lpm
from cratercount.scores import Axis, HistogramSpec, accumulate_scores
from cratercount.templates import APPEARANCE, DP

rng = np.random.default_rng(0)
spec = HistogramSpec((Axis(DP, APPEARANCE, 40, 0.0, 1.0),))

# %% Stand-in score distributions: craters score high, look-alikes lower and broader.
def craters(n):
    return np.clip(rng.normal(0.70, 0.08, n), 0, 0.999)[:, None]

def lookalikes(n):
    return np.clip(rng.beta(3, 5, n), 0, 0.999)[:, None]

true_h = [accumulate_scores(spec, craters(250)) for _ in range(8)]
false_h = [accumulate_scores(spec, lookalikes(250)) for _ in range(8)]
model = lpm.train(true_h, false_h, seed=0, spec=spec)
for cls in lpm.CLASSES:
    final = model.meta["chi2_trace"][cls][-1]
    print(f"{cls}: {final['components']} component(s), chi2/dof {final['chi2_per_dof']:.2f}")

# %% A test sample with 600 craters and 300 look-alikes.
test = accumulate_scores(spec, np.vstack([craters(600), lookalikes(300)]))
est = lpm.correct(model, test)
for cls in lpm.CLASSES:
    print(f"{cls}: {est.total(cls):7.1f} +/- {est.sigma(cls):5.1f}")
# %% Split the true-class variance into its data and training-sample parts.
m = (model.class_of_component == 0).astype(float)
print(f"true-class variance: data {m @ est.c_data @ m:.1f}, model {m @ est.c_model @ m:.1f}")
