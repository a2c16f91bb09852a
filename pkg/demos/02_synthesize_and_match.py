"""Render a synthetic scene, build templates from labelled craters and score every feature.

True craters and look-alikes separate in score space; the dot-product
measure is insensitive to overall contrast, mean squared error is not.
"""
# %%
import numpy as np

from cratercount.counting_model import CountingModelParams
from cratercount.synth import SceneGeometry, random_scene, render_scene
from cratercount.templates import (APPEARANCE, DERIVATIVE, build_template, extract_patch,
                                   match_all)

# %% A 900x900 scene with ~150 craters and ~50 false features.
spec = random_scene(CountingModelParams(150, 50), SceneGeometry(900, 900), seed=4,
                    terrain_sigma=8, contrast_spread=0.1, max_degradation=0.2)
raster, anns = render_scene(spec, seed=4)
print(f"raster {raster.shape}, {sum(a.label == 'true' for a in anns)} true / "
      f"{sum(a.label == 'false' for a in anns)} false features")

# %% Templates are averages of rescaled patches around the true craters.
patches = [extract_patch(raster, a) for a in anns if a.label == "true"]
templates = {k: build_template(k, patches) for k in (APPEARANCE, DERIVATIVE)}
for k, t in templates.items():
    print(f"{k} template {t.values.shape} from {t.n_examples} examples")

# %% Best score over the smoothing schedule, per feature, template and measure.
results = match_all(raster, anns, templates)
for kind in (APPEARANCE, DERIVATIVE):
    for measure in ("mse", "dp"):
        sel = [r for r in results if r.template_kind == kind and r.measure == measure]
        t = np.array([r.best_score for r in sel if r.label == "true"])
        f = np.array([r.best_score for r in sel if r.label == "false"])
        sep = abs(t.mean() - f.mean()) / np.sqrt(0.5 * (t.var() + f.var()))
        print(f"{kind:10s} {measure:3s}: true {t.mean():9.3f}  false {f.mean():9.3f}  "
              f"separation {sep:.2f} sd")
