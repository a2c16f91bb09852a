"""Bootstrap validation of contamination estimates on labelled synthetic data.

Each trial trains an LPM on a bootstrap sample of labelled annotations and
fits test samples of ``ratio`` times the training quantity.  Samples are
built from random rectangular regions drawn with replacement.  Rectangles
wrap around the raster edges, so every annotation is equally likely to be
covered and the expected class composition of a sample equals that of the
pool.

Test sample sizes are Poisson distributed around ``ratio * train_quantity``
and each sample is trimmed to exactly that size, which makes the class
totals Poisson with known means ``ratio * train_quantity * pool_fraction``.
Those means are the ground truth the estimates are compared against.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from . import lpm
from .counting_model import CountingModelParams
from .scores import (DEFAULT_BINS_1D, DEFAULT_BINS_2D, REPRESENTATIONS_1D, REPRESENTATIONS_2D,
                     HistogramSpec, make_axis, parse_axis_key, representation_axes)
from .synth import SceneGeometry, random_scene, render_scene
from .templates import (DEFAULT_SCHEDULE, MIN_DIAMETER, build_appearance_template,
                        build_derivative_template, extract_patch, match_all)

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class ValidationConfig:
    trials: int = 1000
    ratios: tuple = DEFAULT_RATIOS
    region_w: int = 120
    region_h: int = 120
    contamination_fraction: float = 0.25
    seed: int = 0
    representations: tuple = REPRESENTATIONS_1D + REPRESENTATIONS_2D
    train_quantity: int = 2000
    train_histograms: int = 8
    lattice_step: int = 20
    # synthetic pool
    scene_width: int = 2400
    scene_height: int = 2400
    n_features: int = 2000
    d_min: float = 20.0
    d_max: float = 40.0
    noise_sigma: float = 4.0
    terrain_sigma: float = 8.0
    contrast_spread: float = 0.1
    max_degradation: float = 0.2
    template_examples: int = 300
    # model
    bins_1d: int = DEFAULT_BINS_1D
    bins_2d: int = DEFAULT_BINS_2D
    chi2_target: float = lpm.DEFAULT_CHI2_TARGET
    max_components: int = lpm.DEFAULT_MAX_COMPONENTS
    restarts: int = lpm.DEFAULT_RESTARTS

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        self.representations = tuple(self.representations)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if any(r <= 0 for r in self.ratios):
            raise ValueError("data ratios must be positive")
        if not 0 <= self.contamination_fraction < 1:
            raise ValueError("contamination_fraction must lie in [0, 1)")
        if self.region_w <= 0 or self.region_h <= 0:
            raise ValueError("bootstrap regions must have positive area")
        for rep in self.representations:
            representation_axes(rep)


def _members(xy, x0, y0, w, h, width, height):
    dx = (xy[:, 0] - x0) % width
    dy = (xy[:, 1] - y0) % height
    return np.flatnonzero((dx < w) & (dy < h))


def bootstrap_regions(xy, width, height, region_w, region_h, target, rng=None, max_draws=10_000_000):
    """Draw rectangles with replacement until they hold ``target`` annotations.

    Rectangle corners are uniform over the raster and rectangles wrap around
    its edges.  Returns the list of per-rectangle index arrays into ``xy``;
    their total length is at least ``target``.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if region_w <= 0 or region_h <= 0:
        raise ValueError("bootstrap regions must have positive area")
    if len(xy) == 0:
        raise ValueError("no annotations to sample")
    rng = np.random.default_rng(rng)
    w, h = min(region_w, width), min(region_h, height)
    out, got = [], 0
    for _ in range(max_draws):
        if got >= target and out:
            return out
        idx = _members(xy, rng.uniform(0, width), rng.uniform(0, height), w, h, width, height)
        out.append(idx)
        got += len(idx)
    raise ValueError("target quantity not reached; regions are too small or empty")


class LatticeSampler:
    """Fast bootstrap sampler over rectangles anchored on a regular lattice.

    With the lattice step dividing the rectangle size and the raster size,
    every annotation is covered by the same number of lattice rectangles.
    """

    def __init__(self, xy, width, height, region_w, region_h, step):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if len(xy) == 0:
            raise ValueError("no annotations to sample")
        self.n = len(xy)
        xs = np.arange(0, width, step)
        ys = np.arange(0, height, step)
        rows, cols = [], []
        for j, y0 in enumerate(ys):
            for i, x0 in enumerate(xs):
                m = _members(xy, x0, y0, region_w, region_h, width, height)
                rows.append(np.full(len(m), j * len(xs) + i))
                cols.append(m)
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        self.n_pos = len(xs) * len(ys)
        self.M = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_pos, self.n))
        self.sizes = np.asarray(self.M.sum(axis=1)).ravel().astype(np.int64)
        self.coverage = np.asarray(self.M.sum(axis=0)).ravel()
        if self.sizes.sum() == 0:
            raise ValueError("no lattice rectangle contains an annotation")
        self.mean_size = self.sizes.mean()

    def multiplicities(self, n, rng) -> np.ndarray:
        """How often each annotation appears in a sample of exactly ``n`` entries."""
        mult = np.zeros(self.n)
        if n <= 0:
            return mult
        pos = []
        need = n
        while True:
            batch = rng.integers(self.n_pos, size=int(need / self.mean_size * 1.2) + 4)
            cum = np.cumsum(self.sizes[batch])
            j = int(np.searchsorted(cum, need))
            if j < len(batch):
                pos.append(batch[:j])
                prev = cum[j - 1] if j > 0 else 0
                last, r = batch[j], need - prev
                break
            pos.append(batch)
            need -= cum[-1]
        counts = np.bincount(np.concatenate(pos), minlength=self.n_pos).astype(float)
        mult += self.M.T @ counts
        members = self.M.indices[self.M.indptr[last]:self.M.indptr[last + 1]]
        mult[rng.choice(members, size=int(r), replace=False)] += 1
        return mult


@dataclass
class Pool:
    xy: np.ndarray
    labels: np.ndarray        # bool, True for genuine craters
    diameters: np.ndarray
    scores: dict              # axis key -> score per annotation
    width: int
    height: int

    @property
    def true_fraction(self) -> float:
        return float(self.labels.mean())


def build_pool(config: ValidationConfig, max_attempts: int = 50) -> Pool:
    """Render a labelled synthetic scene and score every annotation on all four axes.

    The scene is regenerated until its contamination is within 2 percentage
    points of the target.
    """
    lam_f = config.n_features * config.contamination_fraction
    lam_t = config.n_features - lam_f
    geom = SceneGeometry(config.scene_width, config.scene_height, config.d_min, config.d_max)
    for attempt in range(max_attempts):
        s_scene, s_render, s_tmpl = np.random.SeedSequence([config.seed, 0, attempt]).spawn(3)
        spec = random_scene(CountingModelParams(lam_t, lam_f), geom, s_scene,
                            noise_sigma=config.noise_sigma, terrain_sigma=config.terrain_sigma,
                            contrast_spread=config.contrast_spread,
                            max_degradation=config.max_degradation)
        n = len(spec.crater_list)
        frac = sum(f.cls == "false" for f in spec.crater_list) / max(n, 1)
        if n and abs(frac - config.contamination_fraction) <= 0.02:
            break
    else:
        raise RuntimeError("could not generate a pool with the requested contamination")
    raster, anns = render_scene(spec, s_render)
    anns = [a for a in anns if a.diameter_px >= min(MIN_DIAMETER, config.d_min)]
    rng = np.random.default_rng(s_tmpl)
    true_anns = [a for a in anns if a.label == "true"]
    pick = rng.choice(len(true_anns), size=min(config.template_examples, len(true_anns)), replace=False)
    patches = [extract_patch(raster, true_anns[i]) for i in sorted(pick)]
    templates = {"appearance": build_appearance_template(patches),
                 "derivative": build_derivative_template(patches)}
    results = match_all(raster, anns, templates, schedule=DEFAULT_SCHEDULE)
    index = {a.id: i for i, a in enumerate(anns)}
    scores = {}
    for r in results:
        key = f"{'grey' if r.template_kind == 'appearance' else 'grad'}_{r.measure}"
        scores.setdefault(key, np.empty(len(anns)))[index[r.annotation_id]] = r.best_score
    return Pool(np.array([[a.x, a.y] for a in anns]), np.array([a.label == "true" for a in anns]),
                np.array([a.diameter_px for a in anns]), scores,
                config.scene_width, config.scene_height)


def representation_spec(pool: Pool, rep: str, config: ValidationConfig) -> HistogramSpec:
    axes = representation_axes(rep)
    bins = config.bins_1d if len(axes) == 1 else config.bins_2d
    return HistogramSpec(tuple(make_axis(*parse_axis_key(a), pool.scores[a], bins) for a in axes))


@dataclass
class TrialRecord:
    rep: str
    ratio: float
    trial: int
    ok: bool
    est_true: float = math.nan
    sigma_true: float = math.nan
    truth_true: float = math.nan
    est_false: float = math.nan
    sigma_false: float = math.nan
    truth_false: float = math.nan
    n_components: int = 0
    error: str = ""


@dataclass
class ValidationReport:
    config: ValidationConfig
    records: list
    summary: list = field(default_factory=list)
    runtime_s: float = 0.0

    def row(self, rep, ratio) -> dict:
        for r in self.summary:
            if r["representation"] == rep and r["ratio"] == float(ratio):
                return r
        raise KeyError((rep, ratio))


SUMMARY_FIELDS = ["representation", "ratio", "trials", "failed", "pull_mean", "pull_std",
                  "pull_std_false", "predicted_pct_error", "empirical_pct_error",
                  "poisson_multiple", "mean_components"]


def summarise(records, reps, ratios) -> list:
    out = []
    for rep in reps:
        for ratio in ratios:
            rs = [r for r in records if r.rep == rep and r.ratio == ratio]
            ok = [r for r in rs if r.ok]
            row = {"representation": rep, "ratio": float(ratio), "trials": len(rs),
                   "failed": len(rs) - len(ok)}
            if ok:
                est = np.array([r.est_true for r in ok])
                sig = np.array([r.sigma_true for r in ok])
                tru = np.array([r.truth_true for r in ok])
                estf = np.array([r.est_false for r in ok])
                sigf = np.array([r.sigma_false for r in ok])
                truf = np.array([r.truth_false for r in ok])
                good = sig > 0
                goodf = sigf > 0
                pull = (est[good] - tru[good]) / sig[good]
                pullf = (estf[goodf] - truf[goodf]) / sigf[goodf]
                row.update({
                    "pull_mean": float(pull.mean()) if pull.size else math.nan,
                    "pull_std": float(pull.std(ddof=1)) if pull.size > 1 else math.nan,
                    "pull_std_false": float(pullf.std(ddof=1)) if pullf.size > 1 else math.nan,
                    "predicted_pct_error": float(np.median(100 * sig / tru)),
                    "empirical_pct_error": float(100 * np.std(est - tru, ddof=1) / tru.mean())
                    if len(ok) > 1 else math.nan,
                    "poisson_multiple": float(np.median(sig / np.sqrt(tru))),
                    "mean_components": float(np.mean([r.n_components for r in ok])),
                })
            out.append(row)
    return out


def run_trial(t, trial_seed, pool, sampler, specs, bin_index, config) -> list:
    rng_sample, rng_train = (np.random.default_rng(s) for s in trial_seed.spawn(2))
    per = config.train_quantity / config.train_histograms
    train_mult = [sampler.multiplicities(int(round(per)), rng_sample)
                  for _ in range(config.train_histograms)]
    mu = {r: config.train_quantity * r for r in config.ratios}
    test_mult = {r: sampler.multiplicities(int(rng_sample.poisson(mu[r])), rng_sample)
                 for r in config.ratios}
    ftrue = float(np.sum(pool.labels * sampler.coverage) / np.sum(sampler.coverage))
    lab = pool.labels.astype(float)
    out = []
    for rep in config.representations:
        spec, bi = specs[rep], bin_index[rep]
        ok = bi >= 0
        nb = spec.n_bins

        def hist(weights):
            return np.bincount(bi[ok], weights=weights[ok], minlength=nb)

        th = [hist(m * lab) for m in train_mult]
        fh = [hist(m * (1 - lab)) for m in train_mult]
        try:
            model = lpm.train(th, fh, config.chi2_target, config.max_components, config.restarts,
                              seed=int(rng_train.integers(2 ** 31)), spec=spec)
        except Exception as exc:  # noqa: BLE001 - failures are counted, not dropped
            out += [TrialRecord(rep, r, t, False, error=f"train: {exc}") for r in config.ratios]
            continue
        ncomp = sum(model.component_count.values())
        for r in config.ratios:
            H = hist(test_mult[r])
            try:
                est = lpm.correct(model, H)
            except Exception as exc:  # noqa: BLE001
                out.append(TrialRecord(rep, r, t, False, error=f"fit: {exc}"))
                continue
            out.append(TrialRecord(rep, r, t, True, est.total("true"), est.sigma("true"),
                                   mu[r] * ftrue, est.total("false"), est.sigma("false"),
                                   mu[r] * (1 - ftrue), ncomp))
    return out


def run_validation(config: ValidationConfig, pool: Pool | None = None, progress=None) -> ValidationReport:
    t0 = time.time()
    if pool is None:
        pool = build_pool(config)
    sampler = LatticeSampler(pool.xy, pool.width, pool.height, config.region_w, config.region_h,
                             config.lattice_step)
    specs = {rep: representation_spec(pool, rep, config) for rep in config.representations}
    bin_index = {rep: specs[rep].bin_index(np.column_stack([pool.scores[a] for a in
                                                            representation_axes(rep)]))
                 for rep in config.representations}
    seeds = np.random.SeedSequence([config.seed, 1]).spawn(config.trials)
    records = []
    for t, s in enumerate(seeds):
        records += run_trial(t, s, pool, sampler, specs, bin_index, config)
        if progress:
            progress(t)
    report = ValidationReport(config, records)
    report.summary = summarise(records, config.representations, config.ratios)
    report.runtime_s = time.time() - t0
    return report


def config_dict(config: ValidationConfig) -> dict:
    return asdict(config)
