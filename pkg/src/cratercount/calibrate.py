"""False-negative calibration: scaling factors against a reference count.

A reference ("ground truth") count ``u`` and a contamination-corrected count
``m0`` from the same region give a factor ``s = u / m0`` that is applied to
corrected counts elsewhere.  Variances propagate to first order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RepeatabilityData:
    n_single: int
    n_double: int

    def __post_init__(self):
        if self.n_single < 0 or self.n_double < 0:
            raise ValueError("repeatability counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_single + self.n_double


@dataclass(frozen=True)
class ScalingFactor:
    band: tuple | str
    s: float
    var_s: float

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError("scale factor must be positive")
        if self.var_s < 0:
            raise ValueError("scale variance must be non-negative")

    def to_json(self) -> dict:
        band = self.band if isinstance(self.band, str) else list(self.band)
        return {"band": band, "s": self.s, "var_s": self.var_s}


@dataclass
class SfdBin:
    band: tuple
    count: float
    variance: float


@dataclass
class Sfd:
    bins: list
    cumulative: bool = False
    underflow: int = 0
    overflow: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def counts(self) -> np.ndarray:
        return np.array([b.count for b in self.bins])

    @property
    def variances(self) -> np.ndarray:
        return np.array([b.variance for b in self.bins])


def binomial_success_prob(rep: RepeatabilityData) -> float:
    """Per-counter detection probability from single versus double mark-ups.

    A crater enters the union if at least one of two independent counters
    finds it, so ``n_double / total = P**2 / (1 - (1 - P)**2)``, giving
    ``P = 2 n_double / (n_single + 2 n_double)``.
    """
    if rep.total == 0:
        raise ValueError("no craters in repeatability data")
    if rep.n_double == 0:
        warnings.warn("no crater was marked by both counters; success probability is at the 0 boundary",
                      stacklevel=2)
        return 0.0
    return 2.0 * rep.n_double / (rep.n_single + 2.0 * rep.n_double)


def ground_truth_variance(u: float, P: float) -> float:
    if u < 0 or not 0.0 <= P <= 1.0:
        raise ValueError("need u >= 0 and 0 <= P <= 1")
    return u * (P - P * P)


def scaling_factor(u: float, var_u: float, m0: float, var_m0: float, band="overall") -> ScalingFactor:
    if not m0 > 0:
        raise ValueError(f"band {band}: corrected count m0={m0} cannot be calibrated")
    s = u / m0
    var_s = var_u / m0 ** 2 + u ** 2 / m0 ** 4 * var_m0
    return ScalingFactor(band, s, var_s)


def apply_correction(m: float, var_m: float, sf: ScalingFactor) -> tuple[float, float]:
    if m < 0:
        raise ValueError("count must be non-negative")
    return m * sf.s, sf.s ** 2 * var_m + m ** 2 * sf.var_s


def chi2_per_dof(corrected, truth, d: int) -> float:
    """``(1/d) sum (c - u)**2 / (var_c + var_u)`` over aligned ``(value, variance)`` pairs."""
    if len(corrected) == 0 or len(corrected) != len(truth):
        raise ValueError("corrected and truth lists must be non-empty and aligned")
    if d < 1:
        raise ValueError("degrees of freedom must be >= 1")
    c = np.asarray(corrected, dtype=float)
    u = np.asarray(truth, dtype=float)
    var = c[:, 1] + u[:, 1]
    if np.any(var <= 0):
        raise ValueError("zero combined variance in a chi-square term")
    return float(np.sum((c[:, 0] - u[:, 0]) ** 2 / var) / d)


def geometric_band_edges(d_min: float, d_max: float, n_bands: int = 4) -> np.ndarray:
    if not 0 < d_min < d_max or n_bands < 1:
        raise ValueError("need 0 < d_min < d_max and n_bands >= 1")
    return np.geomspace(d_min, d_max, n_bands + 1)


def band_index(diameters, edges) -> np.ndarray:
    """Band per diameter using ``[lo, hi)`` bands with a closed last band; -1 below, n above."""
    edges = np.asarray(edges, dtype=float)
    d = np.asarray(diameters, dtype=float)
    idx = np.searchsorted(edges, d, side="right") - 1
    idx[d == edges[-1]] = len(edges) - 2
    idx[d < edges[0]] = -1
    idx[d > edges[-1]] = len(edges) - 1
    return idx


def assemble_sfd(diameters, edges, weights=None, variances=None, cumulative: bool = False) -> Sfd:
    """Differential (default) or cumulative size-frequency distribution.

    Each entry contributes ``weights[i]`` (default 1) to its band and
    ``variances[i]`` (default equal to the weight) to that band's variance.
    Cumulative bins suffix-sum both counts and variances; neighbouring bins
    are then correlated, which is recorded in ``meta``.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("band edges must be strictly increasing")
    d = np.asarray(diameters, dtype=float)
    w = np.ones_like(d) if weights is None else np.asarray(weights, dtype=float)
    v = w.copy() if variances is None else np.asarray(variances, dtype=float)
    nb = len(edges) - 1
    idx = band_index(d, edges)
    inside = (idx >= 0) & (idx < nb)
    counts = np.bincount(idx[inside], weights=w[inside], minlength=nb)
    var = np.bincount(idx[inside], weights=v[inside], minlength=nb)
    meta = {}
    if cumulative:
        counts = np.cumsum(counts[::-1])[::-1]
        var = np.cumsum(var[::-1])[::-1]
        meta["correlated_errors"] = True
    bins = [SfdBin((float(edges[i]), float(edges[i + 1])), float(counts[i]), float(var[i]))
            for i in range(nb)]
    return Sfd(bins, cumulative, int((idx < 0).sum()), int((idx >= nb).sum()), meta)


def band_scaling_factors(u, var_u, m0, var_m0, edges=None):
    """Overall and per-band factors pooled over calibration regions.

    ``u, var_u, m0, var_m0`` are ``(n_regions, n_bands)`` arrays.  Bands with
    no corrected count are reported as ``None`` (uncalibratable).
    """
    u, var_u, m0, var_m0 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (u, var_u, m0, var_m0))
    overall = scaling_factor(u.sum(), var_u.sum(), m0.sum(), var_m0.sum(), "overall")
    per_band = []
    for b in range(u.shape[1]):
        band = b if edges is None else (float(edges[b]), float(edges[b + 1]))
        if m0[:, b].sum() <= 0:
            per_band.append(None)
            continue
        per_band.append(scaling_factor(u[:, b].sum(), var_u[:, b].sum(),
                                       m0[:, b].sum(), var_m0[:, b].sum(), band))
    return overall, per_band


def conformity_report(u, var_u, m, var_m, overall: ScalingFactor, per_band) -> dict:
    """Chi-square per dof of uncorrected, overall-scaled and band-scaled counts against truth.

    Degrees of freedom are the number of compared bins minus the number of
    fitted scaling factors.
    """
    u, var_u, m, var_m = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (u, var_u, m, var_m))
    truth = np.stack([u.ravel(), var_u.ravel()], axis=1)
    n = truth.shape[0]
    raw = np.stack([m.ravel(), var_m.ravel()], axis=1)
    ov = np.array([apply_correction(a, b, overall) for a, b in raw])
    pb = np.empty_like(raw)
    fitted = 0
    for j in range(m.shape[1]):
        sf = per_band[j] or overall
        fitted += per_band[j] is not None
        for i in range(m.shape[0]):
            pb[i * m.shape[1] + j] = apply_correction(m[i, j], var_m[i, j], sf)
    return {
        "uncorrected": chi2_per_dof(raw, truth, n),
        "overall": chi2_per_dof(ov, truth, max(n - 1, 1)),
        "per_band": chi2_per_dof(pb, truth, max(n - fitted, 1)),
    }


def synthetic_calibration_regions(n_regions: int = 8, n_bands: int = 4, seed=None,
                                  mean_true=(120.0, 70.0, 40.0, 20.0),
                                  band_efficiency=(0.35, 0.55, 0.7, 0.8),
                                  efficiency_spread: float = 0.08,
                                  reference_efficiency: float = 0.85,
                                  lpm_error_factor: float = 1.3) -> dict:
    """Analogue of a multi-region calibration experiment with size-dependent misses.

    Each region/band has a Poisson number of true craters.  The reference
    count is a Binomial thinning at ``reference_efficiency`` with the Binomial
    variance; the contamination-corrected count is a thinning at a band
    efficiency jittered per region, with variance ``(factor**2) * m``.
    """
    rng = np.random.default_rng(seed)
    mt = np.asarray(mean_true, dtype=float)[:n_bands]
    eff = np.asarray(band_efficiency, dtype=float)[:n_bands]
    n_true = rng.poisson(mt, size=(n_regions, n_bands))
    u = rng.binomial(n_true, reference_efficiency).astype(float)
    var_u = u * (reference_efficiency - reference_efficiency ** 2)
    p = np.clip(eff + rng.normal(0, efficiency_spread, size=(n_regions, n_bands)), 0.02, 0.98)
    m = rng.binomial(n_true, p).astype(float)
    var_m = np.maximum(lpm_error_factor ** 2 * m, 1.0)
    return {"u": u, "var_u": var_u, "m": m, "var_m": var_m}
