"""Crater counting model N_D = N_T P_T + N_F P_F and a Monte Carlo simulator.

True and false feature counts are Poisson; the detection efficiencies P_T and
P_F are Beta distributed per region.  The detected count is assembled by
Binomial thinning of the two Poisson draws.

Poisson variates come from ``numpy.random.Generator.poisson``, which uses
inversion for small rates and the PTRS transformed-rejection sampler for
large ones.  Only per-seed determinism is relied on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln


@dataclass(frozen=True)
class CountingModelParams:
    lambda_true: float
    lambda_false: float
    alpha_t: float = 2.0
    beta_t: float = 2.0
    alpha_f: float = 2.0
    beta_f: float = 2.0

    def __post_init__(self):
        # zero rates are allowed: they describe an empty process
        for name in ("lambda_true", "lambda_false"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite non-negative rate, got {v!r}")
        for name in ("alpha_t", "beta_t", "alpha_f", "beta_f"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive shape parameter, got {v!r}")

    @property
    def expected_detected(self) -> float:
        return (self.lambda_true * self.alpha_t / (self.alpha_t + self.beta_t)
                + self.lambda_false * self.alpha_f / (self.alpha_f + self.beta_f))


@dataclass(frozen=True)
class RegionDraw:
    n_true: int
    n_false: int
    p_true: float
    p_false: float
    n_detected: int


def beta_pdf(p, alpha: float, beta: float):
    """Beta(p; alpha, beta) density.  Accepts scalars or arrays on (0, 1)."""
    if not (alpha > 0 and beta > 0):
        raise ValueError("Beta shape parameters must be positive")
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0) | (p_arr >= 1)) or not np.all(np.isfinite(p_arr)):
        raise ValueError("beta_pdf is defined on the open interval (0, 1)")
    logd = ((alpha - 1.0) * np.log(p_arr) + (beta - 1.0) * np.log1p(-p_arr)
            - betaln(alpha, beta))
    out = np.exp(logd)
    return float(out) if out.ndim == 0 else out


def simulate_arrays(params: CountingModelParams, n_regions: int, seed=None):
    """Vectorised simulator.  Returns a dict of equal-length arrays."""
    if n_regions < 1:
        raise ValueError("n_regions must be >= 1")
    rng = np.random.default_rng(seed)
    n_true = rng.poisson(params.lambda_true, size=n_regions)
    n_false = rng.poisson(params.lambda_false, size=n_regions)
    p_true = rng.beta(params.alpha_t, params.beta_t, size=n_regions)
    p_false = rng.beta(params.alpha_f, params.beta_f, size=n_regions)
    detected = rng.binomial(n_true, p_true) + rng.binomial(n_false, p_false)
    return {
        "n_true": n_true,
        "n_false": n_false,
        "p_true": p_true,
        "p_false": p_false,
        "n_detected": detected,
    }


def simulate_regions(params: CountingModelParams, n_regions: int, seed=None) -> list[RegionDraw]:
    arrs = simulate_arrays(params, n_regions, seed)
    return [
        RegionDraw(int(nt), int(nf), float(pt), float(pf), int(nd))
        for nt, nf, pt, pf, nd in zip(arrs["n_true"], arrs["n_false"], arrs["p_true"],
                                      arrs["p_false"], arrs["n_detected"])
    ]


def excess_error_ratio(draws) -> float:
    """Sample std of the detected counts over sqrt of their sample mean.

    ``draws`` is a list of :class:`RegionDraw` or an array of detected counts.
    A Poisson process gives 1; efficiency variability pushes it above 1.
    """
    if len(draws) and isinstance(draws[0], RegionDraw):
        counts = np.array([d.n_detected for d in draws], dtype=float)
    else:
        counts = np.asarray(draws, dtype=float)
    if counts.size < 2:
        raise ValueError("need at least two draws")
    mean = counts.mean()
    if mean <= 0:
        raise ValueError("mean detected count is zero; dispersion ratio undefined")
    return float(counts.std(ddof=1) / math.sqrt(mean))
