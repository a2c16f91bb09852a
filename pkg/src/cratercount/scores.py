"""1-D and 2-D histograms of best match scores.

Bins are half-open ``[lo, hi)`` except the last bin on each axis, which is
closed.  Entries outside the range are tallied in ``overflow_count``.
2-D counts are flattened row-major with the first axis slowest.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .templates import APPEARANCE, DERIVATIVE, DP, MSE

DEFAULT_BINS_1D = 64
DEFAULT_BINS_2D = 32
DEFAULT_MARGIN = 0.05
OVERFLOW_WARN_FRACTION = 0.01

_KIND_SHORT = {APPEARANCE: "grey", DERIVATIVE: "grad"}
_SHORT_KIND = {v: k for k, v in _KIND_SHORT.items()}

# the four 1-D representations and the six pairings of them
REPRESENTATIONS_1D = ("grey_mse", "grad_mse", "grey_dp", "grad_dp")
REPRESENTATIONS_2D = tuple(f"{a}+{b}" for a, b in itertools.combinations(REPRESENTATIONS_1D, 2))


def axis_key(template_kind: str, measure: str) -> str:
    """``('appearance', 'mse') -> 'grey_mse'``."""
    return f"{_KIND_SHORT[template_kind]}_{measure}"


def parse_axis_key(key: str) -> tuple[str, str]:
    short, measure = key.split("_")
    if short not in _SHORT_KIND or measure not in (MSE, DP):
        raise ValueError(f"bad axis name {key!r}; expected e.g. grey_mse or grad_dp")
    return _SHORT_KIND[short], measure


def representation_axes(rep: str) -> list[str]:
    axes = rep.split("+")
    for a in axes:
        parse_axis_key(a)
    return axes


@dataclass(frozen=True)
class Axis:
    measure: str
    template_kind: str
    bin_count: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")
        if not self.lo < self.hi:
            raise ValueError("axis range must satisfy lo < hi")

    @property
    def key(self) -> str:
        return axis_key(self.template_kind, self.measure)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.bin_count + 1)

    def index(self, values) -> np.ndarray:
        """Bin index per value, -1 outside ``[lo, hi]``."""
        v = np.asarray(values, dtype=float)
        out = (v < self.lo) | (v > self.hi) | ~np.isfinite(v)
        pos = np.where(out, self.lo, v)
        idx = np.floor((pos - self.lo) / (self.hi - self.lo) * self.bin_count).astype(np.int64)
        np.minimum(idx, self.bin_count - 1, out=idx)
        idx[out] = -1
        return idx


@dataclass(frozen=True)
class HistogramSpec:
    axes: tuple

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.axes) not in (1, 2):
            raise ValueError("histograms are 1-D or 2-D")

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a.bin_count for a in self.axes)

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.shape))

    @property
    def keys(self) -> list[str]:
        return [a.key for a in self.axes]

    def bin_index(self, values) -> np.ndarray:
        """Flat bin index for an ``(n, dims)`` array of scores; -1 for overflow."""
        v = np.asarray(values, dtype=float).reshape(-1, self.dims)
        flat = np.zeros(len(v), dtype=np.int64)
        bad = np.zeros(len(v), dtype=bool)
        for d, ax in enumerate(self.axes):
            i = ax.index(v[:, d])
            bad |= i < 0
            flat = flat * ax.bin_count + i
        flat[bad] = -1
        return flat

    def to_json(self) -> dict:
        return {"dims": self.dims,
                "axes": [{"measure": a.measure, "template_kind": a.template_kind,
                          "bin_count": a.bin_count, "range_lo": a.lo, "range_hi": a.hi}
                         for a in self.axes]}

    @classmethod
    def from_json(cls, d: dict) -> "HistogramSpec":
        return cls(tuple(Axis(a["measure"], a["template_kind"], int(a["bin_count"]),
                              float(a["range_lo"]), float(a["range_hi"])) for a in d["axes"]))


@dataclass
class ScoreHistogram:
    spec: HistogramSpec
    counts: np.ndarray = None
    overflow_count: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.spec.n_bins, dtype=np.int64)
        self.counts = np.asarray(self.counts)
        if self.counts.shape != (self.spec.n_bins,):
            raise ValueError("counts do not match the histogram spec")
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ScoreHistogram") -> "ScoreHistogram":
        if other.spec != self.spec:
            raise ValueError("cannot merge histograms with different specs")
        return ScoreHistogram(self.spec, self.counts + other.counts,
                              self.overflow_count + other.overflow_count)

    def to_json(self) -> dict:
        return {"spec": self.spec.to_json(), "counts": self.counts.tolist(),
                "overflow_count": int(self.overflow_count)}

    @classmethod
    def from_json(cls, d: dict) -> "ScoreHistogram":
        spec = HistogramSpec.from_json(d["spec"])
        return cls(spec, np.asarray(d["counts"], dtype=np.int64), int(d.get("overflow_count", 0)))


def make_axis(template_kind: str, measure: str, scores, bin_count: int,
              margin: float = DEFAULT_MARGIN) -> Axis:
    s = np.asarray(scores, dtype=float)
    s = s[np.isfinite(s)]
    if np.unique(s).size < 2:
        raise ValueError(f"{axis_key(template_kind, measure)}: need at least two distinct scores to set a range")
    lo, hi = float(s.min()), float(s.max())
    span = hi - lo
    return Axis(measure, template_kind, bin_count, lo - margin * span, hi + margin * span)


def make_spec_from_training(results_per_axis, bin_count=None,
                            margin: float = DEFAULT_MARGIN) -> HistogramSpec:
    """Spec whose ranges cover pooled training scores plus a fractional margin.

    ``results_per_axis`` is a list (one entry per axis) of either MatchResult
    lists or ``(template_kind, measure, scores)`` tuples.  ``bin_count`` is an
    int or per-axis list; it defaults to 64 bins in 1-D and 32x32 in 2-D.
    """
    n = len(results_per_axis)
    if bin_count is None:
        bin_count = DEFAULT_BINS_1D if n == 1 else DEFAULT_BINS_2D
    counts = [bin_count] * n if np.isscalar(bin_count) else list(bin_count)
    axes = []
    for entry, bc in zip(results_per_axis, counts):
        if isinstance(entry, tuple):
            kind, measure, scores = entry
        else:
            entry = list(entry)
            if not entry:
                raise ValueError("empty axis")
            kind, measure = entry[0].template_kind, entry[0].measure
            scores = [r.best_score for r in entry]
        axes.append(make_axis(kind, measure, scores, int(bc), margin))
    return HistogramSpec(tuple(axes))


def accumulate_scores(spec: HistogramSpec, values) -> ScoreHistogram:
    """Histogram an ``(n, dims)`` array of scores."""
    v = np.asarray(values, dtype=float).reshape(-1, spec.dims)
    idx = spec.bin_index(v)
    ok = idx >= 0
    counts = np.bincount(idx[ok], minlength=spec.n_bins).astype(np.int64)
    return ScoreHistogram(spec, counts, int((~ok).sum()))


def join_scores(spec: HistogramSpec, results, ids=None):
    """Score matrix ``(n, dims)`` for the annotation ids, joined across axes.

    Raises ``KeyError`` naming the first annotation missing an axis score.
    """
    by_axis = {k: {} for k in spec.keys}
    for r in results:
        k = axis_key(r.template_kind, r.measure)
        if k in by_axis:
            by_axis[k][r.annotation_id] = r.best_score
    if ids is None:
        seen = {}
        for r in results:
            seen.setdefault(r.annotation_id, None)
        ids = list(seen)
    vals = np.empty((len(ids), spec.dims))
    for j, k in enumerate(spec.keys):
        table = by_axis[k]
        for i, a in enumerate(ids):
            if a not in table:
                raise KeyError(f"annotation {a!r} has no {k} score")
            vals[i, j] = table[a]
    return ids, vals


def accumulate(spec: HistogramSpec, results, ids=None, warn_overflow: bool = False) -> ScoreHistogram:
    """Histogram match results; each annotation id increments exactly one bin or overflow."""
    _, vals = join_scores(spec, results, ids)
    h = accumulate_scores(spec, vals)
    n = len(vals)
    if warn_overflow and n and h.overflow_count > OVERFLOW_WARN_FRACTION * n:
        warnings.warn(f"{h.overflow_count} of {n} scores fall outside the trained histogram range",
                      stacklevel=2)
    return h
