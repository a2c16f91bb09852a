"""Crater templates and best-match scoring over a Gaussian smoothing schedule.

Rasters are plain 2-D float arrays indexed ``[row, col]`` = ``[y, x]``, with
pixel centres at integer coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

APPEARANCE = "appearance"
DERIVATIVE = "derivative"
MSE = "mse"
DP = "dp"

TEMPLATE_KINDS = (APPEARANCE, DERIVATIVE)
MEASURES = (MSE, DP)

# 16 logarithmic smoothing widths in pixels
DEFAULT_SCHEDULE = (0.10, 0.12, 0.14, 0.17, 0.21, 0.25, 0.30, 0.36,
                    0.43, 0.52, 0.62, 0.74, 0.89, 1.07, 1.28, 1.54)
PATCH_SIZE = 60
TARGET_DIAMETER = 40.0
MIN_DIAMETER = 20.0


class PatchBoundsError(ValueError):
    """The resampled patch would reach outside the raster."""


@dataclass
class Annotation:
    id: str
    x: float
    y: float
    diameter_px: float
    label: str = "unknown"
    counter: str | None = None

    def __post_init__(self):
        if not self.diameter_px > 0:
            raise ValueError(f"annotation {self.id}: diameter must be positive")
        if self.label not in ("true", "false", "unknown"):
            raise ValueError(f"annotation {self.id}: bad label {self.label!r}")


@dataclass
class Template:
    kind: str
    values: np.ndarray
    n_examples: int = 0

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise ValueError(f"unknown template kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def patch_size(self) -> int:
        return self.height

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "dims": [self.width, self.height],
            "n_examples": self.n_examples,
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Template":
        w, h = d["dims"]
        vals = np.asarray(d["values"], dtype=float)
        if vals.size != w * h:
            raise ValueError("template dims do not match value count")
        return cls(d["kind"], vals.reshape(h, w), int(d.get("n_examples", 0)))


@dataclass
class MatchResult:
    annotation_id: str
    measure: str
    template_kind: str
    best_score: float
    best_smoothing_sigma: float
    label: str = "unknown"
    scores: np.ndarray | None = field(default=None, repr=False)


def extract_patch(raster, ann: Annotation, out_size: int = PATCH_SIZE,
                  target_diameter: float = TARGET_DIAMETER,
                  min_diameter: float | None = None, pad: str | None = None):
    """Resample the neighbourhood of ``ann`` so its diameter spans ``target_diameter``.

    Output pixel ``(i, j)`` samples the raster at
    ``(y + (i - out_size//2) * scale, x + (j - out_size//2) * scale)`` with
    ``scale = diameter / target_diameter``, using bilinear interpolation.  A
    crater with ``diameter == target_diameter`` at integer coordinates is
    therefore a pure crop.

    ``pad='mean'`` fills out-of-bounds samples with the raster mean instead of
    raising :class:`PatchBoundsError`.
    """
    raster = np.asarray(raster, dtype=float)
    if min_diameter is not None and ann.diameter_px < min_diameter:
        raise ValueError(f"annotation {ann.id}: diameter {ann.diameter_px} below minimum {min_diameter}")
    h, w = raster.shape
    if not (0 <= ann.x <= w - 1 and 0 <= ann.y <= h - 1):
        raise PatchBoundsError(f"annotation {ann.id} centre lies outside the raster")
    scale = ann.diameter_px / target_diameter
    offs = (np.arange(out_size) - out_size // 2) * scale
    ys = ann.y + offs
    xs = ann.x + offs
    inside = ys[0] >= 0 and xs[0] >= 0 and ys[-1] <= h - 1 and xs[-1] <= w - 1
    if not inside and pad != "mean":
        raise PatchBoundsError(f"patch for annotation {ann.id} exceeds raster bounds")
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    cval = float(raster.mean()) if pad == "mean" else 0.0
    return ndimage.map_coordinates(raster, [yy, xx], order=1, mode="constant", cval=cval)


def derivative_panels(patch) -> np.ndarray:
    """Horizontal and vertical differences concatenated side by side.

    Central differences in the interior and one-sided at the edges.
    """
    patch = np.asarray(patch, dtype=float)
    gy, gx = np.gradient(patch)
    return np.concatenate([gx, gy], axis=1)


def _stack(patches):
    if len(patches) == 0:
        raise ValueError("need at least one patch")
    shape = np.shape(patches[0])
    for p in patches:
        if np.shape(p) != shape:
            raise ValueError("all patches must share one size")
    return np.asarray(patches, dtype=float)


def build_appearance_template(patches) -> Template:
    stack = _stack(patches)
    stack = stack - stack.mean(axis=(1, 2), keepdims=True)
    vals = stack.mean(axis=0)
    # remove float residue so the template mean is zero to round-off
    vals -= vals.mean()
    return Template(APPEARANCE, vals, len(stack))


def build_derivative_template(patches) -> Template:
    stack = _stack(patches)
    vals = np.mean([derivative_panels(p) for p in stack], axis=0)
    return Template(DERIVATIVE, vals, len(stack))


def build_template(kind: str, patches) -> Template:
    if kind == APPEARANCE:
        return build_appearance_template(patches)
    if kind == DERIVATIVE:
        return build_derivative_template(patches)
    raise ValueError(f"unknown template kind {kind!r}")


def _check_sizes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"template {a.shape} and patch {b.shape} differ in size")


def score_mse(template, patch) -> float:
    a = template.values if isinstance(template, Template) else np.asarray(template, dtype=float)
    b = np.asarray(patch, dtype=float)
    _check_sizes(a, b)
    return float(np.mean((a - b) ** 2))


def score_dp(template, patch) -> float:
    a = template.values if isinstance(template, Template) else np.asarray(template, dtype=float)
    b = np.asarray(patch, dtype=float)
    _check_sizes(a, b)
    norm = np.linalg.norm(a)
    if norm == 0:
        raise ValueError("template has zero norm")
    return float(np.sum(a * b) / (a.size * norm))


def prepare_patch(patch, kind: str, sigma: float) -> np.ndarray:
    """Smooth, remove the patch mean, and differentiate for derivative templates."""
    sm = ndimage.gaussian_filter(np.asarray(patch, dtype=float), sigma, mode="reflect")
    sm = sm - sm.mean()
    if kind == DERIVATIVE:
        return derivative_panels(sm)
    return sm


def _best(scores, measure):
    return int(np.argmin(scores)) if measure == MSE else int(np.argmax(scores))


def score_patch(patch, template: Template, measure: str, schedule=DEFAULT_SCHEDULE) -> np.ndarray:
    """Scores of one extracted patch at each smoothing level of ``schedule``."""
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    if len(schedule) == 0:
        raise ValueError("smoothing schedule is empty")
    fn = score_mse if measure == MSE else score_dp
    return np.array([fn(template, prepare_patch(patch, template.kind, s)) for s in schedule])


def best_match(raster, ann: Annotation, template: Template, measure: str,
               schedule=DEFAULT_SCHEDULE, target_diameter: float = TARGET_DIAMETER,
               pad: str | None = None) -> MatchResult:
    patch = extract_patch(raster, ann, template.patch_size, target_diameter, pad=pad)
    scores = score_patch(patch, template, measure, schedule)
    i = _best(scores, measure)
    return MatchResult(ann.id, measure, template.kind, float(scores[i]), float(schedule[i]),
                       ann.label, scores)


def match_all(raster, annotations, templates: dict, measures=MEASURES,
              schedule=DEFAULT_SCHEDULE, target_diameter: float = TARGET_DIAMETER,
              pad: str | None = None) -> list[MatchResult]:
    """Best matches for every annotation against every template and measure.

    Each patch is extracted and smoothed once per schedule level, then shared
    across templates and measures.  ``templates`` maps kind -> Template.
    """
    if len(schedule) == 0:
        raise ValueError("smoothing schedule is empty")
    sizes = {t.patch_size for t in templates.values()}
    if len(sizes) != 1:
        raise ValueError("templates must share one patch size")
    size = sizes.pop()
    prepared = {}
    for kind, t in templates.items():
        a = t.values
        norm = np.linalg.norm(a)
        if norm == 0 and DP in measures:
            raise ValueError(f"{kind} template has zero norm")
        prepared[kind] = (a, norm)

    out = []
    n_levels = len(schedule)
    for ann in annotations:
        patch = extract_patch(raster, ann, size, target_diameter, pad=pad)
        sc = {(k, m): np.empty(n_levels) for k in templates for m in measures}
        for li, s in enumerate(schedule):
            sm = ndimage.gaussian_filter(patch, s, mode="reflect")
            sm = sm - sm.mean()
            for kind, (a, norm) in prepared.items():
                b = derivative_panels(sm) if kind == DERIVATIVE else sm
                if MSE in measures:
                    sc[(kind, MSE)][li] = np.mean((a - b) ** 2)
                if DP in measures:
                    sc[(kind, DP)][li] = np.sum(a * b) / (a.size * norm)
        for (kind, m), scores in sc.items():
            i = _best(scores, m)
            out.append(MatchResult(ann.id, m, kind, float(scores[i]), float(schedule[i]),
                                   ann.label, scores))
    return out
