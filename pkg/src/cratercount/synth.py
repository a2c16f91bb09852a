"""Synthetic grayscale scenes with labelled craters and crater-like false features.

True craters are Lambertian-shaded paraboloid bowls with a raised rim, lit
from ``sun_azimuth`` at a low elevation.  Degradation blurs the noiseless
sprite with a Gaussian of width ``0.15 * degradation * diameter``.  False
features are either half-crater ridges (one side of a bowl, random
orientation) or bright Gaussian blobs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .counting_model import CountingModelParams
from .templates import Annotation

MIN_FEATURE_DIAMETER = 4.0
SUN_ELEVATION_DEG = 30.0
BLUR_PER_DEGRADATION = 0.15


@dataclass
class Feature:
    x: float
    y: float
    diameter_px: float
    degradation: float = 0.0
    cls: str = "true"
    shape: str = "crater"       # crater | ridge | blob
    contrast: float = 1.0
    orientation: float = 0.0    # radians; ridge half-plane direction

    def __post_init__(self):
        if self.cls not in ("true", "false"):
            raise ValueError(f"feature class must be 'true' or 'false', got {self.cls!r}")
        if self.shape not in ("crater", "ridge", "blob"):
            raise ValueError(f"unknown feature shape {self.shape!r}")
        if not 0.0 <= self.degradation <= 1.0:
            raise ValueError("degradation must lie in [0, 1]")
        if self.diameter_px < MIN_FEATURE_DIAMETER:
            raise ValueError(f"diameter must be >= {MIN_FEATURE_DIAMETER} px")


@dataclass
class SceneSpec:
    width: int
    height: int
    sun_azimuth: float = 180.0
    crater_list: list = field(default_factory=list)
    noise_sigma: float = 4.0
    background_level: float = 100.0
    contrast_scale: float = 40.0
    terrain_sigma: float = 0.0
    terrain_scale: float = 6.0

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        if self.noise_sigma < 0 or self.terrain_sigma < 0:
            raise ValueError("noise_sigma and terrain_sigma must be non-negative")
        for f in self.crater_list:
            r = f.diameter_px / 2
            if not (r <= f.x <= self.width - 1 - r and r <= f.y <= self.height - 1 - r):
                raise ValueError(f"feature at ({f.x}, {f.y}) d={f.diameter_px} is not inside the image")


def _bowl_height(r):
    """Height of a unit-radius crater at normalised radius ``r``, in radii."""
    depth, rim = 0.4, 0.08
    inner = depth * (r ** 2 - 1.0) + rim
    outer = rim * np.exp(-((r - 1.0) / 0.3) ** 2)
    return np.where(r < 1.0, inner, outer)


def _shade(z, sun_azimuth):
    """Lambertian brightness relative to flat ground, minus one."""
    gy, gx = np.gradient(z)
    az = math.radians(sun_azimuth)
    el = math.radians(SUN_ELEVATION_DEG)
    s = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    norm = np.sqrt(gx ** 2 + gy ** 2 + 1.0)
    lam = (-gx * s[0] - gy * s[1] + s[2]) / norm
    return np.maximum(lam, 0.0) / s[2] - 1.0


def feature_sprite(f: Feature, sun_azimuth: float, frac_x: float = 0.0, frac_y: float = 0.0):
    """Noise-free brightness offset of one feature on a local square window.

    Returns ``(sprite, half)``: the window covers integer offsets ``-half..half``
    around the feature's rounded centre; ``frac_x, frac_y`` are the sub-pixel
    offsets of the true centre.
    """
    R = f.diameter_px / 2.0
    blur = BLUR_PER_DEGRADATION * f.degradation * f.diameter_px
    half = int(math.ceil(1.8 * R + 3 * blur + 2))
    o = np.arange(-half, half + 1, dtype=float)
    yy, xx = np.meshgrid(o - frac_y, o - frac_x, indexing="ij")
    rr = np.hypot(xx, yy) / R
    if f.shape == "blob":
        sprite = np.exp(-0.5 * (rr / 0.45) ** 2)
    else:
        z = _bowl_height(rr) * R
        sprite = _shade(z, sun_azimuth)
        if f.shape == "ridge":
            # keep one side of the bowl, soft edge along the dividing line
            d = (xx * math.cos(f.orientation) + yy * math.sin(f.orientation)) / R
            sprite = sprite / (1.0 + np.exp(-d / 0.1))
    if blur > 0:
        sprite = ndimage.gaussian_filter(sprite, blur, mode="constant")
    return f.contrast * sprite, half


def render_scene(spec: SceneSpec, seed=None):
    """Render ``spec`` to a float raster and return ``(raster, annotations)``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    img = np.full((spec.height, spec.width), float(spec.background_level))
    anns = []
    for i, f in enumerate(spec.crater_list):
        cx, cy = int(round(f.x)), int(round(f.y))
        sprite, half = feature_sprite(f, spec.sun_azimuth, f.x - cx, f.y - cy)
        y0, y1 = cy - half, cy + half + 1
        x0, x1 = cx - half, cx + half + 1
        sy0, sx0 = max(0, -y0), max(0, -x0)
        y0c, x0c = max(y0, 0), max(x0, 0)
        y1c, x1c = min(y1, spec.height), min(x1, spec.width)
        img[y0c:y1c, x0c:x1c] += spec.contrast_scale * sprite[sy0:sy0 + (y1c - y0c), sx0:sx0 + (x1c - x0c)]
        anns.append(Annotation(str(i), f.x, f.y, f.diameter_px, f.cls))
    if spec.terrain_sigma > 0:
        img += terrain_texture(spec.height, spec.width, spec.terrain_sigma, spec.terrain_scale, rng)
    if spec.noise_sigma > 0:
        img += rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return img, anns


def terrain_texture(height, width, sigma, scale, rng, roughness_scale=30.0):
    """Smooth random relief whose roughness itself varies across the scene.

    A Gaussian-filtered white-noise field (correlation length ``scale`` px) is
    modulated by a log-normal roughness map with correlation length
    ``roughness_scale`` px.
    """
    field_ = ndimage.gaussian_filter(rng.normal(size=(height, width)), scale, mode="wrap")
    field_ /= field_.std()
    step = max(1, int(roughness_scale / 3))
    coarse = rng.normal(size=(height // step + 2, width // step + 2))
    coarse = ndimage.gaussian_filter(coarse, 1.0, mode="wrap")
    coarse /= max(coarse.std(), 1e-12)
    rough = ndimage.zoom(coarse, step, order=1)[:height, :width]
    return sigma * field_ * np.exp(0.7 * rough)


@dataclass
class SceneGeometry:
    width: int
    height: int
    d_min: float = 20.0
    d_max: float = 40.0
    margin_factor: float = 0.8   # edge margin in diameters; 0.75 keeps a 60 px / 40 px patch inside
    min_separation: float = 1.0  # minimum centre distance as a multiple of the mean diameter


def random_scene(params: CountingModelParams, geometry: SceneGeometry, seed=None,
                 sun_azimuth: float = 180.0, noise_sigma: float = 4.0,
                 background_level: float = 100.0, contrast_scale: float = 40.0,
                 false_blob_fraction: float = 0.5, contrast_spread: float = 0.3,
                 max_degradation: float = 1.0,
                 terrain_sigma: float = 0.0, max_tries: int = 200) -> SceneSpec:
    """Poisson numbers of true and false features at random non-overlapping positions.

    Diameters are log-uniform in ``[d_min, d_max]``; true craters get a uniform
    degradation and a log-normal contrast.  Positions are rejection sampled to
    stay ``margin_factor * diameter + 1`` px from every edge and apart from
    previously placed features.
    """
    g = geometry
    if g.d_min < MIN_FEATURE_DIAMETER or g.d_max < g.d_min:
        raise ValueError("invalid diameter range")
    margin = max(0.5, g.margin_factor) * g.d_max + 1
    if g.width - 1 - 2 * margin <= 0 or g.height - 1 - 2 * margin <= 0:
        raise ValueError("scene geometry too small to place a feature")
    rng = np.random.default_rng(seed)
    n_true = int(rng.poisson(params.lambda_true))
    n_false = int(rng.poisson(params.lambda_false))
    classes = ["true"] * n_true + ["false"] * n_false
    order = rng.permutation(len(classes))

    placed = np.empty((0, 3))
    feats = []
    for idx in order:
        cls = classes[idx]
        d = float(np.exp(rng.uniform(math.log(g.d_min), math.log(g.d_max))))
        m = max(0.5, g.margin_factor) * d + 1
        for _ in range(max_tries):
            x = rng.uniform(m, g.width - 1 - m)
            y = rng.uniform(m, g.height - 1 - m)
            if placed.size == 0:
                break
            dist = np.hypot(placed[:, 0] - x, placed[:, 1] - y)
            if np.all(dist >= g.min_separation * 0.5 * (placed[:, 2] + d)):
                break
        else:
            raise ValueError("could not place a feature without overlap; scene is too crowded")
        placed = np.vstack([placed, [x, y, d]])
        contrast = float(np.exp(rng.normal(0.0, contrast_spread)))
        if cls == "true":
            feats.append(Feature(x, y, d, float(rng.uniform(0.0, max_degradation)), "true", "crater", contrast))
        elif rng.uniform() < false_blob_fraction:
            feats.append(Feature(x, y, d, 0.0, "false", "blob", contrast))
        else:
            feats.append(Feature(x, y, d, float(rng.uniform(0.0, 0.5)), "false", "ridge",
                                 contrast, float(rng.uniform(0, 2 * math.pi))))
    return SceneSpec(g.width, g.height, sun_azimuth, feats, noise_sigma, background_level,
                     contrast_scale, terrain_sigma)
