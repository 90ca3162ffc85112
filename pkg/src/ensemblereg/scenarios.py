"""Synthetic reproductions of the illustrative examples and pilot studies.

Every scenario builds its inputs from scratch, runs the pipeline and
returns a :class:`ScenarioReport`.  Passing ``out_dir`` also writes the
maps, fields and a ``report.csv`` of metrics there.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import ensemble as ens
from . import fileio, interpret, rwir
from .core import DisplacementSet, Image, PosteriorField, ScalarField
from .errors import InvalidArgumentError

log = logging.getLogger(__name__)

FOREGROUND = 200.0
BACKGROUND = 50.0

# fixed region definitions for the circle/ellipse metrics
CENTER_RADIUS = 5.0
EDGE_BAND = 3.0


@dataclass
class ScenarioReport:
    name: str
    metrics: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    seed: int = 0

    def __getitem__(self, key):
        return self.metrics[key]

    def __getattr__(self, key):
        # report.mode_index etc.
        metrics = self.__dict__.get("metrics", {})
        if key in metrics:
            return metrics[key]
        raise AttributeError(key)


class _Writer:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.paths = []
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def __call__(self, name, write):
        """``write`` takes the destination path."""
        if self.out_dir is None:
            return
        path = self.out_dir / name
        write(path)
        self.paths.append(path)


def _finish(name, metrics, writer, seed):
    metrics = {k: float(v) for k, v in metrics.items()}
    for k, v in metrics.items():
        if not math.isfinite(v):
            raise InvalidArgumentError(f"scenario {name}: metric {k} is not finite")
    metrics["seed"] = float(seed)
    writer("report.csv", lambda p: fileio.write_metrics_csv(metrics, p))
    return ScenarioReport(name, metrics, list(writer.paths), seed)


def _unity_deviation(post: PosteriorField, *fields) -> float:
    dev = float(np.max(np.abs(post.probs.sum(axis=2) - 1.0)))
    for f in fields:
        sums = np.add.reduceat(f.weights, f.offsets[:-1])
        dev = max(dev, float(np.max(np.abs(sums - 1.0))))
    return dev


# ---------------------------------------------------------------------------
# Single-voxel counterexamples
# ---------------------------------------------------------------------------

# offsets from voxel (0, 0) into a 3x3 moving patch, centre excluded
_EIGHT = DisplacementSet([(0, 0), (1, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2), (2, 2)])
CORRECTNESS_PROBS = (0.1, 0.1, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1)

# the four edge-neighbours of the patch centre
_FOUR = DisplacementSet([(1, 0), (0, 1), (2, 1), (1, 2)])
USEFULNESS_PROBS = (0.25, 0.25, 0.25, 0.25)
USEFULNESS_INTENSITY = 120.0


def _single_voxel_report(name, post, disps, moving, writer):
    field_ = ens.pushforward_scalar(post, disps, moving)
    mode = interpret.mode_transformation(post, disps)
    k = int(mode.index[0, 0])
    i_of_mode = float(interpret.warp_by_mode(moving, mode).pixels[0, 0])
    mismatch = ens.mode_mismatch_map(post, disps, moving)
    writer("posterior.csv", lambda p: fileio.write_csv_field(post, p))
    writer("ensemble.csv", lambda p: fileio.write_csv_field(field_, p))
    metrics = {
        # 1-based, matching the d_1..d_K naming
        "mode_index": k + 1,
        "mode_probability": post.probs[0, 0, k],
        "I_of_mode": i_of_mode,
        "ensemble_mode": ens.ensemble_mode(field_)[0, 0],
        "ensemble_mode_probability": max(w for _, w in field_.cell(0, 0)),
        "mismatch": mismatch.values[0, 0],
        "transformation_entropy": interpret.entropy_map(post).values[0, 0],
        "intensity_entropy": ens.ensemble_entropy_map(field_).values[0, 0],
        "intensity_variance": ens.ensemble_variance_map(field_).values[0, 0],
        "max_unity_deviation": _unity_deviation(post, field_),
    }
    return _finish(name, metrics, writer, 0)


def scenario_correctness(out_dir=None, seed: int = 0) -> ScenarioReport:
    """Mode displacement d_3 points at 200 while 50 carries 70% of the mass."""
    moving = np.full((3, 3), BACKGROUND)
    dx, dy = _EIGHT.vectors[2]
    moving[dy, dx] = FOREGROUND
    post = PosteriorField(np.array(CORRECTNESS_PROBS).reshape(1, 1, 8))
    return _single_voxel_report("correctness", post, _EIGHT, Image(moving), _Writer(out_dir))


def scenario_usefulness(out_dir=None, seed: int = 0) -> ScenarioReport:
    """Four equally likely displacements that all land on the same intensity."""
    moving = np.full((3, 3), 30.0)
    for dx, dy in _FOUR.vectors:
        moving[dy, dx] = USEFULNESS_INTENSITY
    post = PosteriorField(np.array(USEFULNESS_PROBS).reshape(1, 1, 4))
    return _single_voxel_report("usefulness", post, _FOUR, Image(moving), _Writer(out_dir))


# ---------------------------------------------------------------------------
# Synthetic image pairs
# ---------------------------------------------------------------------------

SIZE = 64


def _grid(size=SIZE):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return xx, yy


def _blob(mask, smooth=1.0):
    img = np.where(mask, FOREGROUND, BACKGROUND)
    return ndimage.gaussian_filter(img, smooth, mode="nearest") if smooth > 0 else img


def ellipse_boundary_distance(xx, yy, cx, cy, a, b, samples=4096):
    """Distance from each pixel to a densely sampled ellipse outline."""
    from scipy.spatial import cKDTree

    t = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
    tree = cKDTree(np.stack([cx + a * np.cos(t), cy + b * np.sin(t)], axis=1))
    d, _ = tree.query(np.stack([xx.ravel(), yy.ravel()], axis=1))
    return d.reshape(xx.shape)


def circle_ellipse_images(size=SIZE):
    xx, yy = _grid(size)
    c = (size - 1) / 2.0
    fixed = _blob(((xx - c) / 20.0) ** 2 + ((yy - c) / 12.0) ** 2 <= 1.0)
    moving = _blob((xx - c) ** 2 + (yy - c) ** 2 <= 15.0 ** 2)
    return Image(fixed), Image(moving)


def scenario_circle_ellipse(out_dir=None, seed: int = 0, cfg: Optional[rwir.RwirConfig] = None) -> ScenarioReport:
    """Register a circle to an ellipse with 121 displacements.

    Compares transformation entropy against ensemble intensity variance in
    a disk at the centre and in a band around the ellipse outline.
    """
    cfg = cfg or rwir.RwirConfig()
    writer = _Writer(out_dir)
    fixed, moving = circle_ellipse_images()
    disps = DisplacementSet.grid(5)
    post = rwir.register(fixed, moving, disps, cfg)
    field_ = ens.pushforward_scalar(post, disps, moving)

    xx, yy = _grid()
    c = (SIZE - 1) / 2.0
    center = np.hypot(xx - c, yy - c) <= CENTER_RADIUS
    band = ellipse_boundary_distance(xx, yy, c, c, 20.0, 12.0) <= EDGE_BAND

    entropy = interpret.entropy_map(post)
    variance = ens.ensemble_variance_map(field_)
    mismatch = ens.mode_mismatch_map(post, disps, moving)
    registered = interpret.warp_by_mode(moving, interpret.mode_transformation(post, disps))

    n_top = max(1, variance.values.size // 10)
    top = np.argsort(-variance.values.ravel(), kind="stable")[:n_top]

    metrics = {
        "K": disps.K,
        "center_transformation_entropy": entropy.values[center].mean(),
        "edge_band_transformation_entropy": entropy.values[band].mean(),
        "center_intensity_variance": variance.values[center].mean(),
        "edge_band_intensity_variance": variance.values[band].mean(),
        "top_decile_near_edge_fraction": band.ravel()[top].mean(),
        "mode_mismatch_fraction": mismatch.values.mean(),
        "max_unity_deviation": _unity_deviation(post, field_),
    }
    writer("fixed.pgm", lambda p: fileio.write_image(fixed, p))
    writer("moving.pgm", lambda p: fileio.write_image(moving, p))
    writer("registered.pgm", lambda p: fileio.write_image(registered, p))
    writer("entropy.csv", lambda p: fileio.write_csv_field(entropy, p))
    writer("entropy.ppm", lambda p: fileio.write_colormap(entropy, p, 0.0, math.log2(disps.K)))
    writer("variance.csv", lambda p: fileio.write_csv_field(variance, p))
    writer("variance.ppm", lambda p: fileio.write_colormap(variance, p, 0.0, max(float(variance.values.max()), 1e-12)))
    writer("mismatch.pgm", lambda p: fileio.write_image(Image(255.0 * mismatch.values), p))
    return _finish("circle_ellipse", metrics, writer, seed)


def label_images(size=SIZE):
    """Moving blob with its binary label, and a shifted, enlarged fixed blob."""
    xx, yy = _grid(size)
    src = np.hypot(xx - 28.0, yy - 30.0) <= 10.0
    dst = np.hypot(xx - 31.0, yy - 32.0) <= 11.0
    return Image(_blob(dst)), Image(_blob(src)), Image(src.astype(np.float64)), dst


def scenario_label_propagation(out_dir=None, seed: int = 0, cfg: Optional[rwir.RwirConfig] = None) -> ScenarioReport:
    """Propagate a binary label through the posterior into a probability map."""
    cfg = cfg or rwir.RwirConfig()
    writer = _Writer(out_dir)
    fixed, moving, labels, target = label_images()
    disps = DisplacementSet.grid(5)
    post = rwir.register(fixed, moving, disps, cfg)
    label_field = ens.pushforward_label(post, disps, labels)
    prob = ens.label_probability_map(label_field, 1)

    # self-registration: the label must come back unchanged almost everywhere
    small = DisplacementSet.grid(1)
    self_post = rwir.register(moving, moving, small, cfg)
    self_prob = ens.label_probability_map(ens.pushforward_label(self_post, small, labels), 1)
    exact = np.abs(self_prob.values - labels.pixels) <= 1e-9

    metrics = {
        "inside_mean_probability": prob.values[target].mean(),
        "outside_mean_probability": prob.values[~target].mean(),
        "min_probability": prob.values.min(),
        "max_probability": prob.values.max(),
        "self_registration_exact_fraction": exact.mean(),
        "max_unity_deviation": _unity_deviation(post, label_field),
    }
    writer("fixed.pgm", lambda p: fileio.write_image(fixed, p))
    writer("moving.pgm", lambda p: fileio.write_image(moving, p))
    writer("label.pgm", lambda p: fileio.write_image(Image(255.0 * labels.pixels), p))
    writer("label_probability.csv", lambda p: fileio.write_csv_field(prob, p))
    writer("label_probability.ppm", lambda p: fileio.write_colormap(prob, p, 0.0, 1.0))
    writer("label_ensemble.csv", lambda p: fileio.write_csv_field(label_field, p))
    return _finish("label_propagation", metrics, writer, seed)


TUMOR_RADIUS = 12.0
TEXTURE_MEAN = 80.0
WARP_AMPLITUDE = 2.0
WARP_PERIOD = 32.0


def distortion_images(seed: int = 0, size=SIZE):
    """Textured background with a bright disk, and a sinusoidally warped copy."""
    rng = np.random.default_rng(seed)
    xx, yy = _grid(size)
    c = (size - 1) / 2.0
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), 1.5, mode="wrap")
    noise /= max(float(np.abs(noise).max()), 1e-12)
    texture = TEXTURE_MEAN + 20.0 * noise
    tumor = np.hypot(xx - c, yy - c) <= TUMOR_RADIUS
    moving = np.where(tumor, FOREGROUND, texture)
    moving = ndimage.gaussian_filter(moving, 0.7, mode="nearest")
    sx = xx + WARP_AMPLITUDE * np.sin(2.0 * np.pi * yy / WARP_PERIOD)
    sy = yy + WARP_AMPLITUDE * np.sin(2.0 * np.pi * xx / WARP_PERIOD)
    fixed = ndimage.map_coordinates(moving, [sy, sx], order=1, mode="nearest")
    return Image(fixed), Image(moving)


def encloses(polyline: np.ndarray, point) -> bool:
    """Even-odd ray test for a closed polyline."""
    px, py = point
    x0, y0 = polyline[:-1, 0], polyline[:-1, 1]
    x1, y1 = polyline[1:, 0], polyline[1:, 1]
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    return bool(np.count_nonzero(straddle & (xcross > px)) % 2)


def _contour_rows(contours):
    rows = []
    for cs in contours:
        for ci, poly in enumerate(cs.polylines):
            for pi, (x, y) in enumerate(poly):
                rows.append((fileio.fmt_real(cs.level), ci, pi, fileio.fmt_real(x), fileio.fmt_real(y)))
    return rows


def write_contours_csv(contours, path):
    fileio.write_rows(path, ("level", "contour", "point", "x", "y"), _contour_rows(contours))


def overlay_rgb(smap: ScalarField, contours, lo=0.0, hi=1.0):
    """Heat map with contour vertices painted white."""
    rgb = fileio.colormap_rgb(smap.values, lo, hi).copy()
    H, W = smap.shape
    for cs in contours:
        for poly in cs.polylines:
            xs = np.clip(np.floor(poly[:, 0] + 0.5).astype(int), 0, W - 1)
            ys = np.clip(np.floor(poly[:, 1] + 0.5).astype(int), 0, H - 1)
            rgb[ys, xs] = 255
    return rgb


def contour_metrics(exceed: ScalarField, levels, center):
    contours = [ens.iso_contours(exceed, lv) for lv in levels]
    metrics = {}
    for cs in contours:
        around = sum(1 for poly, closed in zip(cs.polylines, cs.closed) if closed and encloses(poly, center))
        metrics[f"contours_{cs.level:g}"] = len(cs)
        metrics[f"closed_around_tumor_{cs.level:g}"] = around
    return contours, metrics


def scenario_distortion(out_dir=None, seed: int = 0, cfg: Optional[rwir.RwirConfig] = None,
                        levels=ens.DEFAULT_LEVELS, grid_radius: int = 3) -> ScenarioReport:
    """Possible tumour outlines from a thresholded intensity ensemble."""
    cfg = cfg or rwir.RwirConfig()
    writer = _Writer(out_dir)
    fixed, moving = distortion_images(seed)
    disps = DisplacementSet.grid(grid_radius)
    post = rwir.register(fixed, moving, disps, cfg)
    field_ = ens.pushforward_scalar(post, disps, moving)
    threshold = 0.5 * (FOREGROUND + TEXTURE_MEAN)
    exceed = ens.exceedance_map(field_, threshold)
    c = (SIZE - 1) / 2.0
    contours, metrics = contour_metrics(exceed, levels, (c, c))
    by_level = {cs.level: cs for cs in contours}
    lo, hi = min(levels), max(levels)
    metrics["threshold"] = threshold
    metrics["hausdorff_outer_inner"] = ens.hausdorff(by_level[lo], by_level[hi])
    mid = by_level.get(0.5, contours[len(contours) // 2])

    # no uncertainty: a point mass on the zero displacement collapses the levels
    zero = disps.index_of((0, 0))
    ident = PosteriorField.point_mass(SIZE, SIZE, disps.K, zero)
    ident_exceed = ens.exceedance_map(ens.pushforward_scalar(ident, disps, moving), threshold)
    ident_contours = [ens.iso_contours(ident_exceed, lv) for lv in levels]
    ident_mid = next(cs for cs in ident_contours if cs.level == mid.level)
    metrics["identity_collapse_distance"] = max(ens.hausdorff(cs, ident_mid) for cs in ident_contours)
    metrics["max_unity_deviation"] = _unity_deviation(post, field_)

    writer("fixed.pgm", lambda p: fileio.write_image(fixed, p))
    writer("moving.pgm", lambda p: fileio.write_image(moving, p))
    writer("exceedance.csv", lambda p: fileio.write_csv_field(exceed, p))
    writer("contours.csv", lambda p: write_contours_csv(contours, p))
    writer("overlay.ppm", lambda p: fileio.atomic_write(p, fileio.encode_ppm(overlay_rgb(exceed, contours))))
    return _finish("distortion", metrics, writer, seed)


SCENARIOS = {
    "correctness": scenario_correctness,
    "usefulness": scenario_usefulness,
    "circle_ellipse": scenario_circle_ellipse,
    "label_propagation": scenario_label_propagation,
    "distortion": scenario_distortion,
}


def run_scenario(name: str, out_dir=None, seed: int = 0, **kwargs) -> ScenarioReport:
    key = name.replace("-", "_")
    if key not in SCENARIOS:
        raise InvalidArgumentError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    log.info("running scenario %s", key)
    return SCENARIOS[key](out_dir, seed, **kwargs)
