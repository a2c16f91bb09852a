"""Command-line pipeline: synth -> match -> hist -> train -> correct -> calibrate,
plus the Poisson-Beta ``simulate`` tool and the bootstrap ``validate`` harness.

Every subcommand accepts ``--seed``, ``--out`` and ``--config FILE``; the
config file is a JSON object whose keys are flag names (with dashes or
underscores) and whose values become defaults that explicit flags override.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import calibrate as cal
from . import io, lpm
from .counting_model import CountingModelParams, simulate_arrays
from .scores import (DEFAULT_BINS_1D, DEFAULT_BINS_2D, REPRESENTATIONS_1D, REPRESENTATIONS_2D,
                     HistogramSpec, ScoreHistogram, accumulate_scores, join_scores,
                     make_spec_from_training, parse_axis_key, representation_axes)
from .synth import SceneGeometry, random_scene, render_scene
from .templates import (DEFAULT_SCHEDULE, MEASURES, TEMPLATE_KINDS, Annotation, PatchBoundsError, Template,
                        build_template, extract_patch, match_all)
from .validate import SUMMARY_FIELDS, ValidationConfig, config_dict, run_validation

log = logging.getLogger("cratercount")

CORRECT_FIELDS = ["band", "band_lo", "band_hi", "n_raw", "true_total", "true_sigma",
                  "false_total", "false_sigma"]
SIMULATE_FIELDS = ["n_true", "n_false", "p_true", "p_false", "n_detected"]
SFD_FIELDS = ["band_lo", "band_hi", "count", "sigma"]
TRIAL_FIELDS = ["representation", "ratio", "trial", "ok", "est_true", "sigma_true", "truth_true",
                "est_false", "sigma_false", "truth_false", "n_components", "error"]


class CliError(Exception):
    """User-facing error; reported without a traceback."""


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}") from exc


def _names(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


# ---------------------------------------------------------------- subcommands

def cmd_simulate(a):
    params = CountingModelParams(a.lambda_true, a.lambda_false, a.alpha_t, a.beta_t, a.alpha_f, a.beta_f)
    d = simulate_arrays(params, a.regions, a.seed)
    rows = zip(d["n_true"], d["n_false"], d["p_true"], d["p_false"], d["n_detected"])
    io.write_csv(a.out, SIMULATE_FIELDS, rows)


def cmd_synth(a):
    geom = SceneGeometry(a.width, a.height, a.d_min, a.d_max)
    params = CountingModelParams(a.n_true, a.n_false)
    seeds = np.random.SeedSequence(a.seed).spawn(2)
    spec = random_scene(params, geom, seeds[0], sun_azimuth=a.sun_azimuth, noise_sigma=a.noise_sigma,
                        terrain_sigma=a.terrain_sigma, contrast_spread=a.contrast_spread,
                        max_degradation=a.max_degradation, false_blob_fraction=a.false_blob_fraction)
    raster, anns = render_scene(spec, seeds[1])
    if a.hide_labels:
        for ann in anns:
            ann.label = "unknown"
    io.write_pgm(a.out, raster, a.bits)
    io.write_annotations(a.annotations or str(Path(a.out).with_suffix(".csv")), anns)
    if a.truth_out:
        io.write_annotations(a.truth_out, _two_counter_truth(spec, a.counter_efficiency, seeds[0]))


def _two_counter_truth(spec, efficiency, seed_seq):
    """Reference mark-ups of the true craters by two independent counters."""
    if not 0 < efficiency <= 1:
        raise CliError("--counter-efficiency must lie in (0, 1]")
    rng = np.random.default_rng(seed_seq.spawn(1)[0])
    out = []
    for i, f in enumerate(spec.crater_list):
        if f.cls != "true":
            continue
        for counter in ("A", "B"):
            if rng.uniform() < efficiency:
                out.append(Annotation(str(i), f.x, f.y, f.diameter_px, "true", counter))
    return out


def _select(value, allowed, what):
    if value == "all":
        return tuple(allowed)
    if value not in allowed:
        raise CliError(f"unknown {what} {value!r}")
    return (value,)


def cmd_match(a):
    raster = io.read_pgm(a.raster)
    anns = io.read_annotations(a.annotations)
    kinds = _select(a.template_kind, TEMPLATE_KINDS, "template kind")
    measures = _select(a.measure, MEASURES, "measure")
    schedule = tuple(a.schedule) if a.schedule else DEFAULT_SCHEDULE
    if any(s <= 0 for s in schedule):
        raise CliError("smoothing levels must be positive")

    templates = {}
    for path in a.template or []:
        t = Template.from_json(io.read_json(path))
        templates[t.kind] = t
    if not templates:
        examples = [x for x in anns if x.label == "true"]
        if not examples:
            raise CliError("no --template given and no true-labelled annotations to build one from")
        rng = np.random.default_rng(a.seed)
        if a.template_examples and len(examples) > a.template_examples:
            pick = np.sort(rng.choice(len(examples), a.template_examples, replace=False))
            examples = [examples[i] for i in pick]
        patches = []
        for x in examples:
            try:
                patches.append(extract_patch(raster, x))
            except PatchBoundsError:
                continue
        if not patches:
            raise CliError("every template example lies too close to the raster edge")
        templates = {k: build_template(k, patches) for k in kinds}
    missing = [k for k in kinds if k not in templates]
    if missing:
        raise CliError(f"no template of kind {missing[0]!r} supplied")
    templates = {k: templates[k] for k in kinds}
    if a.save_template:
        for k, t in templates.items():
            path = a.save_template if len(templates) == 1 else f"{Path(a.save_template).with_suffix('')}_{k}.json"
            io.write_json(path, t.to_json())

    usable, skipped = [], 0
    h, w = raster.shape
    size = next(iter(templates.values())).patch_size
    for x in anns:
        try:
            if a.pad != "mean":
                extract_patch(raster, x, size)
            usable.append(x)
        except PatchBoundsError:
            skipped += 1
    if skipped:
        log.warning("skipped %d annotations whose patch leaves the %dx%d raster", skipped, w, h)
    results = match_all(raster, usable, templates, measures, schedule,
                        pad="mean" if a.pad == "mean" else None)
    results.sort(key=lambda r: (list(templates).index(r.template_kind), MEASURES.index(r.measure)))
    io.write_matches(a.out, results)


def _load_matches(paths):
    results = []
    for p in paths:
        results += io.read_matches(p)
    if not results:
        raise CliError("no match results in the input files")
    return results


def _ids_with_label(results, label=None):
    seen = {}
    for r in results:
        if label is None or r.label == label:
            seen.setdefault(r.annotation_id, r.label)
    return list(seen)


def _spec_for(results, axes, bins, spec_file=None) -> HistogramSpec:
    if spec_file:
        d = io.read_json(spec_file)
        d = d.get("spec", d)
        spec = HistogramSpec.from_json(d)
        if spec.keys != axes:
            raise CliError(f"spec file axes {spec.keys} differ from --axes {axes}")
        return spec
    per_axis = []
    for key in axes:
        kind, measure = parse_axis_key(key)
        scores = [r.best_score for r in results if r.template_kind == kind and r.measure == measure]
        if not scores:
            raise CliError(f"no {key} scores in the match files")
        per_axis.append((kind, measure, scores))
    try:
        return make_spec_from_training(per_axis, bins)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _parse_axes(text):
    try:
        return representation_axes(text)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_hist(a):
    results = _load_matches(a.matches)
    axes = _parse_axes(a.axes)
    spec = _spec_for(results, axes, a.bins, a.spec)
    ids = _ids_with_label(results, None if a.label == "all" else a.label)
    _, vals = join_scores(spec, results, ids)
    h = accumulate_scores(spec, vals)
    if h.overflow_count > 0.01 * max(len(vals), 1):
        log.warning("%d of %d scores fall outside the histogram range", h.overflow_count, len(vals))
    io.write_json(a.out, h.to_json())


def _split_histograms(spec, results, ids, n, rng):
    _, vals = join_scores(spec, results, ids)
    group = rng.permutation(len(ids)) % n
    return [accumulate_scores(spec, vals[group == g]) for g in range(n)]


def cmd_train(a):
    results = _load_matches(a.matches)
    axes = _parse_axes(a.axes)
    spec = _spec_for(results, axes, a.bins, a.spec)
    rng = np.random.default_rng(a.seed)
    hists = {}
    for c in lpm.CLASSES:
        ids = _ids_with_label(results, c)
        if len(ids) < a.n_hists:
            raise CliError(f"only {len(ids)} annotations labelled {c!r}; need at least --n-hists={a.n_hists}")
        hists[c] = _split_histograms(spec, results, ids, a.n_hists, rng)
    model = lpm.train(hists["true"], hists["false"], a.chi2_target, a.max_components, a.restarts,
                      seed=int(rng.integers(2 ** 31)), spec=spec)
    io.write_json(a.out, model.to_json())


def _diameters(path):
    return {x.id: x.diameter_px for x in io.read_annotations(path)}


def cmd_correct(a):
    model = lpm.LpmModel.from_json(io.read_json(a.model))
    results = _load_matches(a.matches)
    ids = _ids_with_label(results)
    try:
        ids, vals = join_scores(model.spec, results, ids)
    except KeyError as exc:
        raise CliError(str(exc.args[0])) from exc
    groups = [("all", "", "", np.ones(len(ids), dtype=bool))]
    if a.bands:
        if not a.annotations:
            raise CliError("--bands needs --annotations to look up diameters")
        diam = _diameters(a.annotations)
        missing = [i for i in ids if i not in diam]
        if missing:
            raise CliError(f"annotation {missing[0]!r} has no diameter in {a.annotations}")
        edges = np.asarray(a.bands, dtype=float)
        if len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise CliError("band edges must be strictly increasing")
        bidx = cal.band_index([diam[i] for i in ids], edges)
        groups += [(str(b), edges[b], edges[b + 1], bidx == b) for b in range(len(edges) - 1)]
    rows = []
    for name, lo, hi, sel in groups:
        h = accumulate_scores(model.spec, vals[sel])
        n_raw = int(sel.sum())
        if h.total == 0:
            rows.append([name, lo, hi, n_raw, 0.0, 0.0, 0.0, 0.0])
            continue
        est = lpm.correct(model, h)
        rows.append([name, lo, hi, n_raw, est.total("true"), est.sigma("true"),
                     est.total("false"), est.sigma("false")])
    io.write_csv(a.out, CORRECT_FIELDS, rows)


def _read_corrected(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    bands = [r for r in rows if r["band"] != "all"]
    if not bands:
        raise CliError(f"{path} has no per-band rows; run correct with --bands")
    lo = np.array([float(r["band_lo"]) for r in bands])
    hi = np.array([float(r["band_hi"]) for r in bands])
    m = np.array([float(r["true_total"]) for r in bands])
    var = np.array([float(r["true_sigma"]) ** 2 for r in bands])
    return lo, hi, m, var


def cmd_calibrate(a):
    anns = io.read_annotations(a.truth)
    if any(x.counter is None for x in anns):
        raise CliError("ground-truth annotations need a counter column")
    lo, hi, m0, var_m0 = _read_corrected(a.corrected)
    edges = np.append(lo, hi[-1])
    if a.bands is not None and not np.allclose(np.asarray(a.bands, dtype=float), edges):
        raise CliError("--bands differ from the band edges in the corrected-count file")

    marks = defaultdict(set)
    diam = {}
    for x in anns:
        marks[x.id].add(x.counter)
        diam.setdefault(x.id, []).append(x.diameter_px)
    n_counters = len({x.counter for x in anns})
    if n_counters != 2:
        log.warning("repeatability assumes two counters; found %d", n_counters)
    ids = sorted(marks)
    n_double = sum(len(marks[i]) >= 2 for i in ids)
    rep = cal.RepeatabilityData(len(ids) - n_double, n_double)
    P = cal.binomial_success_prob(rep)
    b = cal.band_index([float(np.mean(diam[i])) for i in ids], edges)
    nb = len(edges) - 1
    u = np.array([float(np.sum(b == k)) for k in range(nb)])
    var_u = np.array([cal.ground_truth_variance(v, P) for v in u])

    overall, per_band = cal.band_scaling_factors(u, var_u, m0, var_m0, edges)
    if a.apply:
        _, _, m, var_m = _read_corrected(a.apply)
        if len(m) != nb:
            raise CliError("--apply file has a different number of bands")
    else:
        m, var_m = m0, var_m0
    sfd_rows = []
    for k in range(nb):
        sf = per_band[k] or overall
        c, var_c = cal.apply_correction(m[k], var_m[k], sf)
        sfd_rows.append([edges[k], edges[k + 1], c, float(np.sqrt(var_c))])
    io.write_csv(a.sfd or str(Path(a.out).with_suffix(".csv")), SFD_FIELDS, sfd_rows)
    report = {
        "repeatability": {"n_single": rep.n_single, "n_double": rep.n_double, "success_prob": P},
        "overall": overall.to_json(),
        "per_band": [sf.to_json() if sf else {"band": [float(edges[k]), float(edges[k + 1])],
                                              "uncalibratable": True}
                     for k, sf in enumerate(per_band)],
        "reference_counts": {"u": u, "var_u": var_u},
    }
    if np.all(var_u + var_m0 > 0):
        report["chi2_per_dof"] = cal.conformity_report(u, var_u, m0, var_m0, overall, per_band)
    io.write_json(a.out, report)


def cmd_validate(a):
    cfg = ValidationConfig(trials=a.trials, ratios=tuple(a.ratios), region_w=a.region_w,
                           region_h=a.region_h, contamination_fraction=a.contamination,
                           seed=a.seed, representations=tuple(a.representations),
                           train_quantity=a.train_quantity, scene_width=a.scene_width,
                           scene_height=a.scene_height, n_features=a.n_features)
    step = max(1, cfg.trials // 10)

    def progress(t):
        if (t + 1) % step == 0:
            log.info("trial %d/%d", t + 1, cfg.trials)

    report = run_validation(cfg, progress=progress)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "summary.csv", SUMMARY_FIELDS,
                 [[row.get(k, "nan") for k in SUMMARY_FIELDS] for row in report.summary])
    io.write_csv(out / "trials.csv", TRIAL_FIELDS,
                 [[r.rep, r.ratio, r.trial, int(r.ok), r.est_true, r.sigma_true, r.truth_true,
                   r.est_false, r.sigma_false, r.truth_false, r.n_components, r.error]
                  for r in report.records])
    io.write_json(out / "config.json", config_dict(cfg))
    log.info("validation finished in %.1f s", report.runtime_s)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root random seed (default 0)")
    common.add_argument("--config", metavar="FILE", help="JSON file of flag defaults")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cratercount", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="Poisson-Beta counting-model draws")
    s.add_argument("--lambda-true", type=float, required=True)
    s.add_argument("--lambda-false", type=float, default=0.0)
    s.add_argument("--alpha-t", type=float, default=2.0)
    s.add_argument("--beta-t", type=float, default=2.0)
    s.add_argument("--alpha-f", type=float, default=2.0)
    s.add_argument("--beta-f", type=float, default=2.0)
    s.add_argument("--regions", type=int, default=1000)
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("synth", parents=[common], help="render a labelled synthetic scene")
    s.add_argument("--width", type=int, default=800)
    s.add_argument("--height", type=int, default=800)
    s.add_argument("--n-true", type=float, default=150.0, help="mean number of craters")
    s.add_argument("--n-false", type=float, default=50.0, help="mean number of false features")
    s.add_argument("--d-min", type=float, default=20.0)
    s.add_argument("--d-max", type=float, default=40.0)
    s.add_argument("--sun-azimuth", type=float, default=180.0)
    s.add_argument("--noise-sigma", type=float, default=4.0)
    s.add_argument("--terrain-sigma", type=float, default=8.0)
    s.add_argument("--contrast-spread", type=float, default=0.1)
    s.add_argument("--max-degradation", type=float, default=0.2)
    s.add_argument("--false-blob-fraction", type=float, default=0.5)
    s.add_argument("--bits", type=int, choices=(8, 16), default=8)
    s.add_argument("--hide-labels", action="store_true", help="write label 'unknown' for every feature")
    s.add_argument("--out", required=True, help="output PGM raster")
    s.add_argument("--annotations", help="output annotations CSV (default: raster path with .csv)")
    s.add_argument("--truth-out", metavar="FILE",
                   help="also write a two-counter reference mark-up of the true craters")
    s.add_argument("--counter-efficiency", type=float, default=0.85,
                   help="per-counter detection probability for --truth-out")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("match", parents=[common], help="best template-match scores per annotation")
    s.add_argument("raster")
    s.add_argument("annotations")
    s.add_argument("--template", action="append", metavar="FILE",
                   help="template JSON (repeatable); default: build from true-labelled annotations")
    s.add_argument("--template-examples", type=int, default=300)
    s.add_argument("--save-template", metavar="FILE")
    s.add_argument("--measure", default="all", choices=MEASURES + ("all",))
    s.add_argument("--template-kind", default="all", choices=TEMPLATE_KINDS + ("all",))
    s.add_argument("--schedule", type=_floats, help="comma list of smoothing sigmas")
    s.add_argument("--pad", choices=("none", "mean"), default="none",
                   help="'mean' pads patches that leave the raster instead of skipping them")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)

    reps = ", ".join(REPRESENTATIONS_1D)
    s = sub.add_parser("hist", parents=[common], help="score histogram from match CSVs")
    s.add_argument("matches", nargs="+")
    s.add_argument("--axes", required=True, help=f"one axis or two joined by '+': {reps}")
    s.add_argument("--bins", type=int, help=f"bins per axis (default {DEFAULT_BINS_1D} / {DEFAULT_BINS_2D})")
    s.add_argument("--spec", metavar="FILE", help="reuse the binning of a histogram or model JSON")
    s.add_argument("--label", choices=("all", "true", "false", "unknown"), default="all")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_hist)

    s = sub.add_parser("train", parents=[common], help="train an LPM from labelled match CSVs")
    s.add_argument("matches", nargs="+")
    s.add_argument("--axes", required=True, help=f"one axis or two joined by '+': {reps}")
    s.add_argument("--bins", type=int)
    s.add_argument("--spec", metavar="FILE")
    s.add_argument("--n-hists", type=int, default=8, help="training histograms per class")
    s.add_argument("--chi2-target", type=float, default=lpm.DEFAULT_CHI2_TARGET)
    s.add_argument("--max-components", type=int, default=lpm.DEFAULT_MAX_COMPONENTS)
    s.add_argument("--restarts", type=int, default=lpm.DEFAULT_RESTARTS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("correct", parents=[common], help="contamination-corrected class totals")
    s.add_argument("matches", nargs="+")
    s.add_argument("--model", required=True)
    s.add_argument("--annotations", help="annotations CSV supplying diameters for --bands")
    s.add_argument("--bands", type=_floats, help="comma list of diameter band edges")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_correct)

    s = sub.add_parser("calibrate", parents=[common], help="false-negative scaling factors")
    s.add_argument("--truth", required=True, help="two-counter annotations CSV with a counter column")
    s.add_argument("--corrected", required=True, help="per-band CSV from 'correct' for the same region")
    s.add_argument("--bands", type=_floats, help="band edges (checked against --corrected)")
    s.add_argument("--apply", metavar="FILE", help="corrected CSV of another region to scale")
    s.add_argument("--sfd", metavar="FILE", help="output SFD CSV (default: --out with .csv)")
    s.add_argument("--out", required=True, help="scaling-factor JSON")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("validate", parents=[common], help="bootstrap pull-distribution harness")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--ratios", type=_floats, default=[0.01, 0.1, 1.0, 10.0, 100.0])
    s.add_argument("--region-w", type=int, default=120)
    s.add_argument("--region-h", type=int, default=120)
    s.add_argument("--contamination", type=float, default=0.25)
    s.add_argument("--train-quantity", type=int, default=2000)
    s.add_argument("--scene-width", type=int, default=2400, help="synthetic pool raster width")
    s.add_argument("--scene-height", type=int, default=2400)
    s.add_argument("--n-features", type=int, default=2000, help="mean features in the pool scene")
    s.add_argument("--representations", type=_names,
                   default=list(REPRESENTATIONS_1D + REPRESENTATIONS_2D))
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_validate)
    return p


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from ``--config`` so explicit flags still win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((a for a in argv if a in subparsers), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    try:
        cfg = io.read_json(known.config)
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("config file must hold a JSON object")
    sub = subparsers[command]
    actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
    for k, v in cfg.items():
        dest = k.lstrip("-").replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            sub.error(f"config key {k!r} is not a flag of '{command}'")
        action = actions[dest]
        if isinstance(v, list) and action.type in (_floats, _names):
            v = action.type(",".join(str(x) for x in v))
        elif action.type is not None and v is not None:
            v = action.type(str(v))
        action.default = v
        action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except (CliError, ValueError, KeyError, OSError, lpm.SupportError, lpm.ConvergenceError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"cratercount {args.command}: error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
