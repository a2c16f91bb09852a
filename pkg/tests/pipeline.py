"""Runs every subcommand once on a small synthetic fixture."""
from pathlib import Path

from cratercount.cli import main

SCENE = ["--width", "600", "--height", "600", "--n-true", "90", "--n-false", "30"]


def run_pipeline(d: Path, seed: int = 3) -> dict:
    """Return ``{step: [output files]}`` after running the whole pipeline in ``d``."""
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    s = ["--seed", str(seed)]
    p = lambda name: str(d / name)  # noqa: E731
    steps = {
        "synth": (["synth", *s, *SCENE, "--out", p("train.pgm")], ["train.pgm", "train.csv"]),
        "synth_test": (["synth", *s[:1], str(seed + 1), *SCENE, "--out", p("test.pgm"),
                        "--truth-out", p("truth.csv")], ["test.pgm", "test.csv", "truth.csv"]),
        "match": (["match", p("train.pgm"), p("train.csv"), *s, "--save-template", p("tmpl.json"),
                   "--out", p("train_m.csv")],
                  ["train_m.csv", "tmpl_appearance.json", "tmpl_derivative.json"]),
        "match_test": (["match", p("test.pgm"), p("test.csv"), "--template", p("tmpl_appearance.json"),
                        "--template", p("tmpl_derivative.json"), "--out", p("test_m.csv")],
                       ["test_m.csv"]),
        "hist": (["hist", p("train_m.csv"), "--axes", "grey_dp+grad_dp", "--out", p("hist.json")],
                 ["hist.json"]),
        "train": (["train", p("train_m.csv"), "--axes", "grad_dp", *s, "--n-hists", "4",
                   "--out", p("model.json")], ["model.json"]),
        "correct": (["correct", p("test_m.csv"), "--model", p("model.json"), "--annotations",
                     p("test.csv"), "--bands", "20,26,32,40", "--out", p("corr.csv")], ["corr.csv"]),
        "calibrate": (["calibrate", "--truth", p("truth.csv"), "--corrected", p("corr.csv"),
                       "--bands", "20,26,32,40", "--out", p("cal.json")], ["cal.json", "cal.csv"]),
        "simulate": (["simulate", *s, "--lambda-true", "40", "--lambda-false", "12",
                      "--regions", "50", "--out", p("sim.csv")], ["sim.csv"]),
        "validate": (["validate", *s, "--trials", "2", "--ratios", "1,10",
                      "--representations", "grad_dp", "--train-quantity", "400",
                      "--scene-width", "800", "--scene-height", "800", "--n-features", "240",
                      "--out", p("val")], ["val/summary.csv", "val/trials.csv", "val/config.json"]),
    }
    outputs = {}
    for name, (argv, files) in steps.items():
        rc = main(argv)
        if rc != 0:
            raise RuntimeError(f"step {name} exited with {rc}")
        outputs[name] = [d / f for f in files]
    return outputs
