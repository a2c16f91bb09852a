"""File formats: binary PGM rasters, annotation and match CSVs, JSON."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .templates import Annotation, MatchResult

ANNOTATION_FIELDS = ["id", "x", "y", "diameter_px", "label"]
MATCH_FIELDS = ["id", "label", "measure", "template_kind", "best_score", "best_sigma"]


def fmt(v) -> str:
    """17 significant digits for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        if math.isfinite(v) and float(v) == int(v) and abs(v) < 1e15:
            return str(int(v))
        return format(float(v), ".17g")
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM, 8 or 16 bit, as a float array."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: only binary P5 PGM is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    return arr.reshape(h, w).astype(float)


def write_pgm(path, raster, bits: int = 8):
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    arr = np.clip(np.rint(np.asarray(raster, dtype=float)), 0, maxval)
    arr = arr.astype(np.uint8 if bits == 8 else ">u2")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_annotations(path) -> list[Annotation]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(Annotation(row["id"], float(row["x"]), float(row["y"]),
                                  float(row["diameter_px"]), (row.get("label") or "unknown").strip(),
                                  row.get("counter") or None))
    return out


def write_annotations(path, anns):
    has_counter = any(a.counter is not None for a in anns)
    header = ANNOTATION_FIELDS + (["counter"] if has_counter else [])
    rows = []
    for a in anns:
        r = [a.id, float(a.x), float(a.y), float(a.diameter_px), a.label]
        if has_counter:
            r.append(a.counter or "")
        rows.append(r)
    write_csv(path, header, rows)


def read_matches(path) -> list[MatchResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MatchResult(row["id"], row["measure"], row["template_kind"],
                                   float(row["best_score"]), float(row["best_sigma"]),
                                   row.get("label") or "unknown"))
    return out


def write_matches(path, results):
    write_csv(path, MATCH_FIELDS, [[r.annotation_id, r.label, r.measure, r.template_kind,
                                    r.best_score, r.best_smoothing_sigma] for r in results])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (np.floating, np.bool_)):
        return o.item()
    return o


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
