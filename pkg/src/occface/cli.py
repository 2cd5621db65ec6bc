"""Command-line driver: merge, fit, eval, synth and model subcommands.

Exit codes: 0 success, 2 usage or validation error, 3 computation failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import fileio
from . import labels as L
from .fitter import AlignmentError, FitConfig, FitError, fit, vertex_error_stats
from .losses import LossError, LossWeights
from .morphable import CoefficientVector, ModelError, MorphableModel, assemble_shape, make_synthetic_model
from .raster import export_obj, read_obj, render, write_obj
from .scene import SceneError
from .synthgen import OCCLUDER_KINDS, SynthError, make_scene

log = logging.getLogger("occface")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAILURE = 3

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_INT = {"type": "integer"}

MODEL_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["path"],
         "properties": {"path": {"type": "string"}}},
        {"type": "object", "additionalProperties": False,
         "properties": {"seed": _INT, "n_vertices": {"type": "integer", "minimum": 3},
                        "n_alpha": {"type": "integer", "minimum": 1}, "n_beta": {"type": "integer", "minimum": 1}}},
    ]
}

FIT_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "max_iters": {"type": "integer", "minimum": 0}, "lr": _NUM, "momentum": _NUM, "rms_decay": _NUM,
        "h": {"type": "number", "exclusiveMinimum": 0}, "angle_h_factor": {"type": "number", "exclusiveMinimum": 0},
        "tol": _NUM, "patience": {"type": "integer", "minimum": 1},
        "max_halvings": {"type": "integer", "minimum": 0}, "seed": _INT, "attention": {"type": "boolean"},
        "gamma_size": {"enum": [9, 27]}, "workers": {"type": "integer", "minimum": 1},
        "scale_alpha": _NUM, "scale_beta": _NUM, "scale_gamma": _NUM, "scale_angle": _NUM,
        "scale_f": _NUM, "scale_t2d": _NUM,
    },
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "occface fit configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "image", "m_alpha", "landmarks", "output_dir"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "image": {"type": "string"},
        "m_alpha": {"type": "string"},
        "landmarks": {"type": "string"},
        "output_dir": {"type": "string"},
        "model": MODEL_SCHEMA,
        "fit": FIT_SCHEMA,
        "loss_weights": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0} for k in LossWeights.__dataclass_fields__},
        },
        "labels": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "skin": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": L.N_CLASSES - 1}},
                "features": {"type": "array",
                             "items": {"type": "integer", "minimum": 1, "maximum": L.N_CLASSES - 1}},
            },
        },
    },
}


class UsageError(Exception):
    """Invalid arguments or inputs; maps to exit code 2."""


# ---------------------------------------------------------------------------
# helpers


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno} "
                         f"(byte offset {exc.pos}): {exc.msg}") from exc


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {p}: {exc.strerror}") from exc
    if not os.access(p, os.W_OK):
        raise UsageError(f"output directory is not writable: {p}")
    return p


def model_from_spec(spec: dict | None, base: Path | None = None) -> tuple[MorphableModel, dict]:
    """Build or load the morphable model; returns it with the normalized spec that reproduces it."""
    spec = dict(spec or {})
    if "path" in spec:
        p = Path(spec["path"])
        if base is not None and not p.is_absolute():
            p = base / p
        _existing(p, "model")
        return MorphableModel.load(p), {"path": str(p)}
    full = {"seed": 0, "n_vertices": 2000, "n_alpha": 16, "n_beta": 16}
    full.update(spec)
    return make_synthetic_model(**full), full


def load_config(path) -> dict:
    """Read and validate a fit config; relative paths resolve against the config's directory."""
    path = _existing(path, "config")
    cfg = _read_json(path)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"{path}: config invalid at {where}: {exc.message}") from exc
    base = path.resolve().parent
    for key in ("image", "m_alpha", "landmarks", "output_dir"):
        p = Path(cfg[key])
        cfg[key] = str(p if p.is_absolute() else base / p)
    cfg["_base"] = base
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_merge(args) -> int:
    m_alpha = fileio.read_label_png(_existing(args.m_alpha, "m_alpha"))
    lmk = fileio.read_landmarks(_existing(args.landmarks, "landmarks"))
    h, w = m_alpha.shape
    m_beta = L.regions_from_landmarks(lmk, w, h)
    merged = L.merge_maps(m_alpha, m_beta, literal=args.literal)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        _out_dir(out.parent)
    fileio.write_label_png(out, merged)
    log.info("wrote %s (%dx%d)", out, w, h)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    image = fileio.read_rgb_png(_existing(cfg["image"], "image"))
    m_alpha = fileio.read_label_png(_existing(cfg["m_alpha"], "m_alpha"))
    lmk = fileio.read_landmarks(_existing(cfg["landmarks"], "landmarks"))
    if image.shape[:2] != m_alpha.shape:
        raise UsageError(f"image {image.shape[1]}x{image.shape[0]} and m_alpha "
                         f"{m_alpha.shape[1]}x{m_alpha.shape[0]} differ in size")
    model, model_spec = model_from_spec(cfg.get("model"), cfg["_base"])
    fit_opts = dict(cfg.get("fit", {}))
    if args.iters is not None:
        if args.iters < 0:
            raise UsageError("--iters must be non-negative")
        fit_opts["max_iters"] = args.iters
    weights = LossWeights.from_dict(cfg.get("loss_weights", {}))
    try:
        fcfg = FitConfig(weights=weights, **fit_opts)
    except FitError as exc:
        raise UsageError(f"{args.config}: {exc}") from exc
    labels_cfg = cfg.get("labels", {})
    sets = L.LabelClassSets(**{k: frozenset(v) for k, v in labels_cfg.items()}) if labels_cfg else None

    out = _out_dir(cfg["output_dir"])
    report = fit(model, image, m_alpha, lmk, fcfg, sets=sets)

    doc = report.to_dict(weights)
    doc["model"] = model_spec
    doc["fit_config"] = fcfg.to_dict()
    _write_json(out / "fit_report.json", doc)
    export_obj(model, report.coeffs, out / "mesh.obj")
    h, w = m_alpha.shape
    buf = render(model, report.coeffs, w, h)
    fileio.write_rgb_png(out / "render.png", buf.color)
    fileio.write_rgb_png(out / "overlay.png", fileio.overlay(buf.color, image, buf.coverage, 0.5))
    with open(out / "loss_trace.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write(report.trace_csv())
    print(f"{report.termination}: {report.iterations} iterations, loss {report.initial_loss.total:.6g} -> "
          f"{report.final_loss.total:.6g}; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    mesh = _existing(args.mesh, "mesh")
    truth = _read_json(_existing(args.truth, "truth"))
    if "vertices" not in truth:
        raise UsageError(f"{args.truth}: no 'vertices' entry")
    fitted, _, _ = read_obj(mesh)
    true_v = np.asarray(truth["vertices"], dtype=np.float64).reshape(-1, 3)
    if len(fitted) != len(true_v):
        raise UsageError(f"vertex count mismatch: mesh has {len(fitted)}, truth has {len(true_v)}")
    stats = vertex_error_stats(fitted, true_v)
    metrics = {"n_vertices": len(fitted), **stats._asdict(), "final_loss": None}
    report_path = Path(args.report) if args.report else mesh.parent / "fit_report.json"
    if args.report:
        _existing(report_path, "report")
    if report_path.is_file():
        metrics["final_loss"] = _read_json(report_path).get("final_loss")
    out = Path(args.out) if args.out else mesh.parent / "metrics.json"
    _write_json(out, metrics)
    print(f"mean_of_smallest_90pct={stats.mean_of_smallest_90pct:.6g} p90_value={stats.p90_value:.6g}")
    return EXIT_OK


def write_scene(scene, model: MorphableModel, model_spec: dict, seed: int, out: Path) -> None:
    fileio.write_rgb_png(out / "clean.png", scene.clean)
    fileio.write_rgb_png(out / "occluded.png", scene.occluded)
    fileio.write_label_png(out / "m_alpha.png", scene.m_alpha)
    fileio.write_landmarks(out / "landmarks.txt", scene.landmarks)
    _write_json(out / "truth.json", {
        "seed": seed,
        "width": scene.width,
        "height": scene.height,
        "coefficients": scene.coeffs.to_dict(),
        "occluder": scene.occluder,
        "model": model_spec,
        "vertices": assemble_shape(model, scene.coeffs.alpha).tolist(),
    })


def cmd_synth(args) -> int:
    if not 0.0 <= args.fraction <= 0.5:
        raise UsageError(f"--fraction must lie in [0, 0.5], got {args.fraction}")
    if args.width < 1 or args.height < 1:
        raise UsageError("--width and --height must be positive")
    seeds = args.seeds if args.seeds is not None else [args.seed]
    model, spec = model_from_spec(_model_args(args))
    root = _out_dir(args.out)
    for seed in seeds:
        out = _out_dir(root / f"seed_{seed:04d}") if args.seeds is not None else root
        scene = make_scene(model, seed, args.kind, args.fraction, args.width, args.height)
        write_scene(scene, model, spec, seed, out)
        log.info("scene %d written to %s", seed, out)
    return EXIT_OK


def _model_args(args) -> dict:
    if getattr(args, "model", None):
        return {"path": args.model}
    return {"seed": args.model_seed, "n_vertices": args.n_vertices, "n_alpha": args.n_alpha, "n_beta": args.n_beta}


def cmd_model_generate(args) -> int:
    model, _ = model_from_spec(_model_args(args))
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        _out_dir(out.parent)
    model.save(out)
    print(f"model with {model.n_vertices} vertices, {len(model.triangles)} triangles written to {out}")
    return EXIT_OK


def cmd_model_export(args) -> int:
    model, _ = model_from_spec(_model_args(args))
    out = Path(args.out)
    if args.coeffs:
        doc = _read_json(_existing(args.coeffs, "coefficients"))
        try:
            coeffs = CoefficientVector.from_dict(doc.get("coefficients", doc))
        except (KeyError, TypeError) as exc:
            raise UsageError(f"{args.coeffs}: no usable coefficient record") from exc
        export_obj(model, coeffs, out)
    else:
        write_obj(out, model.mean_shape, model.triangles, model.mean_albedo.reshape(-1, 3).clip(0.0, 1.0))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model JSON file (overrides the synthetic model flags)")
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--n-vertices", type=int, default=2000)
    p.add_argument("--n-alpha", type=int, default=16)
    p.add_argument("--n-beta", type=int, default=16)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occface", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge a parsing map with landmark regions", allow_abbrev=False)
    p.add_argument("--m-alpha", required=True, help="parsing label map PNG")
    p.add_argument("--landmarks", required=True, help="68-point landmark text file")
    p.add_argument("--out", required=True, help="output label map PNG")
    p.add_argument("--literal", action="store_true", help="clear pixels where neither map has a feature")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("fit", help="fit the morphable model to an image", allow_abbrev=False)
    p.add_argument("--config", required=True, help="JSON fit configuration")
    p.add_argument("--iters", type=int, help="override fit.max_iters")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="vertex error of a fitted mesh against ground truth", allow_abbrev=False)
    p.add_argument("--mesh", required=True, help="fitted mesh.obj")
    p.add_argument("--truth", required=True, help="truth.json from synth")
    p.add_argument("--report", help="fit_report.json (default: next to the mesh if present)")
    p.add_argument("--out", help="metrics JSON (default: metrics.json next to the mesh)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write seeded synthetic scenes", allow_abbrev=False)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, nargs="+", help="several seeds, one subdirectory each")
    p.add_argument("--kind", choices=OCCLUDER_KINDS, default="none")
    p.add_argument("--fraction", type=float, default=0.2, help="occluded share of face pixels, 0..0.5")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    _add_model_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("model", help="generate or export the synthetic morphable model", allow_abbrev=False)
    msub = p.add_subparsers(dest="model_command", required=True)
    g = msub.add_parser("generate", help="write the model JSON", allow_abbrev=False)
    g.add_argument("--out", required=True)
    _add_model_flags(g)
    g.set_defaults(func=cmd_model_generate)
    e = msub.add_parser("export", help="write an OBJ of the mean or a fitted shape", allow_abbrev=False)
    e.add_argument("--out", required=True)
    e.add_argument("--coeffs", help="JSON with a 'coefficients' record (fit_report.json or truth.json)")
    _add_model_flags(e)
    e.set_defaults(func=cmd_model_export)
    return parser


_USAGE_ERRORS = (UsageError, fileio.FormatError, L.LabelError, ModelError, SynthError, LossError, SceneError,
                 AlignmentError, FileNotFoundError, jsonschema.ValidationError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
