"""Command line: ``regmod register | evaluate | jacobian | synth``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
inconsistent inputs, invalid config), 3 numerical failure during
optimisation.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .engine import NumericalError, RegConfig, preset, register
from .io import (LandmarkParseError, NiftiError, canonical_json, load_config,
                 read_landmarks, read_volume, sha256_file, validate_document,
                 write_json, write_landmarks, write_volume)
from .metrics import dice, nsd, surface_distances, tre
from .regularity import jacobian_det, ndv, sd_log_j
from .synth import apply_ground_truth, make_field, make_phantom
from .volume import (DisplacementField, LabelVolume, ScalarVolume, warp,
                     warp_labels)

__all__ = ["main", "run_cli", "config_from_document"]

logger = logging.getLogger("regmod")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"
WHOLE_VOLUME = "whole volume"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads():
    raw = os.environ.get("REGMOD_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"REGMOD_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("REGMOD_THREADS must be >= 1")
    return n


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def config_from_document(doc, preset_name=None):
    """Build a :class:`RegConfig` from a schema-checked config document.

    A preset (from the command line, else the ``preset`` key) supplies the
    block toggles; every other key overrides it.
    """
    doc = dict(doc)
    name = preset_name or doc.pop("preset", None)
    doc.pop("preset", None)
    if name is None:
        return RegConfig.from_dict(doc)
    kwargs = {}
    for key in ("similarity", "levels"):
        if key in doc:
            kwargs[key] = doc.pop(key)
    if isinstance(doc.get("iterations"), int):
        kwargs["iterations"] = doc.pop("iterations")
    known = set(RegConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return preset(name, **kwargs, **doc)


def _config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

def _register_cmd(args):
    threads = _threads()
    fixed = read_volume(args.fixed, kind="scalar")
    moving = read_volume(args.moving, kind="scalar")
    if fixed.dims != moving.dims:
        raise ValueError(f"fixed {fixed.dims} and moving {moving.dims} differ in shape")
    if not np.allclose(fixed.spacing, moving.spacing):
        raise ValueError(
            f"fixed spacing {fixed.spacing} differs from moving {moving.spacing}")
    cfg = config_from_document(load_config(args.config), args.preset)
    directions = ["fwd", "bwd"] if (args.direction == "both"
                                    or cfg.bidirectional) else [args.direction]

    inputs = {"fixed": {"path": os.path.abspath(args.fixed),
                        "sha256": sha256_file(args.fixed)},
              "moving": {"path": os.path.abspath(args.moving),
                         "sha256": sha256_file(args.moving)},
              "config": {"path": os.path.abspath(args.config),
                         "sha256": sha256_file(args.config)}}
    run_id = hashlib.sha256(canonical_json({
        "inputs": {k: v["sha256"] for k, v in inputs.items()},
        "config": cfg.to_dict(), "directions": directions,
        "version": __version__}).encode()).hexdigest()

    def run(direction):
        pair = (fixed.data, moving.data) if direction == "fwd" \
            else (moving.data, fixed.data)
        t0 = time.perf_counter()
        with threadpool_limits(limits=threads):
            res = register(pair[0], pair[1], cfg, direction="fwd")
        res.direction = direction
        res.diagnostics["direction"] = direction
        return res, time.perf_counter() - t0

    start = time.perf_counter()
    workers = min(len(directions), threads or len(directions))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, directions))
    else:
        outcomes = [run(d) for d in directions]

    os.makedirs(args.out, exist_ok=True)
    tag = f"regmod run {run_id[:16]}"
    products = {}
    for direction, (res, _) in zip(directions, outcomes):
        src = moving if direction == "fwd" else fixed
        files = {
            f"disp_{direction}.nii": DisplacementField(res.displacement,
                                                       fixed.spacing),
            f"disp_{direction}_half.nii": DisplacementField(
                res.displacement_half,
                tuple(2.0 * s for s in fixed.spacing)),
            f"warped_{direction}.nii": ScalarVolume(
                warp(src.data, res.displacement), fixed.spacing),
        }
        for name, obj in files.items():
            write_volume(os.path.join(args.out, name), obj, descrip=tag)
    diagnostics = {
        "manifest": MANIFEST, "run_id": run_id, "config": cfg.to_dict(),
        "directions": {d: res.diagnostics
                       for d, (res, _) in zip(directions, outcomes)},
    }
    validate_document(diagnostics, "diagnostics.schema.json")
    write_json(os.path.join(args.out, "diagnostics.json"), diagnostics)

    for name in sorted(os.listdir(args.out)):
        path = os.path.join(args.out, name)
        if name != MANIFEST and os.path.isfile(path) and not name.startswith("."):
            products[name] = sha256_file(path)
    manifest = {
        "run_id": run_id, "tool": "regmod", "version": __version__,
        "command": "register", "config": cfg.to_dict(),
        "config_hash": _config_hash(cfg), "inputs": inputs,
        "directions": directions, "products": products,
        "timing_s": {"total": time.perf_counter() - start,
                     **{d: t for d, (_, t) in zip(directions, outcomes)}},
        "threads": threads,
    }
    write_json(os.path.join(args.out, MANIFEST), manifest)
    for direction, (res, _) in zip(directions, outcomes):
        diag = res.diagnostics
        logger.info("%s: similarity %.6g -> %.6g", direction,
                    diag["initial"]["similarity"], diag["final"]["similarity"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / jacobian
# ---------------------------------------------------------------------------

def _regularity(u, mask_path):
    jac = jacobian_det(u)
    mask = None
    if mask_path is not None:
        mask = read_volume(mask_path, kind="labels").data > 0
        if mask.shape != jac.shape:
            raise ValueError(f"mask {mask.shape} differs from field {jac.shape}")
    summary = {
        "sd_log_j_x1e2": 100.0 * sd_log_j(jac, mask),
        "ndv_percent": ndv(jac, mask, unit="percent"),
        "ndv_permyriad": ndv(jac, mask, unit="permyriad"),
        "mask": os.path.abspath(mask_path) if mask_path else WHOLE_VOLUME,
    }
    return jac, summary


def _sibling_manifest(path):
    cand = os.path.join(os.path.dirname(os.path.abspath(path)), MANIFEST)
    return cand if os.path.isfile(cand) else None


def _evaluate_cmd(args):
    disp = read_volume(args.disp, kind="displacement")
    u = disp.data
    spacing = disp.spacing
    inputs = {"disp": {"path": os.path.abspath(args.disp),
                       "sha256": sha256_file(args.disp)}}
    report = {"nsd_tau_mm": float(args.nsd_tau), "labels": {},
              "dsc_mean": None, "tre_mm": None}

    if (args.fixed_seg is None) != (args.moving_seg is None):
        raise UsageError("--fixed-seg and --moving-seg go together")
    if args.fixed_seg is not None:
        fseg = read_volume(args.fixed_seg, kind="labels")
        mseg = read_volume(args.moving_seg, kind="labels")
        for key, path in (("fixed_seg", args.fixed_seg),
                          ("moving_seg", args.moving_seg)):
            inputs[key] = {"path": os.path.abspath(path),
                           "sha256": sha256_file(path)}
        if fseg.dims != disp.dims or mseg.dims != disp.dims:
            raise ValueError("segmentations and displacement differ in shape")
        moved = warp_labels(mseg.data, u)
        labels = args.labels or sorted(set(fseg.labels) | set(mseg.labels))
        scores = dice(fseg.data, moved, labels)
        for lab in labels:
            dist = surface_distances(fseg.data, moved, lab, spacing)
            entry = {"dsc": scores[lab], "hd95_mm": None, "assd_mm": None,
                     "nsd": None}
            if dist is not None:
                entry["hd95_mm"], entry["assd_mm"] = dist
                entry["nsd"] = nsd(fseg.data, moved, lab, args.nsd_tau, spacing)
            report["labels"][str(lab)] = entry
        present = [v for v in scores.values() if v is not None]
        report["dsc_mean"] = float(np.mean(present)) if present else None

    if (args.fixed_lms is None) != (args.moving_lms is None):
        raise UsageError("--fixed-lms and --moving-lms go together")
    if args.fixed_lms is not None:
        flms = read_landmarks(args.fixed_lms, dims=disp.dims)
        mlms = read_landmarks(args.moving_lms)
        for key, path in (("fixed_lms", args.fixed_lms),
                          ("moving_lms", args.moving_lms)):
            inputs[key] = {"path": os.path.abspath(path),
                           "sha256": sha256_file(path)}
        stats = tre(u, flms.points, mlms.points, spacing)
        stats.pop("errors")
        stats["count"] = len(flms)
        report["tre_mm"] = stats

    _, report["regularity"] = _regularity(u, args.mask)
    manifest = _sibling_manifest(args.disp)
    config_hash = None
    if manifest is not None:
        with open(manifest, encoding="utf-8") as fh:
            config_hash = json.load(fh).get("config_hash")
    report["provenance"] = {
        "inputs": inputs, "direction": args.direction,
        "tool_version": __version__, "config_hash": config_hash,
        "manifest": manifest,
        "hd95": "95th percentile of pooled two-way surface distances, linear interpolation",
    }
    validate_document(report, "report.schema.json")
    write_json(args.report, report)
    return EXIT_OK


def _jacobian_cmd(args):
    disp = read_volume(args.disp, kind="displacement")
    jac, summary = _regularity(disp.data, args.mask)
    summary["min_det"] = float(jac.min())
    summary["voxels"] = int(jac.size)
    write_volume(args.out, ScalarVolume(jac, disp.spacing),
                 descrip="regmod jacobian determinant")
    if args.summary:
        write_json(args.summary, summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _synth_cmd(args):
    dims = tuple(args.dims)
    if len(dims) not in (2, 3):
        raise UsageError("--dims needs 2 or 3 extents")
    ph = make_phantom(args.kind, dims, args.seed, texture=args.texture)
    gen = make_field(args.field, dims, args.max_disp, args.seed + 100)
    pair = apply_ground_truth(ph, gen, multimodal=args.multimodal)
    os.makedirs(args.out, exist_ok=True)
    tag = f"regmod synth seed {args.seed}"
    volumes = {
        "fixed.nii": ScalarVolume(pair.fixed),
        "moving.nii": ScalarVolume(pair.moving),
        "fixed_seg.nii": LabelVolume(pair.fixed_labels.astype(np.int16)),
        "moving_seg.nii": LabelVolume(pair.moving_labels.astype(np.int16)),
        "u_true.nii": DisplacementField(pair.u_true),
    }
    for name, obj in volumes.items():
        write_volume(os.path.join(args.out, name), obj, descrip=tag)
    write_landmarks(os.path.join(args.out, "fixed_lms.csv"),
                    pair.fixed_landmarks.points)
    write_landmarks(os.path.join(args.out, "moving_lms.csv"),
                    pair.moving_landmarks.points)
    products = {name: sha256_file(os.path.join(args.out, name))
                for name in sorted(os.listdir(args.out))
                if name != MANIFEST and not name.startswith(".")}
    write_json(os.path.join(args.out, MANIFEST), {
        "tool": "regmod", "version": __version__, "command": "synth",
        "params": {"kind": args.kind, "dims": list(dims), "field": args.field,
                   "max_disp": args.max_disp, "seed": args.seed,
                   "texture": args.texture, "multimodal": args.multimodal,
                   "generator": gen.params},
        "products": products,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="regmod", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("register", help="register a moving image onto a fixed one")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--config", required=True, help="JSON engine config")
    p.add_argument("--preset", choices=["BASE", "D", "DWP", "DWCP", "DWCPI"])
    p.add_argument("--direction", choices=["fwd", "bwd", "both"], default="fwd")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_register_cmd)

    p = sub.add_parser("evaluate", help="metrics report for a displacement field")
    p.add_argument("--disp", required=True)
    p.add_argument("--fixed-seg")
    p.add_argument("--moving-seg")
    p.add_argument("--labels", type=_int_list, help="e.g. 1,2,3")
    p.add_argument("--fixed-lms")
    p.add_argument("--moving-lms")
    p.add_argument("--mask", help="label file; voxels > 0 enter SD log J and NDV")
    p.add_argument("--nsd-tau", type=float, default=1.0, help="NSD tolerance in mm")
    p.add_argument("--direction", default="fwd")
    p.add_argument("--report", required=True)
    p.set_defaults(func=_evaluate_cmd)

    p = sub.add_parser("jacobian", help="Jacobian determinant map and summary")
    p.add_argument("--disp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--mask")
    p.set_defaults(func=_jacobian_cmd)

    p = sub.add_parser("synth", help="synthetic phantom pair with ground truth")
    p.add_argument("--kind", choices=["blobs", "grid", "two-tissue"], default="blobs")
    p.add_argument("--dims", type=_int_list, default=[64, 64, 64])
    p.add_argument("--field", choices=["gaussian-bumps", "affine"],
                   default="gaussian-bumps")
    p.add_argument("--max-disp", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--texture", type=float, default=0.25)
    p.add_argument("--multimodal", action="store_true",
                   help="moving image is the intensity-inverted sibling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_synth_cmd)
    return parser


def run_cli(argv=None):
    """Run one command and return its exit code."""
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help and --version
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc} (after {len(exc.trace)} steps)",
              file=sys.stderr)
        return EXIT_NUMERIC
    except (NiftiError, LandmarkParseError) as exc:
        print(f"data error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None):
    sys.exit(run_cli(argv))
