"""Command-line driver and JSON persistence of configurations and runs.

Exit codes: 0 success, 1 usage or input error, 2 numerical non-success.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import classify_stability, family_summary
from .model import AccessorySeries, ModelError, SurfaceParams, lawson_params
from .objective import SampleSet
from .search import (FamilySpec, SearchConfig, SolvedRun, continue_family, find_familyII_start,
                     minimize_surface)

SCHEMA_VERSION = 1


class RecordError(ValueError):
    pass


# ---------------------------------------------------------------------------
# JSON with 17 significant digits and complex numbers as [re, im]

def _plain(obj):
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return bool(obj) if isinstance(obj, np.bool_) else obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _fmt(x, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x) or math.isinf(x):
            return json.dumps(repr(x))        # "nan" / "inf" as strings
        return format(x, ".17g") if x != int(x) or abs(x) >= 1e16 else format(x, ".1f")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, list):
        if all(not isinstance(v, (list, dict)) for v in x):
            return "[" + ", ".join(_fmt(v, indent, level + 1) for v in x) + "]"
        return "[\n" + ",\n".join(pad + _fmt(v, indent, level + 1) for v in x) + "\n" + end + "]"
    items = [pad + json.dumps(k) + ": " + _fmt(v, indent, level + 1) for k, v in x.items()]
    return "{\n" + ",\n".join(items) + "\n" + end + "}" if items else "{}"


def dumps(obj, indent: int = 2) -> str:
    return _fmt(_plain(obj), indent, 0) + "\n"


def _number(v):
    if isinstance(v, str) and v in ("nan", "inf", "-inf"):
        return float(v)
    return v


def _complex(v) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise RecordError(f"expected [re, im], got {v!r}")
    return complex(float(v[0]), float(v[1]))


def _check_schema(d: dict, what: str):
    v = d.get("schema_version")
    if v is None:
        raise RecordError(f"{what}: missing schema_version")
    if int(v) > SCHEMA_VERSION:
        raise RecordError(f"{what}: schema_version {v} is newer than supported {SCHEMA_VERSION}")


# ---------------------------------------------------------------------------
# records

def params_to_dict(p: SurfaceParams) -> dict:
    return {"genus": p.genus, "z0": p.z0, "z1": p.z1, "lambda1": p.lambda1, "lambda2": p.lambda2,
            "rectangular": p.rectangular, "even_lambda": p.even_lambda}


def params_from_dict(d: dict) -> SurfaceParams:
    if "preset" in d:
        if d["preset"] != "lawson":
            raise RecordError(f"unknown preset {d['preset']!r}")
        return lawson_params(int(d.get("genus", 2)))
    try:
        return SurfaceParams(int(d["genus"]), _complex(d["z0"]), _complex(d["z1"]),
                             _complex(d["lambda1"]), _complex(d["lambda2"]),
                             bool(d.get("rectangular", False)), bool(d.get("even_lambda", False)))
    except KeyError as exc:
        raise RecordError(f"surface: missing field {exc}") from exc


def series_to_dict(s: AccessorySeries) -> dict:
    return {"N": s.N, "a": list(s.a), "c": list(s.c)}


def series_from_dict(d: dict) -> AccessorySeries:
    return AccessorySeries([_complex(v) for v in d["a"]], [_complex(v) for v in d["c"]])


def run_to_record(run: SolvedRun, kind: str = "solve", extra: dict | None = None,
                  timestamp: bool = True) -> dict:
    report = classify_stability(run)
    config = run.provenance.get("config", {})
    K = config.get("K")
    rec = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "surface": params_to_dict(run.params),
        "series": series_to_dict(run.series),
        "search_config": config,
        "seed": run.provenance.get("seed", 0),
        "objective": {"final_F": run.final_F, "revalidated_F": run.revalidated_F,
                      "K": len(SampleSet.for_params(run.params, K)), "penalty": run.penalty},
        "converged": run.converged,
        "eval_count": run.eval_count,
        "lambda0": run.lambda0,
        "message": run.message,
        "history": [list(h) for h in run.history],
        "stability": report.to_dict(),
        "provenance": {k: v for k, v in run.provenance.items() if k not in ("config", "seed")},
    }
    if extra:
        rec.update(extra)
    if timestamp:
        rec["timestamps"] = {"written": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    return rec


def record_to_run(rec: dict) -> SolvedRun:
    _check_schema(rec, "run record")
    try:
        params = params_from_dict(rec["surface"])
        series = series_from_dict(rec["series"])
        obj = rec["objective"]
    except (KeyError, TypeError) as exc:
        raise RecordError(f"run record: malformed ({exc})") from exc
    lam0 = rec.get("lambda0")
    prov = dict(rec.get("provenance", {}))
    prov["config"] = rec.get("search_config", {})
    prov["seed"] = rec.get("seed", 0)
    return SolvedRun(params, series, float(_number(obj["final_F"])), int(rec.get("eval_count", 0)),
                     bool(rec.get("converged", False)), None if lam0 is None else _complex(lam0),
                     None if obj.get("revalidated_F") is None else float(_number(obj["revalidated_F"])),
                     None if obj.get("penalty") is None else float(obj["penalty"]),
                     rec.get("message", ""), tuple(tuple(h) for h in rec.get("history", [])), prov)


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise RecordError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise RecordError(f"{path}: invalid JSON ({exc})") from exc


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def load_run(path) -> SolvedRun:
    return record_to_run(read_json(path))


def load_config(path):
    """(params, SearchConfig, optional initial series, optional family II section) from a solve configuration."""
    d = read_json(path)
    _check_schema(d, "config")
    if "surface" not in d:
        raise RecordError("config: missing 'surface'")
    params = params_from_dict(d["surface"])
    try:
        search = SearchConfig.from_dict(d.get("search", {}))
    except TypeError as exc:
        raise RecordError(f"config: bad search section ({exc})") from exc
    init = series_from_dict(d["init"]) if d.get("init") else None
    fam2 = d.get("familyII_start")
    if fam2 is not None:
        unknown = set(fam2) - {"phi_grid", "lambda0_grid", "K_grid"}
        if unknown:
            raise RecordError(f"config: unknown familyII_start keys {sorted(unknown)}")
    return params, search, init, fam2


# ---------------------------------------------------------------------------
# commands

def _fail(msg, code=1):
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_solve(args) -> int:
    try:
        params, search, init, fam2 = load_config(args.config)
    except (RecordError, ModelError, ValueError) as exc:
        return _fail(exc)
    if fam2 is not None:
        try:
            run = find_familyII_start(params, search, threads=args.threads,
                                      **{k: tuple(v) if isinstance(v, list) else v for k, v in fam2.items()})
        except ModelError as exc:
            return _fail(exc)
    else:
        run = minimize_surface(params, search, init, threads=args.threads)
    write_json(args.out, run_to_record(run, "solve"))
    print(f"final_F={run.final_F:.17g}")
    print(f"converged={str(run.converged).lower()}")
    print(f"eval_count={run.eval_count}")
    if not run.converged:
        print(f"warning: {run.message}", file=sys.stderr)
        return 2
    return 0


def cmd_continue(args) -> int:
    try:
        start = load_run(args.start)
        search = SearchConfig.from_dict(start.provenance.get("config") or {})
    except (RecordError, ModelError, ValueError, TypeError) as exc:
        return _fail(exc)
    if not start.converged:
        return _fail("start record is not converged")
    report = classify_stability(start)
    if args.family == "II" and report.unstable_count != 1:
        return _fail(f"family II needs a start with unstable_count = 1 (got {report.unstable_count})")
    if args.family == "II" and start.lambda0 is None:
        common = [c for c in report.common_zeros if c["unstable"]]
        start = SolvedRun(start.params, start.series, start.final_F, start.eval_count, True,
                          common[0]["location"], start.revalidated_F, start.penalty, start.message,
                          start.history, start.provenance)
    if args.target is not None:
        search = SearchConfig.from_dict(dict(search.to_dict(), continuation_target_F=args.target))
    driver = {"sym": "sym", "conf": "conf"}[args.driver]
    try:
        spec = FamilySpec(args.family, driver, start, args.step, args.count)
    except ValueError as exc:
        return _fail(exc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def save(k, run):
        name = f"run_{k:03d}.json" if run.converged else f"run_{k:03d}_failed.json"
        write_json(out / name, run_to_record(run, "continue", {"family": args.family, "step_index": k}))
        print(f"step={k} F={run.final_F:.6g} converged={str(run.converged).lower()}", flush=True)

    runs, failed = continue_family(spec, search, threads=args.threads, callback=save)
    family_summary([start] + runs, driver).to_csv(out / "family.csv")
    if failed is not None:
        print(f"warning: step {len(runs) + 1} failed: {failed.message}", file=sys.stderr)
        return 2
    return 0


_GRID = re.compile(r"^(\d+)x(\d+)$")


def cmd_surface(args) -> int:
    from .surface import (ClosingError, SurfaceConfig, area, build_surface, export, far_pole,
                          stereographic)
    m = _GRID.match(args.grid or "")
    if not m:
        return _fail(f"bad grid spec {args.grid!r}; expected WxH")
    W, H = int(m.group(1)), int(m.group(2))
    if W < 6 or H < 4 or args.samples < 8:
        return _fail("grid must be at least 6x4 and samples at least 8")
    if args.format not in ("obj", "ply"):
        return _fail(f"unknown format {args.format!r}")
    try:
        run = load_run(args.run)
    except (RecordError, ModelError) as exc:
        return _fail(exc)
    config = SurfaceConfig(grid=(W, H), samples=args.samples, threads=args.threads)
    closed = True
    try:
        mesh = build_surface(run, config, strict=True)
    except ClosingError as exc:
        mesh, closed = exc.mesh, False
    pole = far_pole(mesh.vertices) if args.pole == "auto" else np.array([-1.0, 0, 0, 0])
    stereographic(mesh, pole)
    export(mesh, args.format, args.out)
    d = mesh.diagnostics
    for key in ("area", "closing_mismatch", "su2_deviation", "copies", "mean_curvature",
                "target_mean_curvature", "conformality", "path_consistency", "frame_tail"):
        v = d.get(key)
        print(f"{key}={v:.17g}" if isinstance(v, float) else f"{key}={v}")
    print(f"vertices={len(mesh.vertices)}")
    print(f"faces={len(mesh.faces)}")
    print("pole=" + ",".join(f"{x:.17g}" for x in pole))
    if not closed:
        print(f"warning: surface not closed (mismatch {d['closing_mismatch']:.3g}); mesh written",
              file=sys.stderr)
        return 2
    return 0


def cmd_analyze(args) -> int:
    try:
        run = load_run(args.run)
    except (RecordError, ModelError) as exc:
        return _fail(exc)
    sys.stdout.write(dumps(classify_stability(run).to_dict()))
    return 0


def _threads(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be positive")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmcforge", description="Symmetric CMC surfaces in S^3 by loop-group methods.")
    ap.add_argument("--version", action="version", version=f"cmcforge {__version__}")
    ap.add_argument("--threads", type=_threads, default=None,
                    help="worker threads (default: $CMCFORGE_THREADS or the CPU count)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="search accessory coefficients")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("continue", help="continue a family from a solved run")
    p.add_argument("--start", required=True)
    p.add_argument("--family", choices=("I", "II"), required=True)
    p.add_argument("--driver", choices=("sym", "conf"), required=True)
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--target", type=float, default=None, help="objective target per step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("surface", help="build, measure and export the mesh of a solved run")
    p.add_argument("run")
    p.add_argument("--grid", default="48x48")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--format", default="obj")
    p.add_argument("--pole", choices=("auto", "default"), default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("analyze", help="zeros of B and A+1 in the unit disk")
    p.add_argument("run")
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if args.threads is None and os.environ.get("CMCFORGE_THREADS"):
        try:
            args.threads = _threads(os.environ["CMCFORGE_THREADS"])
        except (ValueError, argparse.ArgumentTypeError):
            return _fail("CMCFORGE_THREADS must be a positive integer")
    try:
        return args.func(args)
    except OSError as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
