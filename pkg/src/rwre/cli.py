"""Command-line entry point: ``rwre <experiment> --config PATH``.

Each run writes ``<experiment>.csv`` (fixed header), ``<experiment>.json``
(``experiment``, ``seed``, ``params``, ``estimates``, ``runtime``) and
``<experiment>.runtime.json`` (wall-clock seconds).  The first two files
depend only on the configuration and the code, so reruns are byte-identical;
the wall-clock time lives in the sidecar.

Exit codes: 0 success, 2 configuration error, 3 resource guard, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import enum
import io
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, ExperimentConfig, load_config
from .errors import ConfigError, RwreError
from .experiments import ExperimentResult, run_experiment


# ---------------------------------------------------------------------------
# serialization


def _float(v: float):
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def to_jsonable(obj):
    """Plain JSON data: numpy scalars and arrays become numbers and lists,
    non-finite floats become the strings ``inf``, ``-inf`` and ``nan``."""
    if isinstance(obj, enum.Enum):
        return to_jsonable(obj.value)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str) or obj is None:
        return obj
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if hasattr(obj, "as_dict"):
        return to_jsonable(obj.as_dict())
    if dataclasses.is_dataclass(obj):
        return to_jsonable({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)})
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return str(_float(float(v))) if not math.isfinite(v) else repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_cell(x) for x in v)
    if v is None:
        return ""
    return str(v)


def render_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.header)
    for row in result.rows:
        if len(row) != len(result.header):
            raise AssertionError("row width does not match the header")
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def render_json(cfg: ExperimentConfig, result: ExperimentResult, ops: float) -> str:
    doc = {"experiment": cfg.experiment, "seed": cfg.master_seed,
           "params": {"law": cfg.law_spec, **cfg.params, **result.extra_params,
                      "level": cfg.level, "op_cap": cfg.op_cap},
           "estimates": result.estimates,
           "runtime": {"estimated_ops": ops, "version": __version__}}
    return json.dumps(to_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult, ops: float,
                  seconds: float, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{cfg.experiment}.csv", "json": out / f"{cfg.experiment}.json",
             "runtime": out / f"{cfg.experiment}.runtime.json"}
    paths["csv"].write_text(render_csv(result))
    paths["json"].write_text(render_json(cfg, result, ops))
    paths["runtime"].write_text(json.dumps({"experiment": cfg.experiment,
                                            "wall_seconds": round(seconds, 6)},
                                           sort_keys=True) + "\n")
    return paths


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None, force: bool = False) -> dict:
    """Run one configured experiment and write its report files."""
    t0 = time.perf_counter()
    result, ops = run_experiment(cfg, force)
    return write_outputs(cfg, result, ops, time.perf_counter() - t0,
                         cfg.out if out_dir is None else out_dir)


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwre", description="Random walk in random environment "
                                 "experiments driven by key = value configuration files.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="experiment", metavar="EXPERIMENT", required=True)
    for name in list(EXPERIMENTS) + ["run"]:
        helptext = ("run the experiment named in the config" if name == "run"
                    else f"run the {name} experiment")
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", required=True, metavar="PATH", help="configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, metavar="DIR", help="output directory")
        sp.add_argument("--force", action="store_true",
                        help="run even if the estimated cost exceeds op_cap")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, None if args.experiment == "run" else args.experiment)
        if args.seed is not None:
            cfg = replace(cfg, master_seed=int(args.seed))
        paths = run(cfg, args.out, args.force)
    except RwreError as exc:
        kind = "configuration error" if isinstance(exc, ConfigError) else type(exc).__name__
        print(f"rwre: {kind}: {exc}", file=sys.stderr)
        return exc.exit_code
    for key in ("csv", "json"):
        print(paths[key])
    return 0


if __name__ == "__main__":
    sys.exit(main())
