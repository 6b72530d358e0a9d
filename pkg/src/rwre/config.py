"""Plain-text experiment configuration.

One ``key = value`` pair per line; ``#`` starts a comment; lists are
comma-separated and kernel tables separate rows with ``;``.  Every key is
typed and checked against the schema of the chosen experiment, and errors
name the offending line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .env_model import (AnisotropicProduct, BalancedIID, DirichletIID, DiscreteLaw,
                        EnvironmentLaw, Homogeneous, TrapLaw)
from .errors import ConfigError


# ---------------------------------------------------------------------------
# value parsers


def _int(s: str) -> int:
    v = float(s)
    if not v.is_integer():
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _list(item: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(s: str) -> tuple:
        parts = [p.strip() for p in s.split(",")]
        if any(p == "" for p in parts):
            raise ValueError("empty list entry")
        return tuple(item(p) for p in parts)

    return parse


def _rows(s: str) -> tuple:
    rows = [r.strip() for r in s.split(";") if r.strip()]
    if not rows:
        raise ValueError("empty table")
    return tuple(_list(_float)(r) for r in rows)


def _str(s: str) -> str:
    if not s:
        raise ValueError("empty value")
    return s


INT, FLOAT, BOOL, STR = _int, _float, _bool, _str
INTS, FLOATS, ROWS = _list(_int), _list(_float), _rows


# ---------------------------------------------------------------------------
# schema


LAW_KEYS: dict[str, tuple] = {
    "homogeneous": ("dim", "p_right", "kernel"),
    "discrete": ("dim", "p_values", "kernels", "weights", "kappa"),
    "two_point": ("p_values",),
    "dirichlet": ("dim", "alpha"),
    "balanced": ("dim", "min_weight"),
    "trap": ("scale", "phi_min", "phi_max"),
    "anisotropic": ("ratios", "weights"),
}

LAW_TYPES: dict[str, Callable] = {
    "law": STR, "dim": INT, "p_right": FLOAT, "kernel": FLOATS, "p_values": FLOATS,
    "kernels": ROWS, "weights": FLOATS, "kappa": FLOAT, "alpha": FLOATS,
    "min_weight": FLOAT, "scale": FLOAT, "phi_min": FLOAT, "phi_max": FLOAT, "ratios": FLOATS,
}

COMMON: dict[str, tuple] = {
    "experiment": (STR, None),
    "seed": (INT, 0),
    "out": (STR, "results"),
    "op_cap": (FLOAT, 5e9),
    "level": (FLOAT, 0.95),
}

# experiment -> {key: (parser, default)}; a default of ``None`` means optional
EXPERIMENTS: dict[str, dict] = {
    "env-report": {"samples": (INT, 20_000), "alpha_moment": (FLOAT, 1.0),
                   "betas": (FLOATS, None)},
    "classify1d": {"budget": (INT, 200_000), "n": (INT, 0), "replicas": (INT, 200)},
    "velocity1d": {"methods": (_list(STR), ("solomon_oracle", "paper_formula", "direct_mc",
                                            "renewal_mc")),
                   "n": (INT, 100_000), "replicas": (INT, 500), "terms": (INT, 60),
                   "joint_level": (FLOAT, 0.99)},
    "invariant-density": {"terms": (INT, 60), "replicas": (INT, 200_000), "move": (INT, 0)},
    "kks": {"samples": (INT, 200_000)},
    "sinai": {"n_grid": (INTS, (1000, 10_000, 100_000)), "replicas": (INT, 200),
              "bound": (FLOAT, 5.0)},
    "potential": {"lo": (INT, -20), "hi": (INT, 20), "env_seed": (INT, None)},
    "renewal": {"direction": (INTS, None), "horizon": (INT, 100_000), "replicas": (INT, 100),
                "window": (INT, 0), "gammas": (FLOATS, (0.5, 1.0)), "Cs": (FLOATS, (10.0,))},
    "lln": {"direction": (INTS, None), "n": (INT, 100_000), "replicas": (INT, 200),
            "terms": (INT, 60), "joint_level": (FLOAT, 0.99)},
    "slab": {"direction": (FLOATS, None), "b": (FLOAT, 1.0), "L_grid": (FLOATS, (5, 10, 20, 40)),
             "method": (STR, "exact_env_mc"), "replicas": (INT, 200), "horizon": (INT, 0),
             "lateral": (INT, 0), "cone_angle": (FLOAT, 0.0)},
    "t-gamma-fit": {"direction": (FLOATS, None), "b": (FLOAT, 1.0),
                    "L_grid": (FLOATS, (5, 10, 20, 40)), "method": (STR, "exact_env_mc"),
                    "replicas": (INT, 200), "horizon": (INT, 0), "lateral": (INT, 0)},
    "p-condition": {"N0": (INT, 30), "M": (FLOATS, (1.0,)), "env_budget": (INT, 20),
                    "start_sample": (INT, 50), "direction": (FLOATS, None),
                    "reduced_lateral": (INT, 0)},
    "effective-criterion": {"L": (FLOAT, 10.0), "L_tilde": (FLOAT, 15.0),
                            "a_grid": (FLOATS, (0.0, 0.25, 0.5, 0.75, 1.0)),
                            "env_budget": (INT, 50), "c1": (FLOAT, None), "c2": (FLOAT, None),
                            "direction": (FLOATS, None)},
    "decomposition": {"L": (FLOAT, 16.0), "env_budget": (INT, 20), "L_tilde": (FLOAT, None),
                      "direction": (FLOATS, None)},
    "atypical-exit": {"L": (FLOAT, 16.0), "betas": (FLOATS, (0.25, 0.5, 0.75)),
                      "env_budget": (INT, 50), "L_tilde": (FLOAT, None),
                      "direction": (FLOATS, None)},
    "dl-exit": {"L_grid": (FLOATS, (20.0, 40.0, 80.0)), "budget": (INT, 1000),
                "horizon": (INT, 0), "direction": (FLOATS, None)},
    "rate-function": {"n_grid": (INTS, (500, 1000)), "x_grid": (ROWS, None),
                      "hold": (FLOAT, None), "env_seed": (INT, None), "fuzz_cases": (INT, 100),
                      "conservation_n": (INT, 200)},
    "balanced-clt": {"n": (INT, 10_000), "replicas": (INT, 1000), "torus_N": (INTS, (5, 10))},
    "trap": {"environments": (INT, 20), "k_max": (INT, 20), "samples": (INT, 20_000)},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration.  ``params`` holds every experiment key
    with defaults filled in; ``law_spec`` the raw law keys."""

    experiment: str
    law_spec: dict
    params: dict
    master_seed: int
    out: str
    op_cap: float
    level: float
    source: str = ""
    lines: dict = field(default_factory=dict)

    def law(self) -> EnvironmentLaw:
        return build_law(self.law_spec, self.lines)

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "law": dict(self.law_spec),
                "params": dict(self.params), "seed": self.master_seed,
                "level": self.level, "op_cap": self.op_cap}


def _split_lines(text: str):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", no)
        yield no, key, value


def parse_config(text: str, experiment: str | None = None, source: str = "") -> ExperimentConfig:
    """Parse and validate.  ``experiment`` (from the command line) must agree
    with an ``experiment`` key when both are given."""
    raw: dict[str, tuple[int, str]] = {}
    for no, key, value in _split_lines(text):
        if key in raw:
            raise ConfigError(f"duplicate key {key!r} (first on line {raw[key][0]})", no)
        raw[key] = (no, value)
    name = experiment
    if "experiment" in raw:
        no, val = raw["experiment"]
        if experiment is not None and val != experiment:
            raise ConfigError(f"config is for experiment {val!r}, not {experiment!r}", no)
        name = val
    if name is None:
        raise ConfigError("no experiment given (use a subcommand or 'experiment = ...')")
    if name not in EXPERIMENTS:
        no = raw.get("experiment", (None, ""))[0]
        raise ConfigError(f"unknown experiment {name!r}", no)
    schema = EXPERIMENTS[name]
    lines = {k: v[0] for k, v in raw.items()}
    law_name = raw.get("law", (None, None))[1]
    if law_name is None:
        raise ConfigError("missing required key 'law'")
    if law_name not in LAW_KEYS:
        raise ConfigError(f"unknown law {law_name!r} (known: {', '.join(LAW_KEYS)})",
                          lines["law"])
    law_spec: dict = {"law": law_name}
    params: dict = {}
    common: dict = {k: d for k, (_, d) in COMMON.items()}
    for key, (no, value) in raw.items():
        if key == "law":
            continue
        if key in LAW_TYPES:
            if key not in LAW_KEYS[law_name]:
                raise ConfigError(f"key {key!r} does not apply to law {law_name!r}", no)
            parser = LAW_TYPES[key]
            target = law_spec
        elif key in COMMON:
            parser = COMMON[key][0]
            target = common
        elif key in schema:
            parser = schema[key][0]
            target = params
        else:
            raise ConfigError(f"unknown key {key!r} for experiment {name!r}", no)
        try:
            target[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", no) from None
    for key, (_, default) in schema.items():
        params.setdefault(key, default)
    if not 0.0 < common["level"] < 1.0:
        raise ConfigError("level must lie in (0, 1)", lines.get("level"))
    cfg = ExperimentConfig(name, law_spec, params, int(common["seed"]), str(common["out"]),
                           float(common["op_cap"]), float(common["level"]), source, lines)
    cfg.law()  # validate the law eagerly so errors carry line numbers
    return cfg


def load_config(path: str | Path, experiment: str | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, experiment, str(p))


def build_law(spec: dict, lines: dict | None = None) -> EnvironmentLaw:
    """Construct the environment law described by the law keys."""
    lines = lines or {}
    name = spec["law"]
    line = lines.get("law")
    try:
        if name == "homogeneous":
            if "kernel" in spec:
                k = spec["kernel"]
                return Homogeneous(spec.get("dim", len(k) // 2), tuple(k))
            if "p_right" not in spec:
                raise ConfigError("homogeneous law needs 'p_right' or 'kernel'", line)
            if spec.get("dim", 1) != 1:
                raise ConfigError("'p_right' describes a one-dimensional law", lines.get("dim"))
            return Homogeneous.one_dim(spec["p_right"])
        if name == "two_point":
            p = spec.get("p_values")
            if p is None or len(p) != 2:
                raise ConfigError("two_point law needs two 'p_values'", lines.get("p_values", line))
            return DiscreteLaw.two_point(*p)
        if name == "discrete":
            dim = spec.get("dim", 1)
            if "p_values" in spec:
                if dim != 1:
                    raise ConfigError("'p_values' describes a one-dimensional law",
                                      lines.get("p_values"))
                ps = spec["p_values"]
                ws = spec.get("weights", tuple([1.0] * len(ps)))
                if len(ws) != len(ps):
                    raise ConfigError("'weights' must match 'p_values'", lines.get("weights"))
                base = DiscreteLaw.one_dim(list(zip(ps, ws)))
                if "kappa" in spec:
                    return DiscreteLaw(1, base.kernels, base.weights, spec["kappa"])
                return base
            if "kernels" not in spec:
                raise ConfigError("discrete law needs 'p_values' or 'kernels'", line)
            ks = spec["kernels"]
            ws = spec.get("weights", tuple([1.0] * len(ks)))
            if len(ws) != len(ks):
                raise ConfigError("'weights' must match 'kernels'", lines.get("weights"))
            return DiscreteLaw(dim, tuple(tuple(r) for r in ks), tuple(ws), spec.get("kappa"))
        if name == "dirichlet":
            if "alpha" not in spec:
                raise ConfigError("dirichlet law needs 'alpha'", line)
            a = spec["alpha"]
            return DirichletIID(spec.get("dim", len(a) // 2), tuple(a))
        if name == "balanced":
            return BalancedIID(spec.get("dim", 2), spec.get("min_weight", 0.1))
        if name == "trap":
            return TrapLaw(2, spec.get("scale", 0.2), spec.get("phi_min", 0.0),
                           spec.get("phi_max", 0.0))
        if name == "anisotropic":
            r = spec.get("ratios", (1.0 / 3.0, 5.0 / 3.0))
            w = spec.get("weights", tuple([1.0 / len(r)] * len(r)))
            return AnisotropicProduct(2, tuple(r), tuple(w))
    except ConfigError as exc:
        if exc.line is None and line is not None:
            raise ConfigError(str(exc), line) from None
        raise
    raise ConfigError(f"unknown law {name!r}", line)
