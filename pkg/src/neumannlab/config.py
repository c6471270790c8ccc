"""Run configuration: INI files with dotted keys, validated into a RunConfig.

Every value is addressed as ``section.key`` (``run.seed``, ``mc.paths``).
Unknown sections or keys are rejected so typos surface as errors. Lists
are comma separated. Coefficients are never written inline; they come
from the named preset registry, with extra ``problem.*`` keys passed to
the preset factory as numeric parameters.
"""

from __future__ import annotations

import configparser
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import DomainSpec, domain_from_config
from .presets import Preset, get_preset, preset_names

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# section -> key -> default (None means required or computed)
SCHEMA: dict[str, dict[str, object]] = {
    "run": {"seed": None, "output": "neumannlab_out", "workers": 1, "deterministic": True, "steps": "solve-linear"},
    "domain": {"kind": "interval", "params": "-1, 1"},
    "problem": {"preset": None},
    "solver": {"method": "fd"},
    "fd": {"nodes": 201, "time_nodes": 401, "theta": 0.5, "tol": 5e-3},
    "mc": {
        "paths": 20000, "dt": 1e-3, "batch": 1024, "scheme": "reflection", "se_cap": "",
        "eval_t": "0", "eval_x": "", "eval_points": 10, "bias": 0.01, "lift_nodes": 801,
    },
    "penalty": {"ns": "8, 32, 128"},
    "picard": {"tol": 1e-4, "max_iter": 20, "t_nodes": 11, "x_nodes": 21, "distance_paths": 4000},
    "paths": {"paths": 1000, "dt": 1e-3, "T": 1.0, "x0": "0", "qv_rtol": 0.01},
    "star": {"paths": 20000, "dt": 1e-3, "T": 1.0, "x0": "0", "refine": 2, "levels": 3},
    "lift": {"nodes": 2001, "time_slices": 11, "extension": "natural"},
    "geometry": {"samples": 2000},
    "compare": {"bias": 0.01},
    "residual": {"perturbation": 1e-2},
}

STEPS = ("geom-check", "paths", "lift", "star-check", "solve-linear", "solve-penalized", "solve-nonlinear", "residual", "compare")
METHODS = ("fd", "mc")


@dataclass
class RunConfig:
    seed: int
    output: Path
    workers: int
    deterministic: bool
    steps: list[str]
    domain: DomainSpec
    preset_name: str
    preset_params: dict[str, float]
    method: str
    fd: dict
    mc: dict
    penalty_ns: list[float]
    picard: dict
    paths: dict
    star: dict
    lift: dict
    geometry: dict
    compare: dict
    residual: dict
    echo: dict[str, str] = field(default_factory=dict)

    def preset(self) -> Preset:
        return get_preset(self.preset_name, **self.preset_params)

    def eval_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        a, b = (float(v) for v in self.domain.params[:2])
        t = np.asarray(self.mc["eval_t"], dtype=np.float64)
        x = self.mc["eval_x"]
        if x is None:
            x = np.linspace(a, b, int(self.mc["eval_points"]))
        return t, np.asarray(x, dtype=np.float64)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["output"] = str(self.output)
        d["domain"] = {"kind": self.domain.name, "params": [float(v) for v in self.domain.params]}
        d.pop("echo")
        return d


def _floats(key: str, raw: str) -> list[float]:
    try:
        return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(key, f"expected a comma separated list of numbers, got {raw!r}") from None


def _num(key: str, raw, kind=float, positive: bool = True):
    try:
        v = kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {kind.__name__}, got {raw!r}") from None
    if kind is float and not math.isfinite(v):
        raise ConfigError(key, "must be finite")
    if positive and not v > 0:
        raise ConfigError(key, f"must be positive, got {raw!r}")
    return v


def _bool(key: str, raw) -> bool:
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


def read_ini(text: str, source: str = "<config>") -> dict[str, str]:
    """Flatten INI text into {"section.key": value}."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"cannot parse {source}: {exc}") from None
    flat = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(sec, f"unknown section; known: {', '.join(SCHEMA)}")
        for k, v in cp.items(sec):
            if sec != "problem" and k not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{k}", "unknown key")
            flat[f"{sec}.{k}"] = v.strip()
    return flat


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Read, merge overrides (dotted keys) and validate."""
    flat: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("--config", f"no such file: {p}")
        flat.update(read_ini(p.read_text(), str(p)))
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        sec, _, key = k.partition(".")
        if sec not in SCHEMA or (sec != "problem" and key not in SCHEMA[sec]):
            raise ConfigError(k, "unknown key")
        flat[k] = v
    return validate(flat)


def validate(flat: dict[str, object]) -> RunConfig:
    def get(key):
        sec, _, k = key.partition(".")
        return flat.get(key, SCHEMA[sec][k])

    if get("run.seed") in (None, ""):
        raise ConfigError("run.seed", "a seed is required (no entropy default)")
    seed = _num("run.seed", get("run.seed"), int, positive=False)
    if seed < 0 or seed >= 2**64:
        raise ConfigError("run.seed", "must be an unsigned 64-bit integer")

    steps = [s.strip() for s in str(get("run.steps")).split(",") if s.strip()]
    for s in steps:
        if s not in STEPS and s != "report":
            raise ConfigError("run.steps", f"unknown step {s!r}; known: {', '.join(STEPS)}")

    try:
        dom = domain_from_config(str(get("domain.kind")), _floats("domain.params", str(get("domain.params"))))
    except ValueError as exc:
        raise ConfigError("domain.params", str(exc)) from None

    preset = get("problem.preset")
    if preset in (None, ""):
        raise ConfigError("problem.preset", "a preset name is required")
    if preset not in preset_names():
        raise ConfigError("problem.preset", f"unknown preset {preset!r}; known: {', '.join(preset_names())}")
    pparams = {k.split(".", 1)[1]: _num(k, v, positive=False) for k, v in flat.items()
               if k.startswith("problem.") and k != "problem.preset"}
    method = str(get("solver.method"))
    if method not in METHODS:
        raise ConfigError("solver.method", f"must be one of {METHODS}")

    fd = {
        "nodes": _num("fd.nodes", get("fd.nodes"), int),
        "time_nodes": _num("fd.time_nodes", get("fd.time_nodes"), int),
        "theta": _num("fd.theta", get("fd.theta"), float, positive=False),
        "tol": _num("fd.tol", get("fd.tol")),
    }
    if not 0.0 <= fd["theta"] <= 1.0:
        raise ConfigError("fd.theta", "must lie in [0, 1]")

    se_cap = str(get("mc.se_cap")).strip()
    eval_x = str(get("mc.eval_x")).strip()
    mc = {
        "paths": _num("mc.paths", get("mc.paths"), int),
        "dt": _num("mc.dt", get("mc.dt")),
        "batch": _num("mc.batch", get("mc.batch"), int),
        "scheme": str(get("mc.scheme")),
        "se_cap": _num("mc.se_cap", se_cap) if se_cap else None,
        "eval_t": _floats("mc.eval_t", str(get("mc.eval_t"))),
        "eval_x": _floats("mc.eval_x", eval_x) if eval_x else None,
        "eval_points": _num("mc.eval_points", get("mc.eval_points"), int),
        "bias": _num("mc.bias", get("mc.bias"), positive=False),
        "lift_nodes": _num("mc.lift_nodes", get("mc.lift_nodes"), int),
    }
    if mc["scheme"] not in ("reflection", "projection"):
        raise ConfigError("mc.scheme", "must be 'reflection' or 'projection'")

    ns = _floats("penalty.ns", str(get("penalty.ns")))
    if not ns or any(n <= 0 for n in ns):
        raise ConfigError("penalty.ns", "needs at least one positive penalty")

    picard = {
        "tol": _num("picard.tol", get("picard.tol")),
        "max_iter": _num("picard.max_iter", get("picard.max_iter"), int),
        "t_nodes": _num("picard.t_nodes", get("picard.t_nodes"), int),
        "x_nodes": _num("picard.x_nodes", get("picard.x_nodes"), int),
        "distance_paths": _num("picard.distance_paths", get("picard.distance_paths"), int),
    }

    paths = {
        "paths": _num("paths.paths", get("paths.paths"), int),
        "dt": _num("paths.dt", get("paths.dt")),
        "T": _num("paths.T", get("paths.T")),
        "x0": _floats("paths.x0", str(get("paths.x0"))),
        "qv_rtol": _num("paths.qv_rtol", get("paths.qv_rtol")),
    }
    star = {
        "paths": _num("star.paths", get("star.paths"), int),
        "dt": _num("star.dt", get("star.dt")),
        "T": _num("star.T", get("star.T")),
        "x0": _floats("star.x0", str(get("star.x0"))),
        "refine": _num("star.refine", get("star.refine"), int),
        "levels": _num("star.levels", get("star.levels"), int),
    }
    if star["refine"] < 2:
        raise ConfigError("star.refine", "must be at least 2")
    if star["levels"] < 2:
        raise ConfigError("star.levels", "must be at least 2")
    lift = {
        "nodes": _num("lift.nodes", get("lift.nodes"), int),
        "time_slices": _num("lift.time_slices", get("lift.time_slices"), int),
        "extension": str(get("lift.extension")),
    }
    if lift["extension"] not in ("natural", "projected"):
        raise ConfigError("lift.extension", "must be 'natural' or 'projected'")

    echo = {k: str(v) for k, v in sorted(flat.items())}
    return RunConfig(
        seed=seed,
        output=Path(str(get("run.output"))),
        workers=_num("run.workers", get("run.workers"), int),
        deterministic=_bool("run.deterministic", get("run.deterministic")),
        steps=steps,
        domain=dom,
        preset_name=str(preset),
        preset_params=pparams,
        method=method,
        fd=fd,
        mc=mc,
        penalty_ns=ns,
        picard=picard,
        paths=paths,
        star=star,
        lift=lift,
        geometry={"samples": _num("geometry.samples", get("geometry.samples"), int)},
        compare={"bias": _num("compare.bias", get("compare.bias"), positive=False)},
        residual={"perturbation": _num("residual.perturbation", get("residual.perturbation"))},
        echo=echo,
    )
