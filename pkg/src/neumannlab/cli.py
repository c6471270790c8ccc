"""Command line entry point and the experiment pipeline.

A run reads one config, executes the requested steps in order, writes every
table atomically into ``run.output`` and appends one JSON line per step to
``manifest.jsonl``. Each table carries enough columns (value, reference,
tolerance, pass) for its verdict to be recomputed from the file alone.

Exit codes: 0 all checks pass, 1 numeric failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bsde import DistanceConfig, MCConfig, default_lift, picard_solve_mc, solve_linear_mc, solve_penalized_bsde
from .config import STEPS, ConfigError, RunConfig, load_config
from .fd import FDConfig, picard_solve_fd, solve_linear_fd, weak_residual
from .geometry import INTERVAL, geometry_selfcheck
from .grid import GridFunction, atomic_write_text
from .lift import solve_lift_spacetime, weak_residuals
from .paths import simulate_reflected, star_expectation, star_integral
from .picard import contraction_constants
from .rng import PathStreams, map_batches, mean_se

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
MANIFEST = "manifest.jsonl"


class NumericFailure(RuntimeError):
    """A solver step failed; the message names the module."""


# ---------------------------------------------------------------------------
# hashing and tables


def content_hash(named_blobs: dict[str, bytes]) -> str:
    """sha256 over git-style blob headers, in name order."""
    h = hashlib.sha256()
    for name in sorted(named_blobs):
        data = named_blobs[name]
        h.update(f"blob {name} {len(data)}\0".encode())
        h.update(data)
    return h.hexdigest()


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, Path):
        return str(obj)
    return _fmt(obj)


# ---------------------------------------------------------------------------
# compare


@dataclass
class CompareResult:
    rows: list[tuple]
    verdict: bool
    max_diff: float
    max_ratio: float

    def to_csv_text(self) -> str:
        return _csv_text(["t", "x", "u_a", "u_b", "abs_diff", "tolerance", "pass"], self.rows)


def compare(grid_a: GridFunction | str | Path, grid_b: GridFunction | str | Path, bias: float = 0.01) -> CompareResult:
    """Per-point |u_a - u_b| against 3 * joint SE + bias.

    Points of ``grid_a`` are used. When ``grid_b`` is on other nodes it is
    interpolated bilinearly, which requires its SEs to vanish (a
    deterministic grid) and its box to contain every point of ``grid_a``.
    """
    A = GridFunction.read_csv(grid_a) if not isinstance(grid_a, GridFunction) else grid_a
    B = GridFunction.read_csv(grid_b) if not isinstance(grid_b, GridFunction) else grid_b
    same = (A.t_nodes.shape == B.t_nodes.shape and A.x_nodes.shape == B.x_nodes.shape
            and np.allclose(A.t_nodes, B.t_nodes) and np.allclose(A.x_nodes, B.x_nodes))
    T, X = np.meshgrid(A.t_nodes, A.x_nodes, indexing="ij")
    if same:
        ub, seb = B.values, B.std_errors
    else:
        eps = 1e-12
        inside = (A.t_nodes.min() >= B.t_nodes.min() - eps and A.t_nodes.max() <= B.t_nodes.max() + eps
                  and A.x_nodes.min() >= B.x_nodes.min() - eps and A.x_nodes.max() <= B.x_nodes.max() + eps)
        if not inside:
            raise ValueError("incompatible grids: evaluation points of A lie outside grid B")
        if np.any(B.std_errors != 0) and B.t_nodes.size * B.x_nodes.size > 1:
            raise ValueError("incompatible grids: interpolating a stochastic grid is not supported")
        ub, seb = B.interp(T, X), np.zeros_like(T)
    diff = np.abs(A.values - ub)
    tol = 3.0 * np.hypot(A.std_errors, seb) + bias
    ok = diff <= tol
    rows = [(float(t), float(x), float(a), float(b), float(d), float(s), int(p))
            for t, x, a, b, d, s, p in zip(T.ravel(), X.ravel(), A.values.ravel(), np.ravel(ub), diff.ravel(), tol.ravel(), ok.ravel())]
    ratio = float(np.max(diff / np.where(tol > 0, tol, np.inf))) if diff.size else 0.0
    return CompareResult(rows, bool(np.all(ok)), float(diff.max(initial=0.0)), ratio)


# ---------------------------------------------------------------------------
# report


@dataclass
class SolveReport:
    output: Path
    tables: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, dict] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    content_hash: str = ""

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def summary_lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in self.checks.items()]


class _Run:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = cfg.output
        self.out.mkdir(parents=True, exist_ok=True)
        self.report = SolveReport(self.out)
        self.blobs: dict[str, bytes] = {}
        self.cache: dict[str, object] = {}
        self.events: list[dict] = []
        self.preset = cfg.preset()

    # -- persistence ----------------------------------------------------
    def table(self, name: str, text: str) -> str:
        atomic_write_text(self.out / name, text)
        self.blobs[name] = text.encode()
        self.report.tables[name] = name
        return name

    def check(self, step: str, name: str, ok: bool) -> None:
        self.report.checks[f"{step}:{name}"] = bool(ok)

    def metric(self, step: str, **kv) -> None:
        self.report.metrics.setdefault(step, {}).update(_jsonable(kv))

    def streams(self, tag: str) -> PathStreams:
        return PathStreams(self.cfg.seed, tag)

    # -- solver plumbing ------------------------------------------------
    def fd_config(self) -> FDConfig:
        c = self.cfg.fd
        return FDConfig(nodes=c["nodes"], time_nodes=c["time_nodes"], theta=c["theta"])

    def mc_config(self, **over) -> MCConfig:
        c = self.cfg.mc
        kw = dict(paths=c["paths"], dt=c["dt"], workers=self.cfg.workers, batch=c["batch"],
                  deterministic=self.cfg.deterministic, se_cap=c["se_cap"], lift_nodes=c["lift_nodes"],
                  scheme=c["scheme"])
        kw.update(over)
        return MCConfig(**kw)

    def require_linear(self, step: str) -> None:
        if not self.preset.coef.linear:
            raise ConfigError("problem.preset", f"{step} needs a linear preset, {self.cfg.preset_name!r} is nonlinear")

    def fd_solution(self) -> GridFunction:
        if "fd" not in self.cache:
            self.require_linear("the linear FD solver")
            self.cache["fd"] = solve_linear_fd(self.cfg.domain, self.preset.coef, self.fd_config())
        return self.cache["fd"]

    def mc_solution(self) -> GridFunction:
        if "mc" not in self.cache:
            self.require_linear("the linear MC solver")
            mcfg = self.mc_config()
            coef = self.preset.coef
            lift = default_lift(self.cfg.domain, coef, mcfg)
            t, x = self.cfg.eval_nodes()
            self.cache["mc"] = solve_linear_mc(self.cfg.domain, coef, lift, t, x, mcfg, self.streams("solve-linear"))
        return self.cache["mc"]

    def exact_table(self, step: str, u: GridFunction, tol_fn) -> tuple[float, bool]:
        ex = self.preset.coef.exact
        T, X = np.meshgrid(u.t_nodes, u.x_nodes, indexing="ij")
        ref = np.asarray(ex(T, X), dtype=np.float64)
        err = np.abs(u.values - ref)
        tol = tol_fn(u)
        ok = err <= tol
        rows = zip(T.ravel(), X.ravel(), u.values.ravel(), ref.ravel(), u.std_errors.ravel(), err.ravel(),
                   np.broadcast_to(tol, err.shape).ravel(), ok.astype(int).ravel())
        self.table(f"{step}_errors.csv", _csv_text(["t", "x", "u", "exact", "se", "abs_err", "tolerance", "pass"], rows))
        return float(err.max()), bool(ok.all())


# ---------------------------------------------------------------------------
# steps


def _step_geom(run: _Run) -> None:
    rep = geometry_selfcheck(run.cfg.domain, run.cfg.geometry["samples"], run.cfg.seed)
    rows = [(k, v, 1e-10, int(v <= 1e-10)) for k, v in rep.max_violation.items()]
    run.table("geom_check.csv", _csv_text(["invariant", "max_violation", "tolerance", "pass"], rows))
    run.metric("geom-check", samples=rep.samples, max_violation=rep.max_violation)
    run.check("geom-check", "invariants", rep.ok)


def _step_paths(run: _Run) -> None:
    c = run.cfg.paths
    dom = run.cfg.domain
    streams = run.streams("paths")
    x0 = np.asarray(c["x0"], dtype=np.float64)
    if x0.size != dom.dimension:
        raise ConfigError("paths.x0", f"needs {dom.dimension} coordinates")
    checkpoints = np.linspace(0.0, c["T"], 11)[1:]

    def run_batch(first, count):
        b = simulate_reflected(dom, None, x0, 0.0, c["T"], c["dt"], streams, count, first)
        # bracket of the first coordinate's martingale part, sum of dB_1^2
        qv = np.cumsum(b.brownian_increments[..., 0] ** 2, axis=1)
        idx = np.clip(np.searchsorted(b.t_grid, checkpoints - 1e-12) - 1, 0, b.steps - 1)
        lt = b.local_time()[:, idx + 1]
        return np.concatenate([qv[:, idx], lt], axis=1)

    vals = map_batches(run_batch, c["paths"], run.cfg.workers, 256)
    m, s = mean_se(vals, deterministic=run.cfg.deterministic)
    k = checkpoints.size
    rel = np.abs(m[:k] / checkpoints - 1.0)
    ok = rel <= c["qv_rtol"]
    rows = zip(checkpoints, m[:k], s[:k], rel, [c["qv_rtol"]] * k, ok.astype(int), m[k:], s[k:])
    run.table("paths_moments.csv", _csv_text(["t", "qv_mean", "qv_se", "qv_rel_err", "tolerance", "pass", "local_time_mean", "local_time_se"], rows))
    run.metric("paths", paths=c["paths"], dt=c["dt"], qv_max_rel_err=float(rel.max()), mean_local_time_T=float(m[-1]))
    run.check("paths", "quadratic_variation", bool(ok.all()))


def _step_lift(run: _Run) -> None:
    coef = run.preset.coef
    dom = run.cfg.domain
    c = run.cfg.lift
    ts = np.linspace(0.0, coef.horizon, c["time_slices"])
    L = solve_lift_spacetime(lambda t, x: coef.g(t, x), dom, c["nodes"], ts, separable=coef.separable,
                             zero=coef.zero_divergence, extension=c["extension"])
    res = weak_residuals(L, lambda t, x: coef.g(t, x), dom, c["extension"]) if not coef.zero_divergence else np.zeros(ts.size)
    tol = 1e3 * np.finfo(float).eps * L.cond * max(1.0, L.bounds["G"], L.bounds["grad"])
    rows = []
    for i, t in enumerate(ts):
        for j, x in enumerate(L.o_grid):
            rows.append((float(t), float(x), L.values[i, j], L.gradient[i, j], L.time_derivative[i, j]))
    run.table("lift.csv", _csv_text(["t", "x", "G", "G_x", "G_t"], rows))
    run.table("lift_residuals.csv", _csv_text(["t", "residual", "tolerance", "pass"],
                                               [(float(t), float(r), float(tol), int(r <= tol)) for t, r in zip(ts, res)]))
    run.metric("lift", provenance=L.provenance, bounds=L.bounds, cond=L.cond, max_residual=float(res.max()))
    run.check("lift", "weak_residual", bool(np.all(res <= tol)))


def _step_star(run: _Run) -> None:
    c = run.cfg.star
    dom = run.cfg.domain
    x0 = np.asarray(c["x0"], dtype=np.float64)
    N = dom.dimension

    # constant field: the star integral vanishes path by path
    b = simulate_reflected(dom, None, x0, 0.0, c["T"], c["dt"], run.streams("star-null"), min(c["paths"], 1000))
    null = star_integral(lambda t, x: np.full(x.shape, 0.7), b)
    null_ok = float(np.max(np.abs(null))) <= 1e-12

    # g(x) = x: E[star] = -T div g = -N T
    est = star_expectation(lambda t, x: x, dom, x0, c["T"], c["dt"], c["paths"], run.streams("star"),
                           refine=c["refine"], workers=run.cfg.workers, levels=c["levels"])
    target = -N * c["T"]
    dev = abs(est.extrapolated_mean - target)
    ok = dev <= 3.0 * est.extrapolated_se and est.extrapolated_se <= 0.02
    rows = [(f"raw level {i}", est.dt_coarse / c["refine"] ** i, m, "", target, "")
            for i, m in enumerate(est.level_means)]
    rows.append(("extrapolated", est.dt_fine, est.extrapolated_mean, est.extrapolated_se, target, int(ok)))
    run.table("star_check.csv", _csv_text(["estimate", "dt", "mean", "se", "target", "pass"], rows))
    run.metric("star-check", null_max_abs=float(np.max(np.abs(null))), paths=c["paths"],
               extrapolated=est.extrapolated_mean, se=est.extrapolated_se, raw_fine=est.fine_mean)
    run.check("star-check", "constant_null", null_ok)
    run.check("star-check", "divergence_mean", ok)


def _linear_checks(run: _Run, step: str, u: GridFunction, method: str) -> None:
    coef = run.preset.coef
    if coef.exact is None:
        return
    if method == "fd":
        tol = run.cfg.fd["tol"]
        err, ok = run.exact_table(f"{step}_fd", u, lambda g: np.full(g.values.shape, tol))
        run.metric(step, fd_max_error=err)
        run.check(step, "fd_exact", ok)
    else:
        bias = run.cfg.mc["bias"]
        err, ok = run.exact_table(f"{step}_mc", u, lambda g: 3.0 * g.std_errors + bias)
        run.metric(step, mc_max_error=err, mc_max_se=float(u.std_errors.max()))
        run.check(step, "mc_exact", ok)
    if run.cfg.preset_name == "constant":
        exact = np.abs(u.values - coef.exact(0.0, 0.0)).max() <= 1e-12 and np.all(u.std_errors == 0)
        run.check(step, f"constant_exactness_{method}", bool(exact))


def _step_linear(run: _Run) -> None:
    m = run.cfg.method
    t0 = time.perf_counter()
    u = run.fd_solution() if m == "fd" else run.mc_solution()
    run.metric("solve-linear", method=m, seconds=time.perf_counter() - t0)
    if m == "mc":
        low = u.meta.get("low_confidence") or []
        run.metric("solve-linear", low_confidence=low)
    run.table(f"solution_{m}.csv", u.to_csv_text())
    _linear_checks(run, "solve-linear", u, m)


def _step_penalized(run: _Run) -> None:
    run.require_linear("solve-penalized")
    coef = run.preset.coef
    dom = run.cfg.domain
    mcfg = run.mc_config()
    lift = default_lift(dom, coef, mcfg)
    t, x = run.cfg.eval_nodes()
    ns = run.cfg.penalty_ns
    ref = run.mc_solution() if len(ns) > 1 else None
    errs = []
    rows = []
    for n in ns:
        u = solve_penalized_bsde(dom, coef, lift, n, t, x, mcfg, run.streams("solve-penalized"))
        run.table(f"solution_penalized_n{n:g}.csv", u.to_csv_text())
        gap = float(np.abs(u.values - ref.values).max()) if ref is not None else math.nan
        ex = float(np.abs(u.values - coef.exact(*np.meshgrid(t, x, indexing="ij"))).max()) if coef.exact else math.nan
        errs.append(gap)
        rows.append((float(n), gap, ex, float(u.std_errors.max())))
    monotone = all(b < a for a, b in zip(errs, errs[1:])) if ref is not None else True
    run.table("penalized_sweep.csv", _csv_text(["n", "max_gap_to_reflected", "max_error_exact", "max_se"], rows))
    run.metric("solve-penalized", ns=ns, gaps=errs)
    run.check("solve-penalized", "monotone_approach", monotone)


def _step_nonlinear(run: _Run) -> None:
    coef = run.preset.coef
    asm = run.preset.assumptions
    dom = run.cfg.domain
    c = run.cfg.picard
    cc = contraction_constants(asm)
    m = run.cfg.method
    if m == "fd":
        u, st = picard_solve_fd(dom, coef, run.fd_config(), c["tol"], c["max_iter"], asm=asm)
        rho = cc.analytic.rho
        tail = [r for r in st.ratios[2:] if r is not None]
        ratio_ok = (not cc.analytic.feasible) or all(r <= rho + 0.1 for r in tail)
    else:
        if dom.kind != INTERVAL:
            raise ConfigError("domain.kind", "the Monte Carlo Picard solver is implemented for intervals")
        a, b = (float(v) for v in dom.params)
        tn = np.linspace(0.0, coef.horizon, c["t_nodes"])
        xn = np.linspace(a, b, c["x_nodes"])
        w = cc.probabilistic
        dist = DistanceConfig(c["distance_paths"], w.lam, w.mu, w.delta, run.cfg.mc["scheme"]) if w.feasible else None
        try:
            u, st = picard_solve_mc(dom, coef, tn, xn, run.mc_config(), run.streams("solve-nonlinear"),
                                    c["tol"], c["max_iter"], asm=asm, distance=dist)
        except ValueError as exc:
            raise NumericFailure(f"bsde_engine: {exc}") from exc
        ratio_ok = all(r < 1.0 + 3.0 * (s or 0.0) for r, s in zip(st.ratios, st.ratio_se) if r is not None)
    run.table(f"solution_picard_{m}.csv", u.to_csv_text())
    hist = "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in st.as_records())
    run.table(f"picard_history_{m}.jsonl", hist)
    run.metric("solve-nonlinear", method=m, iterations=st.k, converged=st.converged, alarm=st.alarm,
               ratios=st.ratios, constants=cc.as_dict(), norm=st.norm)
    run.check("solve-nonlinear", f"ratios_{m}", ratio_ok)
    run.check("solve-nonlinear", f"no_alarm_{m}", not st.alarm)
    run.check("solve-nonlinear", f"converged_{m}", st.converged)
    if coef.exact is not None:
        if m == "fd":
            tol = run.cfg.fd["tol"]
            err, ok = run.exact_table("solve-nonlinear_fd", u, lambda g: np.full(g.values.shape, tol))
        else:
            bias = run.cfg.mc["bias"]
            err, ok = run.exact_table("solve-nonlinear_mc", u, lambda g: 3.0 * g.std_errors + bias)
        run.check("solve-nonlinear", f"exact_{m}", ok)


def _perturbed(u: GridFunction, eps: float) -> GridFunction:
    T = u.t_nodes[-1]
    bump = eps * (1.0 - u.t_nodes[:, None] / T) * (1.0 + u.x_nodes[None, :] ** 2)
    return u.with_values(u.values + bump)


def _step_residual(run: _Run) -> None:
    coef = run.preset.coef
    if coef.linear:
        u = run.fd_solution()
    else:
        u, _ = picard_solve_fd(run.cfg.domain, coef, run.fd_config(), run.cfg.picard["tol"], run.cfg.picard["max_iter"])
    r = weak_residual(u, coef)
    pert = _perturbed(u, run.cfg.residual["perturbation"])
    rp = weak_residual(pert, coef)
    rows = [("computed", r), ("perturbed", rp)]
    checks = {"perturbation_detected": rp >= 10.0 * r}
    if coef.exact is not None:
        T, X = np.meshgrid(u.t_nodes, u.x_nodes, indexing="ij")
        err = float(np.abs(u.values - coef.exact(T, X)).max())
        rows.append(("max_error", err))
        checks["residual_within_10x_error"] = r <= 10.0 * max(err, 1e-14)
        run.metric("residual", max_error=err)
    run.table("residual.csv", _csv_text(["quantity", "value"], rows))
    run.metric("residual", residual=r, perturbed_residual=rp)
    for k, v in checks.items():
        run.check("residual", k, bool(v))


def _step_compare(run: _Run) -> None:
    mc, fd = run.mc_solution(), run.fd_solution()
    for name, u in (("solution_mc.csv", mc), ("solution_fd.csv", fd)):
        if name not in run.blobs:
            run.table(name, u.to_csv_text())
    res = compare(mc, fd, run.cfg.compare["bias"])
    run.table("compare_mc_fd.csv", res.to_csv_text())
    run.metric("compare", max_diff=res.max_diff, max_ratio=res.max_ratio)
    run.check("compare", "mc_vs_fd", res.verdict)


STEP_FUNCS = {
    "geom-check": _step_geom,
    "paths": _step_paths,
    "lift": _step_lift,
    "star-check": _step_star,
    "solve-linear": _step_linear,
    "solve-penalized": _step_penalized,
    "solve-nonlinear": _step_nonlinear,
    "residual": _step_residual,
    "compare": _step_compare,
}
assert set(STEP_FUNCS) == set(STEPS)


def run(config: RunConfig | str | Path, overrides: dict | None = None) -> SolveReport:
    """Execute the configured steps and persist tables plus a manifest line per step."""
    cfg = config if isinstance(config, RunConfig) else load_config(config, overrides)
    r = _Run(cfg)
    for step in cfg.steps:
        if step == "report":
            continue
        logger.info("step %s", step)
        t0 = time.perf_counter()
        try:
            STEP_FUNCS[step](r)
        except (ConfigError, NumericFailure):
            raise
        except Exception as exc:
            raise NumericFailure(f"{step}: {type(exc).__name__}: {exc}") from exc
        r.events.append({"step": step, "seconds": round(time.perf_counter() - t0, 3)})
    rep = r.report
    # where the tables go and how many threads made them do not change their content
    hashed = {k: v for k, v in cfg.echo.items() if k not in ("run.output", "run.workers")}
    rep.content_hash = content_hash({**r.blobs, "config": json.dumps(hashed, sort_keys=True).encode()})
    rep.manifest = {
        "version": __version__,
        "config": cfg.echo,
        "seed": cfg.seed,
        "steps": cfg.steps,
        "tables": {k: hashlib.sha256(v).hexdigest() for k, v in sorted(r.blobs.items())},
        "content_hash": rep.content_hash,
        "checks": rep.checks,
        "metrics": rep.metrics,
        "passed": rep.passed,
    }
    _append_manifest(cfg.output, rep.manifest, r.events)
    return rep


def _append_manifest(out: Path, manifest: dict, events: list[dict]) -> None:
    path = out / MANIFEST
    old = path.read_text() if path.exists() else ""
    lines = [json.dumps(_jsonable({"event": "step", **e}), sort_keys=True) for e in events]
    lines.append(json.dumps(_jsonable({"event": "run", **manifest}), sort_keys=True))
    atomic_write_text(path, old + "\n".join(lines) + "\n")


def read_report(out: str | Path) -> dict:
    """The last run record of a manifest, with pass/fail recomputed from its tables."""
    path = Path(out) / MANIFEST
    if not path.exists():
        raise ConfigError("run.output", f"no manifest in {out}")
    runs = [json.loads(l) for l in path.read_text().splitlines() if l.strip()]
    runs = [r for r in runs if r.get("event") == "run"]
    if not runs:
        raise ConfigError("run.output", f"no run record in {path}")
    last = runs[-1]
    recomputed = {}
    for name in last.get("tables", {}):
        p = Path(out) / name
        if not p.exists():
            recomputed[name] = False
            continue
        if name.endswith(".csv"):
            with open(p, newline="") as fh:
                rows = list(csv.DictReader(fh))
            if rows and "pass" in rows[0]:
                recomputed[name] = all(r["pass"] in ("1", "") for r in rows)
    last["recomputed"] = recomputed
    return last


# ---------------------------------------------------------------------------
# argparse


def _common_flags(p: argparse.ArgumentParser, default) -> None:
    """Global flags, accepted before or after the subcommand.

    On subparsers the defaults are suppressed so that a flag given before
    the subcommand is not reset by the subparser.
    """
    d = {} if default is None else {"default": default}
    p.add_argument("--config", help="INI config file", **d)
    p.add_argument("--seed", type=int, help="master seed (overrides run.seed)", **d)
    p.add_argument("--workers", type=int, help="worker threads (overrides run.workers)", **d)
    p.add_argument("--deterministic-reduction", action="store_true", help="order-fixed reductions", **d)
    p.add_argument("--output", help="output directory (overrides run.output)", **d)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key", **d)
    p.add_argument("-v", "--verbose", action="count", help="more logging", **d)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neumannlab", description="Neumann-problem solvers and their numerical checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common_flags(p, None)
    common = argparse.ArgumentParser(add_help=False)
    _common_flags(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("geom-check", "paths", "lift", "star-check", "residual", "run"):
        sub.add_parser(name, parents=[common])
    for name in ("solve-linear", "solve-nonlinear"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--method", choices=("fd", "mc"))
    s = sub.add_parser("solve-penalized", parents=[common])
    s.add_argument("--n", type=float, action="append", help="penalty (repeatable)")
    s = sub.add_parser("compare", parents=[common])
    s.add_argument("grid_a", nargs="?", help="CSV grid (t,x,u,z,se)")
    s.add_argument("grid_b", nargs="?", help="CSV grid to compare against")
    s.add_argument("--bias", type=float, help="bias allowance added to 3 * joint SE")
    s.add_argument("--out", help="diff table path")
    s = sub.add_parser("report", parents=[common])
    s.add_argument("directory", nargs="?", help="run output directory")
    return p


def _overrides(args) -> dict[str, object]:
    ov: dict[str, object] = {}
    for item in args.set or []:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(item, "--set expects KEY=VALUE")
        ov[k.strip()] = v.strip()
    if args.seed is not None:
        ov["run.seed"] = args.seed
    if args.workers is not None:
        ov["run.workers"] = args.workers
    if args.deterministic_reduction:
        ov["run.deterministic"] = True
    if args.output:
        ov["run.output"] = args.output
    cmd = args.command
    if cmd not in ("run", "report", "compare"):
        ov["run.steps"] = cmd
    if getattr(args, "method", None):
        ov["solver.method"] = args.method
    if cmd == "solve-penalized" and args.n:
        ov["penalty.ns"] = ", ".join(repr(float(n)) for n in args.n)
    return ov


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose or 0, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare" and args.grid_a:
            if not args.grid_b:
                raise ConfigError("grid_b", "compare needs two CSV grids")
            try:
                res = compare(args.grid_a, args.grid_b, 0.01 if args.bias is None else args.bias)
            except (OSError, ValueError) as exc:
                raise ConfigError("grid", str(exc)) from None
            if args.out:
                atomic_write_text(args.out, res.to_csv_text())
            print(f"{'PASS' if res.verdict else 'FAIL'}  compare  max|du|={res.max_diff:.3e}  max(|du|/tol)={res.max_ratio:.3f}")
            return EXIT_OK if res.verdict else EXIT_NUMERIC
        if args.command == "report":
            out = args.directory or (load_config(args.config, _overrides(args)).output if args.config else None)
            if out is None:
                raise ConfigError("directory", "report needs an output directory or a config")
            rec = read_report(out)
            for name, ok in rec["checks"].items():
                print(f"{'PASS' if ok else 'FAIL'}  {name}")
            for name, ok in rec["recomputed"].items():
                print(f"{'PASS' if ok else 'FAIL'}  table {name}")
            print(f"content_hash {rec['content_hash']}")
            ok = rec["passed"] and all(rec["recomputed"].values())
            return EXIT_OK if ok else EXIT_NUMERIC
        if args.command == "compare":
            ov = _overrides(args)
            ov["run.steps"] = "compare"
            if args.bias is not None:
                ov["compare.bias"] = args.bias
            rep = run(load_config(args.config, ov))
        else:
            rep = run(load_config(args.config, _overrides(args)))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for line in rep.summary_lines():
        print(line)
    print(f"content_hash {rep.content_hash}")
    return EXIT_OK if rep.passed else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
