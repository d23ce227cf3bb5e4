"""Scenario runner: JSON config in, trajectory CSV, report JSON and SVG plot out.

Usage::

    relaxinc {simulate,relax,approximate,counterexample,stability} \\
        [--config PATH] [--out DIR] [--seed N] [--horizon T] [--step H]

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 counterexample verification failure.  ``report.json`` is written in every
case.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .counterexample import counterexample_bounded, counterexample_escape, escape_policy
from .expr import ParseError, parse_expr, state_env
from .inclusion import DomainError, relax
from .integrate import DivergenceError, TimeGrid, Trajectory, ac_norm, integrate, integrate_relaxed, tube_check, zero_target
from .relaxapprox import ApproximationError, Partition, RadiusProfile, stitch_infinite
from .setgeom import GeometryError
from .stability import (
    Ball,
    BundleSpec,
    OutputSystem,
    build_bundle,
    check_attractivity,
    estimate_stability_margin,
    gain_table,
    lemma54_sup,
    make_policy,
)
from .systems import load_system

SCHEMA = "relaxinc.report/1"
TASKS = ("simulate", "relax", "approximate", "counterexample", "stability")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

_DEFAULT_SYSTEM = {
    "simulate": "linear_decay",
    "relax": "binary_switch",
    "approximate": "binary_switch",
    "counterexample": "example41",
    "stability": "linear_decay",
}


class ConfigError(ValueError):
    pass


class VerificationError(RuntimeError):
    pass


@dataclass
class Scenario:
    """Every run parameter; the resolved instance is echoed into the report."""

    task: str = "simulate"
    system: Optional[str] = None
    horizon: float = 10.0
    step: float = 0.01
    seed: int = 0
    x0: Optional[list] = None
    policy: str = "const:0"
    target: Optional[list] = None
    # approximation
    radius: object = 0.1
    r_min: float = 1e-4
    partition_dt: float = 1.0
    tol_zeta: float = 1e-3
    gain: float = 1.0
    refine: int = 1
    probes: int = 4
    # counterexample
    eps: float = 0.1
    escape_policy: str = "plus"
    escape_step: float = 1e-3
    escape_horizon: Optional[float] = None
    bounded_horizon: float = 100.0
    bounded_step: float = 1e-2
    # stability
    output: Optional[str] = None
    kappas: list = field(default_factory=lambda: [0.5, 1.0])
    epsilons: list = field(default_factory=lambda: [0.1, 0.5])
    phi_radius: float = 0.1
    j_radius: float = 0.05
    eps_attr: float = 0.01
    bundle: dict = field(default_factory=dict)
    plot: bool = True

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        sc = cls(**data)
        sc.validate()
        return sc

    def to_dict(self):
        return asdict(self)

    def resolved(self):
        d = self.to_dict()
        if d["system"] is None:
            d["system"] = _DEFAULT_SYSTEM[self.task]
        b = BundleSpec(horizon=self.horizon, step=self.step, seed=self.seed)
        d["bundle"] = {**b.to_dict(), **self.bundle}
        return Scenario(**d)

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("horizon", "step", "eps", "escape_step", "bounded_horizon", "bounded_step", "partition_dt"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.step > self.horizon:
            raise ConfigError("step exceeds horizon")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        bad = sorted(set(self.bundle) - {f for f in BundleSpec.__dataclass_fields__})
        if bad:
            raise ConfigError(f"unknown bundle keys: {bad}")
        try:
            for pol in [self.policy, *self.bundle.get("policies", ())]:
                make_policy(pol)
            escape_policy(self.escape_policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


# -- output helpers ------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps_report(report):
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def write_atomic(path, text):
    """Write via a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _thin(n, cap=2000):
    stride = max(1, int(math.ceil(n / cap)))
    idx = list(range(0, n, stride))
    if idx[-1] != n - 1:
        idx.append(n - 1)
    return idx


def render_svg(trajectories, tube=None, labels=None, width=720, panel_height=180):
    """SVG text: one panel per coordinate, optional band ``z(t) +/- r(t)`` per coordinate.

    ``tube`` is ``(z, r)`` with ``r`` a number or a callable of ``t``.
    """
    if not trajectories:
        raise ValueError("emit_plot needs at least one trajectory")
    dim = trajectories[0].dim
    if any(x.dim != dim for x in trajectories):
        raise ValueError("trajectories must share their dimension")
    labels = labels or [f"trajectory {i}" for i in range(len(trajectories))]
    t_lo = min(x.t0 for x in trajectories)
    t_hi = max(x.t_end for x in trajectories)
    if tube is not None:
        z, r = tube
        zi = _thin(len(z))
        zt = z.times[zi]
        rv = np.array([float(r(t)) if callable(r) else float(r) for t in zt])
    pad, m = 50, 12
    height = dim * panel_height + m
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    span_t = (t_hi - t_lo) or 1.0
    for c in range(dim):
        top = m + c * panel_height
        vals = [x.states[:, c] for x in trajectories]
        if tube is not None:
            vals += [z.states[zi, c] - rv, z.states[zi, c] + rv]
        lo = min(float(np.min(v)) for v in vals)
        hi = max(float(np.max(v)) for v in vals)
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        h = panel_height - m - 20

        def X(t):
            return pad + (t - t_lo) / span_t * (width - pad - m)

        def Y(v):
            return top + h - (v - lo) / (hi - lo) * h

        out.append(f'<rect x="{pad}" y="{top}" width="{width - pad - m}" height="{h}" fill="none" stroke="#999"/>')
        out.append(f'<text x="4" y="{top + 12}" font-size="11" font-family="monospace">x{c + 1}</text>')
        out.append(f'<text x="4" y="{top + h}" font-size="9" font-family="monospace">{lo:.3g}</text>')
        out.append(f'<text x="4" y="{top + 22}" font-size="9" font-family="monospace">{hi:.3g}</text>')
        if tube is not None:
            upper = [f"{X(t):.2f},{Y(v):.2f}" for t, v in zip(zt, z.states[zi, c] + rv)]
            lower = [f"{X(t):.2f},{Y(v):.2f}" for t, v in zip(zt[::-1], (z.states[zi, c] - rv)[::-1])]
            out.append(f'<polygon points="{" ".join(upper + lower)}" fill="#cccccc" fill-opacity="0.5" stroke="none"/>')
        for k, x in enumerate(trajectories):
            idx = _thin(len(x))
            pts = " ".join(f"{X(x.times[i]):.2f},{Y(x.states[i, c]):.2f}" for i in idx)
            out.append(f'<polyline points="{pts}" fill="none" stroke="{_COLORS[k % len(_COLORS)]}" stroke-width="1"/>')
    for k, lab in enumerate(labels):
        out.append(
            f'<text x="{pad + 4}" y="{height - 2 - 12 * (len(labels) - 1 - k)}" font-size="10" '
            f'font-family="monospace" fill="{_COLORS[k % len(_COLORS)]}">{lab}</text>'
        )
    out.append(f'<text x="{width - m}" y="{height - 2}" font-size="9" font-family="monospace" text-anchor="end">t in [{t_lo:.4g}, {t_hi:.4g}]</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(trajectories, tube, path, labels=None):
    write_atomic(path, render_svg(trajectories, tube, labels))
    return path


# -- tasks -----------------------------------------------------------------------


def _target(sc, dim):
    if sc.target is None:
        return zero_target
    if len(sc.target) != dim:
        raise ConfigError(f"target needs {dim} expressions")
    allowed = {"t"} | {f"x{i}" for i in range(1, dim + 1)}
    exprs = [parse_expr(str(e), allowed) for e in sc.target]
    return lambda t, x: np.array([float(e(state_env(t, x))) for e in exprs])


def _x0(sc, dim):
    x0 = np.zeros(dim) if sc.x0 is None else np.asarray(sc.x0, dtype=float)
    if x0.shape != (dim,):
        raise ConfigError(f"x0 must have {dim} entries")
    return x0


def _radius(sc):
    if isinstance(sc.radius, str):
        return RadiusProfile.from_expr(sc.radius, sc.r_min)
    return RadiusProfile.constant(float(sc.radius), sc.r_min)


def _policy(sc):
    kind = sc.policy.partition(":")[0]
    if kind == "random" and ":" not in sc.policy:
        return make_policy(f"random:{sc.seed}")
    return make_policy(sc.policy)


def _traj_summary(x, F):
    return {
        "nodes": len(x),
        "final_state": x.states[-1],
        "ac_norm": ac_norm(x),
        "euler_residual": x.euler_residual(),
        "selection_residual": x.selection_residual(F),
    }


def _task_simulate(sc, F, files):
    grid = TimeGrid.uniform(0.0, sc.horizon, sc.step)
    x = integrate(F, _policy(sc), _x0(sc, F.dim), grid)
    files["trajectory.csv"] = x.to_csv()
    plots = ([x], None, ["trajectory"])
    return {"trajectory": _traj_summary(x, F)}, plots


def _task_relax(sc, F, files):
    grid = TimeGrid.uniform(0.0, sc.horizon, sc.step)
    G = relax(F)
    z = integrate_relaxed(G, _target(sc, F.dim), _x0(sc, F.dim), grid, record_weights=False)
    files["trajectory.csv"] = z.to_csv()
    return {"trajectory": _traj_summary(z, G)}, ([z], None, ["relaxed"])


def _task_approximate(sc, F, files):
    grid = TimeGrid.uniform(0.0, sc.horizon, sc.step)
    z = integrate_relaxed(relax(F), _target(sc, F.dim), _x0(sc, F.dim), grid, record_weights=False)
    r = _radius(sc)
    P = Partition.uniform(sc.partition_dt, sc.horizon)
    gamma, rep = stitch_infinite(
        F, z, r, P, sc.tol_zeta, gain=sc.gain, refine=sc.refine, probes=sc.probes, seed=sc.seed
    )
    tube = tube_check(gamma, z, r)
    files["reference.csv"] = z.to_csv()
    files["trajectory.csv"] = gamma.to_csv()
    out = {
        "approximation": rep.to_dict(),
        "tube": asdict(tube),
        "trajectory": _traj_summary(gamma, F),
        "initial_offset": float(np.linalg.norm(gamma.states[0] - z.states[0])),
    }
    return out, ([z, gamma], (z, r), ["reference z", "genuine gamma"])


def _task_counterexample(sc, F, files):
    esc = counterexample_escape(sc.eps, sc.escape_policy, sc.escape_step, sc.escape_horizon)
    bnd, traj, origin = counterexample_bounded(sc.eps, sc.bounded_horizon, sc.bounded_step)
    files["trajectory.csv"] = traj.to_csv()
    files["origin.csv"] = origin.to_csv()
    out = {
        "escape": esc.to_dict(),
        "bounded": bnd.to_dict(),
        "consistent": bool(esc.bound_check and bnd.ok),
        "note": "bounded witness verified on the horizon only; beyond it x1 and x2 stay in [-c1, 0] and "
        "[-c2, 0] because both are nondecreasing with limit 0",
    }
    if not esc.bound_check or not esc.x2_check:
        raise VerificationError("escape bound check failed", out)
    if not bnd.ok:
        raise VerificationError("bounded witness failed verification", out)
    return out, ([traj], (_zero_like(traj), sc.eps), ["offset witness"])


def _zero_like(x):
    return Trajectory(x.times, np.zeros_like(x.states), np.zeros_like(x.velocities))


def _task_stability(sc, F, files):
    sys_ = OutputSystem.from_spec(F, sc.output)
    b = dict(sc.bundle)
    b["policies"] = tuple(b.get("policies", ("const:0",)))
    if b.get("points") is not None:
        b["points"] = tuple(tuple(p) for p in b["points"])
    spec = BundleSpec(**b)
    margin = estimate_stability_margin(sys_, sc.eps, spec)
    table = gain_table(sys_, sc.kappas, sc.epsilons, spec)
    sup = lemma54_sup(sys_, Ball(sc.phi_radius, closed=False), Ball(sc.j_radius), spec)
    attr = check_attractivity(sys_, spec, sc.eps_attr)
    bundle = build_bundle(sys_, spec)
    lab = sup.attained_by if sup.attained_by in bundle.labels else bundle.labels[0]
    x = bundle.trajectories[bundle.labels.index(lab)]
    files["trajectory.csv"] = x.to_csv()
    out = {
        "margin": margin.to_dict(),
        "gain_table": table.to_dict(),
        "gain_table_monotone": table.is_monotone(),
        "first_crossing_sup": sup.to_dict(),
        "attractivity": asdict(attr),
        "verdict_scope": "empirical over sampled bundle",
    }
    shown = bundle.trajectories[: len(_COLORS)]
    return out, (shown, None, bundle.labels[: len(shown)])


_TASKS = {
    "simulate": _task_simulate,
    "relax": _task_relax,
    "approximate": _task_approximate,
    "counterexample": _task_counterexample,
    "stability": _task_stability,
}


def run(scenario, out_dir):
    """Execute ``scenario``, write its artifacts into ``out_dir`` and return the exit code."""
    files = {}
    task = scenario.task if isinstance(scenario, Scenario) else dict(scenario).get("task")
    report = {"schema": SCHEMA, "task": task, "config": None, "results": None, "error": None}
    code = EXIT_OK
    try:
        try:
            if not isinstance(scenario, Scenario):
                scenario = Scenario.from_dict(dict(scenario))
            scenario.validate()
            sc = scenario.resolved()
            report["config"] = sc.to_dict()
            F = load_system(sc.system)
        except (ConfigError, ParseError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        results, plot = _TASKS[sc.task](sc, F, files)
        report["results"] = results
        if sc.plot and plot is not None:
            trajs, tube, labels = plot
            files["plot.svg"] = render_svg(trajs, tube, labels)
    except ConfigError as exc:
        code, report["error"] = EXIT_CONFIG, f"config error: {exc}"
    except VerificationError as exc:
        code, report["error"] = EXIT_VERIFY, f"verification failure: {exc.args[0]}"
        report["results"] = exc.args[1] if len(exc.args) > 1 else None
    except (ApproximationError, DivergenceError, GeometryError, DomainError, FloatingPointError, ValueError) as exc:
        code, report["error"] = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
        rep = getattr(exc, "report", None)
        if rep is not None:
            report["results"] = {"approximation": rep.to_dict()}
    report["status"] = {EXIT_OK: "ok", EXIT_CONFIG: "config_error", EXIT_NUMERIC: "numeric_failure", EXIT_VERIFY: "verification_failure"}[code]
    report["exit_code"] = code
    report["files"] = sorted(files) + ["report.json"]
    os.makedirs(out_dir, exist_ok=True)
    for name, text in sorted(files.items()):
        write_atomic(os.path.join(out_dir, name), text)
    write_atomic(os.path.join(out_dir, "report.json"), dumps_report(report))
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="relaxinc", description="Differential-inclusion scenario runner.")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--step", type=float)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
            if not isinstance(data, dict):
                raise ConfigError("config must be a JSON object")
        except (OSError, json.JSONDecodeError, ConfigError) as exc:
            os.makedirs(args.out, exist_ok=True)
            rep = {"schema": SCHEMA, "task": args.task, "status": "config_error", "exit_code": EXIT_CONFIG,
                   "error": f"config error: {exc}", "results": None, "files": ["report.json"]}
            write_atomic(os.path.join(args.out, "report.json"), dumps_report(rep))
            print(f"relaxinc: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    if data.get("task", args.task) != args.task:
        data["task"] = f"{data['task']} (config) vs {args.task} (command line)"
    else:
        data["task"] = args.task
    for key in ("seed", "horizon", "step"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    code = run(data, args.out)
    if code != EXIT_OK:
        with open(os.path.join(args.out, "report.json"), encoding="utf-8") as fh:
            print(f"relaxinc: {json.load(fh)['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
