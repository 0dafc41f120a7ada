"""Scenario files, runs, verification suites and convergence studies.

Scenario schema (JSON)::

    {
      "grid": {"dim": 2, "extents": [[0, 1], [0, 1]], "cells": [32, 32],
               "patches": {"inlet": ["left", 0, 32], ...}},          # optional
      "model": {"family": "euler", ...},                              # see model_from_config
      "state_equation": {"family": "ideal_gas", "gamma": 1.4},        # optional
      "initial": {"u": ["0.1*sin(pi*x)", "0"], "rho": "1 + 0.1*x",
                  "s": "..." | "T": "...", "adv": [...]},
      "bulk_sources": {"b": [...], "theta_rho": "...", "theta_s": "..."},
      "boundaries": [{"patch": "left", "mode": "closed", "params": {}}, ...],
      "time": {"t_end": 0.1, "dt": null, "cfl": 0.4, "scheme": "rk4", "strict_cfl": true},
      "output": {"snapshot_every": 10, "binary": false},
      "seed": 0
    }

Patches without an entry in ``boundaries`` are free_open.  ``dt``,
``t_end``, ``cfl`` and ``scheme`` may also sit at the top level.

Exit codes: 0 pass, 1 verification failure, 2 config error, 3 numerical abort.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .budgets import all_budgets, total_energy
from .dynamics import CFLError, NumericalAbort, cfl_limit, step
from .expr import ExpressionError, compile_scalar, compile_vector
from .grid import GridError, make_grid, write_snapshot
from .models import ModelError, State, model_from_config
from .sources import ClosureError, SourceSet, bulk_from_config, make_flux_spec
from .thermo import DegenerateStateError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

TOP_KEYS = {"grid", "model", "state_equation", "initial", "bulk_sources", "boundaries", "time",
            "output", "seed", "dt", "t_end", "cfl", "scheme", "name", "description"}


class ConfigError(ValueError):
    """Invalid scenario; ``path`` locates the offending key."""

    def __init__(self, msg, path="", line=None):
        loc = path or "<config>"
        if line is not None:
            loc = f"{loc} (line {line})"
        super().__init__(f"{loc}: {msg}")
        self.path = path
        self.line = line


def _key_lines(text):
    """First line number of each quoted key in the JSON text."""
    lines = {}
    for n, row in enumerate(text.splitlines(), 1):
        for part in row.split('"')[1::2]:
            lines.setdefault(part, n)
    return lines


@dataclass
class Scenario:
    raw: dict
    grid: object
    model: object
    sources: SourceSet
    initial: dict
    time: dict
    output: dict
    seed: int = 0
    source_path: str = ""
    lines: dict = field(default_factory=dict)

    @property
    def digest(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def initial_state(self):
        g, model = self.grid, self.model
        coords = g.mesh()
        x = coords[0]
        y = coords[1] if g.dim == 2 else np.zeros_like(x)
        t0 = float(self.time.get("t0", 0.0))
        ini = self.initial
        u = np.stack([np.broadcast_to(e(x, y, t0), g.shape) for e in ini["u"].exprs])
        rho = np.stack([np.broadcast_to(e(x, y, t0), g.shape) for e in ini["rho"]])
        if "s" in ini:
            s = np.broadcast_to(ini["s"](x, y, t0), g.shape)
        elif "T" in ini:
            s = model.eq.entropy_from_temperature(np.sum(rho, axis=0), np.broadcast_to(ini["T"](x, y, t0), g.shape))
        else:
            s = np.zeros(g.shape)
        adv = None
        if "adv" in ini:
            adv = np.asarray(_eval_nested(ini["adv"], x, y, t0, g.shape), float)
        return State(g, u, rho, np.array(s, float), adv, t0)

    def refined(self, factor):
        raw = json.loads(json.dumps(self.raw))
        raw["grid"]["cells"] = [int(c) * factor for c in raw["grid"]["cells"]]
        if "patches" in raw["grid"]:
            raw["grid"]["patches"] = {
                k: (v if isinstance(v, str) else [v[0], int(v[1]) * factor, int(v[2]) * factor])
                for k, v in raw["grid"]["patches"].items()
            }
        return build_scenario(raw, self.source_path)


def _compile_nested(item, path):
    if isinstance(item, list):
        return [_compile_nested(v, f"{path}[{i}]") for i, v in enumerate(item)]
    try:
        return compile_scalar(str(item) if isinstance(item, (int, float)) else item)
    except ExpressionError as exc:
        raise ConfigError(str(exc), path) from None


def _eval_nested(item, x, y, t, shape):
    if isinstance(item, list):
        return [_eval_nested(v, x, y, t, shape) for v in item]
    return np.broadcast_to(item(x, y, t), shape)


def load_scenario(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", str(path), exc.lineno) from None
    return build_scenario(raw, str(path), _key_lines(text))


def build_scenario(raw, source_path="", lines=None):
    """Validate ``raw`` completely, then build grid, model, sources and initial data."""
    lines = lines or {}

    def err(msg, path):
        key = path.split(".")[-1].split("[")[0]
        return ConfigError(msg, f"{source_path}:{path}" if source_path else path, lines.get(key))

    if not isinstance(raw, dict):
        raise err("top level must be an object", "")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise err(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
    for key in ("grid", "model", "initial"):
        if key not in raw:
            raise err("missing required key", key)

    gcfg = raw["grid"]
    try:
        dim = int(gcfg["dim"])
        patches = gcfg.get("patches")
        if patches is not None:
            patches = {k: (v if isinstance(v, str) else tuple(v)) for k, v in patches.items()}
        grid = make_grid(dim, gcfg["extents"], gcfg["cells"], patches)
    except (KeyError, TypeError) as exc:
        raise err(f"grid needs dim, extents and cells ({exc})", "grid") from None
    except GridError as exc:
        raise err(str(exc), "grid") from None

    mcfg = dict(raw["model"])
    if "state_equation" in raw:
        mcfg.setdefault("state_equation", raw["state_equation"])
    try:
        model = model_from_config(mcfg, dim)
    except (ModelError, ExpressionError, ValueError, TypeError) as exc:
        raise err(str(exc), "model") from None

    try:
        bulk = bulk_from_config(raw.get("bulk_sources"), dim)
    except (ClosureError, ExpressionError, ValueError) as exc:
        raise err(str(exc), "bulk_sources") from None

    closures = {}
    for i, b in enumerate(raw.get("boundaries", [])):
        p = f"boundaries[{i}]"
        if not isinstance(b, dict) or "patch" not in b or "mode" not in b:
            raise err("each boundary needs patch and mode", p)
        if b["patch"] in closures:
            raise err(f"patch {b['patch']!r} given twice", p)
        try:
            closures[b["patch"]] = make_flux_spec(b["mode"], b.get("params", {}), b["patch"], grid)
        except (ClosureError, ExpressionError, ValueError, TypeError) as exc:
            raise err(str(exc), p) from None
    for name, patch in grid.patches.items():
        if name not in closures:
            closures[name] = make_flux_spec("free_open", {}, patch, grid)

    icfg = raw["initial"]
    if not isinstance(icfg, dict) or "u" not in icfg or "rho" not in icfg:
        raise err("initial needs u and rho", "initial")
    initial = {}
    try:
        initial["u"] = compile_vector([str(v) if isinstance(v, (int, float)) else v for v in icfg["u"]])
    except (ExpressionError, TypeError) as exc:
        raise err(str(exc), "initial.u") from None
    if len(initial["u"].exprs) != dim:
        raise err(f"u needs {dim} components", "initial.u")
    rho = icfg["rho"] if isinstance(icfg["rho"], list) else [icfg["rho"]]
    if len(rho) != model.ncomp:
        raise err(f"model has {model.ncomp} components, rho has {len(rho)}", "initial.rho")
    initial["rho"] = [_compile_nested(r, f"initial.rho[{i}]") for i, r in enumerate(rho)]
    for key in ("s", "T"):
        if key in icfg:
            initial[key] = _compile_nested(icfg[key], f"initial.{key}")
    if "adv" in icfg:
        if not model.has_adv:
            raise err("model has no advected tensor", "initial.adv")
        initial["adv"] = _compile_nested(icfg["adv"], "initial.adv")
    elif model.has_adv:
        raise err("model needs an initial advected tensor", "initial.adv")
    unknown = set(icfg) - {"u", "rho", "s", "T", "adv"}
    if unknown:
        raise err(f"unknown keys {sorted(unknown)}", "initial")

    time = dict(raw.get("time", {}))
    for key in ("dt", "t_end", "cfl", "scheme"):
        if key in raw:
            time.setdefault(key, raw[key])
    time.setdefault("t_end", 0.0)
    time.setdefault("cfl", 0.4)
    time.setdefault("scheme", "rk4")
    if time["scheme"] != "rk4":
        raise err(f"unknown scheme {time['scheme']!r}", "time.scheme")
    try:
        if float(time["t_end"]) < 0 or not 0 < float(time["cfl"]) <= 1.0:
            raise err("need t_end >= 0 and 0 < cfl <= 1", "time")
        if time.get("dt") is not None and not float(time["dt"]) > 0:
            raise err("dt must be positive", "time.dt")
    except (TypeError, ValueError):
        raise err("time controls must be numbers", "time") from None
    output = dict(raw.get("output", {}))
    output.setdefault("snapshot_every", 0)
    output.setdefault("binary", False)

    sc = Scenario(raw, grid, model, SourceSet(bulk, closures), initial, time, output,
                  int(raw.get("seed", 0)), source_path, lines)
    try:
        sc.initial_state()
    except (ModelError, DegenerateStateError, FloatingPointError, ValueError) as exc:
        raise err(f"initial state rejected: {exc}", "initial") from None
    return sc


# ---------------------------------------------------------------------------
# run


def energy_columns(model, state):
    aux = model.aux(state.grid.mesh(), state.t)
    grad_rho = None
    if model.korteweg:
        from .models import _grad_rho

        grad_rho = _grad_rho(model, state)
    parts = model.energy_parts(state.u, state.rho, state.s, aux, state.adv, grad_rho)
    vol = state.grid.cell_volume
    return {f"energy_{k}": float(np.sum(v) * vol) for k, v in parts.items()}


def diagnostics_row(sc, state):
    model = sc.model
    vol = state.grid.cell_volume
    row = {"t": state.t, "mass": float(np.sum(state.rho) * vol)}
    if model.ncomp > 1:
        for k in range(model.ncomp):
            row[f"mass_{k}"] = float(np.sum(state.rho[k]) * vol)
    row["entropy"] = float(np.sum(state.s) * vol)
    row["energy_total"] = total_energy(model, state, sc.sources.closures)
    row.update(energy_columns(model, state))
    passed = True
    for rep in all_budgets(model, state, sc.sources):
        q = rep.quantity
        row[f"bulk_{q}"] = rep.bulk
        row[f"boundary_{q}"] = rep.boundary
        row[f"residual_{q}"] = rep.residual
        row[f"tol_{q}"] = rep.tol
        passed &= rep.passed
    return row, passed


def _fmt(v):
    return repr(float(v))


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], str) else str(r[c]).lower() if isinstance(r[c], bool)
                    else _fmt(r[c]) for c in columns])
    return buf.getvalue()


def _snapshot(sc, state, path):
    cols = {f"u{c}": state.u[c] for c in range(state.grid.dim)}
    for k in range(state.rho.shape[0]):
        cols[f"rho{k}"] = state.rho[k]
    cols["s"] = state.s
    if state.adv is not None:
        flat = state.adv.reshape((-1,) + state.grid.shape)
        for i in range(flat.shape[0]):
            cols[f"adv{i}"] = flat[i]
    return write_snapshot(path, state.grid, cols, binary=bool(sc.output.get("binary")))


@dataclass
class RunRecord:
    digest: str
    rows: list
    final_snapshot: str
    verdicts: dict
    status: str = "ok"
    message: str = ""


def run_scenario(sc, out_dir):
    """Integrate to t_end, writing timeseries.csv, snapshots and summary.json."""
    os.makedirs(out_dir, exist_ok=True)
    snap_dir = os.path.join(out_dir, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    state = sc.initial_state()
    t_end = float(sc.time["t_end"])
    cfl = float(sc.time["cfl"])
    strict = bool(sc.time.get("strict_cfl", True))
    every = int(sc.output.get("snapshot_every") or 0)
    rows, all_pass = [], True
    status, message = "ok", ""
    last_snap = _snapshot(sc, state, os.path.join(snap_dir, "step_000000.csv"))
    n = 0
    try:
        row, ok = diagnostics_row(sc, state)
        rows.append(row)
        all_pass &= ok
        while state.t < t_end - 1e-12 * max(1.0, t_end):
            dt = sc.time.get("dt")
            dt = float(dt) if dt is not None else cfl_limit(sc.model, state, cfl)
            dt = min(dt, t_end - state.t)
            state = step(sc.model, state, sc.sources, dt=dt, cfl=cfl, strict_cfl=strict)
            n += 1
            row, ok = diagnostics_row(sc, state)
            rows.append(row)
            all_pass &= ok
            if every and n % every == 0:
                last_snap = _snapshot(sc, state, os.path.join(snap_dir, f"step_{n:06d}.csv"))
    except (NumericalAbort, FloatingPointError, DegenerateStateError) as exc:
        status, message = "aborted", str(exc)
    except CFLError as exc:
        status, message = "aborted", str(exc)
    if status == "ok":
        last_snap = _snapshot(sc, state, os.path.join(snap_dir, "final.csv"))
    columns = list(rows[0]) if rows else ["t"]
    _atomic_write(os.path.join(out_dir, "timeseries.csv"), _csv_text(rows, columns))
    worst = {}
    for c in columns:
        if c.startswith("residual_"):
            q = c[len("residual_"):]
            worst[q] = {
                "max_abs_residual": float(max(abs(r[c]) for r in rows)),
                "passed": bool(all(abs(r[c]) <= r[f"tol_{q}"] for r in rows)),
            }
    rec = RunRecord(sc.digest, rows, os.path.relpath(last_snap, out_dir), worst, status, message)
    summary = {"scenario": sc.source_path, "scenario_sha256": sc.digest, "seed": sc.seed,
               "steps": n, "t_final": float(state.t), "status": status, "message": message,
               "final_snapshot": rec.final_snapshot, "budgets": worst, "passed": bool(all_pass)}
    _atomic_write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return rec


# ---------------------------------------------------------------------------
# verify and converge


def _threads():
    try:
        return max(1, int(os.environ.get("OPENFLUID_THREADS", "1")))
    except ValueError:
        return 1


def verify(which, sc, out_dir=None):
    from .verify import BRACKET_COLUMNS, BUDGET_COLUMNS, SUITES, run_suite

    suites = list(SUITES) if which == "all" else [which]
    tables = {s: [] for s in suites}
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        futures = [pool.submit(run_suite, s, sc, sc.seed, tables[s]) for s in suites]
        verdicts = [v for f in futures for v in f.result()]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _atomic_write(os.path.join(out_dir, "verdicts.json"),
                      json.dumps([v.as_dict() for v in verdicts], indent=2) + "\n")
        for name, cols in (("budgets", BUDGET_COLUMNS), ("bracket", BRACKET_COLUMNS)):
            if tables.get(name):
                _atomic_write(os.path.join(out_dir, f"{name}.csv"), _csv_text(tables[name], cols))
    return verdicts


def verdict_table(verdicts):
    width = max([len(v.check) for v in verdicts] + [5])
    lines = [f"{'suite':<14} {'check':<{width}} {'value':>12} {'tol':>10}  result"]
    for v in verdicts:
        lines.append(f"{v.suite:<14} {v.check:<{width}} {v.value:12.3e} {v.tol:10.2e}  "
                     f"{'PASS' if v.passed else 'FAIL'}{'  ' + v.detail if v.detail else ''}")
    return "\n".join(lines)


@dataclass
class ConvergenceRow:
    quantity: str
    spacing: list
    residual: list
    order: float
    status: str


def _level_residuals(sc):
    """Max |residual| over the run for every budget and catalogue functional."""
    from .brackets import BracketError, catalogue, extended_evolution_rate

    state = sc.initial_state()
    t_end = float(sc.time["t_end"])
    cfl = float(sc.time["cfl"])
    dt_cfg = sc.time.get("dt")
    try:
        cat = catalogue(sc.model)
    except BracketError:
        cat = {}
    worst = {}

    def record(st):
        for rep in all_budgets(sc.model, st, sc.sources):
            worst[rep.quantity] = max(worst.get(rep.quantity, 0.0), abs(rep.residual))
        for name, f in cat.items():
            r = extended_evolution_rate(f, sc.model, st, sc.sources)
            key = f"bracket_{name}"
            worst[key] = max(worst.get(key, 0.0), abs(r.residual))

    record(state)
    while state.t < t_end - 1e-12 * max(1.0, t_end):
        dt = float(dt_cfg) if dt_cfg is not None else cfl_limit(sc.model, state, cfl)
        state = step(sc.model, state, sc.sources, dt=min(dt, t_end - state.t), cfl=cfl)
        record(state)
    return worst


def convergence_study(sc, levels, min_order=1.8, floor=1e-12):
    """Fitted log-log order of every residual over successively halved spacing.

    A configured dt is halved with the spacing.
    """
    if levels < 3:
        raise ConfigError("convergence study needs at least 3 levels", "levels")
    scs = []
    for k in range(levels):
        s = sc.refined(2 ** k)
        if s.time.get("dt") is not None:
            s.time["dt"] = float(s.time["dt"]) / 2 ** k
        scs.append(s)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(_level_residuals, scs))
    h = [float(np.max(s.grid.spacing)) for s in scs]
    rows = []
    for q in results[0]:
        res = [r[q] for r in results]
        if max(res) <= floor:
            rows.append(ConvergenceRow(q, h, res, float("nan"), "round-off"))
            continue
        order = float(np.polyfit(np.log(h), np.log(np.maximum(res, 1e-300)), 1)[0])
        monotone = all(a > b for a, b in zip(res, res[1:]))
        status = "pass" if order >= min_order and monotone else ("non-monotone" if not monotone else "fail")
        rows.append(ConvergenceRow(q, h, res, order, status))
    return rows


# ---------------------------------------------------------------------------
# command line


def _parser():
    p = argparse.ArgumentParser(prog="openfluid", description="Open-boundary fluid laboratory.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="integrate a scenario")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("suite", help="budgets | bracket | legendre | stress_tables | material | all")
    v.add_argument("--config", required=True)
    v.add_argument("--out", default=None, help="directory for verdicts.json and bracket.csv")
    v.add_argument("--json", action="store_true", help="print JSON verdicts instead of a table")
    c = sub.add_parser("converge", help="refinement study of budget and bracket residuals")
    c.add_argument("--config", required=True)
    c.add_argument("--levels", type=int, default=3)
    c.add_argument("--out", default=None, help="directory for convergence.csv")
    return p


def main(argv=None):
    from .verify import SUITES

    args = _parser().parse_args(argv)
    try:
        sc = load_scenario(args.config)
        if args.command == "verify" and args.suite not in SUITES + ("all",):
            raise ConfigError(f"unknown suite {args.suite!r}", "suite")
        if args.command == "converge" and args.levels < 3:
            raise ConfigError("convergence study needs at least 3 levels", "levels")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        rec = run_scenario(sc, args.out)
        if rec.status == "aborted":
            print(f"numerical abort: {rec.message}", file=sys.stderr)
            return EXIT_ABORT
        failed = [q for q, v in rec.verdicts.items() if not v["passed"]]
        for q, v in rec.verdicts.items():
            print(f"{q:<24} max|residual| {v['max_abs_residual']:.3e}  {'PASS' if v['passed'] else 'FAIL'}")
        return EXIT_FAIL if failed else EXIT_OK

    if args.command == "verify":
        try:
            verdicts = verify(args.suite, sc, args.out)
        except (NumericalAbort, FloatingPointError, DegenerateStateError) as exc:
            print(f"numerical abort: {exc}", file=sys.stderr)
            return EXIT_ABORT
        if args.json:
            print(json.dumps([v.as_dict() for v in verdicts], indent=2))
        else:
            print(verdict_table(verdicts))
        return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL

    try:
        rows = convergence_study(sc, args.levels)
    except (NumericalAbort, FloatingPointError, DegenerateStateError, CFLError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    lines = ["quantity,dx,residual,order,status"]
    for r in rows:
        for h, e in zip(r.spacing, r.residual):
            lines.append(f"{r.quantity},{_fmt(h)},{_fmt(e)},{_fmt(r.order)},{r.status}")
    text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _atomic_write(os.path.join(args.out, "convergence.csv"), text)
    for r in rows:
        print(f"{r.quantity:<28} order {r.order:6.2f}  {r.status}")
    bad = [r for r in rows if r.status in ("fail", "non-monotone")]
    return EXIT_FAIL if bad else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
