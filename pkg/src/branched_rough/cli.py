"""Command-line harness: scenario loading, verification suites and reports.

Exit status is 0 when every check passes, 1 when a check fails and 2 when
the command line or the scenario cannot be parsed.
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np
import sympy as sp

from . import checks as C
from .brackets import bracket_polynomial, consistency_report
from .controlled import identity_controlled
from .forests import ParseError, format_forest, parse_forest, parse_label
from .geometry import (
    Atlas,
    Chart,
    Connection,
    ManifoldRoughPath,
    manifold_rde_solve,
    patched_integral,
    patched_ito_defect,
    right_inverse_residual,
    transfer_symbols,
)
from .lift import lift, pushforward, pushforward_bracket
from .polymap import PolyMap
from .rough_path import (
    RoughPath,
    from_increments,
    quasi_geometric_defect,
    quasi_geometric_lift,
    smooth_lift,
)

__all__ = ["main"]


class ScenarioError(Exception):
    """The scenario file is missing, malformed or inconsistent."""


# ------------------------------------------------------------------ plumbing


def _load_scenario(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc


def _polymap(obj: Any, variables: list[str] | None = None) -> PolyMap:
    if isinstance(obj, dict):
        return PolyMap(list(obj["components"]), list(obj["variables"]))
    if variables is None:
        raise ScenarioError("polynomial map needs variables")
    return PolyMap(list(obj), variables)


def _driver(cfg: dict[str, Any], depth: int | None) -> RoughPath:
    """``{"path": [...], "p": 3.5, "brackets": {"{11}": "t/3"}, "interval": [0, 1], "depth": 10}``."""
    if "file" in cfg:
        return RoughPath.load(Path(cfg["file"]).read_text())
    path = _polymap(cfg["path"], ["t"])
    p = float(cfg.get("p", 3.5))
    d = int(depth if depth is not None else cfg.get("depth", 8))
    interval = tuple(cfg.get("interval", (0.0, 1.0)))
    brackets = cfg.get("brackets")
    if brackets:
        bp = {parse_label(k): PolyMap([v], ["t"]) for k, v in brackets.items()}
        X = quasi_geometric_lift(path, p, d, bracket_paths=bp, interval=interval)
    else:
        X = smooth_lift(path, p, d, interval)
    perturb = cfg.get("perturb")
    if perturb:
        f = parse_forest(perturb["forest"])
        if f not in X.basis.index:
            raise ScenarioError(f"cannot perturb {perturb['forest']}: not in the basis")
        cells = X.levels[X.depth].copy()
        cells[:, X.basis.index[f]] += float(perturb.get("eps", 1e-3)) * np.diff(X.times)
        X = from_increments(X.basis, X.p, X.times, cells, X.x0 or None)
    return X


def _connection(cfg: dict[str, Any], key: str = "christoffel", vkey: str = "variables") -> Connection:
    variables = list(cfg[vkey])
    m = len(variables)
    table = cfg.get(key)
    if table is None:
        return Connection.flat(m, variables)
    if len(table) != m:
        raise ScenarioError(f"{key} must have {m} upper-index blocks")
    return Connection(table, variables)


def _emit(suite: str, results: list[C.Check], fmt: str, out: str | None, extra: dict[str, Any] | None = None) -> int:
    ok = all(c.passed for c in results)
    report = {"suite": suite, "passed": ok, "checks": [c.to_json() for c in results]}
    if extra:
        report["data"] = extra
    if out:
        Path(out).write_text(json.dumps(report, indent=2, default=str))
    if fmt == "json":
        click.echo(json.dumps(report, indent=2, default=str))
    else:
        for key, val in (extra or {}).items():
            click.echo(f"{key}: {val}")
        for c in results:
            status = "PASS" if c.passed else "FAIL"
            rel = "≥" if c.negative else "≤"
            line = f"{status} {c.id}: defect {c.defect:.3e} {rel} {c.tolerance:.1e} ({c.runtime:.2f}s)"
            click.echo(line + (f"  {c.detail}" if c.detail else ""))
    return 0 if ok else 1


def _run(fn: Callable[[], int]) -> None:
    try:
        code = fn()
    except (ScenarioError, ParseError, KeyError, ValueError, TypeError, sp.SympifyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    sys.exit(code)


def _common(f: Callable) -> Callable:
    opts = [
        click.option("--scenario", "scenario", type=click.Path(), default=None, help="Scenario JSON file."),
        click.option("--tolerance", type=float, default=1e-8, show_default=True),
        click.option("--max-degree", type=int, default=None),
        click.option("--letters", type=int, default=None),
        click.option("--grid-depth", type=int, default=None),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--out", type=click.Path(), default=None, help="Write the report JSON here."),
        click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="text", show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@click.group()
def main() -> None:
    """Branched rough path verification harness."""


# ---------------------------------------------------------------- commands


@main.command("verify-hopf")
@_common
def verify_hopf(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Bialgebra axioms, antipodes and duality over all forests of bounded degree."""

    def go() -> int:
        d = max_degree or 4
        res = C.hopf_checks(letters or 2, d, min_basis=100 if d >= 4 and (letters or 2) >= 2 else 0)
        return _emit("verify-hopf", res, fmt, out)

    _run(go)


@main.command("verify-bracket")
@_common
def verify_bracket(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Bracket polynomials, golden values and bracket consistency of a driver."""

    def go() -> int:
        sc = _load_scenario(scenario)
        res = [c for c in C.bracket_golden_checks() if c.id.startswith("golden.bracket")]
        data: dict[str, Any] = {}
        for text in sc.get("forests", []):
            data[f"<<{text}>>"] = str(bracket_polynomial(parse_forest(text)))
        if "driver" in sc:
            T = C._Timer()
            X = _driver(sc["driver"], grid_depth)
            rep = consistency_report(X)
            worst = max(rep, key=lambda r: r[3], default=None)
            detail = "" if worst is None else f"worst f={format_forest(worst[0])}, g={format_forest(worst[1])}"
            res.append(T.check("bracket.consistency", worst[3] if worst else 0.0, tolerance, detail))
        return _emit("verify-bracket", res, fmt, out, data)

    _run(go)


@main.command("lift")
@_common
def lift_cmd(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Lift of the driver's own trace, and of f(X) against the composed-path oracle."""

    def go() -> int:
        sc = _load_scenario(scenario) or {"driver": {"path": ["t", "t**2"], "p": 3.5}}
        X = _driver(sc["driver"], grid_depth)
        T = C._Timer()
        names = [a.name for a in X.letters()]
        d, where = C._max_forest_diff(lift(identity_controlled(X), names), X)
        res = [T.check("lift.identity", d, tolerance, where)]
        if "map" in sc:
            f = _polymap(sc["map"], [f"x{i + 1}" for i in range(len(names))])
            L = pushforward(f, X, tol=1.0)
            if "brackets" not in sc["driver"]:
                path = _polymap(sc["driver"]["path"], ["t"])
                ref = smooth_lift(f.compose(path), X.p, X.depth, tuple(sc["driver"].get("interval", (0.0, 1.0))))
                d, where = C._max_forest_diff(L, ref)
                res.append(T.check("lift.composed_oracle", d, max(tolerance, 1e-7), where))
        return _emit("lift", res, fmt, out)

    _run(go)


@main.command("pushforward")
@_common
def pushforward_cmd(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Pushforward through a polynomial map, with oracle or quasi-geometric checks."""

    def go() -> int:
        sc = _load_scenario(scenario) or {
            "driver": {"path": ["t", "t**2"], "p": 3.5, "depth": 10},
            "map": {"variables": ["x1", "x2"], "components": ["x1**2*x2", "x1 - x2**3"]},
        }
        X = _driver(sc["driver"], grid_depth)
        f = _polymap(sc["map"])
        T = C._Timer()
        res = []
        data: dict[str, Any] = {}
        if "brackets" in sc["driver"]:
            PB = pushforward_bracket(f, X, tol=1.0)
            qd = quasi_geometric_defect(PB)
            worst = max(qd, key=qd.get)
            res.append(T.check("pushforward.quasi_geometric", qd[worst], max(tolerance, 1e-4), format_forest(worst)))
            Y = PB
        else:
            Y = pushforward(f, X)
            path = _polymap(sc["driver"]["path"], ["t"])
            ref = smooth_lift(f.compose(path), X.p, X.depth, tuple(sc["driver"].get("interval", (0.0, 1.0))))
            d, where = C._max_forest_diff(Y, ref)
            res.append(T.check("pushforward.oracle", d, max(tolerance, 1e-7), where))
        N = Y.npoints - 1
        for text in sc.get("report_forests", []):
            data[text] = Y.value(text, 0, N)
        return _emit("pushforward", res, fmt, out, data)

    _run(go)


@main.command("quasi-check")
@_common
def quasi_check(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Quasi-shuffle character defect of a driver; names the worst forest."""

    def go() -> int:
        sc = _load_scenario(scenario) or {"driver": {"path": ["t", "t**2"], "p": 3.5, "brackets": {"{11}": "t/3"}}}
        X = _driver(sc["driver"], grid_depth)
        T = C._Timer()
        qd = quasi_geometric_defect(X)
        worst = max(qd, key=qd.get)
        res = [T.check("quasi.defect", qd[worst], tolerance, f"worst forest {format_forest(worst)}")]
        return _emit("quasi-check", res, fmt, out)

    _run(go)


@main.command("transfer-symbols")
@_common
def transfer_cmd(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Transfer symbols of a polynomial connection at a point."""

    def go() -> int:
        sc = _load_scenario(scenario) or {"variables": ["x1", "x2"], "point": [0.0, 0.0]}
        conn = _connection(sc)
        point = [float(v) for v in sc.get("point", [0.0] * conn.dim)]
        n = int(sc.get("order", max_degree or 3))
        T = C._Timer()
        ms, table = transfer_symbols(conn, [point], n)
        data = {
            "table": {
                f"{''.join(map(str, up))}|{''.join(map(str, lo))}": float(table[0, i, j])
                for i, up in enumerate(ms)
                for j, lo in enumerate(ms)
                if abs(table[0, i, j]) > 0
            }
        }
        res = [T.check("transfer.right_inverse", right_inverse_residual(conn, point, n), max(tolerance, 1e-10))]
        return _emit("transfer-symbols", res, fmt, out, data)

    _run(go)


def _atlas(sc: dict[str, Any], m: int) -> Atlas:
    charts, boxes = {}, {}
    if "reference_box" in sc:
        boxes["reference"] = tuple(tuple(b) for b in sc["reference_box"])
    for ch in sc.get("charts", []):
        fwd = PolyMap(list(ch["forward"]), list(sc["variables"]))
        inv_vars = list(ch.get("inverse_variables", [f"y{i + 1}" for i in range(m)]))
        inv = PolyMap(list(ch["inverse"]), inv_vars)
        charts[ch["name"]] = Chart(fwd, inv)
        if "box" in ch:
            boxes[ch["name"]] = tuple(tuple(b) for b in ch["box"])
    return Atlas(charts, boxes)


@main.command("integrate-manifold")
@_common
def integrate_cmd(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Manifold rough integral of a one-form over several chart decompositions."""

    def go() -> int:
        sc = _load_scenario(scenario)
        if not sc:
            raise ScenarioError("integrate-manifold needs --scenario")
        conn = _connection(sc)
        m = conn.dim
        atlas = _atlas(sc, m)
        X = _driver(sc["driver"], grid_depth)
        MX = ManifoldRoughPath.from_reference(atlas, X)
        N = X.npoints - 1
        form = PolyMap(list(sc["one_form"]), list(sc["variables"]))
        T = C._Timer()
        trace = MX.reference_trace()
        names = atlas.names()
        decomps = {"greedy": atlas.partition(trace, 0, N)}
        # Alternative decompositions switch charts early, at grid points lying in several charts.
        shared = [k for k in range(1, N) if sum(atlas.contains(c, trace[k]) for c in names) > 1]
        for k in shared[:: max(1, len(shared) // 3)][:3]:
            try:
                decomps[f"cut@{k}"] = atlas.partition(trace, 0, k) + atlas.partition(trace, k, N, order=names[::-1])
            except ValueError:
                continue
        for name in atlas.names():
            if all(atlas.contains(name, x) for x in trace):
                decomps[name] = [(name, 0, N)]
        vals = {k: patched_integral(form, conn, MX, 0, N, cells) for k, cells in decomps.items()}
        spread = max(vals.values()) - min(vals.values())
        res = [T.check("manifold.chart_independence", spread, max(tolerance, 1e-7), f"{len(vals)} decompositions")]
        if "function" in sc:
            g = PolyMap([sc["function"]], list(sc["variables"]))
            ito = max(patched_ito_defect(g, conn, MX, 0, N, cells) for cells in decomps.values())
            res.append(T.check("manifold.ito_kelly", ito, max(tolerance, 1e-7)))
        return _emit("integrate-manifold", res, fmt, out, {"integral": vals["greedy"], "cells": decomps["greedy"]})

    _run(go)


@main.command("rde-manifold")
@_common
def rde_cmd(scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Manifold RDE solve with Davie residual convergence."""

    def go() -> int:
        sc = _load_scenario(scenario)
        if not sc:
            raise ScenarioError("rde-manifold needs --scenario")
        yv, xv = list(sc["y_variables"]), list(sc["x_variables"])
        conn_N = _connection(sc, "christoffel_N", "y_variables")
        conn_M = _connection(sc, "christoffel_M", "x_variables")
        local = {v: sp.Symbol(v, real=True) for v in yv + xv}
        F = [[sp.sympify(e, locals=local, rational=True) for e in row] for row in sc["F"]]
        X = _driver(sc["driver"], grid_depth)
        T = C._Timer()
        sol = manifold_rde_solve(F, conn_N, conn_M, X, [float(v) for v in sc["y0"]])
        levels = [L for L in range(max(1, X.depth - 6), X.depth)]
        from .controlled import davie_residuals

        r = davie_residuals(sol.fields, X, sol.state.trace, levels)
        slope = -np.polyfit(np.array(levels, float), np.log2([max(r[L], 1e-300) for L in levels]), 1)[0]
        target = (int(np.floor(X.p)) + 1) / X.p - 0.1
        res = [T.check("rde.davie_slope", target - slope, 0.0, f"slope {slope:.3f}, required ≥ {target:.3f}")]
        return _emit("rde-manifold", res, fmt, out, {"Y_end": sol.Y[-1].tolist()})

    _run(go)


@main.command("report")
@click.option("--criteria", default="1,2,3,4,5,6,7,8,9,10", show_default=True, help="Comma-separated list.")
@click.option("--jobs", type=int, default=None, help="Worker processes; defaults to the usable CPU count.")
@_common
def report_cmd(criteria, jobs, scenario, tolerance, max_degree, letters, grid_depth, seed, out, fmt) -> None:
    """Run the acceptance suites concurrently and aggregate one report."""

    def go() -> int:
        ids = [int(k) for k in criteria.split(",") if k.strip()]
        unknown = [k for k in ids if k not in C.CRITERIA]
        if unknown:
            raise ScenarioError(f"unknown criteria {unknown}")
        workers = max(1, min(jobs or len(os.sched_getaffinity(0)), len(ids)))
        if workers == 1:
            outcomes = [C.run_criterion(k, seed) for k in ids]
        else:
            with ProcessPoolExecutor(workers) as pool:
                outcomes = list(pool.map(C.run_criterion, ids, [seed] * len(ids)))
        results: list[C.Check] = []
        summary = {}
        for k, (name, res) in zip(ids, outcomes):
            agg = C.criterion_check(k, res)
            results += [agg, *res]
            summary[f"criterion {k}"] = f"{'PASS' if agg.passed else 'FAIL'} {name} ({agg.runtime:.1f}s)"
        return _emit("report", results, fmt, out, summary)

    _run(go)


if __name__ == "__main__":  # pragma: no cover
    main()
