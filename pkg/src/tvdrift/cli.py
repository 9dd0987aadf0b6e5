"""Command-line front end: the reproducibility surface of the repository.

Subcommands: solve-neumann, solve-dirichlet, certify, oracle, levelset,
barrier-probe, threshold, list-scenarios.  Every run writes its artifacts
(CSV fields, JSON reports, iteration trace) into --output-dir together
with a manifest listing each artifact with a content hash.  With a fixed
seed the data artifacts are byte-identical across runs; only the manifest
carries timing.  Exit codes: 0 all requested checks pass, 1 a check
failed, 2 configuration error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_checks, build_problem, build_solver_config, parse_ini
from .certify import (check_alignment, check_boundary_complementarity,
                      check_divergence_below, check_dual_feasibility,
                      check_uniqueness_of_direction, check_zero_gap,
                      check_zero_trace_set)
from .grid import write_field_csv, write_grid_json
from .levelset import (barrier_probe, check_minimality_exhaustive,
                       check_minimality_random, psi_perimeter, super_level_set)
from .oracle import OracleConfig, oracle_value
from .problem import existence_threshold
from .scenarios import Scenario, get_scenario
from .solver import dual_polish, solve


def _load_scenario_file(path) -> Scenario:
    text = Path(path).read_text()
    data = parse_ini(text)
    name = data.get("scenario", {}).get("name", (Path(path).stem, None))[0]
    spec = build_problem(data)
    solver = build_solver_config(data)
    checks = build_checks(data)
    return Scenario(name, f"from {path}", spec, solver,
                    checks["names"], checks["zero_gap_feas_tol"])


def load_scenario(args) -> Scenario:
    if args.scenario and args.config:
        raise ConfigError("give either --scenario or --config, not both")
    if args.config:
        return _load_scenario_file(args.config)
    if args.scenario:
        return get_scenario(args.scenario)
    raise ConfigError("one of --scenario or --config is required")


class ArtifactWriter:
    def __init__(self, outdir, fmt="csv"):
        self.dir = Path(outdir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.dir / name

    def write_json(self, name, payload):
        with open(self.path(name), "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")

    def write_manifest(self, command, config_echo, wall_time):
        entries = {}
        for name in self.files:
            digest = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
            entries[name] = digest
        manifest = {
            "tool": "tvdrift",
            "version": __version__,
            "command": command,
            "config": config_echo,
            "artifacts": entries,
            "wall_time_seconds": wall_time,
        }
        with open(self.dir / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")


def _sanitize(value):
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return repr(value)
    return value


def _write_certificate(writer, scenario, cert, polished):
    g = scenario.spec.grid
    write_grid_json(writer.path("grid.json"), g,
                    roles={"u.csv": "primal minimizer",
                           "N.csv": "dual certificate field"})
    write_field_csv(writer.path("u.csv"), cert.u)
    write_field_csv(writer.path("N.csv"), polished.N)
    with open(writer.path("trace.csv"), "w") as f:
        f.write("iter,primal,dual,gap,r_div,r_trace\n")
        for row in cert.trace:
            f.write("%d,%.17g,%.17g,%.17g,%.17g,%.17g\n" % row)
    solver_summary = {k: v for k, v in cert.summary().items() if k != "wall_time"}
    polished_summary = {k: v for k, v in polished.summary().items()
                        if k != "wall_time"}
    writer.write_json("certificate.json", _sanitize({
        "scenario": scenario.name,
        "solver": solver_summary,
        "polished": polished_summary,
        "config": {
            "max_iters": scenario.solver.max_iters,
            "gap_tol": scenario.solver.gap_tol,
            "check_every": scenario.solver.check_every,
            "seed": scenario.solver.seed,
            "min_iters": scenario.solver.min_iters,
        },
    }))


def _run_checks(scenario, cert, polished, writer):
    spec = scenario.spec
    reports = []
    for name in scenario.checks:
        if name == "dual_feasibility":
            reports.append(check_dual_feasibility(polished.N, spec))
        elif name == "zero_gap":
            reports.append(check_zero_gap(cert, polished, spec,
                                          gap_tol=scenario.solver.gap_tol,
                                          feas_tol=scenario.zero_gap_feas_tol))
        elif name == "alignment":
            reports.append(check_alignment(cert.u, cert.N_last, spec))
        elif name == "boundary_complementarity":
            reports.append(check_boundary_complementarity(cert.u, polished.N, spec))
        elif name == "zero_trace_set":
            reports.append(check_zero_trace_set(cert.u, polished.N, spec))
        elif name == "uniqueness_of_direction":
            reports.append(check_uniqueness_of_direction(spec, n_seeds=3,
                                                         solver_cfg=scenario.solver))
        elif name == "existence_threshold":
            th = existence_threshold(spec)
            from .certify import TheoremReport
            reports.append(TheoremReport(
                "ExistenceThreshold", True,
                {"c_omega": th.c_omega, "h_inf": th.h_norm,
                 "guaranteed": 1.0 if th.verdict == "guaranteed" else 0.0},
                1.1))
        elif name == "divergent":
            reports.append(check_divergence_below(spec))
        else:
            raise ConfigError(f"unknown check {name!r}")
    for rep in reports:
        writer.write_json(f"report_{rep.name}.json", _sanitize(rep.to_dict()))
    return reports


def cmd_solve(args, kind):
    scenario = load_scenario(args)
    spec = scenario.spec
    if kind == "neumann" and not spec.is_neumann:
        raise ConfigError(f"scenario {scenario.name} is not a Neumann instance")
    if kind == "dirichlet" and spec.is_neumann:
        raise ConfigError(f"scenario {scenario.name} is not a Dirichlet instance")
    scenario.solver.seed = args.seed if args.seed is not None else scenario.solver.seed
    t0 = time.perf_counter()
    cert = solve(spec, scenario.solver)
    polished = dual_polish(cert, spec)
    writer = ArtifactWriter(args.output_dir, args.format)
    _write_certificate(writer, scenario, cert, polished)
    reports = _run_checks(scenario, cert, polished, writer)
    writer.write_manifest(f"solve-{kind}", scenario.name, time.perf_counter() - t0)
    ok = cert.converged and all(r.passed for r in reports)
    print(f"{scenario.name}: primal={cert.primal_value:.8g} dual={polished.dual_value:.8g} "
          f"relgap={cert.gap / (1 + abs(cert.primal_value)):.3g} "
          f"converged={cert.converged}")
    for r in reports:
        print(f"  [{'PASS' if r.passed else 'FAIL'}] {r.name}")
    return 0 if ok else 1


def cmd_certify(args):
    scenario = load_scenario(args)
    if args.seed is not None:
        scenario.solver.seed = args.seed
    t0 = time.perf_counter()
    cert = solve(scenario.spec, scenario.solver)
    polished = dual_polish(cert, scenario.spec)
    writer = ArtifactWriter(args.output_dir, args.format)
    _write_certificate(writer, scenario, cert, polished)
    reports = _run_checks(scenario, cert, polished, writer)
    writer.write_manifest("certify", scenario.name, time.perf_counter() - t0)
    for r in reports:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: "
              + ", ".join(f"{k}={v:.3g}" for k, v in sorted(r.metrics.items())
                          if isinstance(v, (int, float))))
    return 0 if all(r.passed for r in reports) else 1


def cmd_oracle(args):
    scenario = load_scenario(args)
    t0 = time.perf_counter()
    rep = oracle_value(scenario.spec, OracleConfig())
    cert = solve(scenario.spec, scenario.solver)
    writer = ArtifactWriter(args.output_dir, args.format)
    rel = abs(rep.value - cert.primal_value) / (1 + abs(cert.primal_value))
    eps_min, v_min = rep.per_eps[-1][0], rep.per_eps[-1][1]
    in_bracket = (v_min - rep.bracket_width - scenario.solver.gap_tol
                  <= cert.primal_value
                  <= v_min + scenario.solver.gap_tol)
    writer.write_json("oracle.json", _sanitize({
        "scenario": scenario.name,
        "extrapolated_value": rep.value,
        "per_eps": [{"eps": e, "value": v, "iterations": it, "grad_norm": gn}
                    for e, v, it, gn in rep.per_eps],
        "bracket_width": rep.bracket_width,
        "fit_residual": rep.fit_residual,
        "pdhg_primal": cert.primal_value,
        "relative_difference": rel,
        "bracket_contains_pdhg": bool(in_bracket),
    }))
    writer.write_manifest("oracle", scenario.name, time.perf_counter() - t0)
    print(f"oracle={rep.value:.8g} pdhg={cert.primal_value:.8g} rel_diff={rel:.3g} "
          f"bracket_ok={in_bracket}")
    return 0 if (rel <= 1e-2 and in_bracket) else 1


def cmd_levelset(args):
    scenario = load_scenario(args)
    t0 = time.perf_counter()
    cert = solve(scenario.spec, scenario.solver)
    writer = ArtifactWriter(args.output_dir, args.format)
    u = cert.u.values
    from .levelset import resolvable_levels
    delta = cert.gap / (2.0 * float(scenario.spec.a.values.min())
                        * scenario.spec.grid.h)
    lambdas = resolvable_levels(u, n_levels=5, delta=delta)
    results = []
    all_pass = True
    rng_seed = args.seed if args.seed is not None else 0
    for k, lam in enumerate(lambdas):
        E = super_level_set(cert.u, lam)
        rep = psi_perimeter(E, scenario.spec)
        verdict = check_minimality_random(E, scenario.spec, trials=2000,
                                          max_flip=6, seed=rng_seed + k,
                                          gap_tol=scenario.solver.gap_tol)
        all_pass &= verdict.passed
        results.append({
            "lambda": lam, "cells": int(E.member.sum()),
            "psi_total": rep.total, "perimeter_term": rep.perimeter_term,
            "minimal": verdict.passed, "margin": verdict.margin,
            "rle": E.to_rle(),
        })
    writer.write_json("levelsets.json", _sanitize(
        {"scenario": scenario.name, "levels": results}))
    writer.write_manifest("levelset", scenario.name, time.perf_counter() - t0)
    for r in results:
        print(f"lambda={r['lambda']:.4g}: cells={r['cells']} "
              f"psi={r['psi_total']:.6g} minimal={r['minimal']}")
    return 0 if all_pass else 1


def cmd_barrier(args):
    scenario = load_scenario(args)
    if scenario.barrier is None:
        raise ConfigError(f"scenario {scenario.name} has no barrier probe")
    t0 = time.perf_counter()
    writer = ArtifactWriter(args.output_dir, args.format)
    params = scenario.barrier
    seed = args.seed if args.seed is not None else 0
    rep = barrier_probe(scenario.spec, params["x0"], params["eps"], seed=seed)
    reports = {"probe": rep.to_dict(),
               "expected_holds": params.get("expect_holds")}
    ok = rep.holds == params.get("expect_holds", rep.holds)
    if "control_x0" in params:
        rep2 = barrier_probe(scenario.spec, params["control_x0"],
                             params["control_eps"], seed=seed)
        reports["control"] = rep2.to_dict()
        reports["control_expected_holds"] = params.get("control_expect_holds")
        ok = ok and rep2.holds == params.get("control_expect_holds", rep2.holds)
    writer.write_json("barrier.json", _sanitize(reports))
    writer.write_manifest("barrier-probe", scenario.name, time.perf_counter() - t0)
    print(f"probe at {params['x0']}: holds={rep.holds} "
          f"(removed {rep.removed.size} cells, "
          f"{rep.touching_cells.size} touching)")
    return 0 if ok else 1


def cmd_threshold(args):
    scenario = load_scenario(args)
    spec = scenario.spec
    if not spec.is_neumann:
        raise ConfigError("threshold verdicts apply to Neumann scenarios")
    t0 = time.perf_counter()
    th = existence_threshold(spec)
    div = check_divergence_below(spec)
    writer = ArtifactWriter(args.output_dir, args.format)
    contradiction = th.verdict == "guaranteed" and div.passed
    writer.write_json("threshold.json", _sanitize({
        "scenario": scenario.name,
        "c_omega": th.c_omega,
        "h_inf": th.h_norm,
        "verdict": th.verdict,
        "unbounded_confirmed": div.passed,
        "best_probe_slope": div.metrics["best_slope"],
        "contradiction": contradiction,
    }))
    writer.write_manifest("threshold", scenario.name, time.perf_counter() - t0)
    print(f"{scenario.name}: verdict={th.verdict} "
          f"(‖H‖∞={th.h_norm:.4g}, C_Ω≥{th.c_omega:.4g}) "
          f"unbounded_confirmed={div.passed}")
    return 0 if not contradiction else 1


def cmd_list(args):
    from .scenarios import builtin_scenarios
    for name, sc in builtin_scenarios().items():
        kind = "neumann" if sc.spec.is_neumann else "dirichlet"
        g = sc.spec.grid
        print(f"{name:22s} {kind:10s} {g.nx}x{g.ny} h={g.h:.5g}  {sc.description}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tvdrift",
                                description="Weighted TV-with-drift minimization "
                                            "with primal-dual certificates")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_output=True):
        sp.add_argument("--scenario", help="built-in scenario name")
        sp.add_argument("--config", help="scenario config file")
        if needs_output:
            sp.add_argument("--output-dir", default="tvdrift-out",
                            help="artifact directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1,
                        help="reserved; computation is single-threaded")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    common(sub.add_parser("solve-neumann", help="solve a Neumann instance"))
    common(sub.add_parser("solve-dirichlet", help="solve a Dirichlet instance"))
    common(sub.add_parser("certify", help="run the theorem-check battery"))
    common(sub.add_parser("oracle", help="smoothed-descent cross check"))
    common(sub.add_parser("levelset", help="super-level-set minimality survey"))
    common(sub.add_parser("barrier-probe", help="boundary barrier probe"))
    common(sub.add_parser("threshold", help="existence threshold verdict"))
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "solve-neumann":
            return cmd_solve(args, "neumann")
        if args.command == "solve-dirichlet":
            return cmd_solve(args, "dirichlet")
        if args.command == "certify":
            return cmd_certify(args)
        if args.command == "oracle":
            return cmd_oracle(args)
        if args.command == "levelset":
            return cmd_levelset(args)
        if args.command == "barrier-probe":
            return cmd_barrier(args)
        if args.command == "threshold":
            return cmd_threshold(args)
        if args.command == "list-scenarios":
            return cmd_list(args)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
