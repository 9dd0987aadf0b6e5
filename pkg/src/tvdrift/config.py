"""Scenario configuration: a strict INI-like text format.

Grammar (line oriented; '#' starts a comment; keys are lowercase):

    [scenario]
    name = my-run
    bc = neumann | dirichlet

    [grid]
    nx = 64
    ny = 64
    h = 0.015625
    mask = full | disk | strip | rle:<0|1>,<run>,<run>,...

    [fields]
    a = constant:1.0
    F = zero | constant:cx,cy | heisenberg | heisenberg:cx,cy | file:PATH
    H = constant:v | step:axis,threshold,lo,hi | file:PATH
    f = constant:v | step:axis,threshold,lo,hi     (dirichlet only)

    [solver]          (all optional)
    max_iters, gap_tol, tau, sigma, check_every, seed, init, floor_scale

    [checks]          (optional)
    names = dual_feasibility, zero_gap, alignment, ...
    zero_gap_feas_tol = 1e-8

Unknown sections or keys are rejected with the offending line number.
Scalar generators are evaluated at cell centers; boundary data generators
are evaluated at the cell adjacent to each edge, so edges of one cell
always agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, ScalarField, VectorField, rle_to_mask
from .problem import BoundaryCondition, ProblemSpec, heisenberg_drift
from .solver import SolverConfig


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(message + suffix)


_SECTIONS = {
    "scenario": {"name", "bc"},
    "grid": {"nx", "ny", "h", "mask"},
    "fields": {"a", "F", "H", "f"},
    "solver": {"max_iters", "gap_tol", "tau", "sigma", "check_every",
               "seed", "init", "floor_scale"},
    "checks": {"names", "zero_gap_feas_tol"},
}


def parse_ini(text):
    """Parse the INI grammar into {section: {key: (value, line)}}."""
    data = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            data.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        allowed = _SECTIONS[section]
        if key not in allowed and key.lower() not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", lineno)
        if key in data[section]:
            raise ConfigError(f"duplicate key {key!r} in section [{section}]", lineno)
        data[section][key] = (value, lineno)
    return data


def _need(data, section, key, line_hint=None):
    try:
        return data[section][key]
    except KeyError:
        raise ConfigError(f"missing required key {key!r} in section [{section}]",
                          line_hint) from None


def _as_int(val, line):
    try:
        return int(val)
    except ValueError:
        raise ConfigError(f"expected integer, got {val!r}", line) from None


def _as_float(val, line):
    try:
        return float(val)
    except ValueError:
        raise ConfigError(f"expected number, got {val!r}", line) from None


def build_grid(data) -> GridSpec:
    nx, ln = _need(data, "grid", "nx"); nx = _as_int(nx, ln)
    ny, ln = _need(data, "grid", "ny"); ny = _as_int(ny, ln)
    h, ln = _need(data, "grid", "h"); h = _as_float(h, ln)
    mask_spec, ln = _need(data, "grid", "mask")
    try:
        if mask_spec == "full":
            return GridSpec.full(nx, ny, h)
        if mask_spec == "disk":
            if nx != ny:
                raise ConfigError("disk mask needs nx == ny", ln)
            return GridSpec.disk(nx, h)
        if mask_spec == "strip":
            if ny != 2:
                raise ConfigError("strip mask needs ny == 2", ln)
            return GridSpec.strip(nx, h)
        if mask_spec.startswith("rle:"):
            return GridSpec(nx, ny, h, rle_to_mask(mask_spec[4:], nx, ny))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), ln) from None
    raise ConfigError(f"unknown mask kind {mask_spec!r}", ln)


def scalar_generator(grid, text, line, on_edges=False):
    """Builtin scalar field generators.

    constant:v | step:axis,threshold,lo,hi | file:path.csv
    Evaluation points: cell centers, or the adjacent cell of each boundary
    edge when on_edges is set.
    """
    x = grid.x[grid.edge_cell] if on_edges else grid.x
    y = grid.y[grid.edge_cell] if on_edges else grid.y
    kind, _, arg = text.partition(":")
    if kind == "constant":
        return np.full(x.size, _as_float(arg, line))
    if kind == "step":
        parts = arg.split(",")
        if len(parts) != 4 or parts[0] not in ("x", "y"):
            raise ConfigError("step generator needs axis,threshold,lo,hi", line)
        t = _as_float(parts[1], line)
        lo = _as_float(parts[2], line)
        hi = _as_float(parts[3], line)
        coord = x if parts[0] == "x" else y
        return np.where(coord < t, lo, hi)
    if kind == "file":
        from .grid import read_field_csv
        fld = read_field_csv(arg, grid)
        vals = fld.values
        if vals.ndim != 1:
            raise ConfigError("scalar field file has two components", line)
        return vals[grid.edge_cell] if on_edges else vals
    raise ConfigError(f"unknown scalar generator {text!r}", line)


def vector_generator(grid, text, line):
    """zero | constant:cx,cy | heisenberg[:cx,cy] | file:path.csv"""
    kind, _, arg = text.partition(":")
    if kind == "zero":
        return VectorField.constant(grid, 0.0, 0.0)
    if kind == "constant":
        parts = arg.split(",")
        if len(parts) != 2:
            raise ConfigError("constant vector needs cx,cy", line)
        return VectorField.constant(grid, _as_float(parts[0], line),
                                    _as_float(parts[1], line))
    if kind == "heisenberg":
        if arg:
            parts = arg.split(",")
            if len(parts) != 2:
                raise ConfigError("heisenberg center needs cx,cy", line)
            center = (_as_float(parts[0], line), _as_float(parts[1], line))
            return heisenberg_drift(grid, center)
        return heisenberg_drift(grid)
    if kind == "file":
        from .grid import read_field_csv
        fld = read_field_csv(arg, grid)
        if fld.values.ndim != 2:
            raise ConfigError("vector field file has one component", line)
        return fld
    raise ConfigError(f"unknown vector generator {text!r}", line)


def build_problem(data) -> ProblemSpec:
    grid = build_grid(data)
    bc_kind, ln_bc = _need(data, "scenario", "bc")
    fields = data.get("fields", {})

    def get_field(name, default=None):
        return fields.get(name, default)

    a_spec = get_field("a", ("constant:1", None))
    a = ScalarField(grid, scalar_generator(grid, a_spec[0], a_spec[1]))
    F_spec = get_field("F", ("zero", None))
    F = vector_generator(grid, F_spec[0], F_spec[1])
    H_spec = get_field("H", ("constant:0", None))
    H = ScalarField(grid, scalar_generator(grid, H_spec[0], H_spec[1]))

    if bc_kind == "neumann":
        if get_field("f") is not None:
            raise ConfigError("boundary data f is only valid for dirichlet",
                              get_field("f")[1])

        bc = BoundaryCondition.neumann()
    elif bc_kind == "dirichlet":
        f_spec = get_field("f", ("constant:0", None))
        f_vals = scalar_generator(grid, f_spec[0], f_spec[1], on_edges=True)
        bc = BoundaryCondition.dirichlet(grid, f_vals)
    else:
        raise ConfigError(f"unknown boundary condition {bc_kind!r}", ln_bc)
    return ProblemSpec(grid, a, F, H, bc)


def build_solver_config(data) -> SolverConfig:
    sec = data.get("solver", {})
    kwargs = {}
    casts = {"max_iters": int, "gap_tol": float, "check_every": int,
             "seed": int, "floor_scale": float}
    for key, (val, ln) in sec.items():
        if key in ("tau", "sigma"):
            kwargs[key] = val if val == "auto" else _as_float(val, ln)
        elif key == "init":
            if val not in ("zero", "random"):
                raise ConfigError(f"init must be zero or random, got {val!r}", ln)
            kwargs[key] = val
        else:
            try:
                kwargs[key] = casts[key](val)
            except ValueError:
                raise ConfigError(f"bad value {val!r} for {key}", ln) from None
    return SolverConfig(**kwargs)


def build_checks(data):
    sec = data.get("checks", {})
    names = []
    if "names" in sec:
        names = [n.strip() for n in sec["names"][0].split(",") if n.strip()]
    feas_tol = 1e-8
    if "zero_gap_feas_tol" in sec:
        feas_tol = _as_float(*sec["zero_gap_feas_tol"])
    return {"names": names, "zero_gap_feas_tol": feas_tol}
