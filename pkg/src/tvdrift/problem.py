"""Problem instances: weight a, drift F, curvature term H, boundary condition.

Primal energy   E(u) = sum a |Du + F| h^2 + sum H u h^2 (+ boundary penalty),
dual objective  <F, b> h^2  over fields with |b| <= a and prescribed divergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    GridSpec, ScalarField, VectorField,
    grad_arr, div_arr, trace_arr, dot_cells, poincare_constant,
)

NEUMANN = "neumann"
DIRICHLET = "dirichlet"

MEAN_TOL = 1e-9


@dataclass
class BoundaryCondition:
    """Neumann (mean-zero space) or relaxed Dirichlet with edge data f."""
    kind: str
    f: np.ndarray | None = None   # per boundary edge, Dirichlet only

    def __post_init__(self):
        if self.kind not in (NEUMANN, DIRICHLET):
            raise ValueError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == NEUMANN and self.f is not None:
            raise ValueError("Neumann condition carries no boundary data")
        if self.kind == DIRICHLET:
            if self.f is None:
                raise ValueError("Dirichlet condition needs boundary data f")
            self.f = np.asarray(self.f, dtype=np.float64)
            if not np.all(np.isfinite(self.f)):
                raise ValueError("boundary data must be finite")

    @classmethod
    def neumann(cls):
        return cls(NEUMANN)

    @classmethod
    def dirichlet(cls, grid: GridSpec, f=0.0):
        """Relaxed Dirichlet data; scalar, per-edge array, or fn(x, y) sampled
        at the cell adjacent to each edge (so edges of one cell agree)."""
        if callable(f):
            vals = np.asarray(f(grid.x[grid.edge_cell], grid.y[grid.edge_cell]),
                              dtype=np.float64)
        elif np.isscalar(f):
            vals = np.full(grid.n_edges, float(f))
        else:
            vals = np.asarray(f, dtype=np.float64)
            if vals.shape != (grid.n_edges,):
                raise ValueError("per-edge data has wrong length")
        return cls(DIRICHLET, vals)


@dataclass
class ProblemSpec:
    grid: GridSpec
    a: ScalarField
    F: VectorField
    H: ScalarField
    bc: BoundaryCondition

    def __post_init__(self):
        for fld in (self.a, self.F, self.H):
            if fld.grid is not self.grid:
                raise ValueError("all fields must live on the problem grid")
        if np.any(self.a.values <= 0):
            raise ValueError("weight a must be positive everywhere")
        self.a_max = float(self.a.values.max())
        self.h_max = float(np.abs(self.H.values).max())

    @property
    def is_neumann(self):
        return self.bc.kind == NEUMANN

    def edge_weight(self):
        """Weight a at the cell adjacent to each boundary edge."""
        return self.a.values[self.grid.edge_cell]

    def h_tilde(self):
        """Divergence target: H - mean(H) under Neumann, H otherwise."""
        H = self.H.values
        return H - H.mean() if self.is_neumann else H


@dataclass
class EnergyReport:
    tv_term: float
    curvature_term: float
    boundary_term: float
    total: float


def heisenberg_drift(grid: GridSpec, center=None) -> VectorField:
    """Drift F = -X* with X* = (y - cy, -(x - cx)) at cell centers.

    With this drift the primal integrand is a |Du - X*|.  The field has
    exactly zero discrete divergence (each component is constant along its
    own difference direction).
    """
    if center is None:
        cx = grid.nx * grid.h / 2.0
        cy = grid.ny * grid.h / 2.0
    else:
        cx, cy = center
    v = np.column_stack([-(grid.y - cy), grid.x - cx])
    return VectorField(grid, v)


def primal_energy(u: ScalarField, spec: ProblemSpec) -> EnergyReport:
    """Primal energy of u, split into TV-with-drift, curvature, and boundary
    terms.  Row-major summation order for reproducibility.

    Raises ValueError for a non-mean-zero u under a Neumann condition.
    """
    g = spec.grid
    if u.grid is not g:
        raise ValueError("field lives on a different grid")
    if spec.is_neumann:
        scale = 1.0 + float(np.abs(u.values).max(initial=0.0))
        if abs(u.values.mean()) > MEAN_TOL * scale:
            raise ValueError("Neumann energy requires a mean-zero field")
    h2 = g.h * g.h
    w = grad_arr(g, u.values) + spec.F.values
    tv = float(np.sum(spec.a.values * np.linalg.norm(w, axis=1)) * h2)
    curv = float(np.sum(spec.H.values * u.values) * h2)
    bdry = 0.0
    if not spec.is_neumann:
        bdry = float(np.sum(spec.edge_weight()
                            * np.abs(u.values[g.edge_cell] - spec.bc.f)) * g.h)
    return EnergyReport(tv, curv, bdry, tv + curv + bdry)


def dual_value(b: VectorField, spec: ProblemSpec) -> float:
    """Dual objective <F, b> h^2."""
    if b.grid is not spec.grid:
        raise ValueError("field lives on a different grid")
    return dot_cells(spec.grid, spec.F.values, b.values)


def feasibility_residuals(b: VectorField, spec: ProblemSpec):
    """(r_norm, r_div, r_trace) of a candidate dual field.

    r_norm  = max(0, max_x(|b(x)| - a(x)))
    r_div   = || div b - H~ ||_2 h   with H~ = H - mean(H) under Neumann
    r_trace = max_edges |[b, nu]|    (Neumann only, else 0)
    """
    g = spec.grid
    if b.grid is not g:
        raise ValueError("field lives on a different grid")
    norms = np.linalg.norm(b.values, axis=1)
    r_norm = float(max(0.0, (norms - spec.a.values).max()))
    resid = div_arr(g, b.values) - spec.h_tilde()
    r_div = float(np.linalg.norm(resid) * g.h)
    r_trace = 0.0
    if spec.is_neumann and g.n_edges:
        r_trace = float(np.abs(trace_arr(g, b.values)).max())
    return r_norm, r_div, r_trace


def _boundary_cell_data(grid: GridSpec, f_edges: np.ndarray):
    """Per-cell boundary data: mean of edge values over each boundary cell."""
    count = np.bincount(grid.edge_cell, minlength=grid.n_cells).astype(float)
    total = np.bincount(grid.edge_cell, weights=f_edges, minlength=grid.n_cells)
    is_bdry = count > 0
    vals = np.zeros(grid.n_cells)
    vals[is_bdry] = total[is_bdry] / count[is_bdry]
    return is_bdry, vals


def reduce_dirichlet(spec: ProblemSpec, cg_tol=1e-10):
    """Fold Dirichlet data f into the drift via a discrete-harmonic lift.

    Boundary cells are clamped to their (edge-averaged) data; interior cells
    solve the 5-point Laplace equation by conjugate gradient.  Returns
    (spec' with f = 0, offset, lift) such that for fields u - lift supported
    away from the boundary,

        primal_energy(u, spec) = primal_energy(u - lift, spec') + offset.
    """
    if spec.is_neumann:
        raise ValueError("reduce_dirichlet needs a Dirichlet-relaxed spec")
    g = spec.grid
    is_bdry, f_cell = _boundary_cell_data(g, spec.bc.f)
    lift = np.zeros(g.n_cells)
    lift[is_bdry] = f_cell[is_bdry]

    interior = np.nonzero(~is_bdry)[0]
    if interior.size:
        sub = np.full(g.n_cells, -1, dtype=np.int64)
        sub[interior] = np.arange(interior.size)
        own = np.arange(interior.size)
        rows, cols, vals = [], [], []
        rhs = np.zeros(interior.size)
        # interior cells have no boundary edges, so all 4 neighbours are masked
        for nb in (g.fwd_x, g.bwd_x, g.fwd_y, g.bwd_y):
            nbi = nb[interior]
            rows.append(own); cols.append(own); vals.append(np.ones(interior.size))
            inner = sub[nbi] >= 0
            rows.append(own[inner]); cols.append(sub[nbi[inner]])
            vals.append(-np.ones(int(inner.sum())))
            np.add.at(rhs, own[~inner], lift[nbi[~inner]])
        A = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(interior.size, interior.size)).tocsr()
        x, info = spla.cg(A, rhs, x0=np.zeros(interior.size),
                          rtol=cg_tol, atol=0.0, maxiter=20_000)
        if info != 0:
            raise RuntimeError("conjugate gradient failed on the harmonic lift "
                               "(disconnected or degenerate mask?)")
        lift[interior] = x

    lift_fld = ScalarField(g, lift)
    F2 = VectorField(g, spec.F.values + grad_arr(g, lift))
    offset = dot_cells(g, spec.H.values, lift)
    spec2 = ProblemSpec(g, spec.a, F2, spec.H,
                        BoundaryCondition.dirichlet(g, 0.0))
    return spec2, offset, lift_fld


@dataclass
class ThresholdReport:
    c_omega: float
    h_norm: float
    verdict: str          # "guaranteed" | "unknown"


def existence_threshold(spec: ProblemSpec, safety=1.1) -> ThresholdReport:
    """Sufficient existence condition ||H||_inf < 1 / (safety * C_Omega).

    C_Omega is the probe-family lower bound from poincare_constant, so the
    'guaranteed' verdict is conservative; 'unknown' does not imply
    unboundedness.
    """
    if not spec.is_neumann:
        raise ValueError("existence threshold applies to Neumann instances")
    c = poincare_constant(spec.grid)
    h_norm = spec.h_max
    verdict = "guaranteed" if h_norm < 1.0 / (safety * c) else "unknown"
    return ThresholdReport(c, h_norm, verdict)
