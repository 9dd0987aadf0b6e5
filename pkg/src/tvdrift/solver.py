"""Primal-dual (Chambolle-Pock style) solver for the saddle problem

    min_u max_{|b| <= a}  <b, Du + F> h^2 + <H, u> h^2 + B(u)

where B is the mean-zero indicator (Neumann) or the relaxed boundary
penalty sum_e a_e |u - f_e| h (Dirichlet).  The primal minimizer u is the
ergodic average of the iterates.  The certificate field N is produced by a
feasibility-preserving dual refinement: a second, cheap primal-dual
iteration on the dual problem itself (maximize <F, b> subject to the
divergence conditions and |b| <= a), warm-started from the main dual
average, followed by a least-norm exactification.  This keeps the reported
gap an honest weak-duality bound with machine-level feasibility residuals.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    GridSpec, ScalarField, VectorField,
    grad_arr, grad_adjoint_arr, div_arr, trace_arr, operator_norm,
)
from .problem import ProblemSpec, primal_energy, dual_value, feasibility_residuals


class InfeasibleDualError(RuntimeError):
    """The dual feasibility system appears to have no point inside |b| <= a."""


@dataclass
class SolverConfig:
    max_iters: int = 50_000
    gap_tol: float = 1e-3
    tau: float | str = "auto"
    sigma: float | str = "auto"
    check_every: int = 200
    seed: int = 0
    init: str | tuple = "zero"      # "zero" | "random" | (u0, b0)
    floor_scale: float = 1e6        # divergence floor multiplier
    over_relaxation: float = 1.0
    min_iters: int = 0              # don't stop before this many iterations

    def resolve_steps(self, L):
        """Step sizes satisfying tau * sigma * L^2 < 1."""
        tau = 0.995 / L if self.tau == "auto" else float(self.tau)
        sigma = 0.995 / L if self.sigma == "auto" else float(self.sigma)
        if tau <= 0 or sigma <= 0 or tau * sigma * L * L >= 1.0:
            raise ValueError(
                f"step-size violation: tau*sigma*L^2 = {tau * sigma * L * L:.6g} >= 1")
        return tau, sigma


@dataclass
class Certificate:
    u: ScalarField
    N: VectorField
    primal_value: float
    dual_value: float
    gap: float
    residuals: tuple            # (r_norm, r_div, r_trace)
    trace: list                 # rows (iter, primal, dual, gap, r_div, r_trace)
    converged: bool
    diverging: bool = False
    iterations: int = 0
    u_last: ScalarField | None = None
    N_last: VectorField | None = None
    polished: bool = False
    wall_time: float = 0.0

    def summary(self):
        return {
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "relative_gap": self.gap / (1.0 + abs(self.primal_value)),
            "r_norm": self.residuals[0],
            "r_div": self.residuals[1],
            "r_trace": self.residuals[2],
            "converged": self.converged,
            "diverging": self.diverging,
            "iterations": self.iterations,
            "polished": self.polished,
            "wall_time": self.wall_time,
        }


def _project_ball(b, a):
    """Exact pointwise projection onto {|b(x)| <= a(x)} (in place)."""
    norms = np.linalg.norm(b, axis=1)
    over = norms > a
    if np.any(over):
        b[over] *= (a[over] / norms[over])[:, None]
        # rounding can leave |b| an ulp above a; nudge down until exact
        norms = np.linalg.norm(b, axis=1)
        over = norms > a
        while np.any(over):
            b[over] *= 1.0 - 3e-16
            norms = np.linalg.norm(b, axis=1)
            over = norms > a
    return b


def _project_ball_fast(b, a, buf):
    """Branchless in-loop ball projection (exact to an ulp)."""
    np.einsum("ij,ij->i", b, b, out=buf)
    np.sqrt(buf, out=buf)
    with np.errstate(divide="ignore"):
        np.divide(a, buf, out=buf)
    np.minimum(buf, 1.0, out=buf)
    b *= buf[:, None]
    return b


class _BoundaryProx:
    """Prox of u -> sum_e (a_e / h) |u(cell_e) - f_e| grouped by cell.

    Cells whose edges all carry the same data use a single soft threshold;
    the rare mixed-data cells (corners with differing f) fall back to an
    exact breakpoint scan.
    """

    def __init__(self, spec: ProblemSpec):
        g = spec.grid
        a_e = spec.edge_weight()
        f_e = spec.bc.f
        cells = {}
        for k in range(g.n_edges):
            cells.setdefault(int(g.edge_cell[k]), []).append((a_e[k] / g.h, f_e[k]))
        simple_c, simple_w, simple_f = [], [], []
        self.mixed = []
        for c, lst in sorted(cells.items()):
            fs = {f for _, f in lst}
            if len(fs) == 1:
                simple_c.append(c)
                simple_w.append(sum(w for w, _ in lst))
                simple_f.append(lst[0][1])
            else:
                self.mixed.append((c, lst))
        self.simple_c = np.array(simple_c, dtype=np.int64)
        self.simple_w = np.array(simple_w)
        self.simple_f = np.array(simple_f)

    def apply(self, u, tau):
        c, w, f = self.simple_c, self.simple_w, self.simple_f
        if c.size:
            d = u[c] - f
            u[c] = f + np.sign(d) * np.maximum(np.abs(d) - tau * w, 0.0)
        for cell, lst in self.mixed:
            u[cell] = _prox_weighted_l1(u[cell], tau, lst)
        return u


def _prox_weighted_l1(v, tau, terms):
    """argmin_w (w - v)^2 / (2 tau) + sum_i w_i |w - f_i| by breakpoint scan."""
    terms = sorted(terms, key=lambda t: t[1])
    fs = [f for _, f in terms]
    ws = [w for w, _ in terms]

    def value(w):
        return (w - v) ** 2 / (2 * tau) + sum(wt * abs(w - f) for wt, f in terms)

    candidates = list(fs)
    for k in range(len(fs) + 1):
        # on the k-th interval, d/dw of the l1 part is sum(ws[:k]) - sum(ws[k:])
        w = v - tau * (sum(ws[:k]) - sum(ws[k:]))
        lo = fs[k - 1] if k > 0 else -np.inf
        hi = fs[k] if k < len(fs) else np.inf
        if lo <= w <= hi:
            candidates.append(w)
    return min(candidates, key=value)


def _divergence_matrix(g: GridSpec) -> sp.csr_matrix:
    """Sparse matrix of div_arr acting on flattened (m, 2) fields."""
    m = g.n_cells
    rows, cols, vals = [], [], []
    inv_h = 1.0 / g.h
    own = np.arange(m)
    for axis, (bwd, has) in enumerate(((g.bwd_x, g.has_bx), (g.bwd_y, g.has_by))):
        ok = bwd >= 0
        rows.append(own[ok]); cols.append(2 * own[ok] + axis)
        vals.append(np.full(int(ok.sum()), inv_h))
        rows.append(own[ok]); cols.append(2 * bwd[ok] + axis)
        vals.append(np.full(int(ok.sum()), -inv_h))
    return sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(m, 2 * m)).tocsr()


class _FeasibilityProjector:
    """Least-norm projection of dual fields onto the feasibility conditions.

    Dirichlet: div b = H at every cell.  Neumann: additionally all
    boundary-facing components are pinned to zero (exact zero trace) and
    the target is H - mean(H).  Dead divergence rows (cells with no
    backward-masked neighbour on an axis, e.g. the left end of a 1-D
    strip) are structurally unreachable; LSQR leaves the least-squares
    remainder there and the reported residuals are honest about it.
    """

    def __init__(self, spec: ProblemSpec):
        g = spec.grid
        self.g = g
        self.spec = spec
        self.a = spec.a.values
        self.rhs = spec.h_tilde()
        self.A = _divergence_matrix(g)
        self.free = np.ones(2 * g.n_cells, dtype=bool)
        if spec.is_neumann:
            self.free[2 * g.edge_cell + g.edge_axis] = False
        self.A_free = self.A[:, self.free]
        self.subspace = not np.any(self.rhs)
        self.x0 = None

    def pin(self, b):
        """Zero the trace-pinned components (Neumann); returns a copy."""
        flat = b.reshape(-1).copy()
        flat[~self.free] = 0.0
        return flat.reshape(-1, 2)

    def correct(self, b, atol=1e-13):
        """One least-norm LSQR correction toward div b = rhs."""
        flat = b.reshape(-1).copy()
        resid = self.rhs - self.A @ flat
        sol = spla.lsqr(self.A_free, resid, atol=atol, btol=atol,
                        iter_lim=8 * self.g.n_cells, x0=self.x0)
        self.x0 = sol[0]
        flat[self.free] += sol[0]
        return flat.reshape(-1, 2)

    def _finish(self, b):
        """Close out ball feasibility after a correction.  With a zero
        divergence target the feasible set is a subspace, so a global
        rescale is exactly feasible; otherwise the local ball projection
        may leave a small divergence remainder."""
        norms = np.linalg.norm(b, axis=1)
        over = float((norms / self.a).max()) if norms.size else 0.0
        if over > 1.0:
            if self.subspace:
                b = b / over
            _project_ball(b, self.a)
        return b

    def exactify(self, b, rounds=20):
        """Alternate least-norm correction and ball projection, ending on a
        correction so the divergence residual sits at the attainable level."""
        b = self.pin(b) if self.spec.is_neumann else b.copy()
        b = self.correct(b)
        for _ in range(rounds):
            norms = np.linalg.norm(b, axis=1)
            over = float((norms / self.a).max()) if norms.size else 0.0
            if over <= 1.0 or (self.subspace and over <= 1.0 + 1e-9):
                break
            _project_ball(b, self.a)
            b = self.correct(b)
        return self._finish(b)

    def value(self, b):
        return float(np.sum(self.spec.F.values * b) * self.g.h * self.g.h)

    def check_infeasible(self, b):
        """Raise if feasibility alone forces |b| far outside the ball."""
        unconstrained = self.correct(b)
        over = float((np.linalg.norm(unconstrained, axis=1) / self.a).max())
        if over > 10.0:
            raise InfeasibleDualError(
                "dual feasibility requires |N| far above a "
                f"(overshoot {over:.2f}); H too large for this weight")


class _DualRefiner:
    """Primal-dual iteration on the dual problem itself:

        max_b <F, b>  s.t.  div b = rhs (free components),  |b| <= a,

    with a Lagrange multiplier field for the divergence rows.  Iterates are
    always ball-feasible; divergence feasibility is restored afterwards by
    the projector's least-norm correction.  Cheap (two sparse matvecs per
    step), so solve() can interleave it with the main loop to squeeze the
    certificate's dual value up to the attainable supremum.
    """

    def __init__(self, projector: _FeasibilityProjector):
        self.p = projector
        g = projector.g
        self.a = projector.a
        self.A = projector.A.tocsr()
        self.AT = self.A.T.tocsr()
        self.rhs = projector.rhs
        self.Fflat = projector.spec.F.values.reshape(-1).copy()
        if projector.spec.is_neumann:
            self.Fflat[~projector.free] = 0.0
        # ||A|| by a short power iteration
        v = np.random.default_rng(11).standard_normal(2 * g.n_cells)
        lam = 1.0
        for _ in range(60):
            w = self.AT @ (self.A @ v)
            lam = np.linalg.norm(w)
            if lam == 0:
                break
            v = w / lam
        L = max(np.sqrt(lam), 1e-12)
        self.tau = self.sigma = 0.995 / L
        self.b = np.zeros((g.n_cells, 2))
        self.z = np.zeros(g.n_cells)
        self._nbuf = np.empty(g.n_cells)
        self.started = False

    def start(self, b0):
        self.b = self.p.pin(b0) if self.p.spec.is_neumann else b0.copy()
        _project_ball(self.b, self.a)
        self.started = True

    def run(self, n_iters):
        A, AT, tau, sigma = self.A, self.AT, self.tau, self.sigma
        b, z = self.b, self.z
        free = self.p.free
        neumann = self.p.spec.is_neumann
        for _ in range(n_iters):
            b_old = b.reshape(-1).copy()
            flat = b_old - tau * (AT @ z) + tau * self.Fflat
            if neumann:
                flat[~free] = 0.0
            b = flat.reshape(-1, 2)
            _project_ball_fast(b, self.a, self._nbuf)
            z = z + sigma * (A @ (2.0 * b.reshape(-1) - b_old) - self.rhs)
        self.b, self.z = b, z

    def candidate(self):
        """Feasible field from the current iterate (correction + closeout)."""
        return self.p._finish(self.p.correct(self.b))


def solve(spec: ProblemSpec, cfg: SolverConfig | None = None) -> Certificate:
    """Run the primal-dual iteration and return a Certificate.

    The primal u is the ergodic average; the dual N is the best feasible
    field found by the interleaved dual refinement (its r_norm is exactly
    zero and its divergence residual is at the attainable least-squares
    level, machine precision on 2-D masks).  Convergence requires the
    weak-duality gap and the divergence residual to fall under gap_tol;
    unbounded instances trip the divergence floor and return flagged
    `diverging`.
    """
    cfg = cfg or SolverConfig()
    g = spec.grid
    m = g.n_cells
    a = spec.a.values
    F = spec.F.values
    H = spec.H.values
    neumann = spec.is_neumann
    h2 = g.h * g.h

    L = 1.01 * max(operator_norm(g), 1e-12)
    tau, sigma = cfg.resolve_steps(L)

    if isinstance(cfg.init, tuple):
        u = np.array(cfg.init[0].values if hasattr(cfg.init[0], "values")
                     else cfg.init[0], dtype=np.float64)
        b = np.array(cfg.init[1].values if hasattr(cfg.init[1], "values")
                     else cfg.init[1], dtype=np.float64)
    elif cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        u = 0.1 * rng.standard_normal(m)
        b = 0.1 * rng.standard_normal((m, 2))
    elif cfg.init == "zero":
        u = np.zeros(m)
        b = np.zeros((m, 2))
    else:
        raise ValueError(f"unknown init {cfg.init!r}")
    if neumann:
        u -= u.mean()
    _project_ball(b, a)

    bprox = None if neumann else _BoundaryProx(spec)
    floor = -cfg.floor_scale * (1.0 + float(np.linalg.norm(F)) * spec.a_max)
    projector = _FeasibilityProjector(spec)
    refiner = _DualRefiner(projector)
    h_scale = 1.0 + float(np.linalg.norm(H))

    usum = np.zeros(m)
    bsum = np.zeros((m, 2))
    ubar = u.copy()
    nbuf = np.empty(m)
    trace_rows = []
    converged = False
    diverging = False
    best_n = None
    best_d = -np.inf
    it = 0
    t0 = time.perf_counter()

    edge_w = None if neumann else spec.edge_weight()

    def energy(uv):
        w = grad_arr(g, uv) + F
        tv = float(np.sum(a * np.linalg.norm(w, axis=1)) * h2)
        curv = float(np.sum(H * uv) * h2)
        bd = 0.0
        if not neumann:
            bd = float(np.sum(edge_w * np.abs(uv[g.edge_cell] - spec.bc.f)) * g.h)
        return tv + curv + bd

    def averaged(it):
        uavg = usum / it
        if neumann:
            uavg -= uavg.mean()
        bavg = _project_ball(bsum / it, a)
        if not (np.all(np.isfinite(uavg)) and np.all(np.isfinite(bavg))):
            raise RuntimeError(
                f"NaN/Inf detected at iteration {it}; "
                f"step sizes tau={tau:.3g} sigma={sigma:.3g}")
        return uavg, bavg

    def consider(cand):
        nonlocal best_n, best_d
        d = projector.value(cand)
        if d > best_d:
            best_n, best_d = cand, d

    for it in range(1, cfg.max_iters + 1):
        b += sigma * (grad_arr(g, ubar) + F)
        _project_ball_fast(b, a, nbuf)

        u_old = u
        u = u - tau * grad_adjoint_arr(g, b) - tau * H
        if neumann:
            u -= u.mean()
        else:
            bprox.apply(u, tau)
        ubar = u + cfg.over_relaxation * (u - u_old)

        usum += u
        bsum += b

        due = it <= 2 or it % cfg.check_every == 0 or it == cfg.max_iters
        if due and it < min(cfg.min_iters, cfg.max_iters):
            if it % 1000 == 0 and not np.all(np.isfinite(u)):
                raise RuntimeError(f"NaN/Inf detected at iteration {it}")
            continue
        if due:
            uavg, bavg = averaged(it)
            p = energy(uavg)
            scale_p = 1.0 + abs(p)
            if not refiner.started:
                consider(projector.exactify(bavg, rounds=8))
                if it >= 5 * cfg.check_every or p - best_d <= 20 * cfg.gap_tol * scale_p:
                    refiner.start(bavg)
            else:
                refiner.run(cfg.check_every)
                consider(refiner.candidate())
            gap = p - best_d
            r_norm_c, r_div, r_trace = feasibility_residuals(
                VectorField(g, best_n), spec)
            trace_rows.append((it, p, best_d, gap, r_div, r_trace))
            if (gap <= cfg.gap_tol * scale_p
                    and gap >= -1e-9 * scale_p
                    and r_div <= cfg.gap_tol * h_scale):
                converged = True
                break
            if p < floor:
                diverging = True
                break

    uavg, bavg = averaged(it)
    p = energy(uavg)
    if not diverging and best_n is None:
        consider(projector.exactify(bavg, rounds=8))
    u_fld = ScalarField(g, uavg)
    n_fld = VectorField(g, best_n if best_n is not None else bavg)
    d = projector.value(n_fld.values)
    residuals = feasibility_residuals(n_fld, spec)
    return Certificate(
        u=u_fld, N=n_fld,
        primal_value=p, dual_value=d, gap=p - d,
        residuals=residuals, trace=trace_rows,
        converged=converged, diverging=diverging, iterations=it,
        u_last=ScalarField(g, u.copy()), N_last=VectorField(g, b.copy()),
        wall_time=time.perf_counter() - t0,
    )


def dual_polish(cert: Certificate, spec: ProblemSpec,
                max_rounds=60) -> Certificate:
    """Least-norm exactification of N onto the dual feasibility conditions.

    Under Neumann the boundary-facing components are pinned to zero first
    (exact zero trace), then the divergence constraint is solved in the
    least-squares sense over the remaining components, alternating with the
    ball projection until both residuals settle.  An already-feasible N is
    a fixed point.  The dual value can only move by the size of the
    correction and is recomputed from the corrected field.

    Raises InfeasibleDualError when feasibility alone would force |N| far
    above a (the prescribed divergence is too large for the weight).
    """
    g = spec.grid
    projector = _FeasibilityProjector(spec)
    projector.check_infeasible(cert.N.values)
    N = projector.exactify(cert.N.values, rounds=max_rounds)
    n_fld = VectorField(g, N)
    d = dual_value(n_fld, spec)
    residuals = feasibility_residuals(n_fld, spec)
    return Certificate(
        u=cert.u, N=n_fld,
        primal_value=cert.primal_value, dual_value=d,
        gap=cert.primal_value - d,
        residuals=residuals, trace=cert.trace,
        converged=cert.converged, diverging=cert.diverging,
        iterations=cert.iterations,
        u_last=cert.u_last, N_last=cert.N_last,
        polished=True, wall_time=cert.wall_time,
    )


def duality_gap(u: ScalarField, b: VectorField, spec: ProblemSpec) -> float:
    """primal_energy(u) - dual_value(b) for a ball-feasible b.

    With exact discrete adjointness this is >= -1e-8 for exactly feasible b
    (weak duality).  Rejects inputs with r_norm > 0.
    """
    r_norm, _, _ = feasibility_residuals(b, spec)
    if r_norm > 0:
        raise ValueError(f"dual candidate violates |b| <= a by {r_norm:.3g}")
    return primal_energy(u, spec).total - dual_value(b, spec)
