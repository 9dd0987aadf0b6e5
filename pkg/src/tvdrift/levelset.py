"""Weighted perimeter-with-drift machinery for sets of cells.

The psi-energy of a set E inside a region A is

    P(E; A) = sum_{A} a |D chi_E + F chi_E| h^2 + sum_{A} H chi_E h^2,

with D the forward-difference gradient on the masked grid and the drift
gated by membership.  Super-level sets of energy minimizers are checked
for local minimality against exhaustive window enumeration and randomized
connected flips; the barrier probe minimizes the full-lattice variant of
P over boundary perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ScalarField, grad_arr
from .problem import ProblemSpec


@dataclass
class LevelSet:
    """Boolean membership per masked cell, optionally tagged with the
    defining threshold."""
    grid: GridSpec
    member: np.ndarray
    lam: float | None = None

    def __post_init__(self):
        self.member = np.asarray(self.member, dtype=bool)
        if self.member.shape != (self.grid.n_cells,):
            raise ValueError("membership has wrong length")

    def to_rle(self):
        from .grid import mask_to_rle
        full = np.zeros((self.grid.ny, self.grid.nx), dtype=bool)
        full[self.grid.cell_j, self.grid.cell_i] = self.member
        return mask_to_rle(full)


@dataclass
class PsiReport:
    perimeter_term: float      # sum a |D chi| over the region
    drift_term: float          # drift contribution (may be negative)
    curvature_term: float      # sum H chi
    total: float
    region: str = "full"


def super_level_set(u: ScalarField, lam: float) -> LevelSet:
    """Cells where u >= lam."""
    return LevelSet(u.grid, u.values >= lam, lam)


def _psi_energy_field(v: np.ndarray, spec: ProblemSpec, region=None) -> float:
    """sum_region a |Dv + F 1[v>0]| h^2 + H v h^2 (drift gated by support)."""
    g = spec.grid
    w = grad_arr(g, v) + spec.F.values * (v > 0)[:, None]
    terms = (spec.a.values * np.linalg.norm(w, axis=1)
             + spec.H.values * v) * g.h * g.h
    if region is not None:
        terms = terms[region]
    return float(np.sum(terms))


def psi_perimeter(E: LevelSet, spec: ProblemSpec, region=None) -> PsiReport:
    """Weighted perimeter-with-drift of E over the given cell region.

    `region` is a boolean array over masked cells (default: all).  The
    report splits the total into the pure perimeter part sum a |D chi|,
    the drift increment, and the curvature part.
    """
    g = spec.grid
    if region is None:
        region = np.ones(g.n_cells, dtype=bool)
        region_desc = "full"
    else:
        region = np.asarray(region, dtype=bool)
        region_desc = f"{int(region.sum())} cells"
    chi = E.member.astype(np.float64)
    grad_chi = grad_arr(g, chi)
    h2 = g.h * g.h
    w = grad_chi + spec.F.values * E.member[:, None]
    tv_full = spec.a.values * np.linalg.norm(w, axis=1) * h2
    perim = spec.a.values * np.linalg.norm(grad_chi, axis=1) * h2
    curv = spec.H.values * chi * h2
    total = float(np.sum(tv_full[region]) + np.sum(curv[region]))
    perimeter_term = float(np.sum(perim[region]))
    curvature_term = float(np.sum(curv[region]))
    return PsiReport(perimeter_term,
                     total - perimeter_term - curvature_term,
                     curvature_term, total, region_desc)


def chi_epsilon(u: ScalarField, lam: float, eps: float) -> ScalarField:
    """Ramp truncation min(1, max(0, (u - lam)/eps))."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return ScalarField(u.grid, np.clip((u.values - lam) / eps, 0.0, 1.0))


@dataclass
class LscReport:
    indicator_value: float
    ramp_values: list          # (eps, value)
    slack: float
    passed: bool


def lsc_check(u: ScalarField, lam: float, spec: ProblemSpec,
              eps_list=(1e-1, 1e-2, 1e-3)) -> LscReport:
    """Discrete lower-semicontinuity inequality along the ramp family.

    Compares the psi-energy of the indicator of {u >= lam} against the
    ramp truncations: pass iff P(E_lam) <= min over the list + 1e-8 plus
    an O(h) slack term that is reported.
    """
    eps_list = tuple(eps_list)
    if any(eps_list[i] <= eps_list[i + 1] for i in range(len(eps_list) - 1)):
        raise ValueError("eps_list must be strictly decreasing")
    E = super_level_set(u, lam)
    ind_val = _psi_energy_field(E.member.astype(np.float64), spec)
    ramp_vals = [(e, _psi_energy_field(chi_epsilon(u, lam, e).values, spec))
                 for e in eps_list]
    slack = spec.grid.h * (1.0 + abs(ind_val))
    passed = ind_val <= min(v for _, v in ramp_vals) + 1e-8 + slack
    return LscReport(ind_val, ramp_vals, slack, bool(passed))


def resolvable_levels(u_values, n_levels=5, delta=0.0):
    """Level values whose super-level sets are stable at resolution delta.

    A level is resolution-credible when it sits in a gap of the sorted cell
    values at least 2*delta wide, so that no delta-sized reshuffle of u
    changes the set.  Candidate quantile positions are snapped to the
    nearest credible gap; positions with no credible interior gap fall back
    to just below the minimum (full set) or just above the maximum (empty
    set).  With delta = 0 this reduces to plain quantile midpoints.
    """
    vals = np.sort(np.asarray(u_values, dtype=float))
    lo, hi = vals[0], vals[-1]
    pad = max(delta, 1e-12 * (1.0 + abs(lo) + abs(hi)))
    candidates = [lo - pad, hi + pad]
    mids = (vals[1:] + vals[:-1]) / 2.0
    widths = vals[1:] - vals[:-1]
    for mid, width in zip(mids, widths):
        if width >= 2.0 * delta and width > 0:
            candidates.append(mid)
    targets = [lo + (hi - lo) * (k + 1) / (n_levels + 1.0)
               for k in range(n_levels)]
    return [min(candidates, key=lambda m: abs(m - t)) for t in targets]


def density_boundary(E: LevelSet, radius=1):
    """Boundary cells of the lattice-density interior of E.

    A cell belongs to E^(1) when the member fraction of its
    (2r+1)x(2r+1) window, intersected with the masked lattice, exceeds
    1 - 1/(2 (2r+1)^2) ("all but half a cell").  Returns the boolean
    array of E^(1) members 4-adjacent (within the mask) to a non-member.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    g = E.grid
    member_full = np.zeros((g.ny, g.nx), dtype=np.float64)
    member_full[g.cell_j, g.cell_i] = E.member
    mask_full = g.mask.astype(np.float64)
    k = 2 * radius + 1
    have = _box_sum(mask_full, radius)
    hits = _box_sum(member_full, radius)
    frac = np.where(have > 0, hits / np.maximum(have, 1), 0.0)
    dens = frac > 1.0 - 1.0 / (2.0 * k * k)
    dens &= g.mask
    e1 = dens[g.cell_j, g.cell_i]
    bdry = np.zeros(g.n_cells, dtype=bool)
    for nb in (g.fwd_x, g.bwd_x, g.fwd_y, g.bwd_y):
        ok = nb >= 0
        bdry[ok] |= e1[ok] & ~e1[nb[ok]]
    return bdry


def _box_sum(arr, r):
    """Sum over (2r+1)^2 windows clipped at the array edge."""
    c = np.cumsum(np.cumsum(arr, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    ny, nx = arr.shape
    j0 = np.clip(np.arange(ny) - r, 0, ny)
    j1 = np.clip(np.arange(ny) + r + 1, 0, ny)
    i0 = np.clip(np.arange(nx) - r, 0, nx)
    i1 = np.clip(np.arange(nx) + r + 1, 0, nx)
    J1, I1 = np.meshgrid(j1, i1, indexing="ij")
    J0, I0 = np.meshgrid(j0, i0, indexing="ij")
    return c[J1, I1] - c[J0, I1] - c[J1, I0] + c[J0, I0]


@dataclass
class MinimalityVerdict:
    passed: bool
    value: float               # psi value of E
    best_value: float          # best competitor found
    margin: float              # best_value - value (negative = improvement found)
    tolerance: float
    n_competitors: int
    best_flip: np.ndarray | None = None   # cell indices flipped in the best competitor


def _psi_total(member, spec: ProblemSpec):
    return _psi_energy_field(member.astype(np.float64), spec)


def check_minimality_exhaustive(E: LevelSet, spec: ProblemSpec, window,
                                gap_tol=1e-3) -> MinimalityVerdict:
    """Enumerate every competitor differing from E only inside `window`.

    window = (i0, j0, wi, wj) in lattice coordinates, at most 16 masked
    cells.  The tolerance couples to the solver tolerance:
    2 * gap_tol * (1 + |P(E)|), since level sets of gap_tol-optimal
    fields are only that close to minimal.
    """
    g = E.grid
    i0, j0, wi, wj = window
    inside = ((g.cell_i >= i0) & (g.cell_i < i0 + wi)
              & (g.cell_j >= j0) & (g.cell_j < j0 + wj))
    cells = np.nonzero(inside)[0]
    base = _psi_total(E.member, spec)
    tol = 2.0 * gap_tol * (1.0 + abs(base))
    if cells.size == 0:
        return MinimalityVerdict(True, base, base, 0.0, tol, 0)
    if cells.size > 16:
        raise ValueError(f"window has {cells.size} cells (> 16)")
    k = cells.size
    patterns = (np.arange(2 ** k)[:, None] >> np.arange(k)) & 1
    members = np.repeat(E.member[None, :], 2 ** k, axis=0)
    members[:, cells] = patterns.astype(bool)
    vals = _psi_batch(members, spec)
    best = int(np.argmin(vals))
    best_value = float(vals[best])
    flipped = cells[members[best, cells] != E.member[cells]]
    return MinimalityVerdict(bool(base <= best_value + tol), base, best_value,
                             best_value - base, tol, 2 ** k,
                             flipped if flipped.size else None)


def _psi_batch(members, spec: ProblemSpec):
    """psi totals for a (K, n_cells) batch of memberships."""
    g = spec.grid
    chi = members.astype(np.float64)
    inv_h = 1.0 / g.h
    gx = (chi[:, g.fwd_x_s] - chi) * g.has_fx * inv_h
    gy = (chi[:, g.fwd_y_s] - chi) * g.has_fy * inv_h
    wx = gx + spec.F.values[:, 0] * chi
    wy = gy + spec.F.values[:, 1] * chi
    h2 = g.h * g.h
    return (np.sum(spec.a.values * np.sqrt(wx * wx + wy * wy), axis=1) * h2
            + chi @ spec.H.values * h2)


def _affected(g: GridSpec, cells):
    """Cells whose psi term can change when `cells` flip (self + backward)."""
    out = set(int(c) for c in cells)
    for c in cells:
        for nb in (g.bwd_x[c], g.bwd_y[c]):
            if nb >= 0:
                out.add(int(nb))
    return np.fromiter(out, dtype=np.int64)


def _psi_on(member, spec: ProblemSpec, cells):
    g = spec.grid
    chi = member.astype(np.float64)
    sub = cells
    gx = (chi[g.fwd_x_s[sub]] - chi[sub]) * g.has_fx[sub] / g.h
    gy = (chi[g.fwd_y_s[sub]] - chi[sub]) * g.has_fy[sub] / g.h
    wx = gx + spec.F.values[sub, 0] * chi[sub]
    wy = gy + spec.F.values[sub, 1] * chi[sub]
    h2 = g.h * g.h
    return float(np.sum(spec.a.values[sub] * np.sqrt(wx * wx + wy * wy)) * h2
                 + np.sum(spec.H.values[sub] * chi[sub]) * h2)


def check_minimality_random(E: LevelSet, spec: ProblemSpec, trials=10_000,
                            max_flip=6, gap_tol=1e-3, seed=0,
                            extra_flips=()) -> MinimalityVerdict:
    """Randomized minimality: connected flip sets of up to max_flip cells.

    Flip sets grow by seeded random breadth-first walks; any deliberately
    constructed candidates in `extra_flips` (iterables of cell indices)
    are evaluated first.  Pass iff no competitor improves by more than
    2 * gap_tol * (1 + |P(E)|).
    """
    g = E.grid
    rng = np.random.default_rng(seed)
    base = _psi_total(E.member, spec)
    tol = 2.0 * gap_tol * (1.0 + abs(base))
    nbrs = np.stack([g.fwd_x, g.bwd_x, g.fwd_y, g.bwd_y], axis=1)
    best_delta = 0.0
    best_flip = None
    n_eval = 0

    def eval_flip(cells):
        nonlocal best_delta, best_flip, n_eval
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            return
        region = _affected(g, cells)
        before = _psi_on(E.member, spec, region)
        cand = E.member.copy()
        cand[cells] = ~cand[cells]
        after = _psi_on(cand, spec, region)
        n_eval += 1
        delta = after - before
        if delta < best_delta:
            best_delta = delta
            best_flip = cells

    for flip in extra_flips:
        eval_flip(flip)
    m = g.n_cells
    for _ in range(trials if max_flip >= 1 else 0):
        size = int(rng.integers(1, max_flip + 1))
        start = int(rng.integers(0, m))
        chosen = [start]
        seen = {start}
        while len(chosen) < size:
            frontier = nbrs[chosen].ravel()
            frontier = frontier[(frontier >= 0)]
            frontier = [int(c) for c in frontier if int(c) not in seen]
            if not frontier:
                break
            nxt = frontier[int(rng.integers(0, len(frontier)))]
            chosen.append(nxt)
            seen.add(nxt)
        eval_flip(np.array(chosen))

    return MinimalityVerdict(bool(best_delta >= -tol), base, base + best_delta,
                             best_delta, tol, n_eval, best_flip)


# -- barrier probe ------------------------------------------------------


@dataclass
class BarrierReport:
    holds: bool
    vacuous: bool
    ball_cells: np.ndarray          # masked-cell indices inside the ball
    removed: np.ndarray             # cells of Omega \ V
    touching_cells: np.ndarray      # density-boundary cells of V touching dOmega in the trimmed ball
    margin: float
    exhaustive: bool
    psi_omega: float
    psi_v: float

    def to_dict(self):
        return {"holds": self.holds, "vacuous": self.vacuous,
                "n_ball_cells": int(self.ball_cells.size),
                "removed_cells": [int(c) for c in self.removed],
                "touching_cells": [int(c) for c in self.touching_cells],
                "margin": self.margin, "exhaustive": self.exhaustive,
                "psi_omega": self.psi_omega, "psi_v": self.psi_v}


def _psi_lattice(member, spec: ProblemSpec):
    """Whole-lattice psi value of a subset of Omega.

    Jumps across the domain boundary count; faces attributed to cells
    outside Omega carry the weight a of the member cell that creates the
    jump (max over the two forward axes when both do).
    """
    g = spec.grid
    chi = np.zeros((g.ny + 2, g.nx + 2))
    chi[1 + g.cell_j, 1 + g.cell_i] = member
    a_ext = np.zeros((g.ny + 2, g.nx + 2))
    a_ext[1 + g.cell_j, 1 + g.cell_i] = spec.a.values
    inside = np.zeros((g.ny + 2, g.nx + 2), dtype=bool)
    inside[1 + g.cell_j, 1 + g.cell_i] = True

    gx = np.zeros_like(chi)
    gy = np.zeros_like(chi)
    gx[:, :-1] = (chi[:, 1:] - chi[:, :-1]) / g.h
    gy[:-1, :] = (chi[1:, :] - chi[:-1, :]) / g.h

    a_right = np.zeros_like(chi)
    a_up = np.zeros_like(chi)
    a_right[:, :-1] = a_ext[:, 1:]
    a_up[:-1, :] = a_ext[1:, :]
    aw = np.where(inside, a_ext, np.maximum(a_right, a_up))

    Fx = np.zeros_like(chi); Fy = np.zeros_like(chi); Hf = np.zeros_like(chi)
    Fx[1 + g.cell_j, 1 + g.cell_i] = spec.F.values[:, 0]
    Fy[1 + g.cell_j, 1 + g.cell_i] = spec.F.values[:, 1]
    Hf[1 + g.cell_j, 1 + g.cell_i] = spec.H.values

    wx = gx + Fx * chi
    wy = gy + Fy * chi
    h2 = g.h * g.h
    return float(np.sum(aw * np.sqrt(wx * wx + wy * wy)) * h2
                 + np.sum(Hf * chi) * h2)


def barrier_probe(spec: ProblemSpec, x0, eps, seed=0, margin_cells=2,
                  anneal_sweeps=300) -> BarrierReport:
    """Probe the boundary-barrier condition at a boundary point.

    x0 = (x, y) physical coordinates of a point on the domain boundary;
    eps = ball radius.  Minimizes the whole-lattice psi value over subsets
    W of Omega agreeing with Omega outside B(eps, x0): exhaustively when
    the ball covers at most 16 cells, otherwise by simulated annealing
    (geometric schedule, single and paired flips) plus an exhaustive pass
    on the 16 ball cells nearest x0.

    The verdict is the discrete analogue of "the density boundary of the
    minimizer avoids the domain boundary inside the ball": a violation is
    a density-boundary cell of V within B(eps - margin, x0) that lies
    within 2 lattice cells of the complement of Omega.  The margin (in
    cells) discounts the junction zone where the constraint pins V to
    Omega at the ball surface.
    """
    g = spec.grid
    x0 = np.asarray(x0, dtype=float)
    d0 = np.hypot(g.x - x0[0], g.y - x0[1])
    # x0 must sit on the domain boundary: nearest cell is a boundary cell
    near = int(np.argmin(d0))
    if not np.any(g.edge_cell == near):
        raise ValueError("probe point is not on the domain boundary")
    ball = np.nonzero(d0 < eps)[0]
    if ball.size == 0:
        return BarrierReport(True, True, ball, np.empty(0, np.int64),
                             np.empty(0, np.int64), margin_cells * g.h, True,
                             _psi_lattice(np.ones(g.n_cells), spec),
                             _psi_lattice(np.ones(g.n_cells), spec))

    omega = np.ones(g.n_cells, dtype=bool)
    base_val = _psi_lattice(omega, spec)

    def value_of(removed_mask):
        member = omega.copy()
        member[ball[removed_mask]] = False
        return _psi_lattice(member, spec)

    exhaustive = ball.size <= 16
    if exhaustive:
        k = ball.size
        best_pattern = np.zeros(k, dtype=bool)
        best_val = base_val
        for code in range(1, 2 ** k):
            pat = (code >> np.arange(k)) & 1
            v = value_of(pat.astype(bool))
            if v < best_val - 1e-12:
                best_val = v
                best_pattern = pat.astype(bool)
    else:
        rng = np.random.default_rng(seed)
        cur = np.zeros(ball.size, dtype=bool)
        cur_val = base_val
        best_pattern, best_val = cur.copy(), cur_val
        T = 0.5 * g.h
        for sweep in range(anneal_sweeps):
            for _ in range(ball.size):
                cand = cur.copy()
                flips = 1 if rng.random() > 0.25 else int(rng.integers(2, 5))
                idx = rng.integers(0, ball.size, size=flips)
                cand[idx] = ~cand[idx]
                v = value_of(cand)
                if v < cur_val or rng.random() < np.exp((cur_val - v) / max(T, 1e-12)):
                    cur, cur_val = cand, v
                    if v < best_val - 1e-12:
                        best_pattern, best_val = cand.copy(), v
            T *= 0.985
        # exhaustive refinement on the 16 ball cells nearest x0
        order = np.argsort(d0[ball])[:16]
        fixed = best_pattern.copy()
        for code in range(2 ** order.size):
            pat = fixed.copy()
            pat[order] = ((code >> np.arange(order.size)) & 1).astype(bool)
            v = value_of(pat)
            if v < best_val - 1e-12:
                best_val = v
                best_pattern = pat.copy()

    removed = ball[best_pattern]
    member = omega.copy()
    member[removed] = False

    db_cells = density_boundary(LevelSet(g, member))
    is_domain_bdry = np.zeros(g.n_cells, dtype=bool)
    is_domain_bdry[g.edge_cell] = True
    margin = margin_cells * g.h
    in_trimmed = d0 < max(eps - margin, 0.0)
    touching = db_cells & is_domain_bdry & in_trimmed
    touch_idx = np.nonzero(touching)[0]
    vacuous = removed.size == 0 and not np.any(db_cells & in_trimmed)
    return BarrierReport(bool(touch_idx.size == 0), bool(vacuous), ball,
                         removed, touch_idx, margin, exhaustive,
                         base_val, best_val)
