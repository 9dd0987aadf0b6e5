"""Level sets: psi-perimeter, truncations, density, minimality, barrier."""

import numpy as np
import pytest

from tvdrift.grid import GridSpec, ScalarField, VectorField
from tvdrift.problem import BoundaryCondition, ProblemSpec, heisenberg_drift
from tvdrift.levelset import (
    LevelSet, super_level_set, psi_perimeter, chi_epsilon, lsc_check,
    density_boundary, check_minimality_exhaustive, check_minimality_random,
    barrier_probe, _psi_energy_field,
)
from tvdrift.solver import SolverConfig, solve

rng = np.random.default_rng(2)


def plain_spec(g, F=None, H=None, a=None):
    return ProblemSpec(
        g, a if a is not None else ScalarField.constant(g, 1.0),
        F if F is not None else VectorField.constant(g, 0, 0),
        H if H is not None else ScalarField.constant(g, 0.0),
        BoundaryCondition.dirichlet(g, 0.0))


class TestSuperLevelSet:
    def test_empty_and_full(self):
        g = GridSpec.full(6, 6, 1.0 / 6)
        u = ScalarField(g, rng.standard_normal(g.n_cells))
        assert not super_level_set(u, u.values.max() + 1).member.any()
        assert super_level_set(u, u.values.min()).member.all()

    def test_right_half(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        u = ScalarField(g, g.x.copy())
        E = super_level_set(u, 0.5)
        assert np.array_equal(E.member, g.x >= 0.5)

    def test_monotone_nesting(self):
        g = GridSpec.disk(10, 0.1)
        u = ScalarField(g, rng.standard_normal(g.n_cells))
        lams = np.sort(rng.standard_normal(5))
        for l1, l2 in zip(lams, lams[1:]):
            E1 = super_level_set(u, l1).member
            E2 = super_level_set(u, l2).member
            assert np.all(E2 <= E1)


class TestPsiPerimeter:
    def test_empty_set_zero(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g, F=heisenberg_drift(g),
                          H=ScalarField(g, rng.standard_normal(g.n_cells)))
        E = LevelSet(g, np.zeros(g.n_cells, dtype=bool))
        assert psi_perimeter(E, spec).total == 0.0

    def test_square_block_euclidean_perimeter(self):
        # k x k block: 4k - 2 single-jump cells plus one corner cell with
        # both components, giving (4k - 2 + sqrt(2)) h under the isotropic norm
        g = GridSpec.full(12, 12, 1.0 / 12)
        spec = plain_spec(g)
        for k in (2, 3, 4):
            member = ((g.cell_i >= 4) & (g.cell_i < 4 + k)
                      & (g.cell_j >= 4) & (g.cell_j < 4 + k))
            rep = psi_perimeter(LevelSet(g, member), spec)
            expected = (4 * k - 2 + np.sqrt(2)) * g.h
            assert rep.total == pytest.approx(expected, rel=1e-12)
            assert rep.perimeter_term == pytest.approx(expected, rel=1e-12)

    def test_half_plane_brute_force_oracle(self):
        g = GridSpec.full(10, 10, 0.1)
        spec = plain_spec(g, F=heisenberg_drift(g))
        member = g.x >= 0.5
        rep = psi_perimeter(LevelSet(g, member), spec)
        # independent per-cell enumeration
        total = 0.0
        chi = member.astype(float)
        for k in range(g.n_cells):
            gx = ((chi[g.fwd_x[k]] - chi[k]) / g.h) if g.fwd_x[k] >= 0 else 0.0
            gy = ((chi[g.fwd_y[k]] - chi[k]) / g.h) if g.fwd_y[k] >= 0 else 0.0
            fx = spec.F.values[k, 0] * chi[k]
            fy = spec.F.values[k, 1] * chi[k]
            total += np.hypot(gx + fx, gy + fy) * g.h ** 2
        assert rep.total == pytest.approx(total, rel=1e-12)

    def test_region_restriction(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g)
        member = g.x >= 0.5
        region = g.y < 0.5
        full = psi_perimeter(LevelSet(g, member), spec).total
        half = psi_perimeter(LevelSet(g, member), spec, region=region).total
        assert half == pytest.approx(full / 2, rel=1e-12)


class TestChiEpsilon:
    def test_below_lambda_zero(self):
        g = GridSpec.full(5, 5, 0.2)
        u = ScalarField(g, -np.abs(rng.standard_normal(g.n_cells)))
        assert np.all(chi_epsilon(u, 0.0, 0.5).values == 0.0)

    def test_ramp(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        u = ScalarField(g, g.x.copy())
        ch = chi_epsilon(u, 0.0, 0.5).values
        assert np.allclose(ch, np.clip(g.x / 0.5, 0, 1))

    def test_pointwise_indicator_limit(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        u = ScalarField(g, rng.standard_normal(g.n_cells))
        lam = 0.1
        member = super_level_set(u, lam).member
        away = np.abs(u.values - lam) > 1e-6
        for eps in (1e-4, 1e-7, 1e-9):
            ch = chi_epsilon(u, lam, eps).values
            assert np.allclose(ch[away], member[away].astype(float), atol=1e-2)

    def test_rejects_nonpositive_eps(self):
        g = GridSpec.full(4, 4, 1.0)
        with pytest.raises(ValueError):
            chi_epsilon(ScalarField.constant(g, 0.0), 0.0, 0.0)


class TestLscCheck:
    def test_sharp_indicator_equality(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g, F=heisenberg_drift(g))
        member = (g.x >= 0.5).astype(float)
        rep = lsc_check(ScalarField(g, member), 0.5, spec)
        assert rep.passed
        vals = [v for _, v in rep.ramp_values]
        assert rep.indicator_value == pytest.approx(min(vals), abs=1e-12)

    def test_smooth_ramp_with_drift(self):
        # with a drift the gating makes the ramp values differ from the
        # indicator; the discrete inequality holds within the reported
        # O(h) slack
        g = GridSpec.full(16, 16, 1.0 / 16)
        spec = plain_spec(g, F=heisenberg_drift(g))
        rep = lsc_check(ScalarField(g, g.x.copy()), 0.5, spec)
        assert rep.passed
        assert rep.slack > 0
        assert rep.indicator_value <= min(
            v for _, v in rep.ramp_values) + 1e-8 + rep.slack

    def test_values_stabilize_below_mesh_scale(self):
        g = GridSpec.full(16, 16, 1.0 / 16)
        spec = plain_spec(g)
        u = ScalarField(g, g.x.copy())
        rep = lsc_check(u, 0.5, spec, eps_list=(1e-3, 1e-4, 1e-5))
        vals = [v for _, v in rep.ramp_values]
        assert max(vals) - min(vals) <= 1e-8 * (1 + abs(vals[0]))


class TestDensityBoundary:
    def test_full_set_empty_boundary(self):
        g = GridSpec.disk(10, 0.1)
        E = LevelSet(g, np.ones(g.n_cells, dtype=bool))
        assert not density_boundary(E).any()

    def test_half_plane_interface_column(self):
        g = GridSpec.full(10, 10, 0.1)
        E = LevelSet(g, g.cell_i < 5)
        bd = density_boundary(E, radius=1)
        # E^(1) = columns 0..3 (column 4 sees non-members); boundary = column 3
        assert np.array_equal(np.nonzero(bd)[0],
                              np.nonzero(g.cell_i == 3)[0])

    def test_isolated_cell_not_dense(self):
        g = GridSpec.full(9, 9, 1.0 / 9)
        member = np.zeros(g.n_cells, dtype=bool)
        member[g.cell_index[4, 4]] = True
        assert not density_boundary(LevelSet(g, member)).any()

    def test_radius_validation(self):
        g = GridSpec.full(4, 4, 1.0)
        with pytest.raises(ValueError):
            density_boundary(LevelSet(g, np.ones(g.n_cells, bool)), radius=0)


class TestMinimalityExhaustive:
    def test_vacuous_empty_window(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g)
        E = LevelSet(g, g.x >= 0.5)
        v = check_minimality_exhaustive(E, spec, (0, 0, 0, 0))
        assert v.passed and v.n_competitors == 0

    def test_window_too_large(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g)
        E = LevelSet(g, g.x >= 0.5)
        with pytest.raises(ValueError, match="16"):
            check_minimality_exhaustive(E, spec, (0, 0, 5, 4))

    def test_half_plane_minimal_f0(self):
        # a straight interface is flip-minimal for the pure perimeter
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g)
        E = LevelSet(g, g.x >= 0.5)
        for i0 in range(6):
            for j0 in range(6):
                v = check_minimality_exhaustive(E, spec, (i0, j0, 3, 3),
                                                gap_tol=1e-6)
                assert v.passed

    def test_flipped_cell_detected(self):
        # bump on a straight interface: enumeration finds the repair
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g)
        member = g.x >= 0.5
        bump = g.cell_index[4, 3]
        member[bump] = True
        E = LevelSet(g, member)
        v = check_minimality_exhaustive(E, spec, (2, 3, 3, 3), gap_tol=1e-6)
        assert not v.passed
        assert v.margin < 0
        # the repair removes the bump: margin is about two edge lengths
        assert v.margin == pytest.approx(-2 * g.h, abs=g.h)

    def test_solver_level_sets_8x8(self):
        # converged disk instance: at resolution-credible levels the
        # super-level sets survive every interior 3x3 enumeration
        from tvdrift.levelset import resolvable_levels
        g = GridSpec.disk(8, 1.0 / 8)
        spec = ProblemSpec(g, ScalarField.constant(g, 1.0), heisenberg_drift(g),
                           ScalarField.constant(g, 0.0),
                           BoundaryCondition.dirichlet(g, 0.0))
        cert = solve(spec, SolverConfig(gap_tol=1e-3, min_iters=5000))
        delta = cert.gap / (2.0 * spec.a.values.min() * g.h)
        for lam in resolvable_levels(cert.u.values, 5, delta):
            E = super_level_set(cert.u, lam)
            for i0 in range(1, 5):
                for j0 in range(1, 5):
                    window = (i0, j0, 3, 3)
                    inside = ((g.cell_i >= i0) & (g.cell_i < i0 + 3)
                              & (g.cell_j >= j0) & (g.cell_j < j0 + 3))
                    if inside.sum() < 9:
                        continue
                    v = check_minimality_exhaustive(E, spec, window,
                                                    gap_tol=1e-3)
                    assert v.passed, (lam, window, v.margin)

    def test_threshold_step_jump_set(self):
        # the degenerate-threshold strip: the converged step's jump set is
        # minimal against window enumeration including the curvature term
        from tvdrift.scenarios import get_scenario
        from tvdrift.levelset import resolvable_levels
        sc = get_scenario("step-c2")
        cert = solve(sc.spec, sc.solver)
        if cert.u.values.max() - cert.u.values.min() < 1e-3:
            pytest.skip("solver landed on the zero minimizer")
        g = sc.spec.grid
        delta = cert.gap / (2.0 * sc.spec.a.values.min() * g.h)
        lams = resolvable_levels(cert.u.values, 5, delta)
        interior = [l for l in lams
                    if cert.u.values.min() < l < cert.u.values.max()]
        assert interior, "expected a resolvable jump level"
        for lam in interior:
            E = super_level_set(cert.u, lam)
            for i0 in range(100, 156, 3):
                v = check_minimality_exhaustive(E, sc.spec, (i0, 0, 3, 3),
                                                gap_tol=sc.solver.gap_tol)
                assert v.passed, (lam, i0, v.margin)


class TestMinimalityRandom:
    def test_vacuous_zero_flips(self):
        g = GridSpec.full(8, 8, 1.0 / 8)
        spec = plain_spec(g)
        E = LevelSet(g, g.x >= 0.5)
        v = check_minimality_random(E, spec, trials=10, max_flip=0)
        assert v.passed

    def test_constructed_improving_flip_found(self):
        g = GridSpec.full(12, 12, 1.0 / 12)
        spec = plain_spec(g)
        member = g.x >= 0.5
        bump = g.cell_index[6, 4]
        member[bump] = True
        E = LevelSet(g, member)
        v = check_minimality_random(E, spec, trials=10, max_flip=2,
                                    gap_tol=1e-6, extra_flips=[[bump]])
        assert not v.passed
        assert np.array_equal(v.best_flip, [bump])

    def test_half_plane_survives_trials(self):
        g = GridSpec.full(16, 16, 1.0 / 16)
        spec = plain_spec(g)
        E = LevelSet(g, g.x >= 0.5)
        v = check_minimality_random(E, spec, trials=3000, max_flip=6,
                                    gap_tol=1e-6, seed=3)
        assert v.passed

    def test_local_evaluation_matches_global(self):
        g = GridSpec.disk(10, 0.1)
        spec = plain_spec(g, F=heisenberg_drift(g),
                          H=ScalarField(g, rng.standard_normal(g.n_cells)))
        member = rng.random(g.n_cells) < 0.4
        E = LevelSet(g, member)
        local = np.random.default_rng(5)
        base = _psi_energy_field(member.astype(float), spec)
        for _ in range(40):
            flip = local.integers(0, g.n_cells, size=3)
            cand = member.copy()
            cand[flip] = ~cand[flip]
            delta_global = _psi_energy_field(cand.astype(float), spec) - base
            v = check_minimality_random(E, spec, trials=0, max_flip=3,
                                        extra_flips=[np.unique(flip)])
            # the recorded margin for that single candidate equals the
            # global difference
            cand2 = member.copy()
            cand2[np.unique(flip)] = ~cand2[np.unique(flip)]
            delta2 = _psi_energy_field(cand2.astype(float), spec) - base
            assert v.best_value - v.value == pytest.approx(
                min(0.0, delta2), abs=1e-12)


class TestCoareaConsistency:
    def test_axis_aligned_profile_exact(self):
        # for fields with single-axis variation the layer decomposition is
        # exact: sum_lam P(E_lam) dlam = TV(u)
        g = GridSpec.full(32, 32, 1.0 / 32)
        spec = plain_spec(g)
        u = np.floor(g.x * 5) / 5.0
        lams = np.linspace(u.min() + 1e-9, u.max(), 400)
        dlam = lams[1] - lams[0]
        total = sum(psi_perimeter(LevelSet(g, u >= lam), spec).perimeter_term
                    for lam in lams) * dlam
        tv = float(np.sum(np.linalg.norm(
            __import__("tvdrift.grid", fromlist=["grad_arr"]).grad_arr(g, u),
            axis=1)) * g.h ** 2)
        assert total == pytest.approx(tv, rel=0.02)

    def test_converged_1d_threshold_fixture(self):
        from tvdrift.scenarios import get_scenario
        sc = get_scenario("step-c2")
        cert = solve(sc.spec, sc.solver)
        u = cert.u.values
        if u.max() - u.min() < 1e-6:
            pytest.skip("solver landed on the zero minimizer")
        g = sc.spec.grid
        lams = np.linspace(u.min() + 1e-9, u.max(), 300)
        dlam = lams[1] - lams[0]
        total = sum(psi_perimeter(LevelSet(g, u >= lam), sc.spec).perimeter_term
                    for lam in lams) * dlam
        from tvdrift.grid import grad_arr
        tv = float(np.sum(np.linalg.norm(grad_arr(g, u), axis=1)) * g.h ** 2)
        assert total == pytest.approx(tv, rel=0.02)


class TestBarrierProbe:
    def make_square(self, n=14):
        g = GridSpec.full(n, n, 1.0)
        return plain_spec(g)

    def make_neck(self):
        nx, ny = 24, 13
        mask = np.ones((ny, nx), dtype=bool)
        mask[0:5, 9:15] = False
        mask[8:13, 9:15] = False
        g = GridSpec(nx, ny, 1.0, mask)
        return plain_spec(g)

    def test_corner_shaves_and_holds(self):
        spec = self.make_square()
        rep = barrier_probe(spec, (0.0, 0.0), eps=6.5, anneal_sweeps=150)
        assert rep.holds
        assert rep.removed.size > 0           # the corner is shaved
        assert rep.psi_v < rep.psi_omega

    def test_flat_edge_holds_vacuously(self):
        spec = self.make_square()
        rep = barrier_probe(spec, (7.0, 0.0), eps=6.5, anneal_sweeps=150)
        assert rep.holds
        assert rep.removed.size == 0          # nothing improves on Omega

    def test_neck_violated(self):
        spec = self.make_neck()
        rep = barrier_probe(spec, (12.0, 5.0), eps=6.5, seed=1,
                            anneal_sweeps=200)
        assert not rep.holds
        assert rep.touching_cells.size > 0
        assert rep.psi_v < rep.psi_omega      # the cut genuinely pays

    def test_tiny_ball_vacuous(self):
        spec = self.make_square()
        rep = barrier_probe(spec, (0.0, 0.0), eps=0.3)
        assert rep.holds and rep.vacuous

    def test_interior_point_rejected(self):
        spec = self.make_square()
        with pytest.raises(ValueError, match="boundary"):
            barrier_probe(spec, (7.0, 7.0), eps=2.0)

    def test_exhaustive_small_ball(self):
        spec = self.make_square()
        rep = barrier_probe(spec, (0.0, 0.0), eps=3.0)
        assert rep.exhaustive
