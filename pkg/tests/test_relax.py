import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_problem
from hlrelax.grid import (
    EdgeCoeff, GridSpec, NodeField, StaggeredField, average_staggered,
    discrete_gradient, energy, max_curl,
)
from hlrelax.oracle import direct_solve
from hlrelax.relax import (
    Block, RelaxMethod, apply_block, apply_plaquette, block_flux,
    forward_schedule, hierarchy_depth, level_blocks, level_schedule,
    level_sides, line_flux, line_shift, line_shifts, pass_work,
    plaquette_flux, relax_pass, zigzag_schedule,
)
from hlrelax.solver import gauss_bound, gauss_residual, init_field, solve

METHODS = ["single", "forward", "zigzag"]


def random_eps(spec, rng):
    return EdgeCoeff(spec, [0.5 + 2 * rng.random(spec.cells)
                            for _ in range(spec.dim)])


def random_field(spec, rng):
    return StaggeredField(spec, [rng.standard_normal(spec.cells)
                                 for _ in range(spec.dim)])


def unit_grid(n, dim=2):
    return GridSpec.square(n, float(n), dim)


class TestSchedules:
    def test_forward(self):
        assert forward_schedule(4) == [1, 2, 3, 4]

    def test_zigzag(self):
        assert zigzag_schedule(3) == [1, 2, 3]
        assert zigzag_schedule(4) == [1, 2, 3, 2, 3, 4]
        assert zigzag_schedule(5) == [1, 2, 3, 2, 3, 4, 3, 4, 5]

    def test_short_hierarchies(self):
        with pytest.raises(ValueError):
            zigzag_schedule(2)
        with pytest.raises(ValueError):
            forward_schedule(0)
        assert level_schedule("zigzag", 2) == [1, 2]
        assert level_schedule("single", 5) == [5]

    def test_levels(self):
        spec = GridSpec((4.0, 4.0), (16, 4))
        assert hierarchy_depth(spec) == 4
        assert level_sides(spec, 1) == (8, 2)
        assert level_sides(spec, 3) == (2, 1)
        with pytest.raises(ValueError, match="level 0"):
            level_sides(spec, 0)
        blocks = list(level_blocks(GridSpec.square(8), 2))
        assert len(blocks) == 16
        assert blocks[0].lo == (0, 0) and blocks[1].lo == (2, 0)
        with pytest.raises(ValueError, match="power-of-two"):
            hierarchy_depth(GridSpec.square(12))

    def test_method_parse(self):
        assert RelaxMethod.parse("single-mesh") is RelaxMethod.SINGLE
        assert RelaxMethod.parse("ZigZag") is RelaxMethod.ZIGZAG
        with pytest.raises(ValueError, match="unknown relaxation method"):
            RelaxMethod.parse("sor")


class TestPlaquette:
    def test_hand_example(self):
        spec = unit_grid(2)
        E = StaggeredField.zeros(spec)
        E.comp[0][0, 0] = 1.0  # bottom minus top x edge = 1
        E.comp[1][1, 0] = 1.0  # right minus left y edge = 1
        eps = EdgeCoeff.constant(spec, 1.0)
        assert plaquette_flux(E, eps, (0, 0)) == -0.5

    def test_curl_free_and_constant(self, rng):
        spec = GridSpec.square(8)
        eps = random_eps(spec, rng)
        E = discrete_gradient(NodeField(spec, rng.standard_normal(spec.cells)))
        scale = E.max_abs()
        for cell in np.ndindex(8, 8):
            assert abs(plaquette_flux(E, eps, cell)) <= 1e-13 * scale
        C = StaggeredField(spec, [np.full(spec.cells, 1.5),
                                  np.full(spec.cells, -2.0)])
        ceps = EdgeCoeff.constant(spec, 2.0)
        assert plaquette_flux(C, ceps, (3, 5)) == 0.0

    def test_zero_flux_and_inverse(self, rng):
        spec = GridSpec.square(8)
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        before = E.copy()
        apply_plaquette(E, eps, (7, 7), 0.0)
        assert all(np.array_equal(a, b) for a, b in zip(E.comp, before.comp))
        apply_plaquette(E, eps, (7, 7), 0.3)
        apply_plaquette(E, eps, (7, 7), -0.3)
        assert max(np.abs(a - b).max()
                   for a, b in zip(E.comp, before.comp)) <= 1e-15

    def test_touches_four_edges(self, rng):
        spec = GridSpec.square(8)
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        before = E.copy()
        apply_plaquette(E, eps, (3, 7), 0.25)
        changed = sum(int(np.sum(a != b)) for a, b in zip(E.comp, before.comp))
        assert changed == 4

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), i=st.integers(0, 7),
           j=st.integers(0, 7))
    def test_optimal_flux_is_quadratic_minimum(self, seed, i, j):
        # energy is quadratic in eta, so F(0) == F(2 eta*) at the optimum
        rng = np.random.default_rng(seed)
        spec = GridSpec((4.0, 2.0), (8, 8))
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        eta = plaquette_flux(E, eps, (i, j))
        f0 = energy(E, eps)
        f1 = energy(apply_plaquette(E.copy(), eps, (i, j), eta), eps)
        f2 = energy(apply_plaquette(E.copy(), eps, (i, j), 2 * eta), eps)
        assert f1 <= f0
        assert f2 == pytest.approx(f0, rel=1e-12)
        for off in (0.9, 1.1):
            g = energy(apply_plaquette(E.copy(), eps, (i, j), off * eta), eps)
            assert g >= f1

    def test_preserves_gauss(self, rng):
        problem = random_problem(8, 3)
        E = init_field(problem)
        for cell in np.ndindex(8, 8):
            apply_plaquette(E, problem.eps, cell,
                            plaquette_flux(E, problem.eps, cell))
            assert gauss_residual(E, problem.eps, problem.rho.values) <= \
                gauss_bound(problem.rho.values)


class TestBlock:
    def test_hand_example(self):
        spec = unit_grid(4)
        eps = EdgeCoeff.constant(spec, 1.0)
        E = StaggeredField.zeros(spec)
        E.comp[0][0, 0] = E.comp[0][1, 0] = 0.5  # bottom sum 1
        E.comp[1][2, 0] = E.comp[1][2, 1] = 0.5  # right sum 1
        E.comp[0][0, 1] = 7.0  # interior, must not matter or change
        block = Block(1, (0, 0), (2, 2))
        eta = block_flux(E, eps, block)
        assert eta == -(1.0 + 1.0) / (4.0 + 4.0)
        apply_block(E, eps, block, eta)
        assert E.comp[0][0, 1] == 7.0
        assert E.comp[1][1, 0] == 0.0 and E.comp[1][1, 1] == 0.0

    @pytest.mark.parametrize("level, side", [(1, 4), (2, 2), (3, 1)])
    def test_touches_perimeter_only(self, rng, level, side):
        spec = GridSpec.square(8)
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        before = E.copy()
        apply_block(E, eps, Block(level, (4, 4), (side, side)), 0.5)
        changed = sum(int(np.sum(a != b)) for a, b in zip(E.comp, before.comp))
        assert changed == 4 * side

    def test_curl_free_blocks_vanish(self, rng):
        spec = GridSpec.square(16)
        eps = random_eps(spec, rng)
        E = discrete_gradient(NodeField(spec, rng.standard_normal(spec.cells)))
        scale = E.max_abs()
        for level in range(1, hierarchy_depth(spec) + 1):
            for block in level_blocks(spec, level):
                assert abs(block_flux(E, eps, block)) <= 1e-13 * scale

    def test_side_one_is_plaquette_3d(self, rng):
        spec = GridSpec((1.0, 2.0, 3.0), (4, 4, 4))
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        for plane in ((0, 1), (1, 2), (0, 2)):
            cell = tuple(rng.integers(0, 4, 3))
            block = Block(2, cell, (1, 1, 1))
            a = plaquette_flux(E, eps, cell, plane)
            b = block_flux(E, eps, block, plane)
            assert a == b
            Ea = apply_plaquette(E.copy(), eps, cell, a, plane)
            Eb = apply_block(E.copy(), eps, block, b, plane)
            assert all(np.array_equal(x, y) for x, y in zip(Ea.comp, Eb.comp))

    def test_3d_block_touches_perimeter_of_one_layer(self, rng):
        spec = GridSpec.square(8, 4.0, dim=3)
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        before = E.copy()
        apply_block(E, eps, Block(1, (0, 0, 0), (4, 4, 4)), 0.1, (1, 2),
                    layer=3)
        changed = [np.argwhere(a != b) for a, b in zip(E.comp, before.comp)]
        assert len(changed[0]) == 0
        assert len(changed[1]) + len(changed[2]) == 16
        assert np.all(changed[1][:, 0] == 3) and np.all(changed[2][:, 0] == 3)
        with pytest.raises(ValueError, match="layer"):
            block_flux(E, eps, Block(1, (0, 0, 0), (4, 4, 4)), (1, 2), 4)


class TestLineShift:
    def test_zero_sum_line_unchanged(self, rng):
        spec = GridSpec.square(8)
        eps = random_eps(spec, rng)
        E = StaggeredField.zeros(spec)
        E.comp[0][:, 2] = [1, -1, 2, -2, 3, -3, 0.5, -0.5]
        before = E.comp[0].copy()
        assert line_shift(E, eps, 0, 2) == 0.0
        assert np.array_equal(E.comp[0], before)

    def test_constant_line(self):
        spec = GridSpec.square(8)
        eps = EdgeCoeff.constant(spec, 1.0)
        E = StaggeredField.zeros(spec)
        E.comp[1][5, :] = 0.75
        assert line_shift(E, eps, 1, 5) == -0.75
        assert np.all(E.comp[1][5, :] == 0)

    def test_variable_eps_formula(self, rng):
        spec = GridSpec.square(8)
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        vals, inv = E.comp[0][:, 3].copy(), 1 / eps.eps[0][:, 3]
        want = -vals.sum() / inv.sum()
        eta = line_shift(E, eps, 0, 3)
        assert eta == pytest.approx(want, rel=1e-14)
        assert abs(E.comp[0][:, 3].sum()) <= 1e-14 * np.abs(vals).sum()

    def test_all_lines_zero_average(self, rng):
        for spec in (GridSpec.square(8), GridSpec((1.0, 2.0, 3.0), (4, 6, 8))):
            E = random_field(spec, rng)
            line_shifts(E, random_eps(spec, rng))
            assert np.all(np.abs(average_staggered(E)) <= 1e-15)

    def test_3d_line_index(self, rng):
        spec = GridSpec.square(4, 4.0, dim=3)
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        line_shift(E, eps, 1, (2, 3))
        assert abs(E.comp[1][2, :, 3].sum()) <= 1e-14
        assert line_flux(E, eps, 1, (2, 3)) == pytest.approx(0, abs=1e-15)
        with pytest.raises(ValueError, match="indexed by 2"):
            line_flux(E, eps, 1, 2)


class TestRelaxPass:
    def test_single_pass_is_lexicographic_plaquette_sweep(self, rng):
        # the pass also carries rounding errors, so agreement is to round-off
        spec = GridSpec.square(8)
        eps = random_eps(spec, rng)
        E = random_field(spec, rng)
        A, B = E.copy(), E.copy()
        for cell in ((i, j) for j in range(8) for i in range(8)):
            apply_plaquette(A, eps, cell, plaquette_flux(A, eps, cell))
        relax_pass(B, eps, "single", line_shift_stage=False)
        assert max(np.abs(x - y).max()
                   for x, y in zip(A.comp, B.comp)) <= 1e-14

    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("method", METHODS)
    def test_fixed_point(self, dim, method):
        problem = random_problem(8, 11, dim=dim)
        _, E = direct_solve(problem)
        before = E.copy()
        trace = relax_pass(E, problem.eps, method)
        F = energy(before, problem.eps)
        assert trace.flux_max <= 1e-13
        assert trace.energy_drop <= 1e-13 * F
        assert max(np.abs(a - b).max()
                   for a, b in zip(E.comp, before.comp)) <= 1e-13

    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("method", METHODS)
    def test_gauss_and_energy_every_pass(self, dim, method):
        problem = random_problem(8, 5, dim=dim)
        E = init_field(problem)
        bound = gauss_bound(problem.rho.values)
        f = energy(E, problem.eps)
        for _ in range(20):
            relax_pass(E, problem.eps, method)
            assert gauss_residual(E, problem.eps, problem.rho.values) <= bound
            g = energy(E, problem.eps)
            # the folded field is re-rounded, so allow a few ulps once settled
            assert g <= f * (1 + 4 * np.finfo(float).eps)
            f = g

    @pytest.mark.parametrize("n", [8, 16, 32])
    @pytest.mark.parametrize("method", METHODS)
    def test_reaches_oracle(self, n, method):
        problem = random_problem(n, n, method=method, tol=1e-300,
                                 max_passes=10_000)
        _, E_ref = direct_solve(problem)
        E, rep = solve(problem, criterion="curl", curl_tol=1e-12)
        assert rep.converged
        assert max(np.abs(a - b).max()
                   for a, b in zip(E.comp, E_ref.comp)) <= 1e-8

    def test_small_flux_means_small_curl(self):
        problem = random_problem(16, 2)
        E, rep = solve(problem, criterion="flux", flux_tol=1e-12)
        lo, _ = problem.eps.bounds
        h = problem.spec.spacing[0]
        assert np.all(np.abs(rep.avg_field) <= 1e-12)
        assert max_curl(E) <= 2 * 4 / (lo * h * h) * 1e-12

    def test_rejects_mismatched_grids(self, rng):
        E = random_field(GridSpec.square(8), rng)
        eps = EdgeCoeff.constant(GridSpec.square(4), 1.0)
        with pytest.raises(ValueError, match="different grids"):
            relax_pass(E, eps)


class TestWorkCount:
    @pytest.mark.parametrize("n", [8, 32, 64])
    def test_single_mesh_2d(self, n):
        spec = GridSpec.square(n)
        assert pass_work(spec, "single") == (n * n, 4 * n * n)

    @pytest.mark.parametrize("n", [8, 32, 64])
    def test_forward_2d_closed_form(self, n):
        spec = GridSpec.square(n)
        M = hierarchy_depth(spec)
        touches = sum(2 ** (2 * k) * 4 * 2 ** (M - k) for k in range(1, M + 1))
        assert pass_work(spec, "forward")[1] == touches

    @pytest.mark.parametrize("dim", [2, 3])
    @pytest.mark.parametrize("method", METHODS)
    def test_trace_matches_closed_form(self, dim, method):
        problem = random_problem(8, 1, dim=dim)
        E = init_field(problem)
        trace = relax_pass(E, problem.eps, method)
        updates, touches = pass_work(problem.spec, method)
        assert trace.updates_applied == updates
        assert trace.edge_touches == touches + problem.spec.size * dim
