import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ergodic_hjb import geometry as geo
from ergodic_hjb import models
from ergodic_hjb.discretize import DiscreteField, assemble, build_grid
from ergodic_hjb.errors import BadDelta, GridMismatch, ScheduleTooShort
from ergodic_hjb.problem import ControlSet, ProblemSpec, constant_cost
from ergodic_hjb.solvers import (VanishingDiscountSchedule, boundary_growth_report, check_liouville,
                                 check_uniqueness, extrapolate_limit, solve_discounted,
                                 solve_ergodic)

import oracles

RADIAL = models.radial_disk_2d()
LINE = models.degenerate_interval_1d()


@pytest.fixture(scope="module")
def line_grid():
    return build_grid(LINE.geom, 1 / 512)


@pytest.fixture(scope="module")
def line_stencils(line_grid):
    return assemble(LINE, line_grid)


@pytest.fixture(scope="module")
def line_ergodic(line_grid, line_stencils):
    return solve_ergodic(LINE, line_grid, VanishingDiscountSchedule.geometric(1e-1, 1e-4),
                         stencils=line_stencils)


class TestDiscounted:
    def test_zero_cost(self):
        g = build_grid(RADIAL.geom, 0.05)
        sol = solve_discounted(RADIAL.with_cost(constant_cost(0.0)), g, 0.3)
        assert np.abs(sol.field.values).max() <= 1e-12

    @pytest.mark.parametrize("lam", [0.5, 0.1])
    def test_unit_cost(self, lam):
        g = build_grid(RADIAL.geom, 0.05)
        sol = solve_discounted(RADIAL.with_cost(constant_cost(1.0)), g, lam)
        np.testing.assert_allclose(sol.field.values, 1.0 / lam, atol=1e-9)

    def test_bound_with_margin(self, line_grid, line_stencils):
        lam = 0.1
        u = solve_discounted(LINE, line_grid, lam, stencils=line_stencils).field.values
        assert u.min() >= 0.0 and u.max() <= 1.0 / lam
        assert 1.0 / lam - u.max() > 1.0

    def test_matches_collocation_oracle(self, line_grid, line_stencils):
        sol = solve_discounted(LINE, line_grid, oracles.DISCOUNTED_LAMBDA, stencils=line_stencils)
        idx = line_grid.nearest(np.array(oracles.DISCOUNTED_1D_POINTS)[:, None])
        np.testing.assert_allclose(line_grid.coords[idx, 0], oracles.DISCOUNTED_1D_POINTS, atol=1e-12)
        np.testing.assert_allclose(sol.field.values[idx], oracles.DISCOUNTED_1D_VALUES, atol=5e-3)

    def test_comparison(self):
        g = build_grid(LINE.geom, 1 / 64)
        lo = solve_discounted(LINE, g, 0.2).field.values
        hi = solve_discounted(LINE.with_cost(lambda x, a: x[:, 0] ** 2 + 0.1 * (1 + x[:, 0])), g,
                              0.2).field.values
        assert np.all(hi >= lo - 1e-12)

    def test_nonpositive_lambda(self):
        with pytest.raises(ValueError):
            solve_discounted(LINE, build_grid(LINE.geom, 0.1), 0.0)

    def test_two_control_policy_iteration(self):
        spec = models.exit_disk(running_cost=lambda x, a: x[:, 0] * (1.0 if a[0] else -1.0))
        g = build_grid(spec.geom, 0.1)
        sol = solve_discounted(spec, g, 0.5, stencils=assemble(spec, g, certified=True))
        assert sol.residual_sup < 1e-9
        assert set(np.unique(sol.policy.controls)) <= {0, 1}


@settings(max_examples=10)
@given(st.floats(-3, 3))
def test_cost_shift_equivariance(s):
    g = build_grid(LINE.geom, 1 / 64)
    lam = 0.25
    base = solve_discounted(LINE, g, lam).field.values
    shifted = solve_discounted(LINE.with_cost(lambda x, a: x[:, 0] ** 2 + s), g, lam).field.values
    np.testing.assert_allclose(shifted, base + s / lam, atol=1e-9)


class TestSchedule:
    def test_geometric(self):
        sch = VanishingDiscountSchedule.geometric(1e-1, 1e-4, 0.5)
        assert sch.lambdas[0] == 0.1 and sch.lambdas[-1] >= 1e-4
        assert len(sch.lambdas) == 10

    def test_must_decrease(self):
        with pytest.raises(ValueError):
            VanishingDiscountSchedule((0.1, 0.2))

    def test_richardson_exact_for_quadratic(self):
        lams = np.array([0.4, 0.2, 0.1])
        assert extrapolate_limit(lams, 3 - 2 * lams + lams**2) == pytest.approx(3.0, abs=1e-12)


class TestErgodic:
    def test_constant_cost(self):
        g = build_grid(RADIAL.geom, 0.0625)
        sol = solve_ergodic(RADIAL.with_cost(constant_cost(5.0)), g,
                            VanishingDiscountSchedule.geometric(1e-1, 1e-3))
        assert sol.c == pytest.approx(-5.0, abs=1e-6)
        assert np.abs(sol.chi.values).max() <= 1e-6

    def test_quadrature_oracle(self, line_ergodic):
        assert line_ergodic.c == pytest.approx(oracles.ERGODIC_C_1D, abs=1e-2)

    def test_trace_consistent(self, line_ergodic):
        tr = line_ergodic.trace
        assert [t["lambda"] for t in tr] == list(VanishingDiscountSchedule.geometric(1e-1, 1e-4).lambdas)
        for t in tr:
            assert t["gap_to_c"] == pytest.approx(abs(t["lambda_u_ref"] + line_ergodic.c))
        assert tr[-1]["gap_to_c"] < tr[0]["gap_to_c"]

    def test_chi_vanishes_at_reference(self, line_ergodic):
        assert line_ergodic.chi.values[line_ergodic.reference_node] == 0.0
        assert line_ergodic.x_tilde == [0.0]

    def test_schedule_too_short(self):
        g = build_grid(LINE.geom, 1 / 64)
        with pytest.raises(ScheduleTooShort):
            solve_ergodic(LINE, g, VanishingDiscountSchedule((2.0, 1.0)), cauchy_tol=1e-6)

    def test_uniqueness_and_shift(self, line_grid, line_stencils, line_ergodic):
        other = solve_ergodic(LINE, line_grid, VanishingDiscountSchedule.geometric(1e-1, 1e-4, 1 / 3),
                              stencils=line_stencils)
        rep = check_uniqueness(line_ergodic, other)
        assert rep.passes and rep.c_gap < 1e-3 and rep.chi_variation < 1e-3
        plus = LINE.with_cost(lambda x, a: x[:, 0] ** 2 + 1.0)
        shifted = solve_ergodic(plus, line_grid, VanishingDiscountSchedule.geometric(1e-1, 1e-4))
        assert shifted.c - line_ergodic.c == pytest.approx(-1.0, abs=1e-9)
        np.testing.assert_allclose(shifted.chi.values, line_ergodic.chi.values, atol=1e-9)

    def test_uniqueness_grid_mismatch(self, line_ergodic):
        g = build_grid(LINE.geom, 1 / 64)
        coarse = solve_ergodic(LINE, g, VanishingDiscountSchedule.geometric(1e-1, 1e-3))
        with pytest.raises(GridMismatch):
            check_uniqueness(line_ergodic, coarse)


class TestGrowth:
    def test_ratios_strictly_decrease(self, line_ergodic):
        rows = boundary_growth_report(line_ergodic.chi)
        ratios = [r["ratio"] for r in rows]
        assert [r["delta"] for r in rows] == [0.2, 0.1, 0.05]
        assert all(b < a for a, b in zip(ratios, ratios[1:]))

    def test_bad_deltas(self, line_ergodic):
        with pytest.raises(BadDelta):
            boundary_growth_report(line_ergodic.chi, deltas=(0.1, 0.2))

    def test_log_profile_does_not_decrease(self):
        # -log d itself has ratio -> 1, a control case the check must not pass
        g = build_grid(geo.interval(), 1 / 512)
        f = DiscreteField(g, -np.log(g.distance))
        ratios = [r["ratio"] for r in boundary_growth_report(f)]
        assert ratios[-1] >= ratios[0]


class TestLiouville:
    @pytest.mark.parametrize("spec,h", [(RADIAL, 0.05), (LINE, 1 / 256)], ids=["radial", "interval"])
    def test_constant(self, spec, h):
        rep = check_liouville(spec, build_grid(spec.geom, h))
        assert rep.status == "pass"
        assert rep.max_deviation < 1e-6

    def test_preconditions_unmet(self):
        out = models.radial_disk_2d(drift_sign=1.0)
        rep = check_liouville(out, build_grid(out.geom, 0.1))
        assert rep.status == "preconditions_unmet"
        assert rep.max_deviation is None


def test_uncertified_boundary_reflects():
    spec = ProblemSpec(geo.interval(), ControlSet(((0.0,),)), lambda x, a: np.zeros_like(x),
                       lambda x, a: np.ones((x.shape[0], 1, 1)), running_cost=constant_cost(1.0))
    with pytest.warns(UserWarning):
        sol = solve_discounted(spec, build_grid(spec.geom, 0.1), 0.5)
    # dropped couplings rebalance the diagonal, so the artificial boundary reflects
    np.testing.assert_allclose(sol.field.values, 2.0, atol=1e-12)


@pytest.mark.parametrize("spec,h", [(RADIAL, 0.05), (LINE, 1 / 256)], ids=["radial", "interval"])
def test_discrete_harmonic_functions_are_constant(spec, h):
    # one closed communicating class of the stencil chain <=> L u = 0 forces u constant
    from scipy.sparse.csgraph import connected_components

    g = build_grid(spec.geom, h)
    L = assemble(spec, g).matrix(0).tocsr()
    L.setdiag(0)
    L.eliminate_zeros()
    n_comp, labels = connected_components(L, directed=True, connection="strong")
    closed = [c for c in range(n_comp)
              if not np.any(labels[L[labels == c].indices] != c)]
    assert len(closed) == 1
