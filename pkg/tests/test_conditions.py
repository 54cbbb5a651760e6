import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergodic_hjb import models
from ergodic_hjb.conditions import check_condition, lyapunov_margin
from ergodic_hjb.errors import BadDelta, MissingTerminalCost
from ergodic_hjb.problem import ProblemSpec

from oracles import radial_F_neg_log_d, radial_invariance_slack

RADIAL = models.radial_disk_2d()
HALF = models.halfplane_counterexample()
EXIT = models.exit_disk()
LINE = models.degenerate_interval_1d()


class TestLyapunov:
    def test_radial_margin_matches_closed_form(self):
        rep = lyapunov_margin(RADIAL, "neg_log_d", 0.1)
        # F[-log d] is increasing in r, so the minimum sits at the inner edge of the ring
        r = np.linalg.norm(rep.worst_point)
        assert rep.min_margin == pytest.approx(radial_F_neg_log_d(r), abs=1e-9)
        assert rep.min_margin >= 7.8
        assert rep.passes

    @pytest.mark.parametrize("M", [0.0, 1.0, 5.0])
    def test_margin_passes_for_moderate_M(self, M):
        assert lyapunov_margin(RADIAL, "neg_log_d", 0.1, M=M).passes

    def test_outward_drift_fails(self):
        rep = lyapunov_margin(models.radial_disk_2d(drift_sign=1.0), "neg_log_d", 0.1)
        assert not rep.passes

    def test_halfplane_fails_on_curve(self):
        rep = lyapunov_margin(HALF, "neg_log_d", 0.01, density=256)
        assert not rep.passes
        x, y = rep.worst_point
        assert y == pytest.approx(x**4, abs=0.02)

    def test_bad_delta(self):
        with pytest.raises(BadDelta):
            lyapunov_margin(RADIAL, "neg_log_d", 5.0)

    def test_report_is_serializable(self):
        d = lyapunov_margin(RADIAL, "neg_log_d", 0.1).to_dict()
        assert set(d) >= {"min_margin", "worst_point", "passes"}


@given(st.floats(0.76, 0.999))
def test_radial_invariance_slack_oracle(r):
    assert radial_invariance_slack(r) > 0


class TestConditions:
    def test_radial_invariance_holds_with_oracle_margin(self):
        rep = check_condition(RADIAL, "invariance")
        assert rep.holds
        # the slack is increasing in r, so the worst point is the inner ring edge
        r = np.linalg.norm(rep.witness["worst_point"])
        assert rep.witness["worst_margin"] == pytest.approx(radial_invariance_slack(r), abs=1e-9)

    def test_interval_invariance(self):
        assert check_condition(LINE, "invariance").holds

    def test_exit_disk(self):
        assert check_condition(EXIT, "irrelevant").holds
        assert not check_condition(EXIT, "invariance").holds
        rel = check_condition(EXIT, "relevant")
        assert rel.holds
        assert rel.witness["min_phi"] == pytest.approx(-1.0, abs=1e-9)
        assert rel.witness["control"] == "out"

    def test_halfplane_irrelevant_fails_at_origin_row(self):
        rep = check_condition(HALF, "irrelevant")
        assert not rep.holds
        assert rep.witness["worst_clause"] == "sigma_normal"

    def test_gamma_constraint(self):
        rep = check_condition(RADIAL, "invariance", {"delta": 0.25, "k": 0.5, "gamma": 1.5})
        assert not rep.holds
        assert "gamma" in rep.notes

    def test_relevant_needs_terminal_cost(self):
        with pytest.raises(MissingTerminalCost):
            check_condition(RADIAL, "relevant")

    def test_unknown_condition(self):
        with pytest.raises(ValueError):
            check_condition(RADIAL, "nope")

    def test_sell_holds_inside_despite_boundary_degeneracy(self):
        rep = check_condition(RADIAL, "sell")
        assert rep.holds
        assert rep.witness["worst_margin"] > 0

    def test_sell_fails_without_noise(self):
        frozen = ProblemSpec(RADIAL.geom, RADIAL.controls, RADIAL.drift,
                             lambda x, a: np.zeros((x.shape[0], 2, 2)))
        assert not check_condition(frozen, "sell").holds

    def test_compact_convexity_single_control(self):
        assert check_condition(RADIAL, "compact_convexity").holds
        assert not check_condition(EXIT, "compact_convexity").holds

    def test_certifying_feedback_on_exit_disk(self):
        fb = check_condition(EXIT, "irrelevant").feedback()
        assert np.all(fb(np.array([[0.9, 0.0], [0.0, -0.95]])) == 0)
