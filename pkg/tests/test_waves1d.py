import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kwave.errors import CFLError, InitialDataError
from kwave.waves1d import (
    DiagonalSystem,
    InitialData,
    Profile,
    bump,
    catastrophe_time_estimate,
    detect_supports,
    elasticity_report,
    exact_phase_shifts,
    simulate,
    validate_initial_data,
)

X = np.linspace(-4.0, 4.0, 1601)
PAIR = (Profile((-2.5, -1.5), 0.2), Profile((1.5, 2.5), 0.2))
CONSTANT = DiagonalSystem("1", "-1")
COUPLED = DiagonalSystem("1 + 0.3*r2", "-1 + 0.3*r1")


@pytest.fixture(scope="module")
def coupled_run():
    return simulate(COUPLED, InitialData(X, PAIR), 4.0)


class TestValidation:
    def test_separated_constant_speeds(self):
        rep = validate_initial_data(CONSTANT, InitialData(X, PAIR))
        assert rep["valid"] and rep["c"] == 2.0

    def test_overlapping_supports(self):
        data = InitialData(X, (Profile((-1.0, 0.5), 0.2), Profile((0.0, 1.5), 0.2)))
        rep = validate_initial_data(CONSTANT, data)
        assert not rep["valid"] and any("ordering" in v for v in rep["violations"])

    def test_equal_speeds(self):
        rep = validate_initial_data(DiagonalSystem("1", "1"), InitialData(X, PAIR))
        assert not rep["valid"] and rep["c"] <= 0.0

    def test_simulate_refuses_invalid_data(self):
        with pytest.raises(InitialDataError):
            simulate(DiagonalSystem("1", "1"), InitialData(X, PAIR), 1.0)

    def test_supports_detected(self):
        (s,) = detect_supports(X, PAIR[0](X))
        assert -2.5 <= s[0] < s[1] <= -1.5

    def test_bump_shape(self):
        assert bump(np.array([0.0]))[0] == 1.0
        assert np.all(bump(np.array([-1.0, 1.0, 2.0])) == 0.0)

    def test_profile_expression(self):
        p = Profile.from_expr((0.0, 2.0), 0.5, 0.1, "1 - s^2")
        np.testing.assert_allclose(p(np.array([1.0, 3.0])), [0.6, 0.1])
        with pytest.raises(InitialDataError):
            Profile.from_expr((0.0, 2.0), 0.5, 0.1, "x")


class TestCharacteristics:
    def test_constant_speed(self):
        res = simulate(CONSTANT, InitialData(X, PAIR), 4.0)
        assert res.t1 == pytest.approx(1.5, abs=1e-9) and res.t2 == pytest.approx(2.5, abs=1e-9)
        rep = elasticity_report(res)
        assert rep["verdict"]
        for w, free in zip(rep["waves"], (4.0, -4.0)):
            assert w["match_error"] <= 1e-12
            assert abs(w["shift"] - free) <= 1e-12

    def test_coupled_run(self, coupled_run):
        rep = elasticity_report(coupled_run)
        assert coupled_run.t1 < coupled_run.t2
        assert rep["verdict"]
        assert rep["support_counts_before"] == [1, 1] and rep["support_counts_after"] == [1, 1]
        assert all(w["match_error"] <= 1e-6 for w in rep["waves"])
        assert coupled_run.invariance_error <= 1e-8

    def test_phase_shifts_against_exact_integrals(self, coupled_run):
        rep = elasticity_report(coupled_run)
        d1, d2 = exact_phase_shifts(PAIR)
        assert rep["waves"][0]["interaction_shift"] == pytest.approx(d1, abs=1e-9)
        assert rep["waves"][1]["interaction_shift"] == pytest.approx(d2, abs=1e-9)
        assert d1 > 0 and d2 > 0

    def test_interaction_ongoing(self):
        res = simulate(COUPLED, InitialData(X, PAIR), 2.0)
        assert elasticity_report(res)["status"] == "interaction ongoing"

    def test_no_interaction(self):
        res = simulate(COUPLED, InitialData(X, PAIR), 1.0)
        assert elasticity_report(res)["verdict"] is None

    def test_catastrophe_halts_near_breaking_time(self):
        sys = DiagonalSystem("1 + 0.3*r1", "-1")
        data = InitialData(np.linspace(-4, 4, 3201), (Profile((-2.5, -1.5), 3.0), Profile((1.5, 2.5), 0.2)))
        res = simulate(sys, data, 2.0, validate=False)
        assert res.halted
        t_star = catastrophe_time_estimate(sys, data)
        assert res.t_final <= t_star * 1.01
        assert res.t_final >= t_star * 0.95

    def test_cfl(self):
        with pytest.raises(CFLError):
            simulate(CONSTANT, InitialData(X, PAIR), 1.0, cfl=0.95)

    def test_frames_and_traces(self, coupled_run, tmp_path):
        paths = coupled_run.write_frames(tmp_path)
        assert len(paths) == len(coupled_run.times)
        coupled_run.write_traces(tmp_path / "traces.csv")
        assert (tmp_path / "traces.csv").read_text().startswith("t,family,marker,x,r")


class TestUpwind:
    @staticmethod
    def diffused(x, t, dx, cfl=0.5):
        # modified equation of first-order upwind: advection plus diffusion dx (1 - cfl) / 2
        y = np.linspace(-2.5, -1.5, 4001)
        var = dx * (1 - cfl) * t
        kern = np.exp(-(x[:, None] - t - y[None, :]) ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var)
        return kern @ PAIR[0](y) * (y[1] - y[0])

    def test_constant_speed_follows_modified_equation(self):
        errs = []
        for n in (801, 1601):
            x = np.linspace(-4, 4, n)
            res = simulate(CONSTANT, InitialData(x, PAIR), 1.0, "upwind")
            to_exact = np.max(np.abs(res.r1[-1] - PAIR[0](x - 1.0)))
            errs.append(np.max(np.abs(res.r1[-1] - self.diffused(x, 1.0, x[1] - x[0]))))
            assert errs[-1] <= 1e-3 * to_exact
        assert errs[0] / errs[1] >= 3.0

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-0.5, 0.5), st.floats(0.05, 0.3))
    def test_range_preserved_and_background_invariant(self, background, amp):
        profiles = (Profile((-2.5, -1.5), amp, background), Profile((1.5, 2.5), amp, background))
        sys = DiagonalSystem("1 + 0.3*r2", "-1 + 0.3*r1", r0=(background, background))
        x = np.linspace(-4, 4, 401)
        res = simulate(sys, InitialData(x, profiles), 1.0, "upwind")
        lo, hi = background, background + amp
        for r in (res.r1, res.r2):
            assert r.min() >= lo - 1e-12 and r.max() <= hi + 1e-12
            assert np.all(np.abs(r[:, 0] - background) <= 1e-12)
            assert np.all(np.abs(r[:, -1] - background) <= 1e-12)
