import numpy as np
import pytest

from nvpes import (
    DriveSchedule,
    DriveSegment,
    RateSet,
    StateBlock,
    TruncationError,
    counting_field_evaluation,
    counting_field_pmf,
    evolve,
    initial_state,
    steady_state,
    steady_state_intensity,
)
from nvpes.model import default_n_max
from nvpes.validation import random_parameters, validation_suite


class TestCountingField:
    def test_undriven_ground_state_gives_delta(self, rates):
        init = initial_state("ket0", 4)
        pmf = counting_field_pmf(init, DriveSchedule.constant(1.0), rates, 1.0)
        assert pmf[0] == pytest.approx(1.0, abs=1e-10)
        assert np.abs(pmf[1:]).max() < 1e-10

    def test_one_jump_decay_analytic(self, decay_only):
        init = initial_state("custom", 4, StateBlock(pe0=1.0))
        t = 0.02
        pmf = counting_field_pmf(init, DriveSchedule.constant(0.1),
                                 decay_only, t, m=64)
        assert pmf[0] == pytest.approx(np.exp(-63.0 * t), abs=1e-10)
        assert pmf[1] == pytest.approx(1 - np.exp(-63.0 * t), abs=1e-10)

    def test_agrees_with_hierarchy(self, rates):
        sched = DriveSchedule.constant(0.7, pump_rate=10.0)
        init = initial_state("thermal", default_n_max(rates, 0.7))
        state = evolve(init, sched, rates, [0.7])[0]
        pmf = counting_field_pmf(init, sched, rates, 0.7)
        k = min(state.data.shape[0], pmf.size)
        assert np.abs(state.traces()[:k] - pmf[:k]).max() < 1e-6

    def test_agrees_with_hierarchy_at_partial_collection(self, rates):
        sched = DriveSchedule.constant(0.7, pump_rate=10.0)
        init = initial_state("thermal", default_n_max(rates, 0.7))
        state = evolve(init, sched, rates, [0.7], collection=0.4)[0]
        pmf = counting_field_pmf(init, sched, rates, 0.7, collection=0.4)
        k = min(state.data.shape[0], pmf.size)
        assert np.abs(state.traces()[:k] - pmf[:k]).max() < 1e-6

    def test_characteristic_function_invariants(self, rates, rng):
        r, seg = random_parameters(rng)
        sched = DriveSchedule((DriveSegment(1.0, seg.pump_rate, seg.rabi,
                                            seg.detuning),))
        init = initial_state("thermal", 8)
        ev = counting_field_evaluation(init, sched, r, 1.0, m=128)
        assert abs(ev.g[0] - 1.0) < 1e-8
        assert np.abs(ev.g).max() <= 1.0 + 1e-10
        assert ev.imag_residue < 1e-8

    def test_aliasing_detected(self, rates):
        sched = DriveSchedule.constant(3.0, pump_rate=40.0)
        init = initial_state("thermal", 8)
        with pytest.raises(TruncationError):
            counting_field_pmf(init, sched, rates, 3.0, m=16)

    def test_m_must_be_power_of_two(self, rates):
        init = initial_state("thermal", 4)
        with pytest.raises(ValueError):
            counting_field_pmf(init, DriveSchedule.constant(1.0), rates, 0.5,
                               m=100)


class TestSteadyState:
    def test_relaxation_fixed_point_is_uniform(self):
        rates = RateSet(gamma1=1.0)
        ss = steady_state(rates, DriveSegment(1.0, pump_rate=0.0))
        assert ss.p0 == pytest.approx(1 / 3, abs=1e-9)
        assert ss.p1 == pytest.approx(1 / 3, abs=1e-9)
        assert ss.pm1 == pytest.approx(1 / 3, abs=1e-9)

    def test_two_level_detailed_balance(self):
        # only radiative decay and pumping: each ground/excited pair
        # balances independently, so pe0/p0 = pump/gamma0
        rates = RateSet(gamma0=63.0, gamma_f0=0.0, gamma_f1=0.0,
                        gamma_s0=0.0, gamma_s1=0.0)
        with pytest.warns(UserWarning):
            ss = steady_state(rates, DriveSegment(1.0, pump_rate=7.0),
                              init=StateBlock(p0=1.0))
        assert ss.pe0 / ss.p0 == pytest.approx(7.0 / 63.0, rel=1e-6)

    def test_matches_long_time_evolution(self, rates):
        drive = DriveSegment(1.0, pump_rate=20.0)
        ss = steady_state(rates, drive).as_array()
        from nvpes import evolve_summed
        long = evolve_summed(StateBlock.thermal(),
                             DriveSchedule.constant(12.0, pump_rate=20.0),
                             rates, [12.0])[-1]
        assert np.abs(ss - long).max() < 1e-6

    def test_residual_is_tiny(self, rates):
        from nvpes.model import summed_generator_matrix
        drive = DriveSegment(1.0, pump_rate=20.0, rabi=8.0, detuning=5.0)
        ss = steady_state(rates, drive).as_array()
        gen = summed_generator_matrix(20.0, 8.0, 5.0, rates)
        assert np.linalg.norm(gen @ ss) < 1e-12

    def test_intensity_bounded_by_radiative_rate(self, rates):
        flux = steady_state_intensity(rates, DriveSegment(1.0, pump_rate=1e4))
        assert 0 < flux < rates.gamma0


class TestSuite:
    def test_oracle_equivalence_randomized(self):
        report = validation_suite(seed=99, sets=2, times=(0.1, 0.7),
                                  m=256)
        assert report.worst_pmf_dev < 1e-6
        assert report.worst_g0_dev < 1e-8
        assert report.worst_flux_rel_dev < 1e-4
        assert report.passed
