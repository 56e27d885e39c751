import math

import numpy as np
import pytest

from nvpes import (
    CutoffOverflowError,
    DriveSchedule,
    DriveSegment,
    GridError,
    InvalidStateError,
    RateSet,
    StateBlock,
    derivative,
    evolve,
    evolve_summed,
    initial_state,
    resonance_frequencies,
)
from nvpes.model import TRACE_COMPONENTS, default_n_max
from nvpes.validation import random_parameters

TWO_PI = 2 * math.pi


class TestRateSet:
    def test_defaults_match_typical_nv_values(self):
        r = RateSet()
        assert r.gamma0 == 63.0
        assert r.gamma_f0 == 12.0
        assert r.gamma_f1 == 80.0
        assert r.gamma_s1 == 2.4
        assert r.gamma_s0 == 3.3
        assert r.c_laser == 0.1
        assert r.zfs == pytest.approx(TWO_PI * 2.87e3)
        assert r.gyro == pytest.approx(TWO_PI * 28.024)

    def test_rejects_negative_rates(self):
        with pytest.raises(ValueError):
            RateSet(gamma0=-1.0)
        with pytest.raises(ValueError):
            RateSet(c_laser=0.0)

    def test_pump_rate_is_linear_in_power(self):
        r = RateSet()
        assert r.pump_rate(100.0) == pytest.approx(10.0)


class TestdriveTypes:
    def test_segment_validation(self):
        with pytest.raises(ValueError):
            DriveSegment(duration=0.0)
        with pytest.raises(ValueError):
            DriveSegment(duration=1.0, pump_rate=-2.0)

    def test_segment_from_power(self):
        seg = DriveSegment.from_power(1.0, 200.0, RateSet())
        assert seg.pump_rate == pytest.approx(20.0)

    def test_schedule_requires_segments(self):
        with pytest.raises(ValueError):
            DriveSchedule(())

    def test_schedule_durations(self):
        sched = DriveSchedule((DriveSegment(2.0), DriveSegment(0.5)))
        assert sched.total_duration == pytest.approx(2.5)
        assert np.allclose(sched.boundaries(), [0.0, 2.0, 2.5])


class TestInitialState:
    def test_thermal_splits_ground_populations_equally(self):
        state = initial_state("thermal", 50)
        b = state.block(0)
        assert b.p0 == b.p1 == b.pm1 == pytest.approx(1 / 3)
        assert b.coh01 == 0
        assert b.excited == 0 and b.ps == 0
        assert state.traces()[1:].sum() == 0

    def test_ket0_puts_everything_in_p0(self):
        b = initial_state("ket0", 50).block(0)
        assert b.p0 == 1.0 and b.trace == 1.0

    def test_custom_embeds_block_verbatim(self):
        state = initial_state("custom", 50, StateBlock(ps=1.0))
        assert state.block(0).ps == 1.0

    def test_custom_requires_unit_trace(self):
        with pytest.raises(InvalidStateError):
            initial_state("custom", 50, StateBlock(p0=0.5))

    def test_n_max_must_be_positive(self):
        with pytest.raises(ValueError):
            initial_state("thermal", 0)


class TestDerivative:
    def test_zero_rates_zero_drive_gives_zero(self):
        silent = RateSet(gamma0=0, gamma_f0=0, gamma_f1=0, gamma_s0=0,
                         gamma_s1=0)
        state = initial_state("thermal", 4)
        d = derivative(state, DriveSegment(1.0), silent)
        assert np.all(d.data == 0.0) and d.leakage == 0.0

    def test_single_radiative_channel(self, decay_only):
        state = initial_state("custom", 4, StateBlock(pe0=1.0))
        d = derivative(state, DriveSegment(1.0), decay_only)
        expected = np.zeros_like(d.data)
        expected[0, 5] = -63.0     # pe0 of block 0
        expected[1, 0] = 63.0      # p0 of block 1
        assert np.allclose(d.data, expected)

    def test_thermal_pumping_splits_evenly(self, rates):
        state = initial_state("thermal", 4)
        d = derivative(state, DriveSegment(1.0, pump_rate=10.0), rates)
        # each excited level fills at pump_rate / 3
        assert np.allclose(d.data[0, 5:8], 10.0 / 3.0)
        assert d.data[0, 0] == pytest.approx(-10.0 / 3.0)

    def test_generator_conserves_total_trace(self, rng):
        for _ in range(5):
            r, seg = random_parameters(rng)
            data = rng.random((6, 9))
            data[:, [0, 1, 2, 5, 6, 7, 8]] /= data[:, [0, 1, 2, 5, 6, 7, 8]].sum()
            state = __import__("nvpes").PhotonResolvedState(data, time=0.0)
            d = derivative(state, seg, r)
            total = d.data[:, TRACE_COMPONENTS].sum() + d.leakage
            assert abs(total) < 1e-12


class TestEvolve:
    def test_undriven_ground_state_is_stationary(self, rates):
        init = initial_state("ket0", 8)
        states = evolve(init, DriveSchedule.constant(2.0), rates,
                        [0.5, 1.0, 2.0])
        for s in states:
            assert s.traces()[0] == pytest.approx(1.0, abs=1e-12)
            assert s.block(0).p0 == pytest.approx(1.0, abs=1e-12)

    def test_one_jump_decay_matches_analytic(self, decay_only):
        init = initial_state("custom", 8, StateBlock(pe0=1.0))
        ts = np.linspace(0.004, 0.1, 25)
        states = evolve(init, DriveSchedule.constant(0.1), decay_only, ts)
        p0_block = np.array([s.traces()[0] for s in states])
        p1_block = np.array([s.traces()[1] for s in states])
        assert np.abs(p0_block - np.exp(-63.0 * ts)).max() < 1e-7
        assert np.abs(p1_block - (1 - np.exp(-63.0 * ts))).max() < 1e-7

    def test_normalization_under_drive(self, rates):
        init = initial_state("thermal", default_n_max(rates, 3.0))
        states = evolve(init, DriveSchedule.constant(3.0, pump_rate=10.0),
                        rates, np.linspace(0.1, 3.0, 12))
        assert max(s.normalization_error() for s in states) < 1e-8

    def test_positivity(self, rates):
        init = initial_state("thermal", default_n_max(rates, 1.0))
        states = evolve(init, DriveSchedule.constant(1.0, pump_rate=25.0),
                        rates, np.linspace(0.05, 1.0, 10))
        worst = min(s.data[:, TRACE_COMPONENTS].min() for s in states)
        assert worst > -1e-10

    def test_survival_probability_is_non_increasing(self, rates):
        init = initial_state("thermal", default_n_max(rates, 1.0))
        states = evolve(init, DriveSchedule.constant(1.0, pump_rate=15.0),
                        rates, np.linspace(0.0, 1.0, 40))
        p0 = np.array([s.traces()[0] for s in states])
        assert np.all(np.diff(p0) <= 1e-12)

    def test_counting_starts_at_zero(self, rates):
        init = initial_state("thermal", 16)
        states = evolve(init, DriveSchedule.constant(0.5, pump_rate=10.0),
                        rates, [0.0])
        pmf = states[0].traces()
        assert pmf[0] == 1.0 and np.all(pmf[1:] == 0.0)

    def test_tolerance_refinement_converges(self, rates):
        init = initial_state("thermal", default_n_max(rates, 0.5))
        sched = DriveSchedule.constant(0.5, pump_rate=10.0)
        coarse = evolve(init, sched, rates, [0.5], rtol=1e-8, atol=1e-10)
        fine = evolve(init, sched, rates, [0.5], rtol=5e-9, atol=5e-11)
        diff = np.abs(coarse[0].traces() - fine[0].traces()).max()
        assert diff < 10 * 5e-9

    def test_cutoff_extends_automatically(self, rates):
        sched = DriveSchedule.constant(0.7, pump_rate=10.0)
        small = evolve(initial_state("thermal", 1), sched, rates, [0.7])
        big = evolve(initial_state("thermal", 64), sched, rates, [0.7])
        assert small[0].n_max >= 16
        k = min(small[0].n_max, big[0].n_max) + 1
        assert np.allclose(small[0].traces()[:k], big[0].traces()[:k],
                           atol=1e-9)

    def test_cutoff_overflow_raises(self, rates):
        sched = DriveSchedule.constant(0.7, pump_rate=10.0)
        with pytest.raises(CutoffOverflowError):
            evolve(initial_state("thermal", 1), sched, rates, [0.7],
                   max_n_max=2)

    def test_fixed_cutoff_routes_overflow_to_leakage(self, rates):
        sched = DriveSchedule.constant(0.7, pump_rate=10.0)
        states = evolve(initial_state("thermal", 1), sched, rates, [0.7],
                        tail_tol=None)
        s = states[0]
        assert s.leakage > 0.1
        assert s.normalization_error() < 1e-8

    def test_grid_validation(self, rates):
        init = initial_state("thermal", 4)
        sched = DriveSchedule.constant(1.0)
        with pytest.raises(GridError):
            evolve(init, sched, rates, [0.5, 0.4])
        with pytest.raises(GridError):
            evolve(init, sched, rates, [0.5, 1.5])

    def test_segment_boundaries_are_seamless(self, rates):
        # one 1.0 us segment vs two 0.5 us segments with identical drive
        init = initial_state("thermal", default_n_max(rates, 1.0))
        one = evolve(init, DriveSchedule.constant(1.0, pump_rate=12.0),
                     rates, [0.25, 0.5, 0.75, 1.0])
        two = evolve(init, DriveSchedule((
            DriveSegment(0.5, pump_rate=12.0),
            DriveSegment(0.5, pump_rate=12.0))), rates,
            [0.25, 0.5, 0.75, 1.0])
        for a, b in zip(one, two):
            assert np.allclose(a.data, b.data, atol=1e-9)

    def test_partial_collection_thins_counts_but_not_populations(self, rates):
        sched = DriveSchedule.constant(0.7, pump_rate=10.0)
        n_max = default_n_max(rates, 0.7)
        full = evolve(initial_state("thermal", n_max), sched, rates, [0.7])[0]
        half = evolve(initial_state("thermal", n_max), sched, rates, [0.7],
                      collection=0.5)[0]
        # summed internal state identical
        assert np.allclose(full.data.sum(axis=0), half.data.sum(axis=0),
                           atol=1e-9)
        # detected mean thinned exactly by the collection fraction
        n = np.arange(n_max + 1)
        assert (n * half.traces()).sum() == pytest.approx(
            0.5 * (n * full.traces()).sum(), rel=1e-7)


class TestSummedEvolution:
    def test_matches_hierarchy_block_sum(self, rates):
        sched = DriveSchedule((DriveSegment(0.3, pump_rate=15.0),
                               DriveSegment(0.4, rabi=12.0, detuning=3.0)))
        init = initial_state("thermal", default_n_max(rates, 0.7))
        hier = evolve(init, sched, rates, [0.2, 0.55, 0.7])
        summed = evolve_summed(StateBlock.thermal(), sched, rates,
                               [0.2, 0.55, 0.7])
        for s, row in zip(hier, summed):
            assert np.allclose(s.data.sum(axis=0), row, atol=1e-8)


class TestResonances:
    def test_zero_field_is_degenerate(self, rates):
        plus, minus = resonance_frequencies(0.0, rates)
        assert plus == minus == rates.zfs

    def test_one_millitesla_splitting(self, rates):
        plus, minus = resonance_frequencies(1.0, rates)
        assert plus - rates.zfs == pytest.approx(TWO_PI * 28.024)
        assert rates.zfs - minus == pytest.approx(TWO_PI * 28.024)

    def test_linearity(self, rates):
        plus1, _ = resonance_frequencies(1.0, rates)
        plus2, _ = resonance_frequencies(2.0, rates)
        assert plus2 - rates.zfs == pytest.approx(2 * (plus1 - rates.zfs))

    def test_negative_field_rejected(self, rates):
        with pytest.raises(ValueError):
            resonance_frequencies(-0.1, rates)
