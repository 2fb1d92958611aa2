import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierpin import model
from hierpin.model import (
    B_CRIT,
    AnnealedState,
    ModelParams,
    alpha,
    annealed_exponent_fit,
    annealed_free_energy,
    annealed_hc,
    annealed_init,
    annealed_step,
    annealed_track,
    check_B,
    delta_of_beta,
    dualize,
    eps_of_h,
    finite,
    gaussian,
    h_of_eps,
    inverse_map_f,
    inverse_map_g,
    inverse_map_seq,
    irrelevance_threshold,
    kB,
    logistic_conjugate,
    logistic_inverse,
    logistic_step,
    parse_disorder,
    pure_orbit,
    pure_step,
    q_prefactor,
    rademacher,
    shift_exponent,
)

B_GRID = [2.1, 2.5, 3.0, B_CRIT, 4.0, 6.0, 10.0, 50.0]


class TestCheckB:
    def test_accepts_above_two(self):
        for B in B_GRID:
            assert check_B(B) == B

    def test_rejects_special_cases(self):
        for bad in (1.0, 2.0, 1.5, 0.5, -3.0):
            with pytest.raises(ValueError):
                check_B(bad)

    def test_dualize_hint_for_interval(self):
        with pytest.raises(ValueError, match="dualize"):
            check_B(1.7)


class TestPureMap:
    def test_fixed_points(self):
        for B in B_GRID:
            assert pure_step(1.0, B) == pytest.approx(1.0, rel=1e-14)
            assert pure_step(B - 1.0, B) == pytest.approx(B - 1.0, rel=1e-14)

    def test_dichotomy_below_unstable(self):
        for B in B_GRID:
            r = pure_orbit(B - 1.0 - 1e-6, B, 1500)[-1]
            assert abs(r - 1.0) < 1e-9

    def test_dichotomy_above_unstable(self):
        for B in B_GRID:
            orbit = pure_orbit(B - 1.0 + 1e-6, B, 500)
            assert orbit[-1] > 10.0 * (B - 1.0)

    def test_monotone_in_r(self):
        B = 3.0
        rs = np.linspace(0.0, 5.0, 200)
        vals = [pure_step(r, B) for r in rs]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    @given(
        st.floats(min_value=2.05, max_value=40.0),
        st.floats(min_value=1e-6, max_value=0.999999),
    )
    @settings(max_examples=60, deadline=None)
    def test_logistic_conjugacy_tracks_orbit(self, B, frac):
        # start inside the basin (0, B-1), away from the unstable endpoint
        # where computing z cancels catastrophically
        r = frac * (B - 1.0)
        z = logistic_conjugate(r, B)
        for _ in range(100):
            r = pure_step(r, B)
            z = logistic_step(z, B)
            assert z == pytest.approx(logistic_conjugate(r, B), rel=1e-6, abs=1e-12)

    def test_logistic_inverse_roundtrip(self):
        for B in B_GRID:
            for r in (0.1, 1.0, 2.0, B - 1.0):
                z = logistic_conjugate(r, B)
                assert logistic_inverse(z, B) == pytest.approx(r, rel=1e-12)

    def test_logistic_rate_crosses_sqrt2_at_marginal_B(self):
        # slope at z=0 is 2(B-1)/B; at B = 2 + sqrt(2) it equals sqrt(2)
        rate = 2.0 * (B_CRIT - 1.0) / B_CRIT
        assert rate == pytest.approx(math.sqrt(2.0), rel=1e-15)


class TestExponents:
    def test_alpha_values(self):
        assert alpha(B_CRIT) == pytest.approx(0.5, abs=1e-12)
        assert alpha(3.0) == pytest.approx(math.log(4.0 / 3.0) / math.log(2.0), rel=1e-15)
        assert 0.0 < alpha(2.05) < 0.05
        assert alpha(50.0) < 1.0

    def test_kB(self):
        for B in B_GRID:
            assert kB(B) == pytest.approx((B * B + B - 1.0) / (B * (B - 1.0)), rel=1e-15)
        assert kB(3.0) == pytest.approx(11.0 / 6.0, rel=1e-15)

    def test_shift_exponent_values(self):
        assert shift_exponent(6.0) == pytest.approx(3.1100109564821596, rel=1e-12)
        assert shift_exponent(4.0) == pytest.approx(6.884949192361718, rel=1e-12)

    def test_shift_exponent_rejects_at_or_below_marginal(self):
        for B in (3.0, B_CRIT, 2.5):
            with pytest.raises(ValueError):
                shift_exponent(B)

    def test_shift_exponent_two_routes_agree(self):
        # 2 alpha/(2 alpha - 1) must match 2 log qbar / log q
        for B in (3.5, 4.0, 6.0, 10.0):
            a = alpha(B)
            qbar = 2.0 * (B - 1.0) / B
            q = 2.0 * (B - 1.0) ** 2 / B**2
            assert shift_exponent(B) == pytest.approx(2.0 * a / (2.0 * a - 1.0), rel=1e-12)
            assert shift_exponent(B) == pytest.approx(2.0 * math.log(qbar) / math.log(q), rel=1e-12)


class TestDisorder:
    def test_gaussian_mgf(self):
        d = gaussian()
        assert d.mgf(0.7) == pytest.approx(math.exp(0.245), rel=1e-15)
        assert not d.finite_support

    def test_rademacher_mgf(self):
        d = rademacher()
        assert d.mgf(0.5) == pytest.approx(math.cosh(0.5), rel=1e-15)
        assert d.log_mgf(300.0) == pytest.approx(300.0 - math.log(2.0), rel=1e-12)
        assert d.finite_support
        assert d.atoms() == ((-1.0, 0.5), (1.0, 0.5))

    def test_finite_validation(self):
        with pytest.raises(ValueError):
            finite([(1.0, 0.5), (0.0, 0.5)])  # mean 0.5, var 0.25
        with pytest.raises(ValueError):
            finite([(1.0, 0.7), (-1.0, 0.4)])  # probs sum 1.1
        d = finite([(-1.0, 0.5), (1.0, 0.5)])
        assert d.mgf(0.3) == pytest.approx(math.cosh(0.3), rel=1e-14)

    def test_three_atom_disorder(self):
        # centered, unit variance: values +-sqrt(2) w.p. 1/4 each, 0 w.p. 1/2
        s = math.sqrt(2.0)
        d = finite([(-s, 0.25), (0.0, 0.5), (s, 0.25)])
        assert d.mgf(1.0) == pytest.approx(0.5 + 0.5 * math.cosh(s), rel=1e-14)

    def test_parse_disorder(self):
        assert parse_disorder("gaussian").kind == "gaussian"
        assert parse_disorder("rademacher").kind == "rademacher"
        d = parse_disorder("finite:-1:0.5,1:0.5")
        assert d.atoms() == ((-1.0, 0.5), (1.0, 0.5))
        with pytest.raises(ValueError, match="unknown disorder"):
            parse_disorder("uniform")

    def test_sampling_matches_moments(self):
        rng = np.random.default_rng(7)
        for d in (gaussian(), rademacher(), finite([(-math.sqrt(2), 0.25), (0.0, 0.5), (math.sqrt(2), 0.25)])):
            x = d.sample(rng, 200_000)
            assert abs(x.mean()) < 0.01
            assert abs(x.var() - 1.0) < 0.02


class TestParams:
    def test_eps_h_roundtrip(self):
        assert h_of_eps(3.0, 0.5) == pytest.approx(math.log(2.5), rel=1e-15)
        assert eps_of_h(3.0, math.log(2.5)) == pytest.approx(0.5, rel=1e-12)
        p = ModelParams.from_eps(3.0, 0.5, 0.5)
        assert p.h == pytest.approx(math.log(2.5), rel=1e-15)
        assert p.eps == pytest.approx(0.5, rel=1e-12)

    def test_eps_zero_at_annealed_critical_point(self):
        for B in B_GRID:
            assert eps_of_h(B, math.log(B - 1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_h_of_eps_domain(self):
        with pytest.raises(ValueError):
            h_of_eps(3.0, -2.0)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ModelParams(2.0, 0.5, 0.0)
        with pytest.raises(ValueError):
            ModelParams(3.0, -0.1, 0.0)


class TestDuality:
    def test_dualize_is_involutive_through_the_formula(self):
        for B in (1.2, 1.5, 1.9):
            Bhat = dualize(B)
            assert Bhat > 2.0
            assert Bhat / (Bhat - 1.0) == pytest.approx(B, rel=1e-12)

    def test_dualize_rejects_outside_interval(self):
        for bad in (0.5, 1.0, 2.0, 3.0):
            with pytest.raises(ValueError):
                dualize(bad)

    def test_dual_orbit_scaling(self):
        # s = r/(B-1) follows the pure map with B-hat = B/(B-1)
        B = 3.0
        Bhat = B / (B - 1.0)
        r, s = 2.7, 2.7 / (B - 1.0)
        for _ in range(50):
            r = pure_step(r, B)
            s = (s * s + (Bhat - 1.0)) / Bhat
            assert s == pytest.approx(r / (B - 1.0), rel=1e-12)


class TestAnnealedRecursion:
    def test_mean_follows_pure_map(self):
        p = ModelParams(3.0, 0.5, 0.4)
        states = annealed_track(p, rademacher(), 8)
        r = math.exp(0.4)
        for s in states:
            assert s.rbar == pytest.approx(r, rel=1e-12)
            r = pure_step(r, 3.0)

    def test_q_update_example(self):
        # B=3, rbar=2 (the unstable point): prefactors collapse to 8/9
        st1 = annealed_step(AnnealedState(0, 2.0, 0.0, 0.04, 0.01), 3.0)
        assert st1.q == pytest.approx((8.0 / 9.0) * (0.01 + 0.5 * 0.01**2), rel=1e-13)
        assert st1.q == pytest.approx(0.008933333333333333, rel=1e-12)

    def test_variance_update(self):
        st = AnnealedState(0, 1.5, 0.5 - 1.0, 0.25, 0.25 / 1.5**2)
        nxt = annealed_step(st, 3.0)
        assert nxt.delta == pytest.approx(0.25 * (2.0 * 2.25 + 0.25) / 9.0, rel=1e-13)

    def test_initial_q_from_mgf(self):
        p = ModelParams(3.0, 0.3, 0.1)
        s0 = annealed_init(p, gaussian())
        assert s0.q == pytest.approx(math.exp(0.09) - 1.0, rel=1e-12)
        assert s0.delta == pytest.approx((math.exp(0.09) - 1.0) * math.exp(0.2), rel=1e-12)

    def test_delta_of_beta_gaussian(self):
        p = ModelParams(3.0, 0.3, 0.0)
        assert delta_of_beta(p, gaussian()) == pytest.approx(0.37669713482084166, rel=1e-12)

    def test_irrelevance_threshold(self):
        assert irrelevance_threshold(3.0) == pytest.approx(1.0, abs=1e-15)
        assert irrelevance_threshold(B_CRIT) == pytest.approx(
            B_CRIT**2 - 2.0 * (B_CRIT - 1.0) ** 2, rel=1e-12
        )

    @given(
        st.floats(min_value=2.1, max_value=20.0),
        st.floats(min_value=0.0, max_value=3.0),
    )
    @settings(max_examples=80, deadline=None)
    def test_q_prefactor_bounds(self, B, excess):
        # on rbar >= (B-1)/B the prefactor obeys both closed bounds
        rbar = (B - 1.0) / B + excess
        pref = q_prefactor(rbar, B)
        assert pref <= (B / (B - 1.0)) ** 2 * (1.0 + 1e-12)
        p_n = rbar - (B - 1.0)
        if p_n >= 0.0:
            assert pref <= 1.0 + 4.0 * p_n / (B * (B - 1.0)) + 1e-12

    def test_variance_degenerate_at_beta_zero(self):
        p = ModelParams(3.0, 0.0, 0.3)
        states = annealed_track(p, gaussian(), 6)
        for s in states:
            assert s.delta == pytest.approx(0.0, abs=1e-15)
            assert s.q == pytest.approx(0.0, abs=1e-15)


class TestAnnealedFreeEnergy:
    def test_zero_at_critical_point(self):
        for B in (2.5, 3.0, 6.0):
            assert annealed_free_energy(B, math.log(B - 1.0)) == 0.0

    def test_zero_below(self):
        assert annealed_free_energy(3.0, 0.2) == 0.0

    def test_positive_and_increasing_above(self):
        B = 3.0
        vals = [annealed_free_energy(B, math.log(2.0) + d) for d in (0.01, 0.1, 0.5, 1.0)]
        assert all(v > 0.0 for v in vals)
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_matches_direct_limit(self):
        # far above h_c the doubling is immediate: f ~ h - log B + o(1) corrections
        B, h = 3.0, 5.0
        f = annealed_free_energy(B, h)
        lr = h
        for _ in range(60):
            lr = float(np.logaddexp(2.0 * lr, math.log(B - 1.0))) - math.log(B)
        assert f == pytest.approx(lr / 2.0**60, rel=1e-12)

    def test_hc_bisection_equals_closed_form(self):
        for B in (2.5, 3.0, 4.0, 6.0, 10.0):
            assert abs(annealed_hc(B, tol=1e-9) - math.log(B - 1.0)) <= 1e-9

    def test_exponent_fit_slope(self):
        slope, _, _ = annealed_exponent_fit(3.0)
        assert slope == pytest.approx(1.0 / alpha(3.0), rel=0.05)


class TestInverseSequence:
    def test_g_inverts_f(self):
        B = 3.0
        for x in (0.01, 0.5, 2.0, 10.0):
            assert inverse_map_g(inverse_map_f(x, B), B) == pytest.approx(x, rel=1e-12)

    def test_rejects_start_at_or_below_pole(self):
        with pytest.raises(ValueError):
            inverse_map_f(-1.0, 3.0)
        with pytest.raises(ValueError):
            inverse_map_seq(-1.5, 3.0, 5)

    def test_scaled_sequence_decreases_to_limit(self):
        seq = inverse_map_seq(0.5, 3.0, 80)
        scaled = [s.scaled for s in seq]
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(scaled, scaled[1:]))
        # the algebraic tail of the limit shrinks with x_k itself
        assert abs(scaled[-1] - scaled[-10]) < 1e-9
        assert 0.0 < scaled[-1] < 0.5

    def test_limit_close_to_start_for_small_starts(self):
        for a0 in (1e-3, 1e-4):
            seq = inverse_map_seq(a0, 3.0, 60)
            ratio = seq[-1].scaled / a0
            assert 0.99 <= ratio <= 1.0
