import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hdqkd.channel import ChannelParams, expected_block
from hdqkd.errors import InsufficientStatistics
from hdqkd.security import (ENTROPY_CLAMP, ObservedBlock, ProtocolParams, delta_EC, gamma,
                            hoeffding_count_bounds, phase_error_upper, poisson_mixture,
                            s_Z0_lower, s_Z0_upper, s_Z1_lower, secret_key_length,
                            shannon_entropy_d, tau_n)

from conftest import counts_dict
from oracle import decoy_lp_min, key_length, tau

# ---------------------------------------------------------------- entropy


def test_entropy_zero_convention():
    assert shannon_entropy_d(0.0, 2) == 0.0


@pytest.mark.parametrize("x,d,bits", [(0.5, 2, 1.0), (0.75, 4, 2.0), (0.9, 8, 3.0), (0.95, 16, 4.0)])
def test_entropy_clamp_table(x, d, bits):
    assert shannon_entropy_d(x, d) == bits


def test_entropy_below_clamp_matches_formula():
    x, d = 0.1, 4
    expected = -x * math.log2(x / 3) - (1 - x) * math.log2(1 - x)
    assert shannon_entropy_d(x, d) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("x", [-0.01, 1.01, float("nan")])
def test_entropy_domain(x):
    with pytest.raises(ValueError):
        shannon_entropy_d(x, 2)


@given(st.sampled_from([2, 4, 8, 16]), st.floats(0, 1))
def test_entropy_range(d, x):
    h = shannon_entropy_d(x, d)
    assert 0.0 <= h <= math.log2(d) + 1e-12


@given(st.sampled_from([2, 4, 8, 16]), st.floats(0, 1), st.floats(0, 1))
def test_entropy_monotone_up_to_clamp(d, a, b):
    a, b = sorted((a, b))
    assert shannon_entropy_d(a, d) <= shannon_entropy_d(b, d) + 1e-12


# ---------------------------------------------------------------- tau


def test_tau_values_match_direct_mixture():
    p = ProtocolParams(d=4, mu1=0.37, mu2=0.13, p_mu1=0.76)
    assert tau_n(p, 0) == pytest.approx(0.7357, abs=5e-5)
    assert tau_n(p, 1) == pytest.approx(0.2216, abs=5e-5)
    assert tau_n(p, 0) == pytest.approx(tau(0, 0.37, 0.13, 0.76), rel=1e-14)


def test_vacuum_source():
    assert poisson_mixture(0, [0.0], [1.0]) == 1.0


@given(st.floats(0.02, 0.98), st.floats(0.01, 0.9), st.floats(0.01, 0.99))
def test_tau_normalized(mu1, frac, p1):
    p = ProtocolParams(d=2, mu1=mu1, mu2=mu1 * frac, p_mu1=p1)
    total = sum(tau_n(p, n) for n in range(40))
    assert total == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- Hoeffding


def test_hoeffding_empty_block():
    assert hoeffding_count_bounds(0, 0, 0.76, 0.37, 1e-10) == (0.0, 0.0)


def test_hoeffding_eps_one_collapses():
    lo, hi = hoeffding_count_bounds(1000, 5000, 0.76, 0.37, 1.0)
    assert lo == hi == pytest.approx(math.exp(0.37) / 0.76 * 1000)


def test_hoeffding_direct_evaluation():
    eps = 1e-9 / 19
    lo, hi = hoeffding_count_bounds(1e6, 2e6, 0.76, 0.37, eps)
    w = math.sqrt(1e6 * math.log(1 / eps))
    assert lo == pytest.approx(math.exp(0.37) / 0.76 * (1e6 - w), rel=1e-13)
    assert hi == pytest.approx(math.exp(0.37) / 0.76 * (1e6 + w), rel=1e-13)


def test_hoeffding_rejects_zero_probability():
    with pytest.raises(ValueError):
        hoeffding_count_bounds(1, 2, 0.0, 0.3, 0.1)


def test_hoeffding_log_base_option():
    lo_e, _ = hoeffding_count_bounds(100, 200, 0.5, 0.2, 0.01)
    lo_2, _ = hoeffding_count_bounds(100, 200, 0.5, 0.2, 0.01, log_base=2)
    assert lo_2 < lo_e  # log2(1/eps) > ln(1/eps) widens the interval


@given(st.floats(0, 1e8), st.floats(0, 1), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
       st.floats(1e-20, 1))
def test_hoeffding_ordering(total, frac, p, mu, eps):
    lo, hi = hoeffding_count_bounds(total * frac, total, p, mu, eps)
    assert 0 <= lo <= hi


# ---------------------------------------------------------------- decoy bounds


def test_bounds_zero_on_empty_block(fig4_params):
    b = ObservedBlock.empty()
    assert s_Z0_lower(b, fig4_params) == 0
    assert s_Z0_upper(b, fig4_params) == 0
    assert s_Z1_lower(b, fig4_params, 0.0) == 0


def test_s0_lower_clamp_path(fig4_params):
    # signal counts dominate: mu2 * n1^+ > mu1 * n2^-
    b = ObservedBlock(1e6, 1e3, 0, 0, 0, 0, 0, 0)
    assert s_Z0_lower(b, fig4_params) == 0.0


def test_s1_lower_clamp_path(fig4_params):
    b = ObservedBlock(1e6, 10.0, 0, 0, 0, 0, 0, 0)
    assert s_Z1_lower(b, fig4_params, 0.0) == 0.0


@pytest.mark.parametrize("d,factor", [(2, 2.0), (4, 4 / 3)])
def test_s0_upper_prefactor(d, factor):
    p = ProtocolParams(d=d, mu1=0.37, mu2=0.13, p_mu1=0.76, c_overlap=None)
    b = ObservedBlock(1e5, 1e4, 1e3, 100, 1e4, 1e3, 100, 10)
    p2 = ProtocolParams(d=2, mu1=0.37, mu2=0.13, p_mu1=0.76)
    base = s_Z0_upper(b, p2) / 2.0
    assert s_Z0_upper(b, p) == pytest.approx(base * factor, rel=1e-13)


def test_decoy_bound_is_linear_program_optimum(fig4_params, channel25):
    # eps = 1 removes the fluctuation terms; the analytic single-photon bound
    # must equal the LP minimum over all photon-number yields
    b = expected_block(fig4_params, channel25, 1e7)
    for s0 in (0.0, 5e3, 2e4):
        s1 = s_Z1_lower(b, fig4_params, s0, eps1=1.0)
        lp = decoy_lp_min(b.n_Z_mu1, b.n_Z_mu2, 0.37, 0.13, 0.76, s0=s0)
        assert s1 == pytest.approx(lp, rel=1e-9)


def test_vacuum_lower_bound_below_lp(fig4_params):
    # dark-count dominated yields: y0 floor plus lossy transmission
    y = lambda n: 1e-5 if n == 0 else 1e-5 + 1 - (1 - 1e-4) ** n
    N = 1e12
    n1, n2 = (pk * N * sum(math.exp(-mu) * mu**n / math.factorial(n) * y(n) for n in range(40))
              for mu, pk in ((0.37, 0.76), (0.13, 0.24)))
    b = ObservedBlock(n1, n2, 0, 0, 0, 0, 0, 0)
    s0 = s_Z0_lower(b, fig4_params, eps1=1.0)
    lp = decoy_lp_min(b.n_Z_mu1, b.n_Z_mu2, 0.37, 0.13, 0.76, which=0)
    assert 0 < s0 <= lp * (1 + 1e-9)


def test_statistics_limit_converges_to_lp(fig4_params, channel25):
    gaps = []
    for nz in (1e6, 1e8, 1e10, 1e12):
        b = expected_block(fig4_params, channel25, nz)
        s0 = float(s_Z0_lower(b, fig4_params))
        s1 = float(s_Z1_lower(b, fig4_params, s0))
        lp = decoy_lp_min(b.n_Z_mu1, b.n_Z_mu2, 0.37, 0.13, 0.76, s0=s0)
        gaps.append((lp - s1) / lp)
    assert all(g >= -1e-9 for g in gaps)
    assert gaps == sorted(gaps, reverse=True)
    assert gaps[-1] < 1e-3


def test_decoy_bounds_reject_equal_intensities(fig4_params):
    p = fig4_params
    object.__setattr__(p, "mu2", p.mu1)  # bypass validation to hit the guard
    with pytest.raises(ValueError):
        s_Z0_lower(ObservedBlock(1, 1, 0, 0, 0, 0, 0, 0), p)


# ---------------------------------------------------------------- gamma / phase error


def test_gamma_values():
    assert gamma(1.0, 3.0, 5.0) == 0.0
    assert gamma(math.exp(-1), 1.0, 1.0) == pytest.approx(2.0, rel=1e-14)


def test_gamma_rejects_nonpositive():
    with pytest.raises(ValueError):
        gamma(0.5, 0.0, 1.0)
    with pytest.raises(ValueError):
        gamma(0.5, 1.0, 0.0)


def test_gamma_swap_identity():
    rng = np.random.default_rng(3)
    for a, b, c in rng.uniform([1e-6, 1, 1], [1, 1e6, 1e6], (10, 3)):
        ratio = ((1 + c) / c) / ((1 + b) / b)
        assert gamma(a, b, c) == pytest.approx(gamma(a, c, b) * math.sqrt(ratio), rel=1e-12)


@given(st.floats(1e-12, 1), st.floats(1e-12, 1), st.floats(1, 1e9), st.floats(1, 1e9))
def test_gamma_decreasing_in_a(a1, a2, b, c):
    lo, hi = sorted((a1, a2))
    assert gamma(hi, b, c) <= gamma(lo, b, c) + 1e-12


def test_phase_error_without_x_support(fig4_params):
    b = ObservedBlock(1e6, 3e5, 1e4, 3e3, 0, 0, 0, 0)
    with pytest.raises(InsufficientStatistics):
        phase_error_upper(b, fig4_params, 1e5)


def test_phase_error_error_free_limit_is_gamma_only(fig4_params, channel25):
    # with no X errors the upper error bound is zero and phi reduces to gamma
    b = expected_block(fig4_params, channel25, 1e7)
    b = ObservedBlock(b.n_Z_mu1, b.n_Z_mu2, b.m_Z_mu1, b.m_Z_mu2, b.n_X_mu1, b.n_X_mu2, 0, 0,
                      N_sent=b.N_sent)
    res = secret_key_length(b, fig4_params)
    assert float(res.v_X1_u) == pytest.approx(0.0, abs=1e-9)
    g = gamma(math.sqrt(fig4_params.eps1), float(res.s_Z1_l), float(res.s_X1_l))
    assert float(res.phi_Z) == pytest.approx(g, rel=1e-12)


# ---------------------------------------------------------------- leakage


def test_delta_ec():
    assert delta_EC(1e7, 0.0, 4) == 0.0
    assert delta_EC(12345.0, 0.5, 2, f_e=1.0) == pytest.approx(12345.0)
    h = -0.01 * math.log2(0.01 / 3) - 0.99 * math.log2(0.99)
    assert delta_EC(1e7, 0.01, 4) == pytest.approx(1.08e7 * h, rel=1e-13)


@given(st.floats(0, 1e9), st.floats(0, 1e9), st.floats(0, 1))
def test_delta_ec_linear(a, b, q):
    assert delta_EC(a + b, q, 4) == pytest.approx(delta_EC(a, q, 4) + delta_EC(b, q, 4),
                                                  rel=1e-9, abs=1e-6)


# ---------------------------------------------------------------- key length


def test_empty_block_has_no_key(fig4_params):
    assert secret_key_length(ObservedBlock.empty(1e9), fig4_params).l == 0.0


@pytest.mark.parametrize("loss", [0.0, 10.0, 25.0, 35.0, 50.0])
def test_key_length_matches_independent_oracle(fig4_params, loss):
    b = expected_block(fig4_params, ChannelParams(loss), 1e7)
    ell, phi = key_length(counts_dict(b), 0.37, 0.13, 0.76, 4, 1.75)
    res = secret_key_length(b, fig4_params)
    assert res.l == pytest.approx(ell, rel=1e-11, abs=1e-6)
    if phi is not None:
        assert res.phi_Z == pytest.approx(phi, rel=1e-12)


def test_key_length_oracle_2d(table2_2d_params):
    b = expected_block(table2_2d_params, ChannelParams(23.5), 1e7)
    ell, _ = key_length(counts_dict(b), 0.35, 0.13, 0.73, 2, 0.93)
    assert secret_key_length(b, table2_2d_params).l == pytest.approx(ell, rel=1e-11)


def test_skr_uses_sent_symbols(fig4_params, channel25):
    b = expected_block(fig4_params, channel25, 1e7)
    res = secret_key_length(b, fig4_params)
    assert res.skr == pytest.approx(res.l / b.N_sent * 250e6, rel=1e-13)


def test_vectorized_equals_scalar(fig4_params):
    losses = np.array([5.0, 20.0, 30.0])
    b = expected_block(fig4_params, ChannelParams(losses), 1e7)
    batch = secret_key_length(b, fig4_params).l
    for k, L in enumerate(losses):
        single = secret_key_length(expected_block(fig4_params, ChannelParams(float(L)), 1e7),
                                   fig4_params).l
        assert batch[k] == pytest.approx(single, rel=1e-13)


def test_log_base_two_is_more_conservative(fig4_params, channel25):
    b = expected_block(fig4_params, channel25, 1e7)
    lo = secret_key_length(b, fig4_params.replace(hoeffding_log_base=2.0)).l
    assert lo < secret_key_length(b, fig4_params).l


def test_eps2_source_switch(fig4_params, channel25):
    b = expected_block(fig4_params, channel25, 1e7)
    p = fig4_params.replace(eps2_source="sec")
    assert p.eps2 == pytest.approx(1e-15 / 19)
    assert secret_key_length(b, p).s_Z0_u > secret_key_length(b, fig4_params).s_Z0_u


@st.composite
def blocks(draw):
    n = [draw(st.floats(0, 1e8)) for _ in range(4)]
    m = [draw(st.floats(0, 1)) * x for x in n]
    return ObservedBlock(n[0], n[1], m[0], m[1], n[2], n[3], m[2], m[3], N_sent=1e10)


@settings(max_examples=200)
@given(blocks())
def test_result_invariants(block):
    p = ProtocolParams(d=4, mu1=0.37, mu2=0.13, p_mu1=0.76, c_overlap=1.75)
    r = secret_key_length(block, p)
    assert 0 <= r.tau0 <= 1 and 0 <= r.tau1 <= 1
    assert r.s_Z0_l >= 0 and r.s_Z1_l >= 0 and r.s_X1_l >= 0 and r.v_X1_u >= 0
    assert 0 <= r.phi_Z <= ENTROPY_CLAMP[4]
    assert r.l >= 0


@pytest.mark.parametrize("d", [2, 4])
@pytest.mark.parametrize("loss", [0.0, 15.0, 30.0, 45.0])
def test_vacuum_bounds_ordered_on_model_blocks(d, loss):
    # the two vacuum estimators use different data, so ordering only holds on
    # count sets that a physical channel can produce
    p = ProtocolParams(d=d, mu1=0.37, mu2=0.13, p_mu1=0.76, c_overlap=None)
    for nz in (1e5, 1e7, 1e9):
        b = expected_block(p, ChannelParams(loss), nz)
        assert s_Z0_lower(b, p) <= s_Z0_upper(b, p)


@settings(max_examples=50)
@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05))
def test_key_length_non_increasing_in_x_errors(qa, qb):
    # more X-basis errors raise the phase-error bound and so cannot add key
    p = ProtocolParams(d=4, mu1=0.37, mu2=0.13, p_mu1=0.76, c_overlap=1.75)
    b0 = expected_block(p, ChannelParams(20.0), 1e7)
    lo, hi = sorted((qa, qb))

    def with_q(q):
        return ObservedBlock(b0.n_Z_mu1, b0.n_Z_mu2, b0.m_Z_mu1, b0.m_Z_mu2, b0.n_X_mu1,
                             b0.n_X_mu2, q * b0.n_X_mu1, q * b0.n_X_mu2, N_sent=b0.N_sent)

    assert secret_key_length(with_q(hi), p).l <= secret_key_length(with_q(lo), p).l + 1e-6


@settings(max_examples=50)
@given(st.floats(1.0, 3.0), st.floats(1.0, 3.0))
def test_key_length_non_increasing_in_leakage(fa, fb):
    lo, hi = sorted((fa, fb))
    p = ProtocolParams(d=4, mu1=0.37, mu2=0.13, p_mu1=0.76, c_overlap=1.75)
    b = expected_block(p, ChannelParams(20.0), 1e7)
    assert secret_key_length(b, p.replace(f_e=hi)).l <= secret_key_length(b, p.replace(f_e=lo)).l + 1e-6


@pytest.mark.parametrize("kw", [dict(mu1=0.1, mu2=0.2), dict(mu1=1.0, mu2=0.2), dict(mu2=0.0),
                                dict(p_mu1=1.0), dict(P_Z=0.0), dict(c_overlap=2.5),
                                dict(d=3), dict(eps_sec=0.0)])
def test_params_validation(kw):
    base = dict(d=4, mu1=0.37, mu2=0.13, p_mu1=0.76)
    base.update(kw)
    with pytest.raises(ValueError):
        ProtocolParams(**base)


def test_block_validation():
    with pytest.raises(ValueError):
        ObservedBlock(10, 10, 11, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        ObservedBlock(-1, 10, 0, 0, 0, 0, 0, 0)


# ---------------------------------------------------------------- coverage


@pytest.mark.parametrize("loss,n_sent", [(10.0, 1e7), (25.0, 1e8), (40.0, 1e10)])
def test_bounds_cover_simulated_truth(fig4_params, loss, n_sent):
    # the failure probability per bound is ~1e-16, so no block may escape
    from hdqkd.eventsim import sample_blocks

    s = sample_blocks(fig4_params, ChannelParams(loss), n_sent, 10_000, seed=1)
    r, t = secret_key_length(s.block, fig4_params), s.truth
    assert np.all(r.s_Z0_l <= t["s_Z0"]) and np.all(t["s_Z0"] <= r.s_Z0_u)
    assert np.all(r.s_Z1_l <= t["s_Z1"])
    assert np.all(r.s_X1_l <= t["s_X1"])
    assert np.all(r.v_X1_u >= t["v_X1"])
