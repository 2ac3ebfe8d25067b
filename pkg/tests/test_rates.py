import dataclasses
import itertools

import numpy as np
import pytest

from polaron_tcl.acceptance import direct_hom_rates
from polaron_tcl.bath import SpatialStructure, build_kernel_tables, displaced_bath_f
from polaron_tcl.model import BathSpec, FullyCorrelated, SiteNetwork
from polaron_tcl.polaron import build_polaron_frame, localized_state, transform_initial_state
from polaron_tcl.rates import (
    CHANNELS,
    FoersterError,
    HomRates,
    K_SIGN,
    advance_hom_rates,
    foerster_kernel,
    foerster_rate,
    foerster_rate_matrix,
    hom_correlator,
    hom_rate_series,
    inhom_first_order,
    markov_rates,
    pair_correlator,
    rate_context,
    rates_at,
    redfield_rates,
    secular_mask,
    weak_gamma_profiles,
    weak_shift_profiles,
    xi_direct,
    xi_series,
)


def _setup(net, bath, t_max, dt=0.125):
    tab = build_kernel_tables(net, bath, dt, t_max)
    return tab, build_polaron_frame(net, bath, tab)


def test_correlators_vanish_when_fully_correlated(correlated):
    tab, fr = _setup(*correlated, 10.0)
    for k in CHANNELS:
        assert np.all(hom_correlator(tab, fr, k, 3.0) == 0)
    assert np.all(hom_rate_series(tab, fr, 11) == 0)
    ijs, Y = inhom_first_order(tab, fr, transform_initial_state(localized_state(4, 0), fr), 11)
    assert np.all(Y == 0)


def test_zero_lag_pair_correlator_gives_gamma_squared(fmo_tables, fmo_frame, fmo):
    net, _ = fmo
    ctx = rate_context(fmo_tables, fmo_frame)
    p = ctx.pairs.index((0, 1))
    K0 = fmo_tables.K_pairs(ctx.pairs)[:, :, 0]
    c2 = pair_correlator(K0, ctx.log_beta, K_SIGN[2])
    assert c2[p, p].real == pytest.approx(1 - fmo_tables.beta[0, 1] ** 2, rel=1e-12)
    assert net.V[0, 1] ** 2 * c2[p, p].real == pytest.approx(fmo_frame.gamma[0, 1] ** 2, rel=1e-12)


def test_small_coupling_correlator_is_linear_in_K(fmo):
    net, bath = fmo
    weak = dataclasses.replace(bath, spectral_density=bath.spectral_density.scaled(1e-6))
    tab, fr = _setup(net, weak, 20.0)
    ctx = rate_context(tab, fr)
    K = tab.K_pairs(ctx.pairs)[:, :, 40]
    c = pair_correlator(K, ctx.log_beta, K_SIGN[2])
    np.testing.assert_allclose(c, ctx.bb * K, rtol=1e-4, atol=1e-12)


def test_rates_start_at_zero(fmo_tables, fmo_frame):
    assert np.all(hom_rate_series(fmo_tables, fmo_frame, 3)[:, 0] == 0)
    assert np.all(HomRates.zero(fmo_frame).gamma() == 0)


def test_rate_series_against_direct_quadrature(fmo):
    net, bath = fmo
    tab, fr = _setup(net, bath, 250.0)
    G = hom_rate_series(tab, fr, 1001)[:, -1]
    ref = direct_hom_rates(net, bath, tab, fr, 250.0)
    assert np.abs(G - ref).max() < 1e-5 * np.abs(ref).max()


def test_incremental_rates_match_series(fmo_tables, fmo_frame):
    state = HomRates.zero(fmo_frame)
    for _ in range(40):
        state = advance_hom_rates(state, fmo_tables, fmo_frame, 0.5)
    G = hom_rate_series(fmo_tables, fmo_frame, 81)[:, -1]
    assert np.abs(state.gamma() - G).max() < 1e-7 * np.abs(G).max()


@pytest.fixture(scope="module")
def fast_markov(fast):
    net, bath = fast
    tab, fr = _setup(net, bath, 2000.0)
    return tab, fr, markov_rates(net, bath, fr, tab)


def test_markov_rates_finite_for_fast_bath(fast_markov):
    _, _, mr = fast_markov
    assert np.all(np.isfinite(mr.gamma))
    assert np.abs(mr.gamma).max() > 0
    assert mr.decay_ratio <= 1e-6


def test_time_dependent_rates_reach_markov_limit(fast_markov):
    tab, fr, mr = fast_markov
    G = hom_rate_series(tab, fr, 8001)[:, -1]
    M = rates_at(mr.gamma, fr, 2000.0)
    assert np.abs(G - M).max() < 1e-2 * np.abs(M).max()


def test_markov_rates_vanish_when_fully_correlated(correlated):
    tab, fr = _setup(*correlated, 1.0)
    assert np.all(markov_rates(*correlated, fr, tab).gamma == 0)


def test_first_order_against_composed_quadrature(fmo):
    net, bath = fmo
    tab, fr = _setup(net, bath, 100.0)
    init = transform_initial_state(localized_state(4, 0), fr)
    ijs, Y = inhom_first_order(tab, fr, init, 401)
    assert ijs == [(0, 0)]
    ctx = rate_context(tab, fr)
    ref = np.zeros(16, dtype=complex)
    for p, pair in enumerate(ctx.pairs):
        f = displaced_bath_f(bath, (0, 0), pair, 100.0, net)
        ref += ctx.W[p] * tab.beta[pair] * (f - 1.0)
    assert np.abs(Y[0, -1] - ref).max() < 1e-8


def test_first_order_spectator_is_zero(fmo_tables, fmo_frame):
    f = fmo_tables.f_pairs([(2, 2)], [(0, 1)])
    np.testing.assert_array_equal(f, 1.0)


@pytest.fixture(scope="module")
def xi_setup(fmo):
    net, bath = fmo
    tab, fr = _setup(net, bath, 500.0)
    return tab, fr, transform_initial_state(localized_state(4, 0), fr)


def test_xi_vanishes_at_zero_time(xi_setup):
    tab, fr, _ = xi_setup
    assert np.all(xi_direct(tab, fr, (0, 0), 0) == 0)


def test_xi_vanishes_when_fully_correlated(correlated):
    tab, fr = _setup(*correlated, 5.0)
    assert np.all(xi_direct(tab, fr, (0, 0), 40) == 0)


def test_xi_grid_refinement(xi_setup):
    tab, fr, _ = xi_setup
    a = xi_direct(tab, fr, (0, 0), 4000, step=1)
    b = xi_direct(tab, fr, (0, 0), 4000, step=2)
    assert np.abs(a - b).max() < 1e-4 * np.abs(a).max()


@pytest.mark.parametrize("phase", ["s", "t"])
def test_xi_fft_route_matches_direct_route(xi_setup, phase):
    tab, fr, init = xi_setup
    n_out = 201
    got = {k: xi for k, ij, xi in xi_series(tab, fr, init, n_out, phase)}
    for m in (50, 200):
        ref = xi_direct(tab, fr, (0, 0), 2 * m, xi_phase=phase)
        for i, k in enumerate(CHANNELS):
            assert np.abs(got[k][m] - ref[i]).max() < 1e-8 * np.abs(ref).max()


def _brute_survivors(eig, sign_a, sign_b, tol):
    n = eig.size
    count = 0
    for a, b, m, q in itertools.product(range(n), repeat=4):
        if abs(sign_a * (eig[a] - eig[b]) + sign_b * (eig[m] - eig[q])) < tol:
            count += 1
    return count


def test_secular_survivors_match_enumeration(fmo_frame):
    mask = secular_mask(fmo_frame, 0.01)
    signs = {1: (1, 1), 2: (-1, 1), 3: (1, -1), 4: (-1, -1)}
    for i, k in enumerate(CHANNELS):
        brute = _brute_survivors(fmo_frame.eigenvalues, *signs[k], 0.01)
        assert mask[i].sum() == brute == 16 + 12


def test_secular_mask_degenerate_keeps_all(correlated):
    net = SiteNetwork(np.zeros(3), np.zeros((3, 3)))
    bath = correlated[1]
    tab, fr = _setup(net, bath, 1.0)
    assert secular_mask(fr).all()


def test_weak_rate_vanishes_at_zero_energy(fmo):
    net, bath = fmo
    cont = BathSpec(bath.kT, bath.spectral_density.continuum_only())
    st = SpatialStructure.build(net, cont)
    assert np.all(weak_gamma_profiles(cont, st, 0.0) == 0)


@pytest.mark.parametrize("eps", [20.0, 140.0, 400.0])
def test_weak_rates_detailed_balance(fmo, eps):
    net, bath = fmo
    st = SpatialStructure.build(net, bath)
    up = weak_gamma_profiles(bath, st, -eps)[0]
    down = weak_gamma_profiles(bath, st, eps)[0]
    assert up / down == pytest.approx(np.exp(eps / bath.kT), rel=1e-12)


@pytest.mark.parametrize("eps", [-140.0, 35.0, 180.0])
def test_weak_shift_refinement(fmo, eps):
    net, bath = fmo
    st = SpatialStructure.build(net, bath)
    a = weak_shift_profiles(bath, st, eps)
    b = weak_shift_profiles(bath, st, eps, refine=4)
    assert np.abs(a - b).max() < 1e-4 * np.abs(b).max()


def test_redfield_rates_linear_in_coupling(fmo):
    net, bath = fmo
    out = []
    for s in (1e-4, 2e-4):
        b = dataclasses.replace(bath, spectral_density=bath.spectral_density.scaled(s))
        tab, fr = _setup(net, b, 0.125)
        out.append(np.abs(redfield_rates(tab, fr, b)).max())
    slope = np.log(out[1] / out[0]) / np.log(2.0)
    assert slope == pytest.approx(1.0, abs=1e-2)


def test_foerster_rejects_weak_renormalisation(fmo):
    net, bath = fmo
    weak = dataclasses.replace(bath, spectral_density=bath.spectral_density.scaled(0.1))
    with pytest.raises(FoersterError):
        foerster_kernel(net, weak, (0, 1))
    with pytest.raises(FoersterError):
        foerster_kernel(net, BathSpec(bath.kT, bath.spectral_density, FullyCorrelated()), (0, 1))


@pytest.fixture(scope="module")
def dimer_kernel(dimer):
    return foerster_kernel(*dimer, (0, 1))


def test_foerster_rates_nonnegative(dimer, dimer_kernel):
    w = np.linspace(-800.0, 800.0, 161)
    assert np.all(foerster_rate(*dimer, (0, 1), w, dimer_kernel).real >= -1e-12)


def test_foerster_detailed_balance(dimer):
    net, bath = dimer
    k = foerster_rate_matrix(net, bath)
    gap = net.epsilon[0] - net.epsilon[1]
    assert k[0, 1] / k[1, 0] == pytest.approx(np.exp(gap / bath.kT), rel=1e-3)
