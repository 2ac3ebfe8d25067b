import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from polaron_tcl.bath import (
    KernelRangeError,
    SpatialStructure,
    build_kernel_tables,
    displaced_bath_f,
    phonon_correlation_K,
    renormalization_factor,
)
from polaron_tcl.model import (
    BathSpec,
    PropagatingModes,
    SiteNetwork,
    SpectralDensity,
    eval_J,
)

BETA_QUAD = 0.0011542278554409835  # scipy quad on panels, see test_beta_matches_adaptive_quadrature


def _beta_by_quad(sd, kT):
    f = lambda w: eval_J(sd, w) / w**2 / np.tanh(w / (2 * kT))
    br = [0, 1, 5, 20, 60, 150, 180, 210, 400, 1000, 3000]
    tot = sum(quad(f, a, b, limit=500, epsabs=0, epsrel=1e-13)[0] for a, b in zip(br[:-1], br[1:]))
    tot += quad(f, br[-1], np.inf, limit=500)[0]
    return np.exp(-tot)


def test_beta_matches_adaptive_quadrature(fmo):
    net, bath = fmo
    oracle = _beta_by_quad(bath.spectral_density, bath.kT)
    assert oracle == pytest.approx(BETA_QUAD, rel=1e-10)
    assert renormalization_factor(bath, (0, 1), net) == pytest.approx(oracle, rel=1e-6)


def test_beta_reproduces_renormalised_coupling(fmo_tables):
    assert fmo_tables.beta[0, 1] == pytest.approx(0.107 / 106.0, rel=0.15)


def test_beta_identical_for_identical_baths(fmo_tables):
    b = fmo_tables.beta[~np.eye(4, dtype=bool)]
    assert np.ptp(b) <= 1e-6 * b.mean()


def test_beta_unity_when_fully_correlated(correlated):
    assert renormalization_factor(correlated[1], (0, 1), correlated[0]) == 1.0


def test_beta_unity_without_coupling(fmo):
    assert renormalization_factor(BathSpec(200.0, SpectralDensity()), (0, 1)) == 1.0


def test_beta_approaches_one_for_slow_phonons(fmo):
    net, bath = fmo
    d = np.full((4, 4), 1.0) - np.eye(4)
    near = SiteNetwork(net.epsilon, net.V, 1e-9 * d)
    pm = BathSpec(bath.kT, bath.spectral_density, PropagatingModes(1.0))
    assert renormalization_factor(pm, (0, 1), near) == pytest.approx(1.0, abs=1e-6)


def test_kernel_at_zero_is_log_beta(fmo_tables):
    for m, n in [(0, 1), (2, 3), (1, 3)]:
        K0 = fmo_tables.K((m, n), (m, n))[0]
        assert K0.imag == 0.0
        assert K0.real == pytest.approx(-2.0 * np.log(fmo_tables.beta[m, n]), rel=1e-12)


def test_disjoint_pairs_do_not_correlate(fmo_tables):
    assert np.all(fmo_tables.K((0, 1), (2, 3)) == 0)


def test_kernel_decays_within_ten_ps(fmo):
    _, bath = fmo
    cont = BathSpec(bath.kT, bath.spectral_density.continuum_only())
    K = phonon_correlation_K(cont, (0, 1), (0, 1), [0.0, 10000.0])
    assert abs(K[1]) < 1e-2 * abs(K[0])


def test_kernel_time_reversal(fmo):
    _, bath = fmo
    a = phonon_correlation_K(bath, (0, 1), (0, 1), 37.0)
    b = phonon_correlation_K(bath, (0, 1), (0, 1), -37.0)
    assert b == pytest.approx(np.conj(a), rel=1e-14)


def test_f_is_unity_for_spectator_site(fmo):
    net, bath = fmo
    f = displaced_bath_f(bath, (2, 2), (0, 1), np.linspace(0, 200, 9), net)
    np.testing.assert_array_equal(f, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.floats(0.0, 400.0))
def test_f_properties(i, m, n, t):
    if m == n:
        return
    from polaron_tcl.model import fmo4_preset

    net, bath = fmo4_preset()
    f = displaced_bath_f(bath, (i, i), (m, n), t, net)
    assert abs(f) == pytest.approx(1.0, abs=1e-12)
    j = (i + 1) % 4
    f = displaced_bath_f(bath, (i, j), (m, n), t, net)
    fp = displaced_bath_f(bath, (i, j), (m, n), t, net, prime=True)
    assert f * fp == pytest.approx(1.0, abs=1e-12)


def test_table_size(fmo):
    tab = build_kernel_tables(*fmo, 0.5, 1000.0)
    assert tab.n_times == 2001


def test_tables_vanish_when_fully_correlated(correlated):
    tab = build_kernel_tables(*correlated, 0.5, 50.0)
    assert np.all(tab.K_pairs(tab.pairs) == 0)
    assert np.all(tab.f_pairs([(0, 1), (2, 2)], tab.pairs) == 1)
    np.testing.assert_array_equal(tab.beta, 1.0)


def test_interpolation_against_direct_quadrature(fmo):
    net, bath = fmo
    tab = build_kernel_tables(net, bath, 0.5, 1000.0)
    for pair in [((0, 1), (0, 1)), ((0, 1), (1, 2))]:
        direct = phonon_correlation_K(bath, *pair, 333.3, net)
        assert abs(tab.K_at(*pair, 333.3) - direct) < 1e-4 * abs(direct)
    with pytest.raises(KernelRangeError):
        tab.K_at((0, 1), (0, 1), 1200.0)


def test_node_doubling_is_converged(fmo):
    a = build_kernel_tables(*fmo, 0.125, 1.0, n_gl=16)
    b = build_kernel_tables(*fmo, 0.125, 1.0, n_gl=32)
    assert np.abs(a.beta - b.beta).max() < 1e-6 * b.beta.max()
    assert np.abs(a.C[:, 0] - b.C[:, 0]).max() < 1e-6 * np.abs(b.C[:, 0]).max()


def test_cache_round_trip(fmo, tmp_path):
    a = build_kernel_tables(*fmo, 0.5, 20.0, cache_dir=str(tmp_path))
    assert list(tmp_path.iterdir())
    b = build_kernel_tables(*fmo, 0.5, 20.0, cache_dir=str(tmp_path))
    assert a.kernel_hash == b.kernel_hash
    np.testing.assert_array_equal(a.C, b.C)
    np.testing.assert_array_equal(a.S, b.S)
    c = build_kernel_tables(*fmo, 0.25, 20.0, cache_dir=str(tmp_path))
    assert c.kernel_hash != a.kernel_hash


def test_spatial_coefficients(fmo):
    s = SpatialStructure.build(*fmo)
    assert s.lam((0, 1), (0, 1)) @ np.ones(s.n_profiles) == 2.0
    assert s.lam_prime((2, 2), (0, 1)) @ np.ones(s.n_profiles) == 0.0
