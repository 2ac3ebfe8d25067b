import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from polaron_tcl import acceptance
from polaron_tcl.bath import build_kernel_tables
from polaron_tcl.dynamics import (
    PropagationConfig,
    apply_X,
    assemble_I,
    assemble_R,
    combine_channels,
    inhomogeneous_series,
    pauli_generator,
    propagate,
    propagate_foerster,
    propagate_markov,
    propagate_redfield,
    run,
    superoperator,
)
from polaron_tcl.model import KAPPA, BathSpec, SiteNetwork, SpectralDensity
from polaron_tcl.observables import site_populations
from polaron_tcl.polaron import build_polaron_frame, localized_state, superposition_state, transform_initial_state
from polaron_tcl.rates import foerster_rate_matrix, hom_rate_series


def _brute_X(L, e, rho):
    n = rho.shape[0]
    out = np.zeros((n, n), dtype=complex)
    basis = np.eye(n)
    for x, y, z, w in itertools.product(range(n), repeat=4):
        if L[x, y, z, w] == 0:
            continue
        A = np.outer(basis[x], basis[y])
        B = np.outer(basis[z], basis[w])
        out -= L[x, y, z, w] * e[x, y] * (A @ B @ rho - B @ rho @ A)
    return out


def _hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return a + a.conj().T


@pytest.mark.parametrize("n", [2, 3])
def test_superoperator_against_brute_force(n):
    rng = np.random.default_rng(7)
    L = rng.normal(size=(n,) * 4) + 1j * rng.normal(size=(n,) * 4)
    e = np.exp(1j * rng.normal(size=(n, n)))
    rho = _hermitian(rng, n)
    X = _brute_X(L, e, rho)
    R = superoperator(L, e)
    np.testing.assert_allclose((R @ rho.reshape(-1)).reshape(n, n), X + X.conj().T, atol=1e-12)
    np.testing.assert_allclose(apply_X(L, e, rho), X, atol=1e-12)


def test_single_channel_two_rate_is_amplitude_damping():
    g = 0.3 - 0.1j
    gamma = np.zeros((4, 4, 4), dtype=complex)
    gamma[1, 0 * 2 + 1, 0 * 2 + 1] = g
    L = combine_channels(gamma, 2)
    rho = np.array([[0.4, 0.2 - 0.1j], [0.2 + 0.1j, 0.6]])
    got = (superoperator(L, np.ones((2, 2))) @ rho.reshape(-1)).reshape(2, 2)
    P0, P1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    hand = -g * P1 @ rho - np.conj(g) * rho @ P1 + 2 * g.real * rho[1, 1] * P0
    np.testing.assert_allclose(got, hand, atol=1e-15)


def test_zero_rates_give_zero_generator(fmo_frame):
    assert np.all(assemble_R(np.zeros((4, 16, 16)), fmo_frame, 3.0) == 0)


@settings(max_examples=15, deadline=None)
@given(arrays(np.float64, (2, 4, 9, 9), elements=st.floats(-1, 1)), st.floats(0, 500))
def test_generator_preserves_trace_and_hermiticity(parts, t):
    net = SiteNetwork(np.array([0.0, 50.0, 120.0]), np.array([[0, 20.0, 5], [20.0, 0, 10], [5, 10, 0]]))
    bath = BathSpec(200.0, SpectralDensity())
    fr = build_polaron_frame(net, bath, build_kernel_tables(net, bath, 0.5, 1.0))
    gamma = parts[0] + 1j * parts[1]
    R = assemble_R(gamma, fr, t)
    rng = np.random.default_rng(3)
    for _ in range(10):
        rho = _hermitian(rng, 3)
        out = (R @ rho.reshape(-1)).reshape(3, 3)
        assert abs(np.trace(out)) < 1e-10 * max(1.0, np.abs(out).max())
        np.testing.assert_allclose(out, out.conj().T, atol=1e-12)


@pytest.fixture(scope="module")
def inhom(fmo):
    net, bath = fmo
    tab = build_kernel_tables(net, bath, 0.125, 100.0)
    fr = build_polaron_frame(net, bath, tab)
    out = {}
    for name, rho in [("local", localized_state(4, 0)), ("super", superposition_state(np.array([1, 1, 0, 0]) / np.sqrt(2)))]:
        init = transform_initial_state(rho, fr)
        out[name] = inhomogeneous_series(tab, fr, init, 201)
    return out


def test_inhomogeneous_term_traceless(inhom):
    for I in inhom.values():
        tr = np.einsum("taa->t", I.reshape(-1, 4, 4))
        assert np.abs(tr).max() < 1e-10 * max(1e-30, np.abs(I).max()) + 1e-18


def test_inhomogeneous_term_zero_at_start_for_localised_state(inhom):
    assert np.abs(inhom["local"][0]).max() < 1e-15
    assert np.abs(inhom["local"][50]).max() > 0


def test_inhomogeneous_term_vanishes_when_fully_correlated(correlated):
    net, bath = correlated
    tab = build_kernel_tables(net, bath, 0.125, 10.0)
    fr = build_polaron_frame(net, bath, tab)
    init = transform_initial_state(superposition_state(np.array([1, 1, 0, 0]) / np.sqrt(2)), fr)
    assert np.all(inhomogeneous_series(tab, fr, init, 41) == 0)
    assert np.all(assemble_I(None, None, [], fr, init, 1.0) == 0)


def test_fully_correlated_dimer_is_rabi_oscillation():
    bath = BathSpec(200.0, SpectralDensity(0.5, ((1.0, 1.0),)), acceptance.FullyCorrelated())
    net = SiteNetwork(np.array([0.0, 0.0]), np.array([[0.0, 30.0], [30.0, 0.0]]))
    tr = propagate(net, bath, localized_state(2, 0), PropagationConfig(dt=0.5, t_max=300.0))
    p1 = site_populations(tr)[:, 0]
    np.testing.assert_allclose(p1, np.cos(KAPPA * 30.0 * tr.times) ** 2, atol=1e-6)


def test_fully_correlated_fmo_matches_matrix_exponential(correlated):
    net, bath = correlated
    rho0 = superposition_state(np.array([1, 1j, 0, 1]) / np.sqrt(3))
    tr = propagate(net, bath, rho0, PropagationConfig(dt=0.5, t_max=400.0))
    H = tr.frame.H0_tilde
    for i in (0, 200, 800):
        U = expm(-1j * KAPPA * H * tr.times[i])
        np.testing.assert_allclose(tr.rho_site[i], U @ rho0 @ U.conj().T, atol=1e-6)


def test_full_and_homogeneous_only_contrast():
    full = acceptance._fmo_run("full")
    hom = acceptance._fmo_run("hom-only")
    t = full.times
    early = (t > 0) & (t <= 600)
    p_full, p_hom = site_populations(full), site_populations(hom)
    assert acceptance.count_extrema(p_full[early, 0]) >= 3
    assert acceptance.count_extrema(p_hom[early, 0]) == 0


def test_step_halving(fmo):
    r = [propagate(*fmo, localized_state(4, 0), PropagationConfig(dt=d, t_max=200.0)).rho[-1] for d in (0.5, 0.25)]
    assert np.abs(r[0] - r[1]).max() < 1e-6


def test_markov_close_to_full_for_fast_bath(fast):
    full = propagate(*fast, localized_state(4, 0), PropagationConfig())
    mk = acceptance._fast_run(propagate_markov, "markov", 0)
    a, b = site_populations(full)[-1], site_populations(mk)[-1]
    assert np.all(np.abs(a - b) < 0.05 * a)


def test_pauli_generator_conserves_probability():
    rng = np.random.default_rng(1)
    k = rng.random((5, 5))
    A = pauli_generator(k)
    np.testing.assert_allclose(A.sum(axis=0), 0.0, atol=1e-15)


def test_foerster_dimer_relaxes_to_detailed_balance(dimer):
    net, bath = dimer
    tr = propagate_foerster(net, bath, localized_state(2, 0), PropagationConfig(dt=50.0, t_max=2e6))
    p = site_populations(tr)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    k = foerster_rate_matrix(net, bath, tr.frame.epsilon_tilde)
    assert p[-1, 1] / p[-1, 0] == pytest.approx(k[0, 1] / k[1, 0], rel=1e-6)


def test_redfield_without_coupling_is_unitary(fmo):
    net, _ = fmo
    bath = BathSpec(200.0, SpectralDensity())
    rho0 = localized_state(4, 0)
    tr = propagate_redfield(net, bath, rho0, PropagationConfig(dt=0.5, t_max=200.0))
    U = expm(-1j * KAPPA * net.hamiltonian * 200.0)
    np.testing.assert_allclose(tr.rho_site[-1], U @ rho0 @ U.conj().T, atol=1e-8)


def test_unknown_propagator(fmo):
    with pytest.raises(ValueError):
        run(*fmo, localized_state(4, 0), PropagationConfig(t_max=1.0), "lindblad")


def test_rate_series_shape(fmo_tables, fmo_frame):
    assert hom_rate_series(fmo_tables, fmo_frame, 5).shape == (4, 5, 16, 16)
