import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from polaron_tcl.model import (
    BathSpec,
    ContinuumTerm,
    LorentzianMode,
    ModelError,
    SiteNetwork,
    SpectralDensity,
    continuum_reorganization_closed_form,
    eval_J,
    eval_J_mode_unweighted,
    fast_bath_variant,
    fmo4_preset,
    fmo_spectral_density,
    mev_to_cm,
    reorganization_energy,
)


def test_fmo_hamiltonian_entries():
    net, bath = fmo4_preset()
    assert net.V[0, 1] == -106.0
    np.testing.assert_array_equal(net.epsilon, [280.0, 420.0, 0.0, 175.0])
    np.testing.assert_array_equal(net.V, net.V.T)
    np.testing.assert_array_equal(np.diag(net.V), 0.0)
    assert bath.kT == 200.0


def test_cutoff_unit_conversion():
    assert mev_to_cm(0.0069) == pytest.approx(0.05565, abs=1e-5)
    sd = fmo_spectral_density()
    assert [t.cutoff for t in sd.continuum_terms] == [mev_to_cm(0.069), mev_to_cm(0.24)]


def test_literal_small_cutoffs_suppress_beta_far_below_1e_3():
    from polaron_tcl.bath import renormalization_factor

    sd = fmo_spectral_density()
    small = SpectralDensity(
        sd.scale_continuum,
        (ContinuumTerm(0.8, mev_to_cm(0.0069)), ContinuumTerm(0.5, mev_to_cm(0.024))),
        sd.mode,
    )
    assert renormalization_factor(BathSpec(200.0, small), (0, 1)) < 1e-20


def test_spectral_density_vanishes_at_zero():
    assert eval_J(fmo_spectral_density(), 0.0) == 0.0


def test_mode_at_resonance():
    m = LorentzianMode(1.0, 180.0, 50.0)
    expected = (2 * 180 / np.pi) * 180**3 * 50 / (50**2 * 180**2)
    assert eval_J_mode_unweighted(m, 180.0) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(412.5, abs=0.1)


def test_single_term_peak_at_hundred_cutoffs():
    sd = SpectralDensity(1.0, (ContinuumTerm(1.0, 2.5),))
    assert sd.characteristic_frequency() == pytest.approx(250.0, rel=1e-3)


def test_negative_frequency_rejected():
    with pytest.raises(ValueError):
        eval_J(fmo_spectral_density(), -1.0)


def test_zero_density_has_no_reorganisation():
    assert reorganization_energy(SpectralDensity()) == 0.0


def test_continuum_reorganisation_against_dense_trapezoid():
    sd = fmo_spectral_density(False)
    w = np.linspace(0.0, 4000.0, 1_000_001)
    oracle = trapezoid(eval_J(sd, w) / np.where(w == 0, 1.0, w), w)
    assert reorganization_energy(sd) == pytest.approx(oracle, rel=1e-4)
    # frozen from the trapezoid oracle above
    assert reorganization_energy(sd) == pytest.approx(39.13151837401085, rel=1e-9)
    assert continuum_reorganization_closed_form(sd) == pytest.approx(reorganization_energy(sd), rel=1e-10)


def test_reorganisation_additive():
    full = fmo_spectral_density(True)
    lam_c = reorganization_energy(full.continuum_only())
    lam_h = reorganization_energy(full.without_continuum())
    assert reorganization_energy(full) == lam_c + lam_h
    assert lam_h == pytest.approx(0.22 * 180.0, rel=1e-12)


def test_fast_variant_keeps_reorganisation():
    sd = fmo_spectral_density(False)
    fast = fast_bath_variant(sd)
    assert reorganization_energy(fast) == pytest.approx(reorganization_energy(sd), rel=1e-6)
    assert fast.continuum_terms[0].cutoff == pytest.approx(10 * sd.continuum_terms[0].cutoff)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 100.0), st.floats(1e-3, 10.0))
def test_scaling_is_linear(factor, w):
    sd = fmo_spectral_density()
    assert eval_J(sd.scaled(factor), w) == pytest.approx(factor * eval_J(sd, w), rel=1e-12)


@pytest.mark.parametrize(
    "eps, V",
    [
        ([0.0], [[0.0]]),
        ([0.0, 1.0], [[0.0, 1.0], [2.0, 0.0]]),
        ([0.0, 1.0], [[1.0, 1.0], [1.0, 0.0]]),
        ([0.0, np.nan], [[0.0, 1.0], [1.0, 0.0]]),
    ],
)
def test_invalid_networks(eps, V):
    with pytest.raises(ModelError):
        SiteNetwork(np.array(eps), np.array(V))


def test_invalid_bath_parameters():
    with pytest.raises(ModelError):
        BathSpec(-1.0, fmo_spectral_density())
    with pytest.raises(ModelError):
        SpectralDensity(-1.0)
    with pytest.raises(ModelError):
        SpectralDensity(1.0, mode=LorentzianMode(0.1, 0.0, 1.0))
