import numpy as np
import pytest

from polaron_tcl import acceptance
from polaron_tcl.dynamics import PropagationConfig, propagate, propagate_markov
from polaron_tcl.model import C_CM_PER_FS
from polaron_tcl.observables import (
    ObservableError,
    eigen_populations,
    lab_coherence,
    population_spectrum,
    positive_intervals,
    site_populations,
    trace_distance,
    trace_distance_analysis,
)
from polaron_tcl.polaron import localized_state, superposition_state


@pytest.fixture(scope="module")
def short_superposition(fmo):
    rho0 = superposition_state(np.array([1, 1, 0, 0]) / np.sqrt(2))
    return propagate(*fmo, rho0, PropagationConfig(dt=0.5, t_max=100.0))


def test_site_populations_normalised():
    tr = acceptance._fmo_run("full")
    p = site_populations(tr)
    assert p[0, 0] == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-10)


def test_lab_coherence_initial_value(short_superposition):
    c = lab_coherence(short_superposition, (0, 1))
    assert c[0] == pytest.approx(0.5, abs=1e-14)


def test_lab_coherence_of_localised_state_is_small():
    tr = acceptance._fmo_run("full")
    c = lab_coherence(tr, (0, 1))
    assert np.abs(c).max() < 1e-3


def test_lab_coherence_needs_distinct_sites(short_superposition):
    with pytest.raises(ObservableError):
        lab_coherence(short_superposition, (1, 1))


def test_eigenstate_is_stationary_when_fully_correlated(correlated):
    net, bath = correlated
    from polaron_tcl.bath import build_kernel_tables
    from polaron_tcl.polaron import build_polaron_frame

    fr = build_polaron_frame(net, bath, build_kernel_tables(net, bath, 0.5, 1.0))
    v = fr.u[:, 2]
    tr = propagate(net, bath, np.outer(v, v), PropagationConfig(dt=0.5, t_max=100.0))
    pops = eigen_populations(tr, "polaron")
    np.testing.assert_allclose(pops, np.tile(pops[0], (pops.shape[0], 1)), atol=1e-10)
    assert pops[0, 2] == pytest.approx(1.0)


def test_eigen_populations_sum_to_one():
    tr = acceptance._fast_run(propagate_markov, "markov", 0)
    for frame in ("polaron", "lab"):
        np.testing.assert_allclose(eigen_populations(tr, frame).sum(axis=1), 1.0, atol=1e-10)
    with pytest.raises(ValueError):
        eigen_populations(tr, "site")


def test_trace_distance_basics():
    a = acceptance._fast_run(propagate_markov, "markov", 0)
    b = acceptance._fast_run(propagate_markov, "markov", 1)
    assert np.all(trace_distance_analysis(a, a).D == 0)
    rep = trace_distance_analysis(a, b, "polaron")
    assert rep.D[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.intervals == []
    assert trace_distance_analysis(a, b, "lab").intervals


def test_trace_distance_of_pure_states():
    r1, r2 = localized_state(3, 0), superposition_state(np.array([1, 1, 0]) / np.sqrt(2))
    assert trace_distance(r1, r2) == pytest.approx(np.sqrt(1 - 0.5), rel=1e-12)


def test_trace_distance_needs_matching_runs(short_superposition):
    other = acceptance._fmo_run("hom-only")
    with pytest.raises(ObservableError):
        trace_distance_analysis(short_superposition, other)


def test_positive_intervals():
    t = np.arange(6.0)
    d = np.array([-1, 2, 3, -1, 1e-7, 4])
    assert positive_intervals(t, d) == [(1.0, 2.0), (5.0, 5.0)]


@pytest.mark.parametrize("window", ["hann", "rect"])
def test_cosine_peak_location(window):
    t = np.arange(0, 1000.0, 0.5)
    nu = 180.0
    y = 0.3 + 0.1 * np.cos(2 * np.pi * nu * C_CM_PER_FS * t)
    sp = population_spectrum(t, y, window=window, detrend_series=False)
    assert abs(sp.dominant()["frequency"] - nu) <= sp.bin_width


def test_spectrum_input_checks():
    with pytest.raises(ObservableError):
        population_spectrum(np.arange(50.0), np.zeros(50))
    t = np.sort(np.random.default_rng(0).random(300))
    with pytest.raises(ObservableError):
        population_spectrum(t, np.zeros(300))
    with pytest.raises(ValueError):
        population_spectrum(np.arange(300.0), np.zeros(300), window="kaiser")


def test_mode_peak_in_fmo_spectrum():
    tr = acceptance._fmo_run("full")
    sp = population_spectrum(tr.times, site_populations(tr)[:, 0], window="rect")
    assert abs(sp.dominant()["frequency"] - 180.0) <= 15.0
