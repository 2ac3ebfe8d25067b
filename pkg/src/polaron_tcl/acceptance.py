"""Acceptance checks shared by the test suite and ``polaron-tcl validate``.

Each ``criterion_*`` function returns a :class:`CriterionResult`; expensive
trajectories are memoised per process in :data:`_RUNS`.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.integrate import quad_vec, solve_ivp
from scipy.linalg import expm

from .bath import SpatialStructure, base_integrals_at, build_kernel_tables, default_grid
from .dynamics import (
    PropagationConfig,
    Trajectory,
    propagate,
    propagate_foerster,
    propagate_markov,
    propagate_redfield,
    propagate_secular,
)
from .model import KAPPA, FullyCorrelated, fmo4_fast_bath, fmo4_preset, reorganization_energy
from .observables import (
    eigen_populations,
    population_spectrum,
    site_populations,
    trace_distance_analysis,
)
from .polaron import build_polaron_frame, localized_state
from .rates import (
    CHANNELS,
    K_SIGN,
    PHASE_SIGN,
    HomRates,
    advance_hom_rates,
    markov_rates,
    pair_correlator,
    rate_context,
    secular_mask,
)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    checks: Dict[str, bool] = field(default_factory=dict)
    details: Dict[str, object] = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failed = [k for k, v in self.checks.items() if not v]
        extra = f" (failed: {', '.join(failed)})" if failed else ""
        return f"[{status}] criterion {self.number}: {self.title}{extra} [{self.seconds:.1f} s]"


_RUNS: Dict[tuple, Trajectory] = {}


def _cached(key, fn):
    if key not in _RUNS:
        _RUNS[key] = fn()
    return _RUNS[key]


def clear_cache():
    _RUNS.clear()


def count_extrema(y: np.ndarray, tol: float = 1e-12) -> int:
    """Sign changes of the first difference, ignoring steps below ``tol``."""
    d = np.diff(y)
    d = d[np.abs(d) > tol]
    return int(np.sum(np.sign(d[1:]) != np.sign(d[:-1])))


def _fmo_run(tag: str, with_mode: bool = True, site: int = 0, dt: float = 0.5, t_max: float = 1000.0):
    def go():
        net, bath = fmo4_preset(with_mode)
        return propagate(net, bath, localized_state(4, site), PropagationConfig(dt=dt, t_max=t_max), tag)

    return _cached(("fmo", tag, with_mode, site, dt, t_max), go)


def _fast_run(fn, tag, site):
    def go():
        net, bath = fmo4_fast_bath()
        return fn(net, bath, localized_state(4, site), PropagationConfig(dt=0.5, t_max=1000.0))

    return _cached(("fast", tag, site), go)


# ---------------------------------------------------------------- 1


def criterion_1() -> CriterionResult:
    t0 = time.perf_counter()
    net, bath = fmo4_preset()
    tables = build_kernel_tables(net, bath, 0.125, 1.0)
    elapsed = time.perf_counter() - t0
    beta = tables.beta
    pairs = net.coupled_pairs()
    vals = np.array([beta[m, n] for m, n in pairs])
    spread = float(np.ptp(vals) / vals.mean())
    v12 = abs(net.V[0, 1] * beta[0, 1])
    checks = {
        "V12_renormalised_within_15pct": abs(v12 - 0.107) <= 0.15 * 0.107,
        "beta_identical_across_pairs": spread < 1e-6,
        "runtime_below_1s": elapsed < 1.0,
    }
    return CriterionResult(
        1,
        "renormalised coupling magnitude",
        all(checks.values()),
        checks,
        {"V12_tilde": v12, "beta": float(vals.mean()), "beta_spread": spread, "build_seconds": elapsed},
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- 2


def criterion_2() -> CriterionResult:
    t0 = time.perf_counter()
    started = time.perf_counter()
    full = _fmo_run("full")
    hom = _fmo_run("hom-only")
    runtime = full.diagnostics.get("total_seconds", time.perf_counter() - started)
    t = full.times
    pf, ph = site_populations(full), site_populations(hom)
    early = (t > 0) & (t <= 600.0)
    n_ext = [count_extrema(pf[early, k]) for k in (0, 1)]
    dp1 = np.diff(ph[:, 0])[: int(round(600.0 / (t[1] - t[0])))]
    hom_crossings = count_extrema(np.concatenate([[ph[0, 0]], ph[1 : dp1.size + 1, 0]]))
    late = t >= 700.0
    late_dev = float(np.abs(pf[late] - ph[late]).max())
    dev = np.abs(pf - ph).max(axis=1)
    decays = dev[(t >= 600.0)].max() < 0.5 * dev[t <= 300.0].max()
    checks = {
        "full_p1_p2_at_least_3_extrema": min(n_ext) >= 3,
        "oscillation_decayed_by_600fs": bool(decays),
        "hom_only_no_dp1dt_sign_change": hom_crossings == 0,
        "agree_within_2pct_after_700fs": late_dev < 0.02,
        "runtime_below_2min": runtime < 120.0,
    }
    return CriterionResult(
        2,
        "non-equilibrium oscillations",
        all(checks.values()),
        checks,
        {"extrema_p1_p2": n_ext, "late_max_abs_dev": late_dev, "full_runtime_s": runtime},
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- 3


def criterion_3(window: str = "rect") -> CriterionResult:
    t0 = time.perf_counter()
    wm = _fmo_run("full", with_mode=True)
    nm = _fmo_run("full", with_mode=False)
    sw = population_spectrum(wm.times, site_populations(wm)[:, 0], window=window)
    sn = population_spectrum(nm.times, site_populations(nm)[:, 0], window=window)
    dw, dn = sw.dominant(), sn.dominant()
    checks = {
        "mode_peak_180_pm_15": dw is not None and abs(dw["frequency"] - 180.0) <= 15.0,
        "no_mode_peak_in_130_160": dn is not None and 130.0 <= dn["frequency"] <= 160.0,
        "no_mode_peak_2x_broader": dw is not None and dn is not None and dn["width"] >= 2.0 * dw["width"],
    }
    hann_w = population_spectrum(wm.times, site_populations(wm)[:, 0], window="hann").dominant()
    hann_n = population_spectrum(nm.times, site_populations(nm)[:, 0], window="hann").dominant()
    return CriterionResult(
        3,
        "mode spectroscopy",
        all(checks.values()),
        checks,
        {"with_mode": dw, "without_mode": dn, "window": window, "hann_with_mode": hann_w, "hann_without_mode": hann_n},
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- 4


def criterion_4() -> CriterionResult:
    t0 = time.perf_counter()
    net, bath = fmo4_fast_bath()
    ref_net, ref_bath = fmo4_preset(with_mode=False)
    lam = reorganization_energy(bath.spectral_density)
    lam_ref = reorganization_energy(ref_bath.spectral_density)
    a = _fast_run(propagate_markov, "markov", 0)
    b = _fast_run(propagate_markov, "markov", 1)
    pol = trace_distance_analysis(a, b, "polaron")
    lab = trace_distance_analysis(a, b, "lab")
    checks = {
        "reorganisation_preserved": abs(lam - lam_ref) <= 1e-6 * abs(lam_ref),
        "polaron_dDdt_nonpositive": float(pol.dDdt.max()) <= 1e-6,
        "lab_positive_intervals_present": len(lab.intervals) > 0,
    }
    return CriterionResult(
        4,
        "trace-distance frame contrast",
        all(checks.values()),
        checks,
        {
            "reorganisation": (lam, lam_ref),
            "polaron_max_dDdt": float(pol.dDdt.max()),
            "lab_intervals": lab.intervals[:10],
        },
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- 5


def pauli_matrix_from_rates(gamma: np.ndarray, n: int) -> np.ndarray:
    """Population rate matrix read off the secular population equation."""
    G = gamma.reshape(4, n, n, n, n)
    A = np.zeros((n, n))
    for mu in range(n):
        for al in range(n):
            loss = G[0, mu, al, al, mu] + G[1, al, mu, al, mu] + G[2, mu, al, mu, al] + G[3, al, mu, mu, al]
            gain = G[0, al, mu, mu, al] + G[1, mu, al, mu, al] + G[2, al, mu, al, mu] + G[3, mu, al, al, mu]
            A[mu, mu] -= 2.0 * loss.real
            A[mu, al] += 2.0 * gain.real
    return A


def criterion_5() -> CriterionResult:
    t0 = time.perf_counter()
    traj = _fast_run(propagate_secular, "secular", 0)
    t = traj.times
    pol = eigen_populations(traj, "polaron")
    lab = eigen_populations(traj, "lab")
    after = t >= 10.0
    pol_ext = [count_extrema(pol[after, k]) for k in range(traj.n)]
    lab_ext = [count_extrema(lab[:, k]) for k in range(traj.n)]

    net, bath = fmo4_fast_bath()
    kern = build_kernel_tables(net, bath, 0.125, 0.5)
    frame = build_polaron_frame(net, bath, kern)
    mr = markov_rates(net, bath, frame, kern)
    A = pauli_matrix_from_rates(np.where(secular_mask(frame), mr.gamma, 0.0), frame.n)
    sol = solve_ivp(lambda _, p: A @ p, (0.0, t[-1]), pol[0], t_eval=t, method="DOP853", rtol=1e-13, atol=1e-15)
    oracle_err = float(np.abs(sol.y.T - pol).max())
    checks = {
        "polaron_populations_monotone_after_10fs": max(pol_ext) == 0,
        "lab_populations_each_at_least_2_extrema": min(lab_ext) >= 2,
        "pauli_oracle_1e-8": oracle_err < 1e-8,
    }
    return CriterionResult(
        5,
        "secular frame contrast",
        all(checks.values()),
        checks,
        {"polaron_extrema": pol_ext, "lab_extrema": lab_ext, "pauli_oracle_error": oracle_err},
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- 6


def criterion_6() -> CriterionResult:
    t0 = time.perf_counter()
    cfg = PropagationConfig(dt=0.5, t_max=1000.0)
    net, bath = fmo4_preset()
    rho0 = localized_state(4, 0)
    fz = _cached(("fmo", "full", "beta0"), lambda: propagate(net, bath, rho0, cfg, "full", force_beta_zero=True))
    fo = _cached(("fmo", "foerster"), lambda: propagate_foerster(net, bath, rho0, cfg))
    dev_a = float(np.abs(site_populations(fz)[-1] - site_populations(fo)[-1]).max())

    weak = dataclasses.replace(bath, spectral_density=bath.spectral_density.scaled(1e-3))
    fw = _cached(("weak", "full"), lambda: propagate(net, weak, rho0, cfg, "full"))
    rw = _cached(("weak", "redfield"), lambda: propagate_redfield(net, weak, rho0, cfg))
    dev_b = float(np.abs(site_populations(fw)[-1] - site_populations(rw)[-1]).max())

    corr = dataclasses.replace(bath, correlation_model=FullyCorrelated())
    fc = _cached(("corr", "full"), lambda: propagate(net, corr, rho0, cfg, "full"))
    H = fc.frame.H0_tilde
    dev_c = 0.0
    for i in range(0, fc.times.size, 50):
        U = expm(-1j * KAPPA * H * fc.times[i])
        dev_c = max(dev_c, float(np.abs(U @ rho0 @ U.conj().T - fc.rho_site[i]).max()))
    checks = {
        "foerster_vs_beta0_full_1pct": dev_a < 0.01,
        "redfield_vs_weak_full_1pct": dev_b < 0.01,
        "fully_correlated_unitary_1e-6": dev_c < 1e-6,
    }
    return CriterionResult(
        6,
        "limit equivalences",
        all(checks.values()),
        checks,
        {"foerster_dev": dev_a, "redfield_dev": dev_b, "unitary_dev": dev_c},
        time.perf_counter() - t0,
    )


# ---------------------------------------------------------------- 7


def direct_hom_rates(network, bath, kernels, frame, t: float, epsrel: float = 1e-11) -> np.ndarray:
    """``Gamma^k(t)`` by adaptive quadrature of freshly evaluated correlators."""
    st = SpatialStructure.build(network, bath)
    grid = default_grid(bath, t)
    pairs = network.coupled_pairs()
    lam = np.array([[st.lam(a, b) for b in pairs] for a in pairs])
    ctx = rate_context(kernels, frame)
    sd = bath.spectral_density
    eps = frame.gaps.reshape(-1)

    def integrand(u):
        C, S = base_integrals_at(sd, bath.kT, grid, st, [u])
        K = lam @ (C[:, 0] - 1j * S[:, 0])
        out = []
        for k in CHANNELS:
            c = ctx.W.T @ pair_correlator(K, ctx.log_beta, K_SIGN[k]) @ ctx.W
            out.append(c * np.exp(-1j * PHASE_SIGN[k] * KAPPA * eps * u)[None, :])
        return np.array(out)

    val, _ = quad_vec(integrand, 0.0, t, epsrel=epsrel, epsabs=0.0, limit=2000)
    sg = np.array([PHASE_SIGN[k] for k in CHANNELS])
    return KAPPA**2 * val * np.exp(1j * KAPPA * t * sg[:, None] * eps[None, :])[:, None, :]


def rk4_orders(dts=(2.0, 1.0, 0.5, 0.25, 0.125), t_max: float = 200.0) -> list:
    """Successive log2 error ratios under step halving, coarsest first."""
    net, bath = fmo4_preset()
    ys = [propagate(net, bath, localized_state(4, 0), PropagationConfig(dt=d, t_max=t_max), "full").rho[-1] for d in dts]
    errs = [np.abs(a - b).max() for a, b in zip(ys[:-1], ys[1:])]
    return [float(np.log2(e1 / e2)) for e1, e2 in zip(errs[:-1], errs[1:])]


def criterion_7() -> CriterionResult:
    t0 = time.perf_counter()
    net, bath = fmo4_preset()
    cfg = PropagationConfig(dt=0.5, t_max=1000.0)
    rho0 = localized_state(4, 0)
    runs = {
        "full": _fmo_run("full"),
        "hom-only": _fmo_run("hom-only"),
        "markov": _cached(("fmo", "markov"), lambda: propagate_markov(net, bath, rho0, cfg)),
        "secular": _cached(("fmo", "secular"), lambda: propagate_secular(net, bath, rho0, cfg)),
        "redfield": _cached(("fmo", "redfield"), lambda: propagate_redfield(net, bath, rho0, cfg)),
        "foerster": _cached(("fmo", "foerster"), lambda: propagate_foerster(net, bath, rho0, cfg)),
    }
    drift = {}
    herm = {}
    for tag, tr in runs.items():
        drift[tag] = float(np.abs(np.einsum("taa->t", tr.rho) - 1.0).max())
        herm[tag] = float(np.abs(tr.rho - np.swapaxes(tr.rho.conj(), 1, 2)).max())

    kern = build_kernel_tables(net, bath, 0.125, 50.0)
    frame = build_polaron_frame(net, bath, kern)
    state = HomRates.zero(frame)
    for _ in range(100):
        state = advance_hom_rates(state, kern, frame, 0.5)
    inc = state.gamma()
    ref = direct_hom_rates(net, bath, kern, frame, state.t)
    gamma_rel = float(np.abs(inc - ref).max() / np.abs(ref).max())

    a = build_kernel_tables(net, bath, 0.125, 1.0, n_gl=16)
    b = build_kernel_tables(net, bath, 0.125, 1.0, n_gl=32)
    beta_rel = float(np.abs(a.beta - b.beta).max() / np.abs(b.beta).max())
    k0_rel = float(np.abs(a.C[:, 0] - b.C[:, 0]).max() / np.abs(b.C[:, 0]).max())

    orders = rk4_orders()
    order = orders[-1]
    k0_err = max(
        abs(float(kern.K(p, p)[0].real) + 2.0 * np.log(kern.beta[p])) for p in net.coupled_pairs()
    )
    checks = {
        "trace_drift_1e-8": max(drift.values()) < 1e-8,
        "hermiticity_1e-8": max(herm.values()) < 1e-8,
        "incremental_gamma_vs_direct_1e-5": gamma_rel < 1e-5,
        "node_doubling_beta_K0_1e-6": max(beta_rel, k0_rel) < 1e-6,
        "rk4_order_4_pm_0.3": abs(order - 4.0) <= 0.3,
        "K0_equals_minus_2_ln_beta_1e-8": k0_err < 1e-8,
    }
    return CriterionResult(
        7,
        "numerical hygiene",
        all(checks.values()),
        checks,
        {
            "trace_drift": drift,
            "hermiticity": herm,
            "gamma_rel": gamma_rel,
            "beta_rel": beta_rel,
            "K0_rel": k0_rel,
            "rk4_order": order,
            "rk4_order_sequence": orders,
            "K0_identity_err": k0_err,
        },
        time.perf_counter() - t0,
    )


CRITERIA: Dict[int, Callable[[], CriterionResult]] = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
}


def run_all(selected: Optional[List[int]] = None) -> List[CriterionResult]:
    return [CRITERIA[i]() for i in (selected or sorted(CRITERIA))]
