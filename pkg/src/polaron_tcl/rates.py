"""Rate tensors of the second-order polaron master equation.

Tensors over exciton pairs are stored flattened: index ``a = alpha*N + beta``.
Channel conventions (``k = 1..4``):

==========  ==========================  ================  ===========
channel     bath correlator             phase in rate     K exponent
==========  ==========================  ================  ===========
1           <B(t) B(s)>                 +eps_mu_nu        -K
2           <B^dag(t) B(s)>             +eps_mu_nu        +K
3           <B(t) B^dag(s)>             -eps_mu_nu        +K
4           <B^dag(t) B^dag(s)>         -eps_mu_nu        -K
==========  ==========================  ================  ===========

All rates carry ``KAPPA**2`` (second order) so they are in fs^-1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from scipy import fft as sfft

from .bath import (
    KernelTables,
    SpatialStructure,
    base_integrals_uniform,
    default_grid,
)
from .model import KAPPA, BathSpec, SiteNetwork
from .polaron import InitialState, PolaronFrame
from .quadrature import FrequencyGrid, spectral_breakpoints, x_coth_half

log = logging.getLogger(__name__)

CHANNELS = (1, 2, 3, 4)
PHASE_SIGN = {1: 1.0, 2: 1.0, 3: -1.0, 4: -1.0}
K_SIGN = {1: -1.0, 2: 1.0, 3: 1.0, 4: -1.0}
FT_PRIME = {1: False, 2: True, 3: False, 4: True}
FS_PRIME = {1: False, 2: False, 3: True, 4: True}


class MarkovError(RuntimeError):
    """Correlators do not decay within the allowed window."""


class FoersterError(RuntimeError):
    """Strong-coupling transform cannot be truncated reliably."""


# ---------------------------------------------------------------- helpers


@dataclass(frozen=True)
class RateContext:
    N: int
    pairs: Tuple[Tuple[int, int], ...]
    W: np.ndarray  # (P, N*N) real
    log_beta: np.ndarray  # (P,)
    eps_flat: np.ndarray  # (N*N,) eps_mu - eps_nu
    structure: SpatialStructure

    @property
    def P(self) -> int:
        return len(self.pairs)

    @property
    def bb(self) -> np.ndarray:
        return np.exp(self.log_beta[:, None] + self.log_beta[None, :])


def rate_context(kernels: KernelTables, frame: PolaronFrame) -> RateContext:
    pairs = kernels.pairs
    N = frame.n
    W = frame.coupling_tensor(pairs).reshape(len(pairs), N * N)
    with np.errstate(divide="ignore"):
        lb = np.array([np.log(kernels.beta[m, n]) for m, n in pairs])
    return RateContext(N, pairs, W, lb, frame.gaps.reshape(-1), kernels.structure)


def pair_correlator(K: np.ndarray, log_beta: np.ndarray, sign: float) -> np.ndarray:
    """``beta_p beta_q (exp(sign K_pq) - 1)`` for ``K`` of shape ``(P, P, ...)``."""
    lb = log_beta[:, None] + log_beta[:, None].T
    lb = lb.reshape(lb.shape + (1,) * (K.ndim - 2))
    return np.exp(lb + sign * K) - np.exp(lb)


def simpson_cumulative_even(y: np.ndarray, h: float) -> np.ndarray:
    """Composite Simpson integral from 0 to every even sample along the last axis."""
    L = y.shape[-1]
    if L % 2 == 0:
        raise ValueError("Simpson cumulation needs an odd number of samples")
    panels = (y[..., 0:-1:2] + 4.0 * y[..., 1::2] + y[..., 2::2]) * (h / 3.0)
    out = np.zeros(y.shape[:-1] + ((L + 1) // 2,), dtype=np.result_type(y, float))
    np.cumsum(panels, axis=-1, out=out[..., 1:])
    return out


def simpson_weights_tilde(L: int) -> np.ndarray:
    w = np.full(L, 2.0)
    w[1::2] = 4.0
    w[0] = 1.0
    return w


# ---------------------------------------------------------------- homogeneous


def hom_correlator(kernels: KernelTables, frame: PolaronFrame, channel: int, tau: float) -> np.ndarray:
    """Correlator tensor ``C^k[(ab), (mn)](tau)`` from the kernel table."""
    ctx = rate_context(kernels, frame)
    if ctx.P == 0:
        return np.zeros((ctx.N**2, ctx.N**2), dtype=complex)
    P = ctx.P
    K = np.empty((P, P), dtype=complex)
    for a, pa in enumerate(ctx.pairs):
        for b, pb in enumerate(ctx.pairs):
            K[a, b] = kernels.K_at(pa, pb, tau)
    c = pair_correlator(K, ctx.log_beta, K_SIGN[channel])
    return ctx.W.T @ c @ ctx.W


@dataclass
class HomRates:
    """Cumulative homogeneous rate integrals at time ``t``."""

    t: float
    G: np.ndarray  # (4, N*N, N*N) cumulative integrals without KAPPA**2
    eps_flat: np.ndarray

    @staticmethod
    def zero(frame: PolaronFrame) -> "HomRates":
        n2 = frame.n**2
        return HomRates(0.0, np.zeros((4, n2, n2), dtype=complex), frame.gaps.reshape(-1))

    def gamma(self) -> np.ndarray:
        """``Gamma^k(t) = KAPPA^2 exp(i s_k KAPPA eps_mn t) G^k(t)``."""
        out = np.empty_like(self.G)
        for i, k in enumerate(CHANNELS):
            out[i] = KAPPA**2 * self.G[i] * np.exp(1j * PHASE_SIGN[k] * KAPPA * self.eps_flat * self.t)[None, :]
        return out


def rates_at(gamma: np.ndarray, frame: PolaronFrame, t: float) -> np.ndarray:
    """Attach ``exp(i s_k KAPPA eps_mn t)`` to time-independent rates ``(4, N*N, N*N)``."""
    e = frame.gaps.reshape(-1)
    sg = np.array([PHASE_SIGN[k] for k in CHANNELS])
    return gamma * np.exp(1j * KAPPA * t * sg[:, None] * e[None, :])[:, None, :]


def _hom_integrand(kernels, frame, t):
    out = []
    for k in CHANNELS:
        C = hom_correlator(kernels, frame, k, t)
        out.append(np.exp(-1j * PHASE_SIGN[k] * KAPPA * frame.gaps.reshape(-1) * t)[None, :] * C)
    return np.array(out)


def advance_hom_rates(state: HomRates, kernels: KernelTables, frame: PolaronFrame, dt: float) -> HomRates:
    """One Simpson panel of the cumulative integrals over ``[t, t+dt]``."""
    t = state.t
    g0 = _hom_integrand(kernels, frame, t)
    g1 = _hom_integrand(kernels, frame, t + 0.5 * dt)
    g2 = _hom_integrand(kernels, frame, t + dt)
    G = state.G + (dt / 6.0) * (g0 + 4.0 * g1 + g2)
    return HomRates(t + dt, G, state.eps_flat)


def hom_rate_series(kernels: KernelTables, frame: PolaronFrame, n_out: int) -> np.ndarray:
    """``Gamma^k`` at ``t_m = 2 m h`` (``h`` the table spacing), ``m < n_out``.

    Returns shape ``(4, n_out, N*N, N*N)``.
    """
    L = 2 * n_out - 1
    if kernels.n_times < L:
        raise ValueError("kernel table too short for the requested rate series")
    ctx = rate_context(kernels, frame)
    n2 = ctx.N**2
    out = np.zeros((4, n_out, n2, n2), dtype=complex)
    if ctx.P == 0:
        return out
    h = kernels.dt
    s = np.arange(L) * h
    t_out = s[::2]
    K = kernels.K_pairs(ctx.pairs)[:, :, :L]
    for i, k in enumerate(CHANNELS):
        corr = pair_correlator(K, ctx.log_beta, K_SIGN[k])  # (P, P, L)
        sg = PHASE_SIGN[k]
        for mu in range(n2):
            ph = np.exp(-1j * sg * KAPPA * ctx.eps_flat[mu] * s)
            cum = simpson_cumulative_even(corr * ph, h)  # (P, P, T)
            # G[t, a, mu] = sum_pq W[p, a] W[q, mu] cum[p, q, t]
            out[i, :, :, mu] = np.einsum("pa,q,pqt->ta", ctx.W, ctx.W[:, mu], cum)
        out[i] *= KAPPA**2 * np.exp(1j * sg * KAPPA * np.outer(t_out, ctx.eps_flat))[:, None, :]
    return out


# ---------------------------------------------------------------- inhomogeneous


def _sigma_eigen(frame: PolaronFrame, i: int, j: int) -> np.ndarray:
    return np.outer(frame.u[i], frame.u[j])


def inhom_first_order(kernels: KernelTables, frame: PolaronFrame, initial: InitialState, n_out: int, stride: int = 2):
    """``Upsilon_ij,ab(t)`` for every ``(i, j)`` with nonzero initial element.

    Returns ``(ijs, Y)`` with ``Y`` of shape ``(len(ijs), n_out, N*N)`` on
    ``t_m = m * stride * h``.
    """
    ctx = rate_context(kernels, frame)
    ijs = initial.nonzero_elements()
    n2 = ctx.N**2
    if ctx.P == 0 or not ijs:
        return ijs, np.zeros((len(ijs), n_out, n2), dtype=complex)
    f = kernels.f_pairs(ijs, ctx.pairs, stride=stride)[:, :, :n_out]  # (IJ, P, T)
    beta = np.exp(ctx.log_beta)
    Y = np.einsum("pa,p,xpt->xta", ctx.W, beta, f - 1.0)
    return ijs, Y


def xi_direct(
    kernels: KernelTables,
    frame: PolaronFrame,
    ij: Tuple[int, int],
    n_index: int,
    xi_phase: str = "s",
    rule: str = "simpson",
    step: int = 1,
) -> np.ndarray:
    """``Xi^k_ij`` at ``t = n_index * h`` by direct quadrature over ``s``.

    The two-time correlators are built literally from ``f(t)``, ``f(s)``
    and ``exp(-+K(t-s))``.  ``step`` coarsens the ``s`` grid.
    Returns shape ``(4, N*N, N*N)``.
    """
    ctx = rate_context(kernels, frame)
    n2 = ctx.N**2
    out = np.zeros((4, n2, n2), dtype=complex)
    if ctx.P == 0 or n_index == 0:
        return out
    h = kernels.dt
    idx = np.arange(0, n_index + 1, step)
    if idx[-1] != n_index:
        raise ValueError("n_index must be a multiple of step")
    s = idx * h
    t = n_index * h
    ds = step * h
    nseg = idx.size - 1
    if rule == "simpson":
        if nseg % 2:
            raise ValueError("Simpson rule needs an even number of panels")
        w = simpson_weights_tilde(idx.size) * ds / 3.0
        w[-1] = ds / 3.0
    elif rule == "trapezoid":
        w = np.full(idx.size, ds)
        w[0] = w[-1] = 0.5 * ds
    else:
        raise ValueError(rule)
    Kfull = kernels.K_pairs(ctx.pairs)
    Klag = Kfull[:, :, n_index - idx]  # K(t - s)
    f = kernels.f_pairs([ij], ctx.pairs)[0]  # (P, L)
    fp = 1.0 / f
    for i, k in enumerate(CHANNELS):
        Ft = (fp if FT_PRIME[k] else f)[:, n_index]  # (P,)
        Fs = (fp if FS_PRIME[k] else f)[:, idx]  # (P, S)
        E = np.exp(K_SIGN[k] * Klag)  # (P, Q, S)
        D = (Ft[:, None, None] * Fs[None, :, :] - 1.0) * E - Ft[:, None, None] - Fs[None, :, :] + 2.0
        D *= ctx.bb[:, :, None]
        sg = PHASE_SIGN[k]
        for mu in range(n2):
            if xi_phase == "s":
                ph = np.exp(1j * sg * KAPPA * ctx.eps_flat[mu] * s)
            else:
                ph = np.full(s.size, np.exp(1j * sg * KAPPA * ctx.eps_flat[mu] * t))
            integral = D @ (w * ph)  # (P, Q)
            out[i, :, mu] = ctx.W.T @ integral @ ctx.W[:, mu]
    return KAPPA**2 * out


def xi_series(
    kernels: KernelTables,
    frame: PolaronFrame,
    initial: InitialState,
    n_out: int,
    xi_phase: str = "s",
) -> Iterator[Tuple[int, Tuple[int, int], np.ndarray]]:
    """Yield ``(channel, ij, Xi)`` with ``Xi`` of shape ``(n_out, N*N, N*N)``.

    Uses the split
    ``int a D/bb = F_t conv(a (F_s - 1), E~) + (F_t - 1)[conv(a, E~) + cum(a (F_s - 1))]``
    with ``E~ = exp(-+K) - 1``; convolutions are evaluated by FFT.
    """
    if xi_phase not in ("s", "t"):
        raise ValueError("xi_phase must be 's' or 't'")
    ctx = rate_context(kernels, frame)
    ijs = initial.nonzero_elements()
    n2, P = ctx.N**2, ctx.P
    L = 2 * n_out - 1
    if kernels.n_times < L:
        raise ValueError("kernel table too short for the requested rate series")
    if P == 0 or not ijs:
        return
    h = kernels.dt
    s = np.arange(L) * h
    t_out = s[::2]
    nfft = sfft.next_fast_len(2 * L - 1)
    K = kernels.K_pairs(ctx.pairs)[:, :, :L]
    f_all = kernels.f_pairs(ijs, ctx.pairs)[:, :, :L]  # (IJ, P, L)
    bb = ctx.bb
    wt = simpson_weights_tilde(L)
    for k in CHANNELS:
        sg = PHASE_SIGN[k]
        if xi_phase == "s":
            a = np.exp(1j * sg * KAPPA * np.outer(ctx.eps_flat, s))  # (n2, L)
        else:
            a = np.ones((n2, L), dtype=complex)
        Et = np.exp(K_SIGN[k] * K) - 1.0  # (P, Q, L)
        E_hat = sfft.fft(Et, nfft, axis=-1)  # (P, Q, nfft)
        a_hat = sfft.fft(a * wt, nfft, axis=-1)  # (n2, nfft)
        # conv(a, E~)[p, q, mu, t]
        convA = np.empty((P, P, n2, n_out), dtype=complex)
        for q in range(P):
            full = sfft.ifft(E_hat[:, q, None, :] * a_hat[None, :, :], nfft, axis=-1)[..., 0:L:2]
            convA[:, q] = (h / 3.0) * (full - a[None, :, 0:L:2] * Et[:, q, None, :1])
        for x, ij in enumerate(ijs):
            f = f_all[x]
            Ft = (1.0 / f if FT_PRIME[k] else f)[:, 0:L:2]  # (P, T)
            Fs = 1.0 / f if FS_PRIME[k] else f  # (P, L)
            X = np.zeros((P, P, n2, n_out), dtype=complex)
            for q in range(P):
                xq = a * (Fs[q] - 1.0)[None, :]  # (n2, L)
                xq_hat = sfft.fft(xq * wt, nfft, axis=-1)
                full = sfft.ifft(E_hat[:, q, None, :] * xq_hat[None, :, :], nfft, axis=-1)[..., 0:L:2]
                conv1 = (h / 3.0) * (full - xq[None, :, 0:L:2] * Et[:, q, None, :1])  # (P, n2, T)
                cum = simpson_cumulative_even(xq, h)  # (n2, T)
                X[:, q] = Ft[:, None, :] * conv1 + (Ft[:, None, :] - 1.0) * (convA[:, q] + cum[None])
            X *= bb[:, :, None, None]
            xi = np.einsum("pa,qm,pqmt->tam", ctx.W, ctx.W, X)
            if xi_phase == "t":
                xi = xi * np.exp(1j * sg * KAPPA * np.outer(t_out, ctx.eps_flat))[:, None, :]
            yield k, ij, KAPPA**2 * xi


# ---------------------------------------------------------------- Markov limit


@dataclass(frozen=True)
class MarkovRates:
    gamma: np.ndarray  # (4, N*N, N*N)
    tau_star: float
    tail_bound: float
    decay_ratio: float


def _long_kernel_segments(network, bath, t_end, h_fine, t_split, h_coarse):
    st = SpatialStructure.build(network, bath)
    sd = bath.spectral_density
    n1 = 2 * int(np.ceil(min(t_split, t_end) / h_fine / 2)) + 1
    t1 = (n1 - 1) * h_fine
    segs = []
    if sd.is_zero:
        z = np.zeros((st.n_profiles, n1))
        segs.append((0.0, h_fine, z, z))
    else:
        g1 = default_grid(bath, t1)
        C, S = base_integrals_uniform(sd, bath.kT, g1, st, h_fine, n1)
        segs.append((0.0, h_fine, C, S))
    if t_end > t1:
        n2 = 2 * int(np.ceil((t_end - t1) / h_coarse / 2)) + 1
        if sd.is_zero:
            z = np.zeros((st.n_profiles, n2))
            segs.append((t1, h_coarse, z, z))
        else:
            g2 = default_grid(bath, t1 + (n2 - 1) * h_coarse)
            C, S = base_integrals_uniform(sd, bath.kT, g2, st, h_coarse, n2, t0=t1)
            segs.append((t1, h_coarse, C, S))
    return st, segs


def _pair_lam(st: SpatialStructure, pairs):
    P = len(pairs)
    return np.array([[st.lam(a, b) for b in pairs] for a in pairs]).reshape(P, P, st.n_profiles)


def markov_rates(
    network: SiteNetwork,
    bath: BathSpec,
    frame: PolaronFrame,
    kernels: KernelTables,
    rel_tol: float = 1e-6,
    h_fine: float = 0.125,
    t_split: float = 500.0,
    h_coarse: float = 2.0,
    t_start: float = 2000.0,
    t_cap: float = 65536.0,
) -> MarkovRates:
    """``Gamma^k = KAPPA^2 int_0^inf exp(-i s_k KAPPA eps_mn s) C^k(s) ds``.

    The upper limit doubles from ``t_start`` until every pair correlator
    has dropped below ``rel_tol`` of its largest value at zero lag; past
    ``t_cap`` a :class:`MarkovError` is raised.
    """
    ctx = rate_context(kernels, frame)
    n2 = ctx.N**2
    if ctx.P == 0:
        return MarkovRates(np.zeros((4, n2, n2), dtype=complex), 0.0, 0.0, 0.0)
    lamP = _pair_lam(kernels.structure, ctx.pairs)
    t_end = t_start
    while True:
        st, segs = _long_kernel_segments(network, bath, t_end, h_fine, t_split, h_coarse)
        Ks = [np.tensordot(lamP, C - 1j * S, axes=(2, 0)) for (_, _, C, S) in segs]
        worst0 = 0.0
        tail = 0.0
        for k in CHANNELS:
            c0 = np.abs(pair_correlator(Ks[0][:, :, :1], ctx.log_beta, K_SIGN[k])).max()
            cT = np.abs(pair_correlator(Ks[-1][:, :, -8:], ctx.log_beta, K_SIGN[k])).max()
            worst0 = max(worst0, c0)
            tail = max(tail, cT)
        if worst0 == 0.0 or tail <= rel_tol * worst0:
            break
        if t_end >= t_cap:
            raise MarkovError(
                f"correlators decayed only to {tail / worst0:.3e} of their zero-lag value by {t_end:.0f} fs"
            )
        t_end *= 2.0
    tau = segs[-1][0] + (segs[-1][2].shape[1] - 1) * segs[-1][1]
    out = np.zeros((4, n2, n2), dtype=complex)
    for i, k in enumerate(CHANNELS):
        sg = PHASE_SIGN[k]
        acc = np.zeros((ctx.P, ctx.P, n2), dtype=complex)
        for (t0, h, _, _), Kseg in zip(segs, Ks):
            corr = pair_correlator(Kseg, ctx.log_beta, K_SIGN[k])
            s = t0 + np.arange(Kseg.shape[-1]) * h
            ph = np.exp(-1j * sg * KAPPA * np.outer(ctx.eps_flat, s))  # (n2, L)
            wts = simpson_weights_tilde(s.size) * h / 3.0
            wts[-1] = h / 3.0
            acc += np.einsum("pqs,ms->pqm", corr, ph * wts)
        out[i] = KAPPA**2 * np.einsum("pa,qm,pqm->am", ctx.W, ctx.W, acc)
    # |C| ~ s^-3 beyond tau: int_tau^inf |C| <= |C(tau)| tau / 2
    bound = KAPPA**2 * tail * tau / 2.0 * float(np.abs(ctx.W).sum()) ** 2
    return MarkovRates(out, tau, bound, tail / worst0 if worst0 else 0.0)


def channel_phase_sums(frame: PolaronFrame) -> np.ndarray:
    """Exponent ``omega + omega'`` of each Markov term, shape ``(4, N*N, N*N)``."""
    e = frame.gaps.reshape(-1)
    eT = frame.gaps.T.reshape(-1)
    return np.array(
        [
            e[:, None] + e[None, :],
            eT[:, None] + e[None, :],
            e[:, None] + eT[None, :],
            eT[:, None] + eT[None, :],
        ]
    )


def secular_mask(frame: PolaronFrame, tol_cm: float = 0.01) -> np.ndarray:
    if not tol_cm > 0:
        raise ValueError("secular tolerance must be positive")
    return np.abs(channel_phase_sums(frame)) < tol_cm


# ---------------------------------------------------------------- weak coupling


def _J_over_w3_at_zero(sd) -> float:
    if not sd.has_mode:
        return 0.0
    m = sd.mode
    return m.weight * (2.0 * m.frequency / np.pi) * m.broadening / m.frequency**4


def weak_gamma_profiles(bath: BathSpec, st: SpatialStructure, eps: float) -> np.ndarray:
    """Single-phonon rate per spatial profile with ``J`` extended as an odd function."""
    sd = bath.spectral_density
    a = abs(eps)
    if a == 0.0:
        return (np.pi / 2.0) * 2.0 * bath.kT * _J_over_w3_at_zero(sd) * st.profile_values([0.0])[:, 0]
    jw2 = float(sd.J_over_w2(a))
    x = a / (2.0 * bath.kT)
    coth = 1.0 / np.tanh(x)
    fac = coth - 1.0 if eps > 0 else coth + 1.0
    return (np.pi / 2.0) * jw2 * fac * st.profile_values([a])[:, 0]


def weak_shift_profiles(bath: BathSpec, st: SpatialStructure, eps: float, refine: int = 1, n_gl: int = 16) -> np.ndarray:
    """Principal value ``P int J/w^2 Delta (w - eps coth)/(w^2 - eps^2)`` per profile."""
    sd = bath.spectral_density
    kT = bath.kT
    a = abs(eps)

    def g(w):
        jw2 = sd.J_over_w2(w)
        # eps * coth(w/2kT) * J/w^2 stays finite as w -> 0
        return jw2 * (w - eps * x_coth_half(w, kT) / np.where(w == 0, 1.0, w)) * st.profile_values(w)

    b = spectral_breakpoints(sd, kT, 0.0)
    if refine > 1:
        mids = [b[:-1] + (b[1:] - b[:-1]) * r / refine for r in range(1, refine)]
        b = np.unique(np.concatenate([b] + mids))
    if a == 0.0:
        grid = FrequencyGrid.from_breakpoints(b, n_gl=n_gl)
        w = grid.nodes
        return (g(w) / (w * w)) @ grid.weights
    # [0, 2a]: subtract h(a); integrate the regular remainder
    inner = np.unique(np.concatenate([b[b < 2 * a], [a, 2 * a], np.linspace(0, 2 * a, 9 * refine)]))
    gi = FrequencyGrid.from_breakpoints(inner, n_gl=n_gl)
    w = gi.nodes
    hw = g(w) / (w + a)
    ha = g(np.array([a])) / (2 * a)
    part1 = ((hw - ha) / (w - a)) @ gi.weights
    outer = np.unique(np.concatenate([[2 * a], b[b > 2 * a]]))
    if outer[-1] <= 2 * a:
        return part1
    go = FrequencyGrid.from_breakpoints(outer, n_gl=n_gl)
    w = go.nodes
    part2 = (g(w) / (w * w - a * a)) @ go.weights
    return part1 + part2


def weak_coupling_pair_rates(bath: BathSpec, st: SpatialStructure, pairs, eps: float, refine: int = 1):
    """``(gamma_pq, S_pq)`` at energy ``eps`` before the ``W W beta beta`` contraction."""
    lam = _pair_lam(st, pairs)
    gp = weak_gamma_profiles(bath, st, eps)
    sp = weak_shift_profiles(bath, st, eps, refine=refine)
    return lam @ gp, lam @ sp


def weak_coupling_rates(
    kernels: KernelTables,
    frame: PolaronFrame,
    bath: BathSpec,
    epsilon: float,
    refine: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """``gamma_ab,mn(eps)`` and ``S_ab,mn(eps)`` tensors (cm^-1 scale, no KAPPA)."""
    ctx = rate_context(kernels, frame)
    n2 = ctx.N**2
    if ctx.P == 0:
        z = np.zeros((n2, n2))
        return z, z.copy()
    gpq, spq = weak_coupling_pair_rates(bath, kernels.structure, ctx.pairs, epsilon, refine)
    bb = ctx.bb
    g = ctx.W.T @ (bb * gpq) @ ctx.W
    s = ctx.W.T @ (bb * spq) @ ctx.W
    return g, s


def redfield_rates(kernels: KernelTables, frame: PolaronFrame, bath: BathSpec) -> np.ndarray:
    """Markov rates in the weak-coupling form, shape ``(4, N*N, N*N)``, fs^-1."""
    ctx = rate_context(kernels, frame)
    n2 = ctx.N**2
    out = np.zeros((4, n2, n2), dtype=complex)
    if ctx.P == 0:
        return out
    bb = ctx.bb
    cache: Dict[float, np.ndarray] = {}

    def gw(eps):
        key = round(float(eps), 10)
        if key not in cache:
            gpq, spq = weak_coupling_pair_rates(bath, kernels.structure, ctx.pairs, eps)
            cache[key] = ctx.W.T @ (bb * (gpq - 1j * spq)) @ ctx.W
        return cache[key]

    for mu in range(n2):
        e = ctx.eps_flat[mu]
        plus = gw(e)[:, mu]
        minus = gw(-e)[:, mu]
        out[0, :, mu] = -plus
        out[1, :, mu] = plus
        out[2, :, mu] = minus
        out[3, :, mu] = -minus
    # the time integral of the correlator supplies 1/KAPPA
    return KAPPA * out


# ---------------------------------------------------------------- Foerster limit


@dataclass(frozen=True)
class FoersterKernel:
    """Sampled strong-coupling correlator ``exp(-K0) (exp(K(s)) - 1)``."""

    segments: Tuple[Tuple[float, float, np.ndarray], ...]
    K0: float
    tau_star: float

    def transform(self, omega) -> np.ndarray:
        w = np.atleast_1d(np.asarray(omega, dtype=float))
        acc = np.zeros(w.shape, dtype=complex)
        for t0, h, y in self.segments:
            s = t0 + np.arange(y.size) * h
            wts = simpson_weights_tilde(s.size) * h / 3.0
            wts[-1] = h / 3.0
            acc += np.exp(-1j * KAPPA * np.outer(w, s)) @ (wts * y)
        return acc


def foerster_kernel(
    network: SiteNetwork,
    bath: BathSpec,
    pair: Tuple[int, int],
    rel_tol: float = 1e-6,
    min_K0: float = 10.0,
    h_fine: float = 0.125,
    t_split: float = 500.0,
    h_coarse: float = 2.0,
    t_start: float = 2000.0,
    t_cap: float = 65536.0,
) -> FoersterKernel:
    st = SpatialStructure.build(network, bath)
    lam = st.lam(pair, pair)
    t_end = t_start
    while True:
        _, segs = _long_kernel_segments(network, bath, t_end, h_fine, t_split, h_coarse)
        Ks = [lam @ C - 1j * (lam @ S) for (_, _, C, S) in segs]
        K0 = float(Ks[0][0].real)
        if K0 < min_K0:
            raise FoersterError(
                f"Re K(0) = {K0:.3g} < {min_K0}: the exp(-K(0)) baseline is not negligible"
            )
        ys = [np.exp(K - K0) - np.exp(-K0) for K in Ks]
        c0 = abs(ys[0][0])
        cT = np.abs(ys[-1][-8:]).max()
        if cT <= rel_tol * c0:
            break
        if t_end >= t_cap:
            raise FoersterError(f"strong-coupling correlator decayed only to {cT / c0:.3e} by {t_end:.0f} fs")
        t_end *= 2.0
    tau = segs[-1][0] + (segs[-1][2].shape[1] - 1) * segs[-1][1]
    return FoersterKernel(tuple((t0, h, y) for (t0, h, _, _), y in zip(segs, ys)), K0, tau)


def foerster_rate(network: SiteNetwork, bath: BathSpec, pair: Tuple[int, int], omega, kernel=None):
    """``Gamma^S(omega) = int_0^inf exp(-i KAPPA omega s) exp(-K0)(exp(K(s)) - 1) ds`` in fs."""
    kern = kernel or foerster_kernel(network, bath, pair)
    out = kern.transform(omega)
    return out[0] if np.ndim(omega) == 0 else out


def foerster_rate_matrix(network: SiteNetwork, bath: BathSpec, energies: Optional[np.ndarray] = None) -> np.ndarray:
    """Hopping rates ``k[m, n]`` from site ``m`` to site ``n`` in fs^-1.

    ``k[m, n] = 2 KAPPA^2 V_mn^2 Re Gamma^S(e_n - e_m)``.
    """
    e = network.epsilon if energies is None else np.asarray(energies)
    n = network.n_sites
    k = np.zeros((n, n))
    cache = {}
    for m, q in network.coupled_pairs():
        key = tuple(SpatialStructure.build(network, bath).lam((m, q), (m, q)))
        if key not in cache:
            cache[key] = foerster_kernel(network, bath, (m, q))
        kern = cache[key]
        g = kern.transform([e[q] - e[m], e[m] - e[q]])
        v2 = network.V[m, q] ** 2
        k[m, q] = 2.0 * KAPPA**2 * v2 * g[0].real
        k[q, m] = 2.0 * KAPPA**2 * v2 * g[1].real
    return k
