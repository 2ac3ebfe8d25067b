"""Propagation of the polaron-frame density matrix.

The state is carried in the interaction picture with respect to the
renormalised Hamiltonian and stored in trajectories in the Schroedinger
picture, both in the renormalised exciton basis.  Vectors are flattened
row-major, ``(rho_11, rho_12, ..., rho_NN)``.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.linalg import expm

from .bath import KernelTables, build_kernel_tables
from .model import KAPPA, BathSpec, SiteNetwork
from .polaron import InitialState, PolaronFrame, build_polaron_frame, transform_initial_state
from .rates import (
    CHANNELS,
    HomRates,
    rates_at,
    foerster_rate_matrix,
    hom_rate_series,
    inhom_first_order,
    markov_rates,
    redfield_rates,
    secular_mask,
    xi_series,
)

log = logging.getLogger(__name__)

PROPAGATORS = ("full", "hom-only", "markov", "secular", "redfield", "foerster")
TRACE_ABORT = 1e-6
POSITIVITY_ABORT = -1e-2


class NumericalError(RuntimeError):
    """Invariant violation during propagation."""


@dataclass(frozen=True)
class PropagationConfig:
    dt: float = 0.5
    t_max: float = 1000.0
    include_inhomogeneous: bool = True
    xi_phase: str = "s"
    secular_tol: float = 0.01
    n_gl: int = 16
    osc_fraction: float = 4.0
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max >= self.dt:
            raise ValueError("t_max must be at least dt")
        if self.xi_phase not in ("s", "t"):
            raise ValueError("xi_phase must be 's' or 't'")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class Trajectory:
    """Schroedinger-picture ``rho~`` in the renormalised exciton basis."""

    times: np.ndarray
    rho: np.ndarray  # (T, N, N)
    frame: PolaronFrame
    initial: InitialState
    propagator: str
    diagnostics: Dict = field(default_factory=dict)
    frame_tag: str = "polaron"

    def __post_init__(self):
        if self.rho.shape[0] != self.times.size:
            raise ValueError("trajectory lengths differ")

    @property
    def n(self) -> int:
        return self.rho.shape[1]

    @property
    def vectors(self) -> np.ndarray:
        return self.rho.reshape(self.times.size, -1)

    @property
    def rho_site(self) -> np.ndarray:
        u = self.frame.u
        return np.einsum("ma,tab,nb->tmn", u, self.rho, u)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.n
        head = ["t_fs"]
        for a in range(n):
            for b in range(n):
                head += [f"re_rho_{a + 1}{b + 1}", f"im_rho_{a + 1}{b + 1}"]
        w.writerow(head)
        for t, v in zip(self.times, self.vectors):
            row = [repr(float(t))]
            for z in v:
                row += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(row)
        return buf.getvalue()


# ---------------------------------------------------------------- assembly


_FOLD = {1: (0, 1, 2, 3), 2: (1, 0, 2, 3), 3: (0, 1, 3, 2), 4: (1, 0, 3, 2)}


def fold_channel(k: int, g: np.ndarray, n: int) -> np.ndarray:
    """Channel-``k`` tensor reindexed so its term reads ``L e_xy [|x><y|, |z><w| rho]``."""
    g = g.reshape(g.shape[:-2] + (n, n, n, n))
    lead = tuple(range(g.ndim - 4))
    return np.transpose(g, lead + tuple(g.ndim - 4 + i for i in _FOLD[k]))


def combine_channels(gamma: np.ndarray, n: int) -> np.ndarray:
    """Fold the four channels of ``gamma`` (shape ``(4, ..., N*N, N*N)``) into one tensor."""
    return sum(fold_channel(k, gamma[k - 1], n) for k in CHANNELS)


def _phase(frame: PolaronFrame, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.exp(1j * KAPPA * frame.gaps * t[..., None, None])


def superoperator(L: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Matrix of ``X(rho) + X(rho)^dag`` on Hermitian flattened ``rho``.

    ``X(rho) = -sum L[x,y,z,w] e[x,y] [|x><y|, |z><w| rho]``.
    Leading batch axes of ``L`` and ``e`` are carried through.
    """
    n = L.shape[-1]
    eye = np.eye(n)
    M = np.einsum("...xy,...xyyw->...xw", e, L)
    T4 = np.einsum("...xyzw,...xy->...zywx", L, e)
    H4 = np.einsum("...xabw,...xa->...abxw", L.conj(), e.conj())
    R4 = (
        -np.einsum("...rR,cC->...rcRC", M, eye)
        - np.einsum("rR,...cC->...rcRC", eye, M.conj())
        + T4
        + H4
    )
    return R4.reshape(R4.shape[:-4] + (n * n, n * n))


def apply_X(L: np.ndarray, e: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``X(A)`` for a general (not necessarily Hermitian) matrix ``A``."""
    M = np.einsum("...xy,...xyyw->...xw", e, L)
    T = np.einsum("...xyzw,...xy,wx->...zy", L, e, A)
    return -M @ A + T


def assemble_R(rates, frame: PolaronFrame, t: float) -> np.ndarray:
    """Generator of the homogeneous term at time ``t``.

    ``rates`` is a :class:`HomRates` state or a ``(4, N*N, N*N)`` array of
    ``Gamma^k(t)``.
    """
    gamma = rates.gamma() if isinstance(rates, HomRates) else np.asarray(rates)
    L = combine_channels(gamma, frame.n)
    return superoperator(L, _phase(frame, t))


def first_order_vector(frame, initial, ijs, upsilon, t) -> np.ndarray:
    """First-order inhomogeneous matrix; ``upsilon`` has shape ``(IJ, ..., N*N)``."""
    n = frame.n
    e = _phase(frame, t)
    out = 0.0
    for x, (i, j) in enumerate(ijs):
        Y = upsilon[x].reshape(upsilon[x].shape[:-1] + (n, n)) * e
        sig = np.outer(frame.u[i], frame.u[j])
        X = -1j * KAPPA * initial.rho0_polaron[i, j] * (Y @ sig - sig @ Y)
        out = out + X
    out = np.asarray(out)
    return out + np.swapaxes(out.conj(), -1, -2)


def assemble_I(xi: Optional[np.ndarray], upsilon: Optional[np.ndarray], ijs, frame, initial, t) -> np.ndarray:
    """Inhomogeneous vector at time ``t`` (flattened).

    ``xi`` has shape ``(4, IJ, N*N, N*N)`` and ``upsilon`` ``(IJ, N*N)``.
    """
    n = frame.n
    out = np.zeros((n, n), dtype=complex)
    if upsilon is not None:
        out += first_order_vector(frame, initial, ijs, upsilon, t)
    if xi is not None:
        e = _phase(frame, t)
        X = np.zeros((n, n), dtype=complex)
        for x, (i, j) in enumerate(ijs):
            L = combine_channels(xi[:, x], n)
            X += initial.rho0_polaron[i, j] * apply_X(L, e, np.outer(frame.u[i], frame.u[j]))
        out += X + X.conj().T
    return out.reshape(-1)


def inhomogeneous_series(kernels, frame, initial, n_out, xi_phase="s", second_order=True) -> np.ndarray:
    """Inhomogeneous vectors at ``t_m = 2 m h``, shape ``(n_out, N*N)``."""
    n = frame.n
    t = np.arange(n_out) * 2 * kernels.dt
    e = _phase(frame, t)
    ijs, Y = inhom_first_order(kernels, frame, initial, n_out)
    out = np.zeros((n_out, n, n), dtype=complex)
    if ijs:
        out += first_order_vector(frame, initial, ijs, Y, t)
    if second_order:
        for k, ij, xi in xi_series(kernels, frame, initial, n_out, xi_phase):
            L = fold_channel(k, xi, n)
            X = initial.rho0_polaron[ij] * apply_X(L, e, np.outer(frame.u[ij[0]], frame.u[ij[1]]))
            out += X + np.swapaxes(X.conj(), -1, -2)
    return out.reshape(n_out, n * n)


# ---------------------------------------------------------------- RK4 core


def _rk4(y0, R_of, I_of, n_steps, dt, frame, monitor=True):
    """Integrate ``dy/dt = R y + I`` with generators indexed by half-steps."""
    n = frame.n
    ys = np.empty((n_steps + 1, n * n), dtype=complex)
    ys[0] = y0
    y = y0.astype(complex)
    diag = np.arange(n) * (n + 1)
    worst_trace = 0.0
    worst_herm = 0.0
    min_eig = np.inf
    for s in range(n_steps):
        R0, R1, R2 = R_of(2 * s), R_of(2 * s + 1), R_of(2 * s + 2)
        I0, I1, I2 = I_of(2 * s), I_of(2 * s + 1), I_of(2 * s + 2)
        k1 = R0 @ y + I0
        k2 = R1 @ (y + 0.5 * dt * k1) + I1
        k3 = R1 @ (y + 0.5 * dt * k2) + I1
        k4 = R2 @ (y + dt * k3) + I2
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[s + 1] = y
        if monitor:
            tr = abs(y[diag].sum() - 1.0)
            m = y.reshape(n, n)
            herm = np.abs(m - m.conj().T).max()
            ev = np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()
            worst_trace = max(worst_trace, tr)
            worst_herm = max(worst_herm, herm)
            min_eig = min(min_eig, ev)
            if not np.all(np.isfinite(y)):
                raise NumericalError(f"non-finite state at step {s + 1} (t = {(s + 1) * dt} fs)")
            if tr > TRACE_ABORT:
                raise NumericalError(f"trace drift {tr:.3e} at step {s + 1} (t = {(s + 1) * dt} fs)")
            if ev < POSITIVITY_ABORT:
                raise NumericalError(f"eigenvalue {ev:.3e} at step {s + 1} (t = {(s + 1) * dt} fs)")
    return ys, {"max_trace_drift": worst_trace, "max_hermiticity_defect": worst_herm, "min_eigenvalue": min_eig}


def _to_schroedinger(ys, frame, times):
    n = frame.n
    rho_I = ys.reshape(-1, n, n)
    return rho_I * np.exp(-1j * KAPPA * frame.gaps[None] * times[:, None, None])


def _setup(network, bath, rho0_site, config, force_beta_zero=False, kernels=None, table_t_max=None):
    if kernels is None:
        kernels = build_kernel_tables(
            network,
            bath,
            config.dt / 4.0,
            table_t_max or config.n_steps * config.dt,
            n_gl=config.n_gl,
            osc_fraction=config.osc_fraction,
            cache_dir=config.cache_dir,
        )
    frame = build_polaron_frame(network, bath, kernels, force_beta_zero=force_beta_zero)
    initial = transform_initial_state(rho0_site, frame)
    return kernels, frame, initial


def propagate(
    network: SiteNetwork,
    bath: BathSpec,
    rho0_site,
    config: PropagationConfig = PropagationConfig(),
    propagator: str = "full",
    force_beta_zero: bool = False,
    kernels: Optional[KernelTables] = None,
) -> Trajectory:
    """Time-convolutionless propagation in the polaron frame.

    ``propagator`` is ``'full'`` or ``'hom-only'``; the latter (or
    ``config.include_inhomogeneous = False``) drops the inhomogeneous term.
    ``kernels`` must have spacing ``dt/4`` when supplied.
    """
    if propagator not in ("full", "hom-only"):
        raise ValueError(f"propagate handles 'full' and 'hom-only', not {propagator!r}")
    t0 = time.perf_counter()
    kernels, frame, initial = _setup(network, bath, rho0_site, config, force_beta_zero, kernels)
    if abs(kernels.dt - config.dt / 4.0) > 1e-12:
        raise ValueError("kernel table spacing must be dt/4")
    n_steps = config.n_steps
    n_half = 2 * n_steps + 1
    th = np.arange(n_half) * 0.5 * config.dt
    gamma = hom_rate_series(kernels, frame, n_half)  # (4, T, n2, n2)
    L = combine_channels(gamma, frame.n)
    R = superoperator(L, _phase(frame, th))
    inhom = propagator == "full" and config.include_inhomogeneous
    if inhom:
        Iv = inhomogeneous_series(kernels, frame, initial, n_half, config.xi_phase)
    else:
        Iv = np.zeros((n_half, frame.n**2), dtype=complex)
    t_rates = time.perf_counter() - t0
    y0 = frame.to_eigen(initial.rho0_polaron).reshape(-1)
    ys, diag = _rk4(y0, lambda m: R[m], lambda m: Iv[m], n_steps, config.dt, frame)
    times = np.arange(n_steps + 1) * config.dt
    diag.update(
        rate_seconds=t_rates,
        total_seconds=time.perf_counter() - t0,
        kernel_hash=kernels.kernel_hash,
        include_inhomogeneous=inhom,
        xi_phase=config.xi_phase,
        beta_forced_zero=force_beta_zero,
    )
    tag = "full" if inhom else "hom-only"
    return Trajectory(times, _to_schroedinger(ys, frame, times), frame, initial, tag, diag)


def _constant_rate_run(network, bath, rho0_site, config, gamma_fn, tag, mask=None, kernels=None):
    # only beta and the spatial structure are needed from the table
    kernels, frame, initial = _setup(network, bath, rho0_site, config, kernels=kernels, table_t_max=config.dt)
    gamma, extra = gamma_fn(kernels, frame)
    if mask is not None:
        gamma = np.where(mask(frame), gamma, 0.0)
    n_steps = config.n_steps
    held: Dict[int, np.ndarray] = {}

    def R_hold(m):
        if m not in held:
            if len(held) > 2:
                held.pop(min(held))
            t = 0.5 * m * config.dt
            held[m] = assemble_R(rates_at(gamma, frame, t), frame, t)
        return held[m]

    zero = np.zeros(frame.n**2, dtype=complex)
    y0 = frame.to_eigen(initial.rho0_polaron).reshape(-1)
    ys, diag = _rk4(y0, R_hold, lambda m: zero, n_steps, config.dt, frame)
    times = np.arange(n_steps + 1) * config.dt
    diag.update(extra)
    diag["kernel_hash"] = kernels.kernel_hash
    return Trajectory(times, _to_schroedinger(ys, frame, times), frame, initial, tag, diag)


def propagate_markov(network, bath, rho0_site, config: PropagationConfig = PropagationConfig(), kernels=None, secular=False) -> Trajectory:
    """Markov limit: time-independent rates with the explicit phase factors kept."""

    def fn(kern, frame):
        mr = markov_rates(network, bath, frame, kern)
        return mr.gamma, {"tau_star": mr.tau_star, "markov_tail_bound": mr.tail_bound}

    mask = (lambda fr: secular_mask(fr, config.secular_tol)) if secular else None
    return _constant_rate_run(network, bath, rho0_site, config, fn, "secular" if secular else "markov", mask, kernels)


def propagate_secular(network, bath, rho0_site, config: PropagationConfig = PropagationConfig(), kernels=None) -> Trajectory:
    return propagate_markov(network, bath, rho0_site, config, kernels, secular=True)


def propagate_redfield(network, bath, rho0_site, config: PropagationConfig = PropagationConfig(), kernels=None) -> Trajectory:
    """Markov-secular propagation with single-phonon (weak-coupling) rates."""

    def fn(kern, frame):
        return redfield_rates(kern, frame, bath), {}

    mask = lambda fr: secular_mask(fr, config.secular_tol)
    return _constant_rate_run(network, bath, rho0_site, config, fn, "redfield", mask, kernels)


def pauli_generator(rates: np.ndarray) -> np.ndarray:
    """``dp/dt = A p`` from transfer rates ``k[m, n]`` (m to n)."""
    A = rates.T.copy()
    np.fill_diagonal(A, 0.0)
    A -= np.diag(rates.sum(axis=1) - np.diag(rates))
    return A


def propagate_foerster(network, bath, rho0_site, config: PropagationConfig = PropagationConfig(), kernels=None) -> Trajectory:
    """Incoherent hopping between sites with strong-coupling rates.

    Only site populations evolve; the trajectory holds diagonal site
    matrices rotated into the (``beta = 0``) exciton basis.
    """
    kernels, frame, initial = _setup(
        network, bath, rho0_site, config, force_beta_zero=True, kernels=kernels, table_t_max=config.dt
    )
    k = foerster_rate_matrix(network, bath, frame.epsilon_tilde)
    A = pauli_generator(k)
    n_steps = config.n_steps
    times = np.arange(n_steps + 1) * config.dt
    p0 = np.real(np.diag(initial.rho0_polaron))
    step = expm(A * config.dt)
    P = np.empty((n_steps + 1, frame.n))
    P[0] = p0
    for s in range(n_steps):
        P[s + 1] = step @ P[s]
    rho_site = np.zeros((n_steps + 1, frame.n, frame.n), dtype=complex)
    idx = np.arange(frame.n)
    rho_site[:, idx, idx] = P
    rho = np.einsum("ma,tmn,nb->tab", frame.u, rho_site, frame.u)
    diag = {
        "max_trace_drift": float(np.abs(P.sum(axis=1) - 1).max()),
        "max_hermiticity_defect": 0.0,
        "min_eigenvalue": float(P.min()),
        "rate_matrix": k.tolist(),
        "kernel_hash": kernels.kernel_hash,
    }
    return Trajectory(times, rho, frame, initial, "foerster", diag)


def run(network, bath, rho0_site, config: PropagationConfig, propagator: str, **kw) -> Trajectory:
    if propagator in ("full", "hom-only"):
        return propagate(network, bath, rho0_site, config, propagator, **kw)
    fn = {
        "markov": propagate_markov,
        "secular": propagate_secular,
        "redfield": propagate_redfield,
        "foerster": propagate_foerster,
    }.get(propagator)
    if fn is None:
        raise ValueError(f"unknown propagator {propagator!r}; choose from {', '.join(PROPAGATORS)}")
    return fn(network, bath, rho0_site, config, **kw)
