"""Polaron frame: renormalised Hamiltonian, its eigenbasis and initial states."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .bath import KernelTables
from .model import BathSpec, SiteNetwork, reorganization_energy

DEGENERACY_TOL = 1e-8


class StateError(ValueError):
    pass


@dataclass(frozen=True)
class PolaronFrame:
    epsilon_tilde: np.ndarray
    H0_tilde: np.ndarray
    eigenvalues: np.ndarray
    u: np.ndarray  # u[m, alpha] = <m|alpha>
    beta: np.ndarray
    gamma: np.ndarray
    V: np.ndarray
    reorganization: float
    beta_forced_zero: bool = False

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def gaps(self) -> np.ndarray:
        """``eps_ab = eps_a - eps_b`` in cm^-1."""
        e = self.eigenvalues
        return e[:, None] - e[None, :]

    def to_site(self, rho_eig: np.ndarray) -> np.ndarray:
        return self.u @ rho_eig @ self.u.T

    def to_eigen(self, rho_site: np.ndarray) -> np.ndarray:
        return self.u.T @ rho_site @ self.u

    def coupling_tensor(self, pairs) -> np.ndarray:
        """``W[p, a, b] = V_mn u_ma u_nb`` for each coupled pair ``p = (m, n)``."""
        u = self.u
        return np.array([self.V[m, n] * np.outer(u[m], u[n]) for m, n in pairs]).reshape(
            len(pairs), self.n, self.n
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.n
        w.writerow(["alpha", "eps_alpha_cm"] + [f"u_site{m + 1}" for m in range(n)])
        for a in range(n):
            w.writerow([a + 1, repr(float(self.eigenvalues[a]))] + [repr(float(x)) for x in self.u[:, a]])
        w.writerow([])
        w.writerow(["m", "n", "beta_mn", "gamma_mn_cm"])
        for m in range(n):
            for k in range(m + 1, n):
                w.writerow([m + 1, k + 1, repr(float(self.beta[m, k])), repr(float(self.gamma[m, k]))])
        return buf.getvalue()


def _fix_eigenvectors(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    n = vals.size
    vecs = vecs.copy()
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and abs(vals[stop] - vals[start]) < DEGENERACY_TOL:
            stop += 1
        if stop - start > 1:
            # project site unit vectors in order, Gram-Schmidt inside the block
            block = vecs[:, start:stop]
            proj = block @ block.T
            basis = []
            for m in range(n):
                v = proj[:, m].copy()
                for b in basis:
                    v -= (b @ v) * b
                nv = np.linalg.norm(v)
                if nv > 1e-8:
                    basis.append(v / nv)
                if len(basis) == stop - start:
                    break
            vecs[:, start:stop] = np.array(basis).T
        start = stop
    for a in range(n):
        k = np.argmax(np.abs(vecs[:, a]) - 1e-12 * np.arange(n))
        if vecs[k, a] < 0:
            vecs[:, a] = -vecs[:, a]
    return vecs


def build_polaron_frame(
    network: SiteNetwork,
    bath: BathSpec,
    kernels: KernelTables,
    force_beta_zero: bool = False,
) -> PolaronFrame:
    """Renormalised Hamiltonian ``H0~`` with couplings ``V_mn beta_mn``.

    ``force_beta_zero`` removes the renormalised couplings from ``H0~``
    while the bath correlators keep their true ``beta``.
    """
    n = network.n_sites
    if kernels.beta.shape != (n, n):
        raise ValueError("kernel tables belong to a different network")
    lam = reorganization_energy(bath.spectral_density)
    eps_t = network.epsilon - lam
    beta = kernels.beta
    Vt = np.zeros_like(network.V) if force_beta_zero else network.V * beta
    H0 = np.diag(eps_t) + Vt
    vals, vecs = np.linalg.eigh(H0)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    vecs = _fix_eigenvectors(vals, vecs)
    gamma = np.abs(network.V) * np.sqrt(np.clip(1.0 - beta**2, 0.0, None))
    return PolaronFrame(eps_t, H0, vals, vecs, beta.copy(), gamma, network.V.copy(), lam, force_beta_zero)


@dataclass(frozen=True)
class InitialState:
    rho0_lab: np.ndarray
    rho0_polaron: np.ndarray

    def nonzero_elements(self, tol: float = 0.0):
        r = self.rho0_polaron
        n = r.shape[0]
        return [(i, j) for i in range(n) for j in range(n) if abs(r[i, j]) > tol]


def validate_density(rho: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    r = np.asarray(rho, dtype=complex)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise StateError("density matrix must be square")
    if np.max(np.abs(r - r.conj().T)) > tol:
        raise StateError("density matrix is not Hermitian")
    if abs(np.trace(r) - 1.0) > tol:
        raise StateError(f"density matrix trace is {np.trace(r).real:.12g}, expected 1")
    if np.min(np.linalg.eigvalsh(0.5 * (r + r.conj().T))) < -tol:
        raise StateError("density matrix is not positive semidefinite")
    return r


def transform_initial_state(rho0_lab, frame: PolaronFrame) -> InitialState:
    r = validate_density(rho0_lab)
    if r.shape[0] != frame.n:
        raise StateError("initial state dimension does not match the network")
    return InitialState(r.copy(), frame.beta * r)


def localized_state(n: int, site: int) -> np.ndarray:
    r = np.zeros((n, n), dtype=complex)
    r[site, site] = 1.0
    return r


def superposition_state(amplitudes) -> np.ndarray:
    a = np.asarray(amplitudes, dtype=complex)
    return np.outer(a, a.conj())


def validity_report(frame: PolaronFrame, network: SiteNetwork, bath: BathSpec) -> dict:
    """Perturbative-regime diagnostics per coupled pair."""
    wc = bath.spectral_density.characteristic_frequency()
    rows = []
    for m, n in network.coupled_pairs():
        det = abs(network.epsilon[m] - network.epsilon[n])
        g = float(frame.gamma[m, n])
        rows.append(
            {
                "pair": (m, n),
                "V": float(network.V[m, n]),
                "gamma": g,
                "detuning": float(det),
                "gamma_below_characteristic": g < wc,
                "coupling_below_detuning": abs(network.V[m, n]) < det,
            }
        )
    return {
        "characteristic_frequency": wc,
        "pairs": rows,
        "all_ok": all(r["gamma_below_characteristic"] and r["coupling_below_detuning"] for r in rows),
    }
