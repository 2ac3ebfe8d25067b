"""Excitation network, spectral density and bath description.

Energies are in cm^-1 and times in fs throughout the package.  A phase
accumulated by an energy ``E`` over a time ``t`` is ``KAPPA * E * t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial
from typing import Optional, Sequence, Tuple, Union

import numpy as np

#: Speed of light in cm/fs.
C_CM_PER_FS = 2.99792458e-5
#: Angular phase per (cm^-1 * fs).
KAPPA = 2.0 * np.pi * C_CM_PER_FS
#: cm^-1 per meV.
MEV_TO_CM = 8.06554

_F7 = float(factorial(7))


def mev_to_cm(x):
    return np.asarray(x, dtype=float) * MEV_TO_CM if np.ndim(x) else float(x) * MEV_TO_CM


def cm_to_mev(x):
    return np.asarray(x, dtype=float) / MEV_TO_CM if np.ndim(x) else float(x) / MEV_TO_CM


class ModelError(ValueError):
    """Raised for inconsistent model parameters."""


@dataclass(frozen=True)
class SiteNetwork:
    """Single-excitation electronic Hamiltonian.

    Parameters
    ----------
    epsilon : array_like, shape (N,)
        Site energies in cm^-1.
    V : array_like, shape (N, N)
        Symmetric coupling matrix in cm^-1 with zero diagonal.
    distances : array_like, shape (N, N), optional
        Pairwise distances in nm, only needed for propagating-mode baths.
    """

    epsilon: np.ndarray
    V: np.ndarray
    distances: Optional[np.ndarray] = None

    def __post_init__(self):
        eps = np.array(self.epsilon, dtype=float).reshape(-1)
        V = np.array(self.V, dtype=float)
        n = eps.size
        if n < 2:
            raise ModelError("a network needs at least two sites")
        if V.shape != (n, n):
            raise ModelError(f"coupling matrix must be {n}x{n}, got {V.shape}")
        if not np.allclose(V, V.T, rtol=0, atol=1e-12):
            raise ModelError("coupling matrix is not symmetric")
        if np.any(np.diag(V) != 0):
            raise ModelError("coupling matrix must have a zero diagonal")
        if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(V))):
            raise ModelError("non-finite Hamiltonian entries")
        eps.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "V", V)
        if self.distances is not None:
            d = np.array(self.distances, dtype=float)
            if d.shape != (n, n):
                raise ModelError("distance matrix has the wrong shape")
            if not np.allclose(d, d.T) or np.any(d < 0) or np.any(np.diag(d) != 0):
                raise ModelError("distances must be symmetric, non-negative, zero on the diagonal")
            d.setflags(write=False)
            object.__setattr__(self, "distances", d)

    @property
    def n_sites(self) -> int:
        return self.epsilon.size

    @property
    def hamiltonian(self) -> np.ndarray:
        return np.diag(self.epsilon) + self.V

    def coupled_pairs(self) -> list:
        """Pairs ``(m, n)`` with ``m < n`` and nonzero coupling."""
        n = self.n_sites
        return [(m, k) for m in range(n) for k in range(m + 1, n) if self.V[m, k] != 0.0]


@dataclass(frozen=True)
class ContinuumTerm:
    weight: float
    cutoff: float  # cm^-1


@dataclass(frozen=True)
class LorentzianMode:
    weight: float
    frequency: float  # cm^-1
    broadening: float  # cm^-1


@dataclass(frozen=True)
class SpectralDensity:
    """``J(w) = s0 * J0(w) + sH * JH(w)``.

    ``J0`` is a normalised sum of ``w^5 exp(-sqrt(w/wi))`` terms and ``JH``
    a Lorentzian-broadened mode.  ``norm`` divides the continuum sum; when
    omitted it is the sum of the continuum weights.
    """

    scale_continuum: float = 0.0
    continuum_terms: Tuple[ContinuumTerm, ...] = ()
    mode: Optional[LorentzianMode] = None
    norm: Optional[float] = None

    def __post_init__(self):
        terms = tuple(
            t if isinstance(t, ContinuumTerm) else ContinuumTerm(*t) for t in self.continuum_terms
        )
        object.__setattr__(self, "continuum_terms", terms)
        if self.scale_continuum < 0:
            raise ModelError("continuum scale must be non-negative")
        for t in terms:
            if t.weight < 0 or t.cutoff <= 0:
                raise ModelError("continuum weights must be >= 0 and cutoffs > 0")
        if self.mode is not None:
            m = self.mode
            if m.weight < 0 or m.frequency <= 0 or m.broadening <= 0:
                raise ModelError("mode weight must be >= 0, frequency and broadening > 0")
        if self.norm is not None and self.norm <= 0:
            raise ModelError("norm must be positive")

    @property
    def continuum_norm(self) -> float:
        if self.norm is not None:
            return float(self.norm)
        s = sum(t.weight for t in self.continuum_terms)
        return s if s > 0 else 1.0

    def _continuum_coeffs(self):
        # J0/w^2 = sum_i c_i w^3 exp(-sqrt(w/wi))
        pref = self.scale_continuum / self.continuum_norm
        return [(pref * t.weight / (_F7 * 2.0 * t.cutoff**4), t.cutoff) for t in self.continuum_terms]

    @property
    def has_mode(self) -> bool:
        return self.mode is not None and self.mode.weight > 0

    @property
    def is_zero(self) -> bool:
        cont = self.scale_continuum == 0 or all(t.weight == 0 for t in self.continuum_terms)
        return cont and not self.has_mode

    def continuum_only(self) -> "SpectralDensity":
        return replace(self, mode=None)

    def without_continuum(self) -> "SpectralDensity":
        return replace(self, scale_continuum=0.0)

    def scaled(self, factor: float) -> "SpectralDensity":
        """Multiply the whole spectral density by ``factor``."""
        mode = self.mode
        if mode is not None:
            mode = replace(mode, weight=mode.weight * factor)
        return replace(self, scale_continuum=self.scale_continuum * factor, mode=mode)

    def J_over_w2(self, omega) -> np.ndarray:
        """``J(w)/w^2`` evaluated without dividing by ``w``."""
        w = np.asarray(omega, dtype=float)
        out = np.zeros_like(w)
        for c, wi in self._continuum_coeffs():
            out = out + c * w**3 * np.exp(-np.sqrt(w / wi))
        if self.has_mode:
            m = self.mode
            wh, e = m.frequency, m.broadening
            out = out + m.weight * (2.0 * wh / np.pi) * w * e / ((w * w - wh * wh) ** 2 + (e * w) ** 2)
        return out

    def characteristic_frequency(self) -> float:
        """Location of the maximum of the continuum part ``J0``."""
        if not self.continuum_terms:
            return 0.0
        hi = 400.0 * max(t.cutoff for t in self.continuum_terms)
        w = np.geomspace(1e-3 * min(t.cutoff for t in self.continuum_terms), hi, 20001)
        j0 = sum(t.weight * w**5 * np.exp(-np.sqrt(w / t.cutoff)) / t.cutoff**4 for t in self.continuum_terms)
        return float(w[np.argmax(j0)])


def eval_J(sd: SpectralDensity, omega):
    """Spectral density in cm^-1 at non-negative ``omega``."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectral density is defined for omega >= 0")
    out = w * w * sd.J_over_w2(w)
    return float(out) if out.ndim == 0 else out


def eval_J_mode_unweighted(mode: LorentzianMode, omega):
    """Lorentzian mode term ``JH`` before the weight ``sH`` is applied."""
    w = np.asarray(omega, dtype=float)
    wh, e = mode.frequency, mode.broadening
    return (2.0 * wh / np.pi) * w**3 * e / ((w * w - wh * wh) ** 2 + (e * w) ** 2)


@dataclass(frozen=True)
class Independent:
    """Each site has its own bath."""


@dataclass(frozen=True)
class FullyCorrelated:
    """All sites share one bath coordinate."""


@dataclass(frozen=True)
class PropagatingModes:
    """Spatial correlation ``sinc(kappa * w * d / v_ph)`` with ``v_ph`` in nm/fs."""

    v_ph: float

    def __post_init__(self):
        if not self.v_ph > 0:
            raise ModelError("phonon speed must be positive")


CorrelationModel = Union[Independent, FullyCorrelated, PropagatingModes]


@dataclass(frozen=True)
class BathSpec:
    kT: float
    spectral_density: SpectralDensity
    correlation_model: CorrelationModel = field(default_factory=Independent)

    def __post_init__(self):
        if not self.kT > 0:
            raise ModelError("kT must be positive")


def validate_pairing(network: SiteNetwork, bath: BathSpec) -> None:
    if isinstance(bath.correlation_model, PropagatingModes) and network.distances is None:
        raise ModelError("propagating-mode correlations need a distance matrix")


H_FMO = np.array(
    [
        [280.0, -106.0, 8.0, -5.0],
        [-106.0, 420.0, 28.0, 6.0],
        [8.0, 28.0, 0.0, -62.0],
        [-5.0, 6.0, -62.0, 175.0],
    ]
)

#: Continuum cutoffs used by the FMO preset, in meV.
FMO_CUTOFFS_MEV = (0.069, 0.24)


def fmo_spectral_density(with_mode: bool = True) -> SpectralDensity:
    terms = (
        ContinuumTerm(0.8, mev_to_cm(FMO_CUTOFFS_MEV[0])),
        ContinuumTerm(0.5, mev_to_cm(FMO_CUTOFFS_MEV[1])),
    )
    mode = LorentzianMode(0.22, 180.0, 50.0) if with_mode else None
    return SpectralDensity(scale_continuum=0.5, continuum_terms=terms, mode=mode)


def fmo4_preset(with_mode: bool = True) -> Tuple[SiteNetwork, BathSpec]:
    """Four-site FMO subsystem at ``kT = 200 cm^-1`` with independent baths."""
    net = SiteNetwork(epsilon=np.diag(H_FMO).copy(), V=H_FMO - np.diag(np.diag(H_FMO)))
    return net, BathSpec(kT=200.0, spectral_density=fmo_spectral_density(with_mode))


def fast_bath_variant(sd: SpectralDensity, factor: float = 10.0) -> SpectralDensity:
    """Cutoffs multiplied and weights divided by ``factor``, mode removed.

    The continuum normalisation is frozen at its original value so the
    weight reduction is not cancelled by the normalisation.
    """
    terms = tuple(ContinuumTerm(t.weight / factor, t.cutoff * factor) for t in sd.continuum_terms)
    return SpectralDensity(
        scale_continuum=sd.scale_continuum,
        continuum_terms=terms,
        mode=None,
        norm=sd.continuum_norm,
    )


def fmo4_fast_bath() -> Tuple[SiteNetwork, BathSpec]:
    net, bath = fmo4_preset()
    return net, replace(bath, spectral_density=fast_bath_variant(bath.spectral_density))


def reorganization_energy(sd: SpectralDensity, grid=None) -> float:
    """``lambda = int_0^inf J(w)/w dw``.

    The continuum is integrated by composite Gauss-Legendre quadrature; the
    Lorentzian mode contributes exactly ``sH * wH``.
    """
    if sd.is_zero:
        return 0.0
    mode_part = sd.mode.weight * sd.mode.frequency if sd.has_mode else 0.0
    cont = sd.continuum_only()
    if cont.is_zero:
        return mode_part
    if grid is None:
        from .quadrature import FrequencyGrid

        grid = FrequencyGrid.for_spectral_density(cont, kT=None, t_max=0.0)
    w = grid.nodes
    val = float(np.sum(grid.weights * w * cont.J_over_w2(w)))
    if not np.isfinite(val):
        raise FloatingPointError("reorganization energy quadrature did not converge")
    return val + mode_part


def continuum_reorganization_closed_form(sd: SpectralDensity) -> float:
    """Closed form ``int w^4 exp(-sqrt(w/wi)) dw = 2 * 9! * wi^5`` per term."""
    tot = 0.0
    for c, wi in sd._continuum_coeffs():
        tot += c * 2.0 * factorial(9) * wi**5
    return tot


def rotate_sites(network: SiteNetwork, perm: Sequence[int]) -> SiteNetwork:
    """Relabel sites by ``perm``."""
    p = np.asarray(perm)
    d = None if network.distances is None else network.distances[np.ix_(p, p)]
    return SiteNetwork(network.epsilon[p], network.V[np.ix_(p, p)], d)
