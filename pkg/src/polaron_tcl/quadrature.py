"""Composite Gauss-Legendre frequency grids for bath integrals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import KAPPA, SpectralDensity

ENVELOPE_FLOOR = 1e-10


def coth_half(omega, kT: float) -> np.ndarray:
    """``coth(w / 2kT)`` with a series branch for ``w < 1e-3 kT``."""
    w = np.asarray(omega, dtype=float)
    x = w / (2.0 * kT)
    small = np.abs(w) < 1e-3 * kT
    with np.errstate(divide="ignore", invalid="ignore"):
        big = 1.0 / np.tanh(np.where(small, 1.0, x))
        ser = 2.0 * kT / np.where(small, w, 1.0) + w / (6.0 * kT)
    return np.where(small, ser, big)


def x_coth_half(omega, kT: float) -> np.ndarray:
    """``w * coth(w / 2kT)``, finite at ``w = 0``."""
    w = np.asarray(omega, dtype=float)
    small = np.abs(w) < 1e-3 * kT
    with np.errstate(divide="ignore", invalid="ignore"):
        big = w / np.tanh(np.where(small, 1.0, w) / (2.0 * kT))
    return np.where(small, 2.0 * kT + w * w / (6.0 * kT), big)


def omega_max_for(sd: SpectralDensity) -> float:
    wmax = 4000.0
    if sd.mode is not None:
        wmax = max(wmax, 200.0 * sd.mode.frequency)
    if sd.continuum_terms:
        wmax = max(wmax, 40.0 * 100.0 * max(t.cutoff for t in sd.continuum_terms))
    return wmax


@dataclass(frozen=True)
class FrequencyGrid:
    """Quadrature nodes and weights on ``[0, omega_max]``."""

    nodes: np.ndarray
    weights: np.ndarray
    omega_max: float
    n_panels: int
    n_gl: int
    t_max: float

    @property
    def size(self) -> int:
        return self.nodes.size

    def integrate(self, values) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))

    @staticmethod
    def from_breakpoints(breaks, n_gl: int = 16, t_max: float = 0.0) -> "FrequencyGrid":
        b = np.asarray(breaks, dtype=float)
        x, w = np.polynomial.legendre.leggauss(n_gl)
        a, c = b[:-1, None], b[1:, None]
        half = 0.5 * (c - a)
        nodes = (a + half * (x + 1.0)).ravel()
        weights = (half * w).ravel()
        return FrequencyGrid(nodes, weights, float(b[-1]), b.size - 1, n_gl, t_max)

    @staticmethod
    def for_spectral_density(
        sd: SpectralDensity,
        kT: Optional[float],
        t_max: float,
        n_gl: int = 16,
        **kw,
    ) -> "FrequencyGrid":
        """Grid on :func:`spectral_breakpoints` with ``n_gl`` nodes per panel."""
        b = spectral_breakpoints(sd, kT, t_max, **kw)
        return FrequencyGrid.from_breakpoints(b, n_gl=n_gl, t_max=t_max)


def spectral_breakpoints(
    sd: SpectralDensity,
    kT: Optional[float],
    t_max: float,
    omega_max: Optional[float] = None,
    width_cap_fraction: float = 1.0 / 200.0,
    osc_fraction: float = 4.0,
) -> np.ndarray:
    """Build panels adapted to ``sd`` and the largest time ``t_max`` (fs).

    Panels are geometric near zero, at most ``eps/4`` wide inside
    ``wH +- 3 eps`` and no wider than two phase periods
    ``4 pi / (kappa t_max)`` wherever the integrand envelope exceeds
    ``ENVELOPE_FLOOR`` of its peak.
    """
    wmax = float(omega_max) if omega_max is not None else omega_max_for(sd)
    scales = [t.cutoff for t in sd.continuum_terms]
    if sd.mode is not None:
        scales.append(sd.mode.frequency / 4.0)
    if kT is not None:
        scales.append(kT)
    s = min(scales) if scales else 1.0
    s = min(s, wmax / 10.0)

    cap = wmax * width_cap_fraction
    osc = np.inf
    env_edge = wmax
    if t_max > 0:
        osc = osc_fraction * np.pi / (KAPPA * t_max)
        probe = np.geomspace(s * 1e-6, wmax, 8000)
        env = sd.J_over_w2(probe)
        if kT is not None:
            env = env * x_coth_half(probe, kT) / probe
        peak = env.max() if env.size else 0.0
        if peak > 0:
            sig = np.nonzero(env > ENVELOPE_FLOOR * peak)[0]
            env_edge = float(probe[sig[-1]]) if sig.size else s
    fixed = []
    mode_lo = mode_hi = None
    if sd.mode is not None:
        wh, e = sd.mode.frequency, sd.mode.broadening
        mode_lo, mode_hi = max(wh - 3 * e, 0.0), wh + 3 * e
        fixed = list(np.arange(mode_lo, mode_hi + 1e-9, e / 2.0))

    breaks = [0.0] + list(s * 2.0 ** -np.arange(20, -1, -1))
    w = s
    fixed = [f for f in fixed if f > s]
    fi = 0
    while w < wmax:
        h = min(w / 2.0, cap)
        if w < env_edge:
            h = min(h, osc)
        else:
            h = min(h, 8.0 * osc)
        if mode_lo is not None and mode_lo - 1e-9 <= w < mode_hi:
            h = min(h, sd.mode.broadening / 4.0)
        nxt = min(w + h, wmax)
        while fi < len(fixed) and fixed[fi] <= w + 1e-9:
            fi += 1
        if fi < len(fixed) and fixed[fi] < nxt:
            nxt = fixed[fi]
        breaks.append(nxt)
        w = nxt
    return np.array(breaks)
