"""Bath kernels: renormalisation factors, phonon correlations and displaced-bath kernels.

Every kernel is an integer (or, for propagating modes, distance-resolved)
combination of two base integrals per spatial profile ``Delta_k(w)``::

    C_k(t) = int dw J(w)/w^2 Delta_k(w) coth(w/2kT) cos(kappa w t)
    S_k(t) = int dw J(w)/w^2 Delta_k(w) sin(kappa w t)

so that ``K_{mn,pq} = sum_k lam_k (C_k - i S_k)`` and
``f_{ij,mn} = exp(-sum_k lam_k C_k + i sum_k lam'_k S_k)``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .model import (
    KAPPA,
    BathSpec,
    FullyCorrelated,
    Independent,
    PropagatingModes,
    SiteNetwork,
    SpectralDensity,
    validate_pairing,
)
from .quadrature import FrequencyGrid, x_coth_half

log = logging.getLogger(__name__)

Pair = Tuple[int, int]

TIME_BLOCK = 64
CACHE_MAGIC = b"PTCLKT01"
CACHE_ENV = "POLARON_TCL_CACHE"


class InfraredDivergenceWarning(RuntimeWarning):
    pass


class QuadratureError(FloatingPointError):
    """A bath integral failed to produce a finite value."""


class KernelRangeError(ValueError):
    """Requested time lies outside a kernel table."""


# ---------------------------------------------------------------- spatial factors


@dataclass(frozen=True)
class SpatialStructure:
    """Spatial correlations ``Delta_mp`` expressed through a list of profiles.

    ``index[m, p]`` selects the profile for ``Delta_mp`` or is ``-1`` when
    the two sites are uncorrelated.  ``distances[k]`` is the distance (nm)
    of profile ``k``; zero means ``Delta = 1``.
    """

    index: np.ndarray
    distances: Tuple[float, ...]
    v_ph: Optional[float] = None

    @property
    def n_profiles(self) -> int:
        return len(self.distances)

    @staticmethod
    def build(network: SiteNetwork, bath: BathSpec) -> "SpatialStructure":
        validate_pairing(network, bath)
        n = network.n_sites
        cm = bath.correlation_model
        if isinstance(cm, Independent):
            idx = np.where(np.eye(n, dtype=bool), 0, -1)
            return SpatialStructure(idx, (0.0,))
        if isinstance(cm, FullyCorrelated):
            return SpatialStructure(np.zeros((n, n), dtype=int), (0.0,))
        if isinstance(cm, PropagatingModes):
            d = np.asarray(network.distances)
            uniq = sorted(set(np.round(d.ravel(), 12).tolist()) | {0.0})
            lookup = {v: k for k, v in enumerate(uniq)}
            idx = np.vectorize(lambda x: lookup[round(float(x), 12)])(d).astype(int)
            return SpatialStructure(idx, tuple(uniq), cm.v_ph)
        raise TypeError(f"unknown correlation model {cm!r}")

    def delta(self, m: int, p: int) -> np.ndarray:
        out = np.zeros(self.n_profiles)
        k = self.index[m, p]
        if k >= 0:
            out[k] = 1.0
        return out

    def lam(self, mn: Pair, pq: Pair) -> np.ndarray:
        """Coefficients of ``Delta_mp - Delta_mq - Delta_np + Delta_nq``."""
        (m, n), (p, q) = mn, pq
        return self.delta(m, p) - self.delta(m, q) - self.delta(n, p) + self.delta(n, q)

    def lam_prime(self, ij: Pair, mn: Pair) -> np.ndarray:
        """Coefficients of ``Delta_im - Delta_in + Delta_jm - Delta_jn``."""
        (i, j), (m, n) = ij, mn
        return self.delta(i, m) - self.delta(i, n) + self.delta(j, m) - self.delta(j, n)

    def profile_values(self, omega) -> np.ndarray:
        """``Delta_k(w)`` for every profile, shape ``(n_profiles, len(w))``."""
        w = np.asarray(omega, dtype=float)
        rows = []
        for d in self.distances:
            if d == 0.0:
                rows.append(np.ones_like(w))
            else:
                x = KAPPA * w * d / self.v_ph
                rows.append(np.sinc(x / np.pi))
        return np.array(rows)

    def lam_of_omega(self, mn: Pair, pq: Pair, omega) -> np.ndarray:
        return self.lam(mn, pq) @ self.profile_values(omega)


def spatial_factors(network: SiteNetwork, bath: BathSpec) -> SpatialStructure:
    return SpatialStructure.build(network, bath)


# ---------------------------------------------------------------- base integrals


def default_grid(bath: BathSpec, t_max: float, n_gl: int = 16, **kw) -> FrequencyGrid:
    return FrequencyGrid.for_spectral_density(bath.spectral_density, bath.kT, t_max, n_gl=n_gl, **kw)


def _amplitudes(sd: SpectralDensity, kT: float, grid: FrequencyGrid, structure: SpatialStructure):
    w = grid.nodes
    base = grid.weights * sd.J_over_w2(w)
    prof = structure.profile_values(w)
    amp_sin = prof * base
    amp_cos = amp_sin * (x_coth_half(w, kT) / w)
    return amp_cos, amp_sin


def base_integrals_uniform(
    sd: SpectralDensity,
    kT: float,
    grid: FrequencyGrid,
    structure: SpatialStructure,
    h: float,
    n_times: int,
    t0: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Base integrals on ``t = t0 + k h``, ``k = 0..n_times-1``.

    Returns ``(C, S)`` with shape ``(n_profiles, n_times)``.
    """
    amp_cos, amp_sin = _amplitudes(sd, kT, grid, structure)
    npf = structure.n_profiles
    A = np.concatenate([amp_cos, amp_sin], axis=0).T.astype(complex)  # (M, 2P)
    w = grid.nodes
    blk = min(TIME_BLOCK, n_times)
    P = np.exp(1j * KAPPA * np.outer(np.arange(blk) * h, w))  # (blk, M)
    C = np.empty((npf, n_times))
    S = np.empty((npf, n_times))
    for start in range(0, n_times, blk):
        stop = min(start + blk, n_times)
        tb = t0 + start * h
        res = P[: stop - start] @ (np.exp(1j * KAPPA * w * tb)[:, None] * A)
        C[:, start:stop] = res[:, :npf].real.T
        S[:, start:stop] = res[:, npf:].imag.T
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(S))):
        raise QuadratureError(f"non-finite kernel values ({grid.size} nodes, {grid.n_panels} panels)")
    return C, S


def base_integrals_at(sd, kT, grid, structure, times) -> Tuple[np.ndarray, np.ndarray]:
    """Base integrals at arbitrary times (direct quadrature)."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    amp_cos, amp_sin = _amplitudes(sd, kT, grid, structure)
    ph = KAPPA * np.outer(grid.nodes, t)
    return amp_cos @ np.cos(ph), amp_sin @ np.sin(ph)


# ---------------------------------------------------------------- scalar API


def _check_ir(sd, kT: float, lam: np.ndarray, structure: "SpatialStructure", integral: float) -> bool:
    """True when the ``w -> 0`` end of the beta integral does not converge."""
    w = np.array([1e-10, 1e-8])
    g = sd.J_over_w2(w) * x_coth_half(w, kT) / w * np.abs(lam @ structure.profile_values(w))
    # a convergent integrand satisfies w*g(w) -> 0
    return bool(np.any(w * g > 1e-6 * max(abs(integral), 1e-300))) or not np.isfinite(integral)


def renormalization_factor(
    bath: BathSpec,
    pair: Pair,
    network: Optional[SiteNetwork] = None,
    grid: Optional[FrequencyGrid] = None,
) -> float:
    """``beta_mn = exp(-1/2 int J/w^2 lam_mn,mn coth)``.

    A divergent infrared end yields ``0.0`` and an
    :class:`InfraredDivergenceWarning`.
    """
    m, n = pair
    if m == n:
        raise ValueError("renormalisation factor needs m != n")
    sd = bath.spectral_density
    if network is None:
        network = SiteNetwork(np.zeros(max(m, n) + 1), np.zeros((max(m, n) + 1,) * 2))
    st = SpatialStructure.build(network, bath)
    lam = st.lam(pair, pair)
    if not np.any(lam) or sd.is_zero:
        return 1.0
    grid = grid or default_grid(bath, 0.0)
    C, _ = base_integrals_at(sd, bath.kT, grid, st, [0.0])
    val = float(lam @ C[:, 0])
    if _check_ir(sd, bath.kT, lam, st, val):
        warnings.warn(
            "renormalisation integral diverges at low frequency; beta set to 0",
            InfraredDivergenceWarning,
            stacklevel=2,
        )
        return 0.0
    return float(np.exp(-0.5 * val))


def phonon_correlation_K(
    bath: BathSpec,
    mn: Pair,
    pq: Pair,
    t,
    network: Optional[SiteNetwork] = None,
    grid: Optional[FrequencyGrid] = None,
):
    """``K_mn,pq(t)`` by direct quadrature; negative ``t`` via conjugation."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if network is None:
        n = max(mn + pq) + 1
        network = SiteNetwork(np.zeros(n), np.zeros((n, n)))
    st = SpatialStructure.build(network, bath)
    lam = st.lam(mn, pq)
    if not np.any(lam) or bath.spectral_density.is_zero:
        out = np.zeros(t_arr.shape, dtype=complex)
    else:
        grid = grid or default_grid(bath, float(np.max(np.abs(t_arr))))
        C, S = base_integrals_at(bath.spectral_density, bath.kT, grid, st, np.abs(t_arr))
        out = lam @ C - 1j * (lam @ S)
        out = np.where(t_arr < 0, np.conj(out), out)
        if not np.all(np.isfinite(out)):
            raise QuadratureError(f"K did not converge with {grid.size} nodes")
    return out[0] if np.ndim(t) == 0 else out


def displaced_bath_f(
    bath: BathSpec,
    ij: Pair,
    mn: Pair,
    t,
    network: Optional[SiteNetwork] = None,
    grid: Optional[FrequencyGrid] = None,
    prime: bool = False,
):
    """``f_ij,mn(t)``, or ``f'_ij,mn = 1/f`` when ``prime`` is set."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if network is None:
        n = max(ij + mn) + 1
        network = SiteNetwork(np.zeros(n), np.zeros((n, n)))
    st = SpatialStructure.build(network, bath)
    lam, lamp = st.lam(ij, mn), st.lam_prime(ij, mn)
    if (not np.any(lam) and not np.any(lamp)) or bath.spectral_density.is_zero:
        out = np.ones(t_arr.shape, dtype=complex)
    else:
        grid = grid or default_grid(bath, float(np.max(np.abs(t_arr))))
        C, S = base_integrals_at(bath.spectral_density, bath.kT, grid, st, t_arr)
        expo = -(lam @ C) + 1j * (lamp @ S)
        out = np.exp(-expo if prime else expo)
    return out[0] if np.ndim(t) == 0 else out


# ---------------------------------------------------------------- tables


@dataclass
class KernelTables:
    """Kernel base integrals tabulated on ``t_k = k * dt``.

    The table is treated as immutable once built.
    """

    dt: float
    C: np.ndarray
    S: np.ndarray
    structure: SpatialStructure
    beta: np.ndarray
    pairs: Tuple[Pair, ...]
    metadata: Dict = field(default_factory=dict)

    @property
    def n_times(self) -> int:
        return self.C.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_times) * self.dt

    @property
    def t_max(self) -> float:
        return (self.n_times - 1) * self.dt

    @property
    def log_beta(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.beta)

    @property
    def kernel_hash(self) -> str:
        return self.metadata.get("hash", "")

    def K(self, mn: Pair, pq: Pair) -> np.ndarray:
        lam = self.structure.lam(mn, pq)
        return lam @ self.C - 1j * (lam @ self.S)

    def f(self, ij: Pair, mn: Pair, prime: bool = False) -> np.ndarray:
        expo = -(self.structure.lam(ij, mn) @ self.C) + 1j * (self.structure.lam_prime(ij, mn) @ self.S)
        return np.exp(-expo if prime else expo)

    def lam_tensor(self, pairs_a: Sequence[Pair], pairs_b: Sequence[Pair]) -> np.ndarray:
        return np.array([[self.structure.lam(a, b) for b in pairs_b] for a in pairs_a]).reshape(
            len(pairs_a), len(pairs_b), self.structure.n_profiles
        )

    def lam_prime_tensor(self, ijs: Sequence[Pair], pairs: Sequence[Pair]) -> np.ndarray:
        return np.array([[self.structure.lam_prime(ij, p) for p in pairs] for ij in ijs]).reshape(
            len(ijs), len(pairs), self.structure.n_profiles
        )

    def K_pairs(self, pairs: Sequence[Pair], stride: int = 1) -> np.ndarray:
        """``K[a, b, t]`` over the given pairs on every ``stride``-th time."""
        lam = self.lam_tensor(pairs, pairs)
        Z = self.C[:, ::stride] - 1j * self.S[:, ::stride]
        return np.tensordot(lam, Z, axes=(2, 0))

    def f_pairs(self, ijs: Sequence[Pair], pairs: Sequence[Pair], stride: int = 1) -> np.ndarray:
        """``f[ij, p, t]``."""
        lam = self.lam_tensor(ijs, pairs)
        lamp = self.lam_prime_tensor(ijs, pairs)
        expo = -np.tensordot(lam, self.C[:, ::stride], axes=(2, 0)) + 1j * np.tensordot(
            lamp, self.S[:, ::stride], axes=(2, 0)
        )
        return np.exp(expo)

    @cached_property
    def _splines(self):
        t = self.times
        return CubicSpline(t, self.C, axis=1), CubicSpline(t, self.S, axis=1)

    def _interp(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(np.abs(t_arr) > self.t_max * (1 + 1e-12)):
            raise KernelRangeError(f"|t| beyond kernel table (t_max = {self.t_max} fs)")
        cs, ss = self._splines
        a = np.abs(t_arr)
        return cs(a), np.sign(t_arr) * ss(a)

    def K_at(self, mn: Pair, pq: Pair, t):
        C, S = self._interp(t)
        lam = self.structure.lam(mn, pq)
        out = lam @ C - 1j * (lam @ S)
        return out[0] if np.ndim(t) == 0 else out

    def f_at(self, ij: Pair, mn: Pair, t, prime: bool = False):
        C, S = self._interp(t)
        expo = -(self.structure.lam(ij, mn) @ C) + 1j * (self.structure.lam_prime(ij, mn) @ S)
        out = np.exp(-expo if prime else expo)
        return out[0] if np.ndim(t) == 0 else out


def _beta_matrix(structure: SpatialStructure, c0: np.ndarray, n: int, sd, kT) -> np.ndarray:
    beta = np.ones((n, n))
    for m in range(n):
        for k in range(n):
            if m == k:
                continue
            lam = structure.lam((m, k), (m, k))
            if not np.any(lam):
                continue
            val = float(lam @ c0)
            if _check_ir(sd, kT, lam, structure, val):
                warnings.warn(
                    "renormalisation integral diverges at low frequency; beta set to 0",
                    InfraredDivergenceWarning,
                    stacklevel=3,
                )
                beta[m, k] = 0.0
            else:
                beta[m, k] = np.exp(-0.5 * val)
    return beta


def parameter_hash(network: SiteNetwork, bath: BathSpec, dt: float, n_times: int, quad: dict) -> str:
    sd = bath.spectral_density
    payload = {
        "epsilon": network.epsilon.tolist(),
        "V": network.V.tolist(),
        "distances": None if network.distances is None else network.distances.tolist(),
        "kT": bath.kT,
        "model": type(bath.correlation_model).__name__,
        "v_ph": getattr(bath.correlation_model, "v_ph", None),
        "s0": sd.scale_continuum,
        "terms": [[t.weight, t.cutoff] for t in sd.continuum_terms],
        "norm": sd.continuum_norm,
        "mode": None if sd.mode is None else [sd.mode.weight, sd.mode.frequency, sd.mode.broadening],
        "dt": dt,
        "n_times": n_times,
        "quad": quad,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def cache_directory(explicit: Optional[str] = None) -> Optional[str]:
    return explicit or os.environ.get(CACHE_ENV)


def save_tables(path: str, tables: KernelTables) -> None:
    header = {
        "dt": tables.dt,
        "n_times": tables.n_times,
        "n_profiles": tables.structure.n_profiles,
        "n_sites": tables.beta.shape[0],
        "metadata": tables.metadata,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    digest = bytes.fromhex(tables.metadata["hash"])
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(digest)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for arr in (tables.C, tables.S, tables.beta):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_tables(path: str, expected_hash: str, structure: SpatialStructure, pairs) -> Optional[KernelTables]:
    try:
        with open(path, "rb") as fh:
            if fh.read(8) != CACHE_MAGIC:
                return None
            if fh.read(32).hex() != expected_hash:
                return None
            (hl,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hl))
            npf, nt, n = header["n_profiles"], header["n_times"], header["n_sites"]
            C = np.frombuffer(fh.read(8 * npf * nt), dtype="<f8").reshape(npf, nt).copy()
            S = np.frombuffer(fh.read(8 * npf * nt), dtype="<f8").reshape(npf, nt).copy()
            beta = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
    except (OSError, ValueError, KeyError, json.JSONDecodeError):
        return None
    return KernelTables(header["dt"], C, S, structure, beta, tuple(pairs), header["metadata"])


def build_kernel_tables(
    network: SiteNetwork,
    bath: BathSpec,
    dt: float,
    t_max: float,
    n_gl: int = 16,
    osc_fraction: float = 4.0,
    cache_dir: Optional[str] = None,
) -> KernelTables:
    """Tabulate kernel base integrals on ``[0, t_max]`` with spacing ``dt``."""
    if not dt > 0 or t_max < dt:
        raise ValueError("need dt > 0 and t_max >= dt")
    st = SpatialStructure.build(network, bath)
    n_times = int(round(t_max / dt)) + 1
    quad = {"n_gl": n_gl, "osc_fraction": osc_fraction}
    h = parameter_hash(network, bath, dt, n_times, quad)
    pairs = tuple(network.coupled_pairs())
    cdir = cache_directory(cache_dir)
    path = None
    if cdir:
        os.makedirs(cdir, exist_ok=True)
        path = os.path.join(cdir, f"kernels-{h[:24]}.bin")
        cached = load_tables(path, h, st, pairs)
        if cached is not None:
            log.debug("kernel cache hit %s", path)
            return cached
    sd = bath.spectral_density
    tm = (n_times - 1) * dt
    grid = default_grid(bath, tm, n_gl=n_gl, osc_fraction=osc_fraction)
    if sd.is_zero:
        C = np.zeros((st.n_profiles, n_times))
        S = np.zeros_like(C)
        beta = np.ones((network.n_sites,) * 2)
    else:
        C, S = base_integrals_uniform(sd, bath.kT, grid, st, dt, n_times)
        beta = _beta_matrix(st, C[:, 0], network.n_sites, sd, bath.kT)
    meta = {
        "hash": h,
        "omega_max": grid.omega_max,
        "n_nodes": grid.size,
        "n_panels": grid.n_panels,
        **quad,
    }
    tables = KernelTables(dt, C, S, st, beta, pairs, meta)
    if path:
        save_tables(path, tables)
    return tables
