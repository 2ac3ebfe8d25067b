"""Lab-frame readout of polaron-frame trajectories."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks, peak_widths

from .dynamics import Trajectory
from .model import C_CM_PER_FS

DERIVATIVE_THRESHOLD = 1e-6
MIN_SPECTRUM_SAMPLES = 128


class ObservableError(ValueError):
    pass


def site_populations(traj: Trajectory) -> np.ndarray:
    """Exact site populations, shape ``(T, N)``."""
    return np.real(np.einsum("tmm->tm", traj.rho_site))


def lab_coherence(traj: Trajectory, pair: Tuple[int, int]) -> np.ndarray:
    """Zeroth-order lab-frame ``<sigma_m^+ sigma_n^->(t)``.

    With ``tr(|m><n| rho) = rho_nm`` this is
    ``beta_mn (rho~_nm(t) - rho~_nm(0)) + rho_nm(0)``.
    """
    m, n = pair
    if m == n:
        raise ObservableError("lab_coherence needs m != n")
    b = traj.frame.beta[m, n]
    r = traj.rho_site[:, n, m]
    return b * r + traj.initial.rho0_lab[n, m] - b * traj.initial.rho0_polaron[n, m]


def lab_density(traj: Trajectory) -> np.ndarray:
    """Lab-frame site density: exact diagonal, zeroth-order off-diagonals."""
    rs = traj.rho_site
    n = traj.n
    beta = traj.frame.beta.copy()
    np.fill_diagonal(beta, 1.0)
    off = beta[None] * (rs - traj.initial.rho0_polaron[None]) + traj.initial.rho0_lab[None]
    out = off.copy()
    idx = np.arange(n)
    out[:, idx, idx] = rs[:, idx, idx]
    return out


def eigen_populations(traj: Trajectory, frame_tag: str = "polaron") -> np.ndarray:
    """Populations of the renormalised eigenstates in either frame."""
    if frame_tag == "polaron":
        return np.real(np.einsum("taa->ta", traj.rho))
    if frame_tag == "lab":
        u = traj.frame.u
        r = np.einsum("ma,tmn,nb->tab", u, lab_density(traj), u)
        return np.real(np.einsum("taa->ta", r))
    raise ValueError("frame_tag must be 'polaron' or 'lab'")


@dataclass
class NonMarkovReport:
    times: np.ndarray
    D: np.ndarray
    dDdt: np.ndarray
    intervals: List[Tuple[float, float]]
    frame_tag: str
    threshold: float = DERIVATIVE_THRESHOLD

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_fs", "D", "dD_dt_per_fs"])
        for row in zip(self.times, self.D, self.dDdt):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


def trace_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``0.5 * sum of singular values of (a - b)`` over leading axes."""
    return 0.5 * np.linalg.svd(a - b, compute_uv=False).sum(axis=-1)


def positive_intervals(times, deriv, threshold=DERIVATIVE_THRESHOLD) -> List[Tuple[float, float]]:
    pos = deriv > threshold
    out = []
    i = 0
    n = len(pos)
    while i < n:
        if pos[i]:
            j = i
            while j + 1 < n and pos[j + 1]:
                j += 1
            out.append((float(times[i]), float(times[j])))
            i = j + 1
        else:
            i += 1
    return out


def trace_distance_analysis(
    traj_a: Trajectory,
    traj_b: Trajectory,
    frame_tag: str = "polaron",
    threshold: float = DERIVATIVE_THRESHOLD,
) -> NonMarkovReport:
    if traj_a.times.shape != traj_b.times.shape or not np.allclose(traj_a.times, traj_b.times):
        raise ObservableError("trajectories do not share a time grid")
    if traj_a.propagator != traj_b.propagator:
        raise ObservableError("trajectories come from different propagators")
    if frame_tag == "polaron":
        ra, rb = traj_a.rho, traj_b.rho
    elif frame_tag == "lab":
        ra, rb = lab_density(traj_a), lab_density(traj_b)
    else:
        raise ValueError("frame_tag must be 'polaron' or 'lab'")
    D = trace_distance(ra, rb)
    dD = np.gradient(D, traj_a.times)
    return NonMarkovReport(traj_a.times, D, dD, positive_intervals(traj_a.times, dD, threshold), frame_tag, threshold)


@dataclass
class Spectrum:
    frequencies: np.ndarray  # cm^-1
    magnitude: np.ndarray
    peaks: List[dict] = field(default_factory=list)
    bin_width: float = 0.0

    def dominant(self) -> Optional[dict]:
        return max(self.peaks, key=lambda p: p["height"]) if self.peaks else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["nu_cm", "magnitude"])
        for f, m in zip(self.frequencies, self.magnitude):
            w.writerow([repr(float(f)), repr(float(m))])
        return buf.getvalue()


def _baseline(t, a, tau, c):
    return a * np.exp(-t / tau) + c


def detrend(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Remove a fitted ``a exp(-t/tau) + c`` baseline (mean removal on fit failure)."""
    span = t[-1] - t[0]
    p0 = (y[0] - y[-1], max(span / 3.0, 1e-9), y[-1])
    try:
        with np.errstate(over="ignore"):
            p, _ = curve_fit(_baseline, t - t[0], y, p0=p0, maxfev=20000)
        base = _baseline(t - t[0], *p)
        if np.all(np.isfinite(base)):
            return y - base
    except (RuntimeError, ValueError):
        pass
    return y - y.mean()


def population_spectrum(
    t: np.ndarray,
    y: np.ndarray,
    pad: int = 4,
    t_start: float = 0.0,
    peak_fraction: float = 0.1,
    detrend_series: bool = True,
    window: str = "hann",
) -> Spectrum:
    """Magnitude spectrum of a population series on a uniform grid (cm^-1 axis).

    ``window`` is ``'hann'`` or ``'rect'``.
    """
    if window not in ("hann", "rect"):
        raise ValueError("window must be 'hann' or 'rect'")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = t >= t_start
    t, y = t[sel], y[sel]
    if t.size < MIN_SPECTRUM_SAMPLES:
        raise ObservableError(f"series has {t.size} samples; at least {MIN_SPECTRUM_SAMPLES} needed")
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
        raise ObservableError("time grid is not uniform")
    x = detrend(t, y) if detrend_series else y - y.mean()
    if window == "hann":
        x = x * np.hanning(x.size)
    n = pad * x.size
    mag = np.abs(np.fft.rfft(x, n))
    # cycles per fs -> cm^-1
    freqs = np.fft.rfftfreq(n, dt) / C_CM_PER_FS
    peaks = []
    if mag.max() > 0:
        idx, _ = find_peaks(mag, height=peak_fraction * mag.max())
        if idx.size:
            widths = peak_widths(mag, idx, rel_height=0.5)[0] * (freqs[1] - freqs[0])
            peaks = [
                {"frequency": float(freqs[i]), "height": float(mag[i]), "width": float(wd)}
                for i, wd in zip(idx, widths)
            ]
    return Spectrum(freqs, mag, peaks, float(freqs[1] - freqs[0]))


def populations_csv(times, pops, prefix: str = "p") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_fs"] + [f"{prefix}{k + 1}" for k in range(pops.shape[1])])
    for t, row in zip(times, pops):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    return buf.getvalue()


def coherences_csv(times, coh: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = sorted(coh)
    head = ["t_fs"]
    for m, n in keys:
        head += [f"re_c{m + 1}{n + 1}", f"im_c{m + 1}{n + 1}"]
    w.writerow(head)
    for i, t in enumerate(times):
        row = [repr(float(t))]
        for k in keys:
            row += [repr(float(coh[k][i].real)), repr(float(coh[k][i].imag))]
        w.writerow(row)
    return buf.getvalue()
