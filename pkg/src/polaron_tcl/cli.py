"""Command-line front end.

Configuration files are YAML with unit-suffixed keys::

    model:
      preset: fmo4              # or epsilon_cm / V_cm / distances_nm
    bath:
      preset: fmo               # fmo | fmo_no_mode | fmo_fast, or explicit fields
      kT_cm: 200.0
    initial_state:
      site: 1                   # or amplitudes / matrix
    numerics:
      dt_fs: 0.5
      t_max_fs: 1000.0
    propagator: full

Unknown keys are rejected with the offending line number.  Every run writes
``run.yaml``, a fully resolved config that reproduces the run when fed back.
"""
from __future__ import annotations

import argparse
import copy
import os
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .bath import KernelRangeError, QuadratureError
from .dynamics import PROPAGATORS, NumericalError, PropagationConfig, Trajectory, run
from .model import (
    BathSpec,
    ContinuumTerm,
    FullyCorrelated,
    Independent,
    LorentzianMode,
    ModelError,
    PropagatingModes,
    SiteNetwork,
    SpectralDensity,
    fast_bath_variant,
    fmo4_preset,
    fmo_spectral_density,
)
from .observables import (
    coherences_csv,
    lab_coherence,
    population_spectrum,
    populations_csv,
    site_populations,
    trace_distance_analysis,
)
from .polaron import StateError, validate_density
from .rates import FoersterError, MarkovError

CACHE_ENV = "POLARON_TCL_CACHE"
EXIT_OK, EXIT_FAILED_CHECKS, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
NORMALISATION_SLACK = 1e-6


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# ---------------------------------------------------------------- YAML with marks


def _load(text: str, source: str = "<config>") -> Tuple[Any, Dict[tuple, int]]:
    """Parse YAML, returning the data and a map from key path to 1-based line."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: malformed YAML ({getattr(exc, 'problem', exc)})", mark.line + 1 if mark else None)
    if node is None:
        raise ConfigError(f"{source}: empty configuration")
    lines: Dict[tuple, int] = {}
    ctor = yaml.SafeLoader("")

    def walk(n, path):
        lines[path] = n.start_mark.line + 1
        if isinstance(n, yaml.MappingNode):
            out = {}
            for k, v in n.value:
                key = ctor.construct_object(k, deep=True)
                if key in out:
                    raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
                lines[path + (key,)] = k.start_mark.line + 1
                out[key] = walk(v, path + (key,))
            return out
        if isinstance(n, yaml.SequenceNode):
            return [walk(v, path + (i,)) for i, v in enumerate(n.value)]
        return ctor.construct_object(n, deep=True)

    return walk(node, ()), lines


class _Reader:
    def __init__(self, data, lines, path=()):
        self.data, self.lines, self.path = data, lines, path

    def line(self, *keys):
        p = self.path + keys
        while p and p not in self.lines:
            p = p[:-1]
        return self.lines.get(p)

    def fail(self, msg, *keys):
        where = ".".join(str(k) for k in self.path + keys) or "<root>"
        raise ConfigError(f"{where}: {msg}", self.line(*keys))

    def block(self, key, allowed, required=()) -> "_Reader":
        val = self.data.get(key) if isinstance(self.data, dict) else None
        if val is None:
            val = {}
        if not isinstance(val, dict):
            self.fail("expected a mapping", key)
        sub = _Reader(val, self.lines, self.path + (key,))
        sub.check_keys(allowed, required)
        return sub

    def check_keys(self, allowed, required=()):
        for k in self.data:
            if k not in allowed:
                self.fail(f"unknown key (allowed: {', '.join(sorted(allowed))})", k)
        for k in required:
            if k not in self.data:
                self.fail(f"missing required key {k!r}")

    def has(self, key):
        return key in self.data

    def get(self, key, default=None):
        return self.data.get(key, default)

    def number(self, key, default=None, positive=False, nonneg=False, integer=False):
        v = self.data.get(key, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail("expected a number", key)
        if integer and int(v) != v:
            self.fail("expected an integer", key)
        if positive and not v > 0:
            self.fail("must be positive", key)
        if nonneg and v < 0:
            self.fail("must be non-negative", key)
        if not np.isfinite(v):
            self.fail("must be finite", key)
        return int(v) if integer else float(v)

    def flag(self, key, default):
        v = self.data.get(key, default)
        if not isinstance(v, bool):
            self.fail("expected true or false", key)
        return v

    def choice(self, key, options, default=None):
        v = self.data.get(key, default)
        if v not in options:
            self.fail(f"expected one of {', '.join(map(str, options))}", key)
        return v

    def matrix(self, key, shape=None, dtype=float):
        v = self.data.get(key)
        try:
            if dtype is complex:
                a = np.array(_complex_entries(v, len(shape)), dtype=complex)
            else:
                a = np.array(v, dtype=float)
        except (TypeError, ValueError):
            self.fail("expected a numeric array", key)
        if shape is not None and a.shape != shape:
            self.fail(f"expected shape {shape}, got {a.shape}", key)
        if not np.all(np.isfinite(a)):
            self.fail("entries must be finite", key)
        return a


def _complex_entries(v, depth):
    """Leaves at ``depth`` are numbers or ``[re, im]`` pairs."""
    if depth == 0:
        if isinstance(v, list) and len(v) == 2:
            return complex(_real(v[0]), _real(v[1]))
        return complex(_real(v))
    if not isinstance(v, list):
        raise TypeError
    return [_complex_entries(x, depth - 1) for x in v]


def _real(x):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise TypeError
    return float(x)


# ---------------------------------------------------------------- config


TOP_KEYS = {"model", "bath", "initial_state", "second_initial_state", "numerics", "propagator", "compare", "spectrum", "output_dir", "provenance"}
MODEL_KEYS = {"preset", "epsilon_cm", "V_cm", "distances_nm"}
BATH_KEYS = {"preset", "kT_cm", "s0", "continuum", "continuum_norm", "mode", "correlation", "v_ph_nm_per_fs"}
STATE_KEYS = {"site", "amplitudes", "matrix"}
NUMERIC_KEYS = {"dt_fs", "t_max_fs", "n_gl", "osc_fraction", "xi_phase", "include_inhomogeneous", "secular_tol_cm", "force_beta_zero"}
SPECTRUM_KEYS = {"site", "pad", "window", "t_start_fs", "peak_fraction", "detrend"}
BATH_PRESETS = ("fmo", "fmo_no_mode", "fmo_fast")
CORRELATIONS = ("independent", "fully_correlated", "propagating_modes")


@dataclass
class RunConfig:
    network: SiteNetwork
    bath: BathSpec
    rho0: np.ndarray
    rho0_b: Optional[np.ndarray]
    numerics: PropagationConfig
    force_beta_zero: bool
    propagator: str
    compare: List[str]
    spectrum: Dict[str, Any]
    output_dir: Optional[str]
    resolved: Dict[str, Any]


def _read_model(r: _Reader) -> SiteNetwork:
    m = r.block("model", MODEL_KEYS)
    if m.has("preset"):
        for k in ("epsilon_cm", "V_cm", "distances_nm"):
            if m.has(k):
                m.fail("cannot be combined with preset", k)
        m.choice("preset", ("fmo4",))
        return fmo4_preset()[0]
    if not m.has("epsilon_cm") or not m.has("V_cm"):
        m.fail("give either preset or both epsilon_cm and V_cm")
    eps = m.matrix("epsilon_cm")
    if eps.ndim != 1:
        m.fail("expected a list of site energies", "epsilon_cm")
    n = eps.size
    V = m.matrix("V_cm", (n, n))
    d = m.matrix("distances_nm", (n, n)) if m.has("distances_nm") else None
    try:
        return SiteNetwork(eps, V, d)
    except ModelError as exc:
        m.fail(str(exc))


def _read_bath(r: _Reader) -> BathSpec:
    b = r.block("bath", BATH_KEYS)
    if b.has("preset"):
        for k in ("continuum", "continuum_norm", "mode", "s0"):
            if b.has(k):
                b.fail("cannot be combined with preset", k)
        p = b.choice("preset", BATH_PRESETS)
        sd = fmo_spectral_density(p == "fmo")
        if p == "fmo_fast":
            sd = fast_bath_variant(sd)
    else:
        s0 = b.number("s0", nonneg=True)
        if s0 is None:
            b.fail("missing s0 (or use preset)")
        terms = []
        raw = b.get("continuum", [])
        if not isinstance(raw, list):
            b.fail("expected a list", "continuum")
        for i, t in enumerate(raw):
            tr = _Reader(t, b.lines, b.path + ("continuum", i))
            if not isinstance(t, dict):
                tr.fail("expected a mapping")
            tr.check_keys({"weight", "cutoff_cm"}, ("weight", "cutoff_cm"))
            terms.append(ContinuumTerm(tr.number("weight", nonneg=True), tr.number("cutoff_cm", positive=True)))
        mode = None
        if b.get("mode") is not None:
            mr = b.block("mode", {"weight", "frequency_cm", "broadening_cm"}, ("weight", "frequency_cm", "broadening_cm"))
            mode = LorentzianMode(
                mr.number("weight", nonneg=True),
                mr.number("frequency_cm", positive=True),
                mr.number("broadening_cm", positive=True),
            )
        sd = SpectralDensity(s0, tuple(terms), mode, b.number("continuum_norm", positive=True))
    kT = b.number("kT_cm", 200.0, positive=True)
    corr = b.choice("correlation", CORRELATIONS, "independent")
    if corr == "propagating_modes":
        v = b.number("v_ph_nm_per_fs", positive=True)
        if v is None:
            b.fail("propagating_modes needs v_ph_nm_per_fs")
        cm = PropagatingModes(v)
    else:
        if b.has("v_ph_nm_per_fs"):
            b.fail("only used with correlation: propagating_modes", "v_ph_nm_per_fs")
        cm = FullyCorrelated() if corr == "fully_correlated" else Independent()
    return BathSpec(kT, sd, cm)


def _read_state(r: _Reader, key: str, n: int, required: bool = True) -> Optional[np.ndarray]:
    if not r.has(key):
        if required:
            r.fail(f"missing required block {key!r}")
        return None
    s = r.block(key, STATE_KEYS)
    given = [k for k in ("site", "amplitudes", "matrix") if s.has(k)]
    if len(given) != 1:
        s.fail("give exactly one of site, amplitudes, matrix")
    form = given[0]
    if form == "site":
        site = s.number("site", integer=True)
        if not 1 <= site <= n:
            s.fail(f"site index {site} outside 1..{n}", "site")
        rho = np.zeros((n, n), dtype=complex)
        rho[site - 1, site - 1] = 1.0
        return rho
    if form == "amplitudes":
        a = s.matrix("amplitudes", (n,), dtype=complex)
        norm = float(np.linalg.norm(a))
        if abs(norm - 1.0) > NORMALISATION_SLACK:
            s.fail(f"amplitudes have norm {norm:.9g}", "amplitudes")
        if norm != 1.0:
            warnings.warn(f"amplitudes renormalised from norm {norm!r}", stacklevel=2)
            a = a / norm
        return np.outer(a, a.conj())
    rho = s.matrix("matrix", (n, n), dtype=complex)
    try:
        return validate_density(rho)
    except StateError as exc:
        s.fail(str(exc), "matrix")


def _read_numerics(r: _Reader) -> Tuple[PropagationConfig, bool]:
    nb = r.block("numerics", NUMERIC_KEYS)
    dt = nb.number("dt_fs", 0.5, positive=True)
    t_max = nb.number("t_max_fs", 1000.0, positive=True)
    if t_max < dt:
        nb.fail("t_max_fs must be at least dt_fs", "t_max_fs")
    if abs(t_max / dt - round(t_max / dt)) > 1e-9:
        nb.fail("t_max_fs must be a multiple of dt_fs", "t_max_fs")
    cfg = PropagationConfig(
        dt=dt,
        t_max=t_max,
        include_inhomogeneous=nb.flag("include_inhomogeneous", True),
        xi_phase=nb.choice("xi_phase", ("s", "t"), "s"),
        secular_tol=nb.number("secular_tol_cm", 0.01, positive=True),
        n_gl=nb.number("n_gl", 16, positive=True, integer=True),
        osc_fraction=nb.number("osc_fraction", 4.0, positive=True),
    )
    return cfg, nb.flag("force_beta_zero", False)


def _read_spectrum(r: _Reader, n: int) -> Dict[str, Any]:
    s = r.block("spectrum", SPECTRUM_KEYS)
    site = s.number("site", 1, integer=True)
    if not 1 <= site <= n:
        s.fail(f"site index {site} outside 1..{n}", "site")
    return {
        "site": site,
        "pad": s.number("pad", 4, positive=True, integer=True),
        "window": s.choice("window", ("hann", "rect"), "hann"),
        "t_start_fs": s.number("t_start_fs", 0.0, nonneg=True),
        "peak_fraction": s.number("peak_fraction", 0.1, positive=True),
        "detrend": s.flag("detrend", True),
    }


def _resolved(network, bath, rho0, rho0_b, cfg, force0, propagator, compare, spectrum) -> Dict[str, Any]:
    sd = bath.spectral_density
    cm = bath.correlation_model
    bath_out: Dict[str, Any] = {
        "kT_cm": float(bath.kT),
        "s0": float(sd.scale_continuum),
        "continuum": [{"weight": float(t.weight), "cutoff_cm": float(t.cutoff)} for t in sd.continuum_terms],
    }
    if sd.norm is not None:
        bath_out["continuum_norm"] = float(sd.norm)
    bath_out["mode"] = (
        None
        if sd.mode is None
        else {"weight": float(sd.mode.weight), "frequency_cm": float(sd.mode.frequency), "broadening_cm": float(sd.mode.broadening)}
    )
    if isinstance(cm, PropagatingModes):
        bath_out["correlation"] = "propagating_modes"
        bath_out["v_ph_nm_per_fs"] = float(cm.v_ph)
    else:
        bath_out["correlation"] = "fully_correlated" if isinstance(cm, FullyCorrelated) else "independent"
    model = {"epsilon_cm": network.epsilon.tolist(), "V_cm": network.V.tolist()}
    if network.distances is not None:
        model["distances_nm"] = np.asarray(network.distances, dtype=float).tolist()

    def state(rho):
        return {"matrix": [[[float(z.real), float(z.imag)] for z in row] for row in rho]}

    out = {
        "model": model,
        "bath": bath_out,
        "initial_state": state(rho0),
        "numerics": {
            "dt_fs": cfg.dt,
            "t_max_fs": cfg.t_max,
            "n_gl": cfg.n_gl,
            "osc_fraction": cfg.osc_fraction,
            "xi_phase": cfg.xi_phase,
            "include_inhomogeneous": cfg.include_inhomogeneous,
            "secular_tol_cm": cfg.secular_tol,
            "force_beta_zero": force0,
        },
        "propagator": propagator,
        "spectrum": dict(spectrum),
    }
    if rho0_b is not None:
        out["second_initial_state"] = state(rho0_b)
    if compare:
        out["compare"] = list(compare)
    return out


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    data, lines = _load(text, source)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    r = _Reader(data, lines)
    r.check_keys(TOP_KEYS)
    try:
        network = _read_model(r)
        bath = _read_bath(r)
    except ModelError as exc:
        raise ConfigError(str(exc))
    n = network.n_sites
    rho0 = _read_state(r, "initial_state", n)
    rho0_b = _read_state(r, "second_initial_state", n, required=False)
    cfg, force0 = _read_numerics(r)
    propagator = r.choice("propagator", PROPAGATORS, "full")
    compare = r.get("compare", [])
    if not isinstance(compare, list) or any(c not in PROPAGATORS for c in compare):
        r.fail(f"expected a list drawn from {', '.join(PROPAGATORS)}", "compare")
    spectrum = _read_spectrum(r, n)
    out = r.get("output_dir")
    if out is not None and not isinstance(out, str):
        r.fail("expected a path", "output_dir")
    resolved = _resolved(network, bath, rho0, rho0_b, cfg, force0, propagator, compare, spectrum)
    return RunConfig(network, bath, rho0, rho0_b, cfg, force0, propagator, list(compare), spectrum, out, resolved)


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}")
    return parse_config(text, path)


# ---------------------------------------------------------------- runs


def _run(rc: RunConfig, propagator: str, rho0=None, cache=None) -> Trajectory:
    cfg = replace(rc.numerics, cache_dir=cache)
    kw = {"force_beta_zero": rc.force_beta_zero} if propagator in ("full", "hom-only") else {}
    return run(rc.network, rc.bath, rc.rho0 if rho0 is None else rho0, cfg, propagator, **kw)


def _metadata(rc: RunConfig, command: str, extra: Dict[str, Any]) -> str:
    doc = copy.deepcopy(rc.resolved)
    doc["provenance"] = {"command": command, "version": __version__, **extra}
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=None, width=1000)


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _check_finite(name: str, text: str):
    for row in text.splitlines()[1:]:
        for field in row.split(","):
            try:
                x = float(field)
            except ValueError:
                continue
            if not np.isfinite(x):
                raise NumericalError(f"non-finite value in {name}")


def _emit(out: Path, name: str, text: str):
    _check_finite(name, text)
    _write(out, name, text)


def _coherence_table(traj: Trajectory) -> Dict[Tuple[int, int], np.ndarray]:
    n = traj.n
    return {(m, k): lab_coherence(traj, (m, k)) for m in range(n) for k in range(m + 1, n)}


def cmd_simulate(rc: RunConfig, out: Path, cache) -> Dict[str, Any]:
    traj = _run(rc, rc.propagator, cache=cache)
    _emit(out, "trajectory.csv", traj.to_csv())
    _emit(out, "populations.csv", populations_csv(traj.times, site_populations(traj)))
    _emit(out, "coherences.csv", coherences_csv(traj.times, _coherence_table(traj)))
    meta = {"kernel_hash": traj.diagnostics.get("kernel_hash", "")}
    _write(out, "run.yaml", _metadata(rc, "simulate", meta))
    return {"final_populations": site_populations(traj)[-1].tolist()}


def cmd_compare(rc: RunConfig, out: Path, cache, tags: List[str]) -> Dict[str, Any]:
    if len(tags) < 2:
        raise ConfigError("compare needs at least two propagator tags")
    trajs = {t: _run(rc, t, cache=cache) for t in tags}
    times = trajs[tags[0]].times
    pops = {t: site_populations(tr) for t, tr in trajs.items()}
    n = rc.network.n_sites
    cols = np.concatenate([pops[t] for t in tags], axis=1)
    head = ["t_fs"] + [f"{t}_p{k + 1}" for t in tags for k in range(n)]
    lines = [",".join(head)]
    for i, tt in enumerate(times):
        lines.append(",".join([repr(float(tt))] + [repr(float(x)) for x in cols[i]]))
    _emit(out, "compare.csv", "\n".join(lines) + "\n")
    ref = pops[tags[0]]
    summary = ["tag,max_abs_dev,max_abs_dev_t_fs,final_abs_dev"]
    devs = {}
    for t in tags[1:]:
        d = np.abs(pops[t] - ref).max(axis=1)
        i = int(np.argmax(d))
        devs[t] = float(d.max())
        summary.append(f"{t},{float(d.max())!r},{float(times[i])!r},{float(d[-1])!r}")
    _emit(out, "compare_summary.csv", "\n".join(summary) + "\n")
    rc.resolved["compare"] = list(tags)
    _write(out, "run.yaml", _metadata(rc, "compare", {"reference": tags[0]}))
    return {"max_abs_dev": devs}


def cmd_spectrum(rc: RunConfig, out: Path, cache) -> Dict[str, Any]:
    traj = _run(rc, rc.propagator, cache=cache)
    sp = rc.spectrum
    spec = population_spectrum(
        traj.times,
        site_populations(traj)[:, sp["site"] - 1],
        pad=sp["pad"],
        t_start=sp["t_start_fs"],
        peak_fraction=sp["peak_fraction"],
        detrend_series=sp["detrend"],
        window=sp["window"],
    )
    _emit(out, "spectrum.csv", spec.to_csv())
    rows = ["nu_cm,height,fwhm_cm"]
    for p in sorted(spec.peaks, key=lambda p: -p["height"]):
        rows.append(f"{p['frequency']!r},{p['height']!r},{p['width']!r}")
    _emit(out, "peaks.csv", "\n".join(rows) + "\n")
    _write(out, "run.yaml", _metadata(rc, "spectrum", {"kernel_hash": traj.diagnostics.get("kernel_hash", "")}))
    return {"dominant": spec.dominant()}


def cmd_tracedist(rc: RunConfig, out: Path, cache) -> Dict[str, Any]:
    if rc.rho0_b is None:
        raise ConfigError("tracedist needs a second_initial_state block")
    a = _run(rc, rc.propagator, cache=cache)
    b = _run(rc, rc.propagator, rho0=rc.rho0_b, cache=cache)
    result = {}
    for tag in ("polaron", "lab"):
        rep = trace_distance_analysis(a, b, tag)
        _emit(out, f"tracedist_{tag}.csv", rep.to_csv())
        rows = ["t_start_fs,t_end_fs"] + [f"{s!r},{e!r}" for s, e in rep.intervals]
        _emit(out, f"intervals_{tag}.csv", "\n".join(rows) + "\n")
        result[tag] = len(rep.intervals)
    _write(out, "run.yaml", _metadata(rc, "tracedist", {}))
    return {"positive_intervals": result}


def cmd_validate(selected: Optional[List[int]], out: Optional[Path]) -> bool:
    from .acceptance import run_all

    results = run_all(selected)
    lines = [r.line() for r in results]
    for ln in lines:
        print(ln)
    if out is not None:
        doc = [
            {"criterion": r.number, "passed": r.passed, "checks": r.checks, "details": r.details}
            for r in results
        ]
        _write(out, "validate.yaml", yaml.safe_dump(_plain(doc), sort_keys=True))
    return all(r.passed for r in results)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polaron-tcl", description="Polaron-frame TCL exciton dynamics.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--threads", type=int, help="BLAS/FFT thread limit")
        sp.add_argument("--cache", help=f"kernel cache directory (default ${CACHE_ENV})")

    common(sub.add_parser("simulate", help="propagate one configuration"))
    cp = sub.add_parser("compare", help="run several propagators on one model")
    common(cp)
    cp.add_argument("--tags", nargs="+", help="propagator tags; first is the reference")
    common(sub.add_parser("spectrum", help="population spectrum and peak table"))
    common(sub.add_parser("tracedist", help="trace distance between two initial states"))
    vp = sub.add_parser("validate", help="run the acceptance suite")
    common(vp, config_required=False)
    vp.add_argument("--criteria", type=int, nargs="+", choices=range(1, 8), help="subset to run")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    cache = args.cache or os.environ.get(CACHE_ENV) or None
    with threadpool_limits(limits=args.threads):
        try:
            if args.command == "validate":
                return EXIT_OK if cmd_validate(args.criteria, Path(args.out) if args.out else None) else EXIT_FAILED_CHECKS
            rc = load_config(args.config)
            out = Path(args.out or rc.output_dir or ".")
            if args.command == "simulate":
                res = cmd_simulate(rc, out, cache)
            elif args.command == "compare":
                res = cmd_compare(rc, out, cache, args.tags or rc.compare)
            elif args.command == "spectrum":
                res = cmd_spectrum(rc, out, cache)
            else:
                res = cmd_tracedist(rc, out, cache)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (NumericalError, QuadratureError, KernelRangeError, MarkovError, FoersterError, FloatingPointError) as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
    print(yaml.safe_dump(_plain(res), sort_keys=True).rstrip())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
