"""Command-line front end: flat configuration files and reproducible experiment recipes.

Usage::

    lmphc SUBCOMMAND --config FILE [--seed N] [--out DIR] [--jobs N] [--echo]

Configuration files hold one ``key=value`` per line; ``#`` starts a comment.
The documented keys, defaults and meanings are in :data:`KEYS` (``lmphc
keys`` prints them).  Every output file is written atomically and listed with
its SHA-256 in ``manifest.json``.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure, 4 insufficient statistics.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STATS = 0, 2, 3, 4
SUBCOMMANDS = ("phase-diagram", "simulate", "coarse-grain", "peierls", "expand", "dobrushin",
               "compare-geometries")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line, self.key = line, key
        super().__init__(f"line {line}: {message}" if line else message)


# ---------------------------------------------------------------------------
# key table
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int | float | bool | str | choice | float_or_coex
    default: object
    doc: str
    lo: float | None = None
    hi: float | None = None
    lo_open: bool = False
    hi_open: bool = False
    choices: tuple = ()


def _k(*args, **kw) -> Key:
    return Key(*args, **kw)


KEYS: tuple[Key, ...] = (
    # model
    _k("d", "choice", 2, "spatial dimension", choices=(1, 2, 3)),
    _k("gamma", "float", 0.25, "Kac scaling parameter", lo=0, hi=1, lo_open=True, hi_open=True),
    _k("R", "float", 0.0, "hard-core radius", lo=0),
    _k("beta", "float", 1.9, "inverse temperature", lo=0),
    _k("lambda", "float_or_coex", 0.0,
       "chemical potential, or 'coex' for the mean-field coexistence value at beta"),
    _k("alpha", "float", 0.25, "small-cube exponent: ell_- = gamma^-(1-alpha)", lo=0, hi=1,
       lo_open=True, hi_open=True),
    _k("zeta", "float", 0.1, "accuracy parameter of the phase windows", lo=0, hi=1,
       lo_open=True, hi_open=True),
    _k("a", "float", 0.0, "accuracy exponent; when positive zeta = gamma^a replaces zeta", lo=0),
    _k("quad_factor", "int", 8, "quadrature nodes per Kac range", lo=2),
    _k("kac", "bool", True, "Kac interaction on"),
    _k("hamiltonian", "choice", "functional", "energy convention",
       choices=("functional", "multibody")),
    _k("virial_order", "choice", 2, "virial truncation of the mean-field entropy", choices=(2, 3)),
    # domain and chain
    _k("domain", "choice", "box", "box (with empty exterior) or torus", choices=("box", "torus")),
    _k("n_plus", "int", 2, "domain side in large cubes", lo=1),
    _k("constraint", "choice", "none", "diluted Theta constraint on the box frame",
       choices=("none", "plus", "minus")),
    _k("seed", "int", 0, "master seed", lo=0),
    _k("steps", "int", 100_000, "Monte Carlo proposals per chain", lo=0),
    _k("burn_in", "int", 10_000, "discarded proposals before recording", lo=0),
    _k("record_every", "int", 1000, "proposals between recorded samples", lo=1),
    _k("snapshot_every", "int", 0, "proposals between snapshots (0: none)", lo=0),
    _k("chains", "int", 1, "independent chains (simulate)", lo=1),
    _k("seeds", "int", 1, "independent replicas (peierls, compare-geometries)", lo=1),
    _k("max_particles", "int", 0, "particle cap per chain (0: unlimited)", lo=0),
    # phase diagram
    _k("beta_min", "float", 0.0, "first beta of the sweep (0: 1.02 beta_c)", lo=0),
    _k("beta_max", "float", 0.0, "last beta of the sweep (0: 1.5 beta_c)", lo=0),
    _k("beta_points", "int", 20, "number of betas in the sweep", lo=2),
    # coarse graining and Peierls
    _k("snapshot", "str", "", "snapshot file (coarse-grain, peierls)"),
    _k("contour_index", "int", 0, "which extracted contour to study (peierls)", lo=0),
    _k("mc_samples", "int", 2000, "Monte Carlo samples (peierls, expand)", lo=1),
    _k("thin", "int", 200, "proposals between Peierls samples", lo=1),
    _k("level", "float", 0.95, "confidence level of intervals", lo=0, hi=1, lo_open=True,
       hi_open=True),
    # cluster expansion
    _k("cubes", "str", "0,0", "small cubes 'i,j;k,l;...' of the expanded system (expand)"),
    _k("counts", "str", "2", "occupation numbers 'n1,n2,...' of those cubes (expand)"),
    _k("order", "choice", 2, "truncation order in links (expand)", choices=(1, 2)),
    _k("batches", "int", 10, "batches for error bars", lo=2),
    _k("compare_direct", "bool", False, "also estimate h^p by direct sampling (expand)"),
    # Dobrushin
    _k("lattice_sites", "int", 6, "probe lattice side in small cubes (dobrushin)", lo=2),
    _k("probes", "int", 3, "probe values per perturbed site (dobrushin)", lo=2),
    _k("phase", "choice", "plus", "restricted-ensemble phase (dobrushin)",
       choices=("plus", "minus")),
    # geometry comparison
    _k("torus_factor", "int", 3, "torus side over box side (compare-geometries)", lo=3),
    _k("out", "str", "lmphc_out", "output directory"),
)
KEY_INDEX = {k.name: k for k in KEYS}


def _parse_value(key: Key, raw: str, line: int | None):
    def fail(msg):
        raise ConfigError(f"{key.name}: {msg}", line, key.name)

    raw = raw.strip()
    if key.kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        fail(f"expected a boolean, got {raw!r}")
    if key.kind == "str":
        return raw
    if key.kind == "float_or_coex" and raw.lower() == "coex":
        return "coex"
    if key.kind == "choice":
        for c in key.choices:
            if str(c) == raw:
                return c
        fail(f"expected one of {', '.join(map(str, key.choices))}, got {raw!r}")
    try:
        value = int(raw) if key.kind == "int" else float(raw)
    except ValueError:
        fail(f"expected {'an integer' if key.kind == 'int' else 'a number'}, got {raw!r}")
    if key.kind != "int" and not math.isfinite(value):
        fail("value must be finite")
    if key.lo is not None and (value < key.lo or (key.lo_open and value == key.lo)):
        fail(f"{value} is out of range ({'>' if key.lo_open else '>='} {key.lo} required)")
    if key.hi is not None and (value > key.hi or (key.hi_open and value == key.hi)):
        fail(f"{value} is out of range ({'<' if key.hi_open else '<='} {key.hi} required)")
    return value


def _format_value(key: Key, value) -> str:
    if key.kind == "bool":
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: every key of :data:`KEYS` with its value."""

    values: tuple  # ((name, value), ...) in KEYS order

    def __getattr__(self, name):
        for k, v in object.__getattribute__(self, "values"):
            if k == name:
                return v
        raise AttributeError(name)

    def as_dict(self) -> dict:
        return dict(self.values)

    def replace(self, **changes) -> "RunConfig":
        d = self.as_dict()
        for k, v in changes.items():
            if k not in KEY_INDEX:
                raise ConfigError(f"unknown key {k!r}", key=k)
            d[k] = v
        return _validated(d, {})

    @property
    def meanfield(self):
        from .meanfield import find_coexistence
        return find_coexistence(self.beta, self.R, self.d, self.virial_order)

    @property
    def params(self):
        from .model.params import ModelParams
        lam = self.meanfield.lambda_coex if self.lam_is_coex else self.as_dict()["lambda"]
        kw = dict(d=self.d, gamma=self.gamma, hc_radius=self.R, beta=self.beta, lam=float(lam),
                  alpha=self.alpha, quad_factor=self.quad_factor, kac=self.kac,
                  hamiltonian=self.hamiltonian)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # the ordering caveat is part of the echo instead
            if self.a > 0:
                return ModelParams(a=self.a, **kw)
            return ModelParams(**kw).with_zeta(self.zeta)

    @property
    def lam_is_coex(self) -> bool:
        return self.as_dict()["lambda"] == "coex"

    def echo(self) -> str:
        """Canonical text: every key in documented order, then the derived scales as comments."""
        lines = [f"{k}={_format_value(KEY_INDEX[k], v)}" for k, v in self.values]
        p = self.params
        raw_ratio = p.gamma ** (-2.0 * p.alpha)
        lines.append(f"# derived: ell_minus={p.ell_minus!r} ell_plus={p.ell_plus!r} "
                     f"scale_ratio={p.scale_ratio} zeta={p.zeta!r} side={self.n_plus * p.ell_plus!r}")
        if abs(raw_ratio - p.scale_ratio) > 1e-9:
            lines.append(f"# snapped: ell_plus/ell_minus = gamma^(-2 alpha) = {raw_ratio!r} "
                         f"rounded to {p.scale_ratio}")
        if p.a >= p.alpha:
            lines.append(f"# note: scale ordering alpha >> a does not hold (a={p.a!r})")
        if self.lam_is_coex:
            lines.append(f"# derived: lambda={p.lam!r}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.echo().encode()).hexdigest()


def _validated(values: dict, lines: dict) -> RunConfig:
    from .model.params import ParameterError

    cfg = RunConfig(tuple((k.name, values[k.name]) for k in KEYS))
    if cfg.R >= 1.0 / cfg.gamma:
        raise ConfigError(f"R: {cfg.R} must be below 1/gamma = {1 / cfg.gamma}", lines.get("R"), "R")
    if cfg.lam_is_coex or cfg.constraint != "none":
        try:
            cfg.meanfield
        except (ValueError, RuntimeError) as exc:
            raise ConfigError(f"beta: no mean-field coexistence ({exc})", lines.get("beta"),
                              "beta") from None
    try:
        p = cfg.params
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    # restricted ensembles must keep the two phases apart
    try:
        from .meanfield import find_beta_c
        coexisting = cfg.beta > find_beta_c(cfg.R, cfg.d, cfg.virial_order)
        sol = cfg.meanfield if coexisting else None
    except (ValueError, RuntimeError):
        sol = None  # outside the mean-field solver's range: nothing to cross-check
    if sol is not None and p.zeta >= (sol.rho_plus - sol.rho_minus) / 2:
        raise ConfigError(
            f"zeta: {p.zeta!r} >= (rho_+ - rho_-)/2 = {(sol.rho_plus - sol.rho_minus) / 2!r} "
            f"at beta={cfg.beta}, R={cfg.R}; the phase windows would overlap",
            lines.get("zeta", lines.get("a")), "zeta")
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate a flat ``key=value`` configuration."""
    values = {k.name: k.default for k in KEYS}
    lines: dict = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", no)
        name, _, value = line.partition("=")
        name = name.strip()
        if name not in KEY_INDEX:
            close = [k for k in KEY_INDEX if k.lower() == name.lower()]
            hint = f" (did you mean {close[0]!r}?)" if close else ""
            raise ConfigError(f"unknown key {name!r}{hint}", no, name)
        if name in lines:
            raise ConfigError(f"duplicate key {name!r} (first on line {lines[name]})", no, name)
        values[name] = _parse_value(KEY_INDEX[name], value, no)
        lines[name] = no
    return _validated(values, lines)


def keys_reference() -> str:
    """The documented key list as a commented default configuration (``lmphc keys``)."""
    rows = [f"{k.name + '=' + _format_value(k, k.default):<30s} # {k.doc}" for k in KEYS]
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# seeds and files
# ---------------------------------------------------------------------------
MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """One output of the splitmix64 generator whose state has just been advanced to ``state``."""
    z = state & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seed(seed: int, job: int) -> int:
    """Seed of job ``job``: the ``job+1``-th splitmix64 output of a stream seeded by ``seed``."""
    return splitmix64(seed + (job + 1) * GOLDEN64)


class Outputs:
    """Collects atomically written files for the manifest."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> Path:
        from .model.snapshot import atomic_write_text
        path = self.root / name
        try:
            atomic_write_text(path, text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def adopt(self, name: str) -> None:
        """Register a file written by a library routine."""
        self.files[name] = hashlib.sha256((self.root / name).read_bytes()).hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"lmphc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)
    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_phase_diagram(cfg: RunConfig, out: Outputs, jobs: int) -> dict:
    from .meanfield import PHASE_DIAGRAM_COLUMNS, critical_point, find_beta_0, phase_diagram
    beta_c, rho_c = critical_point(cfg.R, cfg.d, cfg.virial_order)
    lo = cfg.beta_min or 1.02 * beta_c
    hi = cfg.beta_max or 1.5 * beta_c
    betas = np.linspace(lo, hi, cfg.beta_points)
    rows = phase_diagram(betas, cfg.R, cfg.d, cfg.virial_order)
    out.write("phase_diagram.csv", _csv(PHASE_DIAGRAM_COLUMNS,
                                        [[r[c] for c in PHASE_DIAGRAM_COLUMNS] for r in rows]))
    b0 = find_beta_0(cfg.R, cfg.d, cfg.virial_order)
    summary = {"beta_c": beta_c, "rho_c": rho_c, "beta_0": b0.beta_0, "beta_0_capped": b0.capped,
               "rows": len(rows)}
    out.write("summary.json", _json(summary))
    return summary


def _domain(cfg: RunConfig, params):
    from .model.domain import Domain
    return Domain.from_params(params, cfg.domain, n_plus=cfg.n_plus)


def _constraint(cfg: RunConfig, params):
    from .sampler.state import DilutedConstraint
    if cfg.constraint == "none":
        return None
    return DilutedConstraint.from_meanfield(1 if cfg.constraint == "plus" else -1, cfg.meanfield,
                                            params)


def _simulate_chain(args):
    cfg_text, job, root = args
    from .sampler.run import run, snapshot_text
    from .sampler.state import GCMCSampler
    cfg = parse_config(cfg_text)
    params = cfg.params
    domain = _domain(cfg, params)
    con = _constraint(cfg, params)
    seed = child_seed(cfg.seed, job)
    initial = con.initial_configuration(params, domain) if con is not None else None
    sampler = GCMCSampler(params, domain, seed=seed, initial=initial, constraint=con,
                          max_particles=cfg.max_particles or None)
    sub = Path(root) / f"chain_{job:03d}"
    summary = run(params, domain, cfg.steps, seed=seed, record_every=cfg.record_every,
                  snapshot_every=cfg.snapshot_every, out_dir=sub, sampler=sampler)
    final = snapshot_text(sampler, cfg.steps)
    return job, seed, summary, final


def cmd_simulate(cfg: RunConfig, out: Outputs, jobs: int) -> dict:
    tasks = [(cfg.echo(), j, str(out.root)) for j in range(cfg.chains)]
    if jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(min(jobs, cfg.chains)) as pool:
            results = list(pool.map(_simulate_chain, tasks))
    else:
        results = [_simulate_chain(t) for t in tasks]
    chains = []
    for job, seed, s, final in results:
        name = f"chain_{job:03d}"
        out.adopt(f"{name}/timeseries.csv")
        for _, _, path in s.snapshots:
            out.adopt(f"{name}/{Path(path).name}")
        out.write(f"{name}/final_snapshot.txt", final)
        chains.append({"job": job, "seed": seed, "acceptance": s.acceptance,
                       "mean_N": float(np.mean(s.n_series)) if len(s.n_series) else 0.0,
                       "tau_int": s.tau_int, "max_drift": s.max_drift,
                       "final_snapshot_sha256": hashlib.sha256(final.encode()).hexdigest()})
    summary = {"chains": chains}
    out.write("summary.json", _json(summary))
    return summary


def _coarse_grain(cfg: RunConfig):
    from .coarse_grain import eta_field, extract_contours, theta_fields
    from .model.snapshot import read_snapshot
    if not cfg.snapshot:
        raise ConfigError("snapshot: this subcommand needs a snapshot file", key="snapshot")
    params = cfg.params
    path = Path(cfg.snapshot)
    if not path.exists():
        raise ConfigError(f"snapshot: no such file {path}", key="snapshot")
    q = read_snapshot(path, params)
    sol = cfg.meanfield
    eta = eta_field(q, params, sol)
    theta, Theta = theta_fields(eta, params.scale_ratio)
    return params, sol, eta, theta, Theta, extract_contours(Theta, eta.values, params.scale_ratio)


def cmd_coarse_grain(cfg: RunConfig, out: Outputs, jobs: int) -> dict:
    from .coarse_grain import dump_contours, field_csv
    _, _, eta, theta, Theta, contours = _coarse_grain(cfg)
    out.write("contours.json", dump_contours(contours))
    for name, f in (("eta", eta), ("theta", theta), ("Theta", Theta)):
        out.write(f"{name}.csv", field_csv(f.values))
    summary = {"contours": len(contours), "N_gamma": [c.n_gamma for c in contours]}
    out.write("summary.json", _json(summary))
    return summary


def cmd_peierls(cfg: RunConfig, out: Outputs, jobs: int) -> dict:
    from .coarse_grain import peierls_statistics
    params, sol, *_, contours = _coarse_grain(cfg)
    if cfg.contour_index >= len(contours):
        raise ConfigError(f"contour_index: the snapshot has {len(contours)} contours",
                          key="contour_index")
    contour = contours[cfg.contour_index]
    rows = []
    for j in range(cfg.seeds):
        seed = child_seed(cfg.seed, j)
        est = peierls_statistics(contour, contour.sign, params, sol, n_samples=cfg.mc_samples,
                                 thin=cfg.thin, burn_in=cfg.burn_in, seed=seed, level=cfg.level,
                                 max_support=max(4, contour.n_gamma))
        rows.append([j, seed, est.ratio, est.ratio_ci[0], est.ratio_ci[1], est.hits_numerator,
                     est.hits_denominator, est.n_eff, est.weight])
    out.write("peierls.csv", _csv(["job", "seed", "ratio", "ci_lo", "ci_hi", "hits_numerator",
                                   "hits_denominator", "n_eff", "weight"], rows))
    lo = max(r[3] for r in rows)
    hi = min(r[4] for r in rows)
    summary = {"N_gamma": contour.n_gamma, "sign": contour.sign, "seeds": cfg.seeds,
               "intervals_overlap": bool(lo <= hi)}
    out.write("summary.json", _json(summary))
    return summary


def _parse_cubes(cfg: RunConfig):
    try:
        cubes = [[int(v) for v in c.split(",")] for c in cfg.cubes.split(";") if c.strip()]
        counts = [int(v) for v in cfg.counts.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("cubes/counts: expected integers like cubes=0,0;1,0 counts=2,1",
                          key="cubes") from None
    if any(len(c) != cfg.d for c in cubes):
        raise ConfigError(f"cubes: every cube needs {cfg.d} indices", key="cubes")
    if len(cubes) != len(counts) or any(n < 0 for n in counts):
        raise ConfigError("counts: one non-negative count per cube is required", key="counts")
    return cubes, counts


def cmd_expand(cfg: RunConfig, out: Outputs, jobs: int) -> dict:
    from .cluster_exp import truncated_hp
    from .effective_ham import DensityConfig, h_p_direct
    cubes, counts = _parse_cubes(cfg)
    rho = DensityConfig(cubes, counts)
    params = cfg.params
    res = truncated_hp(rho, None, params, order=cfg.order, n_samples=cfg.mc_samples,
                       seed=child_seed(cfg.seed, 0), batches=cfg.batches)
    out.write("expansion.csv", res.report_csv())
    summary = {"value": res.value, "sigma": res.sigma, "discarded_bound": res.discarded_bound,
               "order": res.order}
    if cfg.compare_direct:
        est = h_p_direct(rho, None, params, n_samples=cfg.mc_samples, seed=child_seed(cfg.seed, 1))
        gap = abs(est.value - res.value)
        summary["direct"] = {"value": est.value, "sigma": est.sigma,
                             "agrees": bool(gap <= 3 * math.hypot(est.sigma, res.sigma)
                                            + res.discarded_bound)}
    out.write("summary.json", _json(summary))
    return summary


def cmd_dobrushin(cfg: RunConfig, out: Outputs, jobs: int) -> dict:
    from .dobrushin import DobrushinContext, restricted_window, uniqueness_check
    from .effective_ham import DensityConfig
    from .meanfield import find_beta_c, unique_minimizer
    params = cfg.params
    if cfg.beta > find_beta_c(cfg.R, cfg.d, cfg.virial_order):
        sol = cfg.meanfield
        rho_s = sol.rho_plus if cfg.phase == "plus" else sol.rho_minus
    else:
        rho_s = unique_minimizer(params.lam, cfg.beta, cfg.R, cfg.d, cfg.virial_order)
    try:
        window = restricted_window(params, float(rho_s))
    except ValueError:
        raise ConfigError(
            f"zeta: the window ell_-^d (rho ± zeta) around rho={rho_s!r} holds no integer "
            f"(ell_-^d = {params.ell_minus**params.d!r}); increase zeta or alpha", key="zeta") from None
    n0 = int(np.clip(round(rho_s * params.ell_minus**params.d), *window))
    lattice = np.array(list(np.ndindex(*(cfg.lattice_sites,) * cfg.d)))
    ctx = DobrushinContext(DensityConfig(lattice, np.full(len(lattice), n0)), window,
                           n_probes=cfg.probes)
    rep = uniqueness_check(lattice, params, ctx, jobs=jobs)
    out.write("coupling.json", rep.to_json())
    summary = {"u": rep.u, "verdict": rep.verdict, "window": list(window), "centre_count": n0}
    out.write("summary.json", _json(summary))
    return summary


def cmd_compare_geometries(cfg: RunConfig, out: Outputs, jobs: int) -> dict:
    from .dobrushin import compare_geometries
    seeds = [child_seed(cfg.seed, j) for j in range(cfg.seeds)]
    res = compare_geometries(cfg.params, cfg.n_plus, seeds=seeds, n_steps=cfg.steps,
                             record_every=cfg.record_every, burn_in=cfg.burn_in,
                             torus_factor=cfg.torus_factor, n_batches=cfg.batches,
                             max_particles=cfg.max_particles or None)
    out.write("decay.csv", res.to_csv())
    summary = {"fit": None if res.fit is None else {"c1": res.fit.c1, "c2": res.fit.c2},
               "upper_bound": res.upper_bound, "noise_dominated": res.noise_dominated}
    out.write("summary.json", _json(summary))
    return summary


COMMANDS = {
    "phase-diagram": cmd_phase_diagram, "simulate": cmd_simulate,
    "coarse-grain": cmd_coarse_grain, "peierls": cmd_peierls, "expand": cmd_expand,
    "dobrushin": cmd_dobrushin, "compare-geometries": cmd_compare_geometries,
}


def execute(command: str, cfg: RunConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run one subcommand and write its manifest; returns the command summary."""
    out = Outputs(Path(out_dir or cfg.out))
    try:
        out.root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out.root}: {exc.strerror or exc}") from exc
    out.write("config.txt", cfg.echo())
    summary = COMMANDS[command](cfg, out, jobs)
    manifest = {"command": command, "config_sha256": cfg.digest(), "seed": cfg.seed,
                "versions": _versions(), "files": dict(sorted(out.files.items()))}
    out.write("manifest.json", _json(manifest))
    return summary


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def _exit_code(exc: BaseException) -> int:
    from .cluster_exp import GuardError
    from .coarse_grain import InsufficientStatistics as PeierlsStats
    from .coarse_grain.contours import ContourBoundaryError, ContourGeometryError
    from .dobrushin import InsufficientStatistics as GeometryStats
    from .effective_ham import EstimateError, RejectionError
    from .meanfield import BracketError, NoTransitionError
    from .model.params import ParameterError
    from .sampler.run import EnergyDriftError
    if isinstance(exc, OSError):
        return 1
    if isinstance(exc, (PeierlsStats, GeometryStats, EstimateError)):
        return EXIT_STATS
    if isinstance(exc, (ConfigError, ParameterError, GuardError)):
        return EXIT_CONFIG
    if isinstance(exc, (FloatingPointError, BracketError, NoTransitionError, RejectionError,
                        EnergyDriftError, ContourBoundaryError, ContourGeometryError,
                        ArithmeticError, ValueError, RuntimeError)):
        return EXIT_NUMERIC
    return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lmphc", description="LMP hard-core model experiments")
    ap.add_argument("command", choices=SUBCOMMANDS + ("keys",))
    ap.add_argument("--config", help="key=value configuration file")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    ap.add_argument("--echo", action="store_true", help="print the validated config and stop")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "keys":
        sys.stdout.write(keys_reference())
        return EXIT_OK
    try:
        text = Path(args.config).read_text() if args.config else ""
    except OSError as exc:
        print(f"error: cannot read config {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed: must be non-negative", key="seed")
            cfg = cfg.replace(seed=args.seed)
        if args.echo:
            sys.stdout.write(cfg.echo())
            return EXIT_OK
        summary = execute(args.command, cfg, args.out, max(1, args.jobs))
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = _exit_code(exc)
        if code == 1 and not isinstance(exc, OSError):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code
    sys.stdout.write(_json(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
