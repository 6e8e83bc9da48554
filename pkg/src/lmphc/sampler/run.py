"""Trajectory driver, autocorrelation estimate and detailed-balance audit."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model.domain import Domain, ParticleConfiguration
from ..model.grid import deposit, pad3
from ..model.params import ModelParams
from ..model.snapshot import atomic_write_text, format_snapshot
from .state import MOVE_NAMES, DilutedConstraint, GCMCSampler


class EnergyDriftError(RuntimeError):
    """Running and recomputed energies disagree beyond tolerance."""


def integrated_autocorrelation(series, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window.

    ``tau = 1/2 + sum_{t=1}^{W} rho(t)`` with the smallest ``W >= c * tau(W)``.
    A constant series returns ``0.5``.
    """
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 2:
        return 0.5
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return 0.5
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conj(f), size)[:n] / (n * var)
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return float(max(tau, 0.5))


@dataclass
class RunSummary:
    """Time series and bookkeeping of one chain."""

    seed: int
    n_steps: int
    steps: np.ndarray
    n_series: np.ndarray
    h_series: np.ndarray
    acceptance: dict
    acceptance_series: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (step, sha256, path or None)
    final_positions: np.ndarray | None = None
    max_drift: float = 0.0
    tau_int: float = 0.5

    @property
    def snapshot_hashes(self) -> list[str]:
        return [h for _, h, _ in self.snapshots]

    def write_timeseries(self, path) -> None:
        rows = ["step,N,H," + ",".join(f"acc_{m}" for m in MOVE_NAMES)]
        for k, (s, n, h) in enumerate(zip(self.steps, self.n_series, self.h_series)):
            acc = self.acceptance_series[k] if k < len(self.acceptance_series) else {}
            rows.append(f"{s},{n},{h:.17g}," + ",".join(f"{acc.get(m, float('nan')):.6g}"
                                                         for m in MOVE_NAMES))
        atomic_write_text(path, "\n".join(rows) + "\n")


def snapshot_text(sampler: GCMCSampler, step: int) -> str:
    q = ParticleConfiguration(sampler.positions, sampler.domain, sampler.params, check=False)
    return format_snapshot(q, sampler.seed, {"step": step})


def run(params: ModelParams, domain: Domain, n_steps: int, seed: int = 0,
        constraint: DilutedConstraint | None = None, initial=None,
        record_every: int = 1000, snapshot_every: int = 0, audit_every: int = 100_000,
        out_dir=None, drift_tol: float = 1e-9, sampler: GCMCSampler | None = None,
        **sampler_kw) -> RunSummary:
    """Run one chain for ``n_steps`` proposals.

    With a constraint and no ``initial`` configuration the chain starts from
    the constraint's lattice-like configuration.  Every ``audit_every`` steps
    the running energy is compared with a full recomputation; a relative
    mismatch above ``drift_tol`` raises :class:`EnergyDriftError`.
    """
    if sampler is None:
        if initial is None and constraint is not None:
            initial = constraint.initial_configuration(params, domain)
        sampler = GCMCSampler(params, domain, seed=seed, initial=initial, constraint=constraint,
                              **sampler_kw)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    record_every = max(1, int(record_every))
    steps, ns, hs, accs, snaps = [], [], [], [], []
    max_drift = 0.0
    done = 0
    checkpoints = {record_every, audit_every, snapshot_every} - {0}
    while done < n_steps:
        nxt = min(n_steps, min((done // c + 1) * c for c in checkpoints))
        sampler.step(nxt - done)
        done = nxt
        if audit_every and (done % audit_every == 0 or done == n_steps):
            rep = sampler.audit()
            max_drift = max(max_drift, rep["relative_drift"])
            if rep["relative_drift"] > drift_tol or not rep["admissible"]:
                raise EnergyDriftError(f"audit failed at step {done}: {rep}")
        if done % record_every == 0 or done == n_steps:
            steps.append(done)
            ns.append(sampler.n)
            hs.append(sampler.running_energy)
            accs.append(sampler.acceptance_rates())
        if snapshot_every and done % snapshot_every == 0:
            text = snapshot_text(sampler, done)
            digest = hashlib.sha256(text.encode()).hexdigest()
            path = None
            if out is not None:
                path = out / f"snapshot_{done:012d}.txt"
                atomic_write_text(path, text)
            snaps.append((done, digest, path))
    summary = RunSummary(seed, n_steps, np.array(steps), np.array(ns), np.array(hs),
                         sampler.acceptance_rates(), accs, snaps, sampler.positions, max_drift,
                         integrated_autocorrelation(ns))
    if out is not None:
        summary.write_timeseries(out / "timeseries.csv")
    return summary


# ---------------------------------------------------------------------------
# detailed balance
# ---------------------------------------------------------------------------
@dataclass
class BalanceReport:
    n_trials: int
    n_evaluated: int
    max_violation: float
    worst: dict | None
    tolerance: float = 1e-8

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance


def _weights(s: GCMCSampler, field_y, n_y: int) -> float:
    """``H(y) - H(x)`` from two full field evaluations."""
    from ..model.grid import relative_field_energy
    p = s.params
    if not p.kac:
        return -p.lam * (n_y - s.n)
    w = s.grid.weight
    hx = w * relative_field_energy(s.base, s.field - s.base)
    hy = w * relative_field_energy(s.base, field_y - s.base)
    return hy - hx - p.lam * (n_y - s.n)


def _accept(log_ratio: float) -> float:
    return 1.0 if log_ratio >= 0 else math.exp(log_ratio)


def balance_pair(s: GCMCSampler, move: str, i: int = -1, x=None) -> tuple[float, float] | None:
    """Forward and backward probability flows for one proposal, relative to ``pi(x)``.

    Returns ``None`` when the proposal is impossible (hard core, outside the
    active region) so both flows vanish.
    """
    p = s.params
    beta = p.beta
    V = s.volume
    n = s.n
    x = None if x is None else pad3(x)
    field_y = s.field.copy()
    if move == "insert":
        if not s.admissible_at(x):
            return None
        d_fwd = s.delta_insert(x)
        if p.kac:
            deposit(field_y, x, 1.0, *s.grid.args())
        n_y = n + 1
        from ..model.grid import delta_energy_add
        d_bwd = p.lam + (s.grid.weight * delta_energy_add(field_y, x, -1.0, *s.grid.args())
                         if p.kac else 0.0)
        fwd = s.p_ins / V * _accept(math.log(V / n_y) - beta * d_fwd)
        bwd_rel = s.p_del / n_y * _accept(math.log(n_y / V) - beta * d_bwd)
    elif move == "delete":
        xi = s.pos[i].copy()
        d_fwd = s.delta_delete(i)
        if p.kac:
            deposit(field_y, xi, -1.0, *s.grid.args())
        n_y = n - 1
        from ..model.grid import delta_energy_add
        d_bwd = -p.lam + (s.grid.weight * delta_energy_add(field_y, xi, 1.0, *s.grid.args())
                          if p.kac else 0.0)
        fwd = s.p_del / n * _accept(math.log(n / V) - beta * d_fwd)
        bwd_rel = s.p_ins / V * _accept(math.log(V / n) - beta * d_bwd)
    elif move == "displace":
        xo = s.pos[i].copy()
        if not s.admissible_at(x, skip=i):
            return None
        d_fwd = s.delta_displace(i, x)
        if p.kac:
            deposit(field_y, xo, -1.0, *s.grid.args())
            deposit(field_y, x, 1.0, *s.grid.args())
        n_y = n
        from ..model.grid import delta_energy_move
        d_bwd = (s.grid.weight * delta_energy_move(field_y, x, xo, *s.grid.args())
                 if p.kac else 0.0)
        # the proposal density of a uniform ball is symmetric and cancels
        fwd = (1 - s.p_ins - s.p_del) / n * _accept(-beta * d_fwd)
        bwd_rel = (1 - s.p_ins - s.p_del) / n * _accept(-beta * d_bwd)
    else:
        raise ValueError(f"unknown move {move!r}")
    dH = _weights(s, field_y, n_y)
    # pi(y)/pi(x) with respect to the Poisson reference: e^{-beta dH}
    bwd = math.exp(-beta * dH) * bwd_rel
    return fwd, bwd


def detailed_balance_audit(sampler: GCMCSampler, n_trials: int = 1000, rng=None,
                           tolerance: float = 1e-8) -> BalanceReport:
    """Check ``pi(x) P(x->y) = pi(y) P(y->x)`` on random proposals from the current state."""
    rng = np.random.default_rng(rng)
    s = sampler
    d = s.params.d
    worst, max_v, evaluated = None, 0.0, 0
    for _ in range(n_trials):
        move = MOVE_NAMES[rng.integers(3)]
        if move != "insert" and s.n == 0:
            move = "insert"
        i, x = -1, None
        if move == "insert":
            cube = np.unravel_index(s.act_list[rng.integers(len(s.act_list))], (s.domain.n_plus,) * d)
            x = (np.asarray(cube) + rng.random(d)) * s.params.ell_plus
        else:
            i = int(rng.integers(s.n))
        if move == "displace":
            g = rng.standard_normal(d)
            x = s.pos[i, :d] + 0.5 / s.params.gamma * rng.random() ** (1 / d) * g / np.linalg.norm(g)
            if s.domain.periodic:
                x = np.mod(x, s.domain.side)
            elif np.any((x < 0) | (x >= s.domain.side)):
                continue
        res = balance_pair(s, move, i, x)
        if res is None:
            continue
        evaluated += 1
        fwd, bwd = res
        v = abs(fwd - bwd) / max(fwd, bwd)
        if v > max_v:
            max_v = v
            worst = {"move": move, "index": i, "point": None if x is None else np.asarray(x).tolist(),
                     "forward": fwd, "backward": bwd}
    return BalanceReport(n_trials, evaluated, max_v, worst, tolerance)
