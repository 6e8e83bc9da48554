"""Grand-canonical Metropolis sampler with incremental energy bookkeeping.

Reference measure: Poisson point process of intensity one on the active
region of volume ``V``.  The target density with respect to that process is
``exp(-beta H(q | q_bar))``; the ``exp(-V)`` normalization of the Poisson law
cancels in every acceptance ratio.  Insertion at a uniform point is accepted
with ``min(1, V/(N+1) exp(-beta dH))``, deletion of a uniformly chosen
particle with ``min(1, N/V exp(-beta dH))`` and a displacement uniform in a
ball of radius ``1/(2 gamma)`` with ``min(1, exp(-beta dH))``.  ``dH``
includes the ``-lambda dN`` term.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..coarse_grain.fields import cube_counts, eta_window
from ..model.domain import Domain, HardCoreViolation, pair_violations
from ..model.energy import npow_for
from ..model.grid import QuadratureGrid, deposit, pad3, relative_field_energy
from ..model.params import ModelParams
from . import core

MOVE_NAMES = ("insert", "delete", "displace")


class ConstraintViolation(ValueError):
    """The initial configuration does not satisfy the diluted constraint."""


@dataclass
class DilutedConstraint:
    """Theta = sign required on a frame of large cubes along the box boundary.

    Enforced by rejection: every small cube of a frame cube or of its
    neighbours (inside the box) must keep its count in the eta window.
    ``width`` counts layers of large cubes; ``from_meanfield`` can derive it
    from the Kac range instead.
    """

    sign: int
    rho_minus: float
    rho_plus: float
    zeta: float
    width: int = 1
    frame: np.ndarray | None = None  # boolean mask over large cubes; default: outer layers

    @classmethod
    def from_meanfield(cls, sign: int, meanfield, params: ModelParams, frame_width: str = "ell_plus"):
        if frame_width == "ell_plus":
            width = 1
        elif frame_width == "kac":
            width = max(1, math.ceil(2.0 / params.gamma / params.ell_plus))
        else:
            raise ValueError("frame_width must be 'ell_plus' or 'kac'")
        return cls(sign, meanfield.rho_minus, meanfield.rho_plus, params.zeta, width)

    @property
    def rho(self) -> float:
        return self.rho_plus if self.sign > 0 else self.rho_minus

    def frame_mask(self, nplus: int, d: int) -> np.ndarray:
        if self.frame is not None:
            return np.asarray(self.frame, bool)
        idx = np.indices((nplus,) * d)
        w = self.width
        return np.any((idx < w) | (idx >= nplus - w), axis=0)

    def small_cube_mask(self, params: ModelParams, nplus: int) -> np.ndarray:
        """Small cubes whose eta must equal ``sign`` for Theta = sign on the frame."""
        d = params.d
        frame = self.frame_mask(nplus, d)
        grown = np.zeros_like(frame)
        for off in itertools.product((-1, 0, 1), repeat=d):
            grown |= np.roll(np.pad(frame, 1), off, axis=tuple(range(d)))[
                tuple(slice(1, -1) for _ in range(d))]
        r = params.scale_ratio
        return np.kron(grown, np.ones((r,) * d, bool)).astype(bool)

    def window(self, params: ModelParams) -> tuple[int, int]:
        return eta_window(self.rho, self.zeta, params.ell_minus, params.d)

    def check(self, positions, params: ModelParams, side: float) -> bool:
        nplus = int(round(side / params.ell_plus))
        mask = self.small_cube_mask(params, nplus)
        counts = cube_counts(positions, side, params.ell_minus, params.d)
        lo, hi = self.window(params)
        sel = counts[mask]
        return bool(np.all((sel >= lo) & (sel <= hi)))

    def initial_configuration(self, params: ModelParams, domain: Domain, rng=None) -> np.ndarray:
        """Admissible lattice-like configuration at the constrained density.

        Every small cube receives the in-window count closest to
        ``rho * ell_minus^d``, placed on a regular sub-lattice.
        """
        lo, hi = self.window(params)
        target = int(np.clip(round(self.rho * params.ell_minus**params.d), lo, hi))
        return lattice_fill(params, domain, target)


def lattice_fill(params: ModelParams, domain: Domain, per_cube: int) -> np.ndarray:
    """``per_cube`` particles on a regular sub-lattice of every small cube."""
    d, ell = params.d, params.ell_minus
    if per_cube == 0:
        return np.zeros((0, d))
    k = math.ceil(per_cube ** (1.0 / d) - 1e-12)
    spacing = ell / k
    if spacing <= params.hc_radius:
        raise ValueError("requested density cannot be realized on a sub-lattice above the hard core")
    sub = np.stack(np.meshgrid(*[(np.arange(k) + 0.5) * spacing] * d, indexing="ij"), -1)
    sub = sub.reshape(-1, d)[:per_cube]
    n = int(round(domain.side / ell))
    cubes = np.stack(np.meshgrid(*[np.arange(n)] * d, indexing="ij"), -1).reshape(-1, d)
    return (cubes[:, None, :] * ell + sub[None, :, :]).reshape(-1, d)


def _hc_layout(params: ModelParams, domain: Domain):
    """Cell side, per-axis cell counts and per-cell capacity for the hard-core lists."""
    d, R, side = params.d, params.hc_radius, domain.side
    ncell_axis = max(1, int(side // R)) if R > 0 else 1
    while ncell_axis ** d > 2_000_000:
        ncell_axis //= 2
    hc_side = side / ncell_axis
    # a cube of side s holds at most ceil(s*sqrt(d)/R)^d points with gaps > R
    cap = math.ceil(hc_side * math.sqrt(d) / R + 1e-12) ** d if R > 0 else 1
    return hc_side, ncell_axis, cap


class GCMCSampler:
    """Single Markov chain; owns its state and random stream exclusively.

    ``active`` is an optional boolean mask over the large cubes of the box
    restricting where particles may live; particles of ``frozen`` are fixed
    and act like boundary particles (field and hard core).
    """

    def __init__(self, params: ModelParams, domain: Domain, seed: int = 0, initial=None,
                 constraint: DilutedConstraint | None = None, active: np.ndarray | None = None,
                 frozen=None, max_particles: int | None = None,
                 move_probs=(0.35, 0.35, 0.30), block: int = 4096, convention: str | None = None):
        self.params = params
        self.domain = domain
        self.seed = seed
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.block = block
        self.constraint = constraint
        self.max_particles = np.iinfo(np.int64).max if max_particles is None else int(max_particles)
        probs = np.asarray(move_probs, dtype=float)
        if probs.shape != (3,) or abs(probs.sum() - 1.0) > 1e-12 or probs[0] != probs[1]:
            raise ValueError("move_probs must be (p, p, 1-2p) with equal insert/delete weight")
        self.p_ins, self.p_del = float(probs[0]), float(probs[1])
        d = params.d
        self.convention = convention or params.hamiltonian
        self.npow = npow_for(params, self.convention)

        # --- active region at the large-cube scale
        nplus = domain.n_plus
        self.nplus3 = np.ones(3, np.int64)
        self.nplus3[:d] = nplus
        if active is None:
            active = np.ones((nplus,) * d, bool)
        self.active = np.asarray(active, bool).reshape((nplus,) * d)
        self.act_mask = self.active.ravel().astype(np.bool_)
        self.act_list = np.flatnonzero(self.act_mask).astype(np.int64)
        if len(self.act_list) == 0:
            raise ValueError("active region is empty")
        self.volume = len(self.act_list) * params.ell_plus**d

        # --- static particles: boundary condition plus frozen interior ones
        frozen = np.zeros((0, d)) if frozen is None else np.asarray(frozen, float).reshape(-1, d)
        self.static = np.vstack([domain.boundary, frozen]) if len(frozen) else domain.boundary

        # --- quadrature field
        margin = None
        self.grid = QuadratureGrid.for_domain(params, domain, margin)
        self.base = self.grid.empty_field(self.npow)
        for x in self.static:
            deposit(self.base, pad3(x), 1.0, *self.grid.args())

        # --- hard-core cells
        self.hc_on = params.hc_radius > 0
        self.hc_side, nca, self.hc_cap = _hc_layout(params, domain)
        self.ncell = np.ones(3, np.int64)
        self.ncell[:d] = nca
        self.pad = 0 if domain.periodic else 1
        self.dims = np.ones(3, np.int64)
        self.dims[:d] = nca + 2 * self.pad
        self._build_static()

        # --- small-cube counts and diluted constraint
        nminus = int(round(domain.side / params.ell_minus))
        self.nminus3 = np.ones(3, np.int64)
        self.nminus3[:d] = nminus
        ncube = int(np.prod(self.nminus3))
        self.cmask = np.zeros(ncube, np.bool_)
        self.nlo = np.zeros(ncube, np.int64)
        self.nhi = np.full(ncube, np.iinfo(np.int64).max // 2, np.int64)
        if constraint is not None:
            m = constraint.small_cube_mask(params, nplus).ravel()
            lo, hi = constraint.window(params)
            self.cmask[:] = m
            self.nlo[m] = lo
            self.nhi[m] = hi

        # --- particles
        init = np.zeros((0, d)) if initial is None else np.asarray(initial, float).reshape(-1, d)
        if len(init) and not np.all(domain.contains(init)):
            raise ValueError("initial particles must lie inside the box")
        if pair_violations(np.vstack([init, self.static]), params.hc_radius, domain):
            raise HardCoreViolation("initial configuration is not admissible")
        if constraint is not None and not constraint.check(init, params, domain.side):
            raise ConstraintViolation(
                "initial configuration violates the diluted constraint; start from "
                "DilutedConstraint.initial_configuration(), a lattice-like configuration at "
                "density rho_+ or rho_-")
        self._load(init)
        self.counters = np.zeros(6, np.int64)
        self.steps = 0

    # ----------------------------------------------------------------- setup
    def _build_static(self):
        d = self.params.d
        st = self.static
        if self.hc_on and len(st):
            # only particles within R of the box can block anything
            side = self.domain.side
            gap = np.maximum(np.maximum(-st, st - side), 0.0)
            near = st[np.sqrt(np.sum(gap * gap, axis=1)) <= self.params.hc_radius]
        else:
            near = np.zeros((0, d))
        flat = np.array([core.flat_cell(core.hc_cell_of(pad3(x), self.hc_side, self.ncell,
                                                         self.pad, d), self.dims)
                         for x in near], dtype=np.int64)
        order = np.argsort(flat, kind="stable")
        ncells = int(np.prod(self.dims))
        counts = np.bincount(flat, minlength=ncells) if len(flat) else np.zeros(ncells, np.int64)
        self.st_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.st_pos = np.ascontiguousarray(np.array([pad3(x) for x in near[order]]).reshape(-1, 3))

    def _load(self, positions: np.ndarray):
        d = self.params.d
        n = len(positions)
        cap = max(64, 2 * n)
        self.pos = np.zeros((cap, 3))
        self.pos[:n, :d] = positions
        self.nbox = np.array([n], np.int64)
        ncells = int(np.prod(self.dims))
        self.cell_count = np.zeros(ncells, np.int64)
        self.cell_members = np.zeros((ncells, self.hc_cap), np.int64)
        self.pcell = np.zeros(cap, np.int64)
        self.pslot = np.zeros(cap, np.int64)
        if self.hc_on:
            for i in range(n):
                core.cell_insert(i, self.pos[i], self.hc_side, self.ncell, self.pad, self.dims, d,
                                 self.cell_count, self.cell_members, self.pcell, self.pslot)
        self.cnt = cube_counts(positions, self.domain.side, self.params.ell_minus, d).ravel().astype(np.int64)
        self.cnt = np.ascontiguousarray(self.cnt)
        self.field = self.base.copy()
        if self.params.kac:
            for i in range(n):
                deposit(self.field, self.pos[i], 1.0, *self.grid.args())
        self.energy = np.array([self.full_energy()])

    def _grow(self):
        cap = 2 * self.pos.shape[0]
        for name in ("pos",):
            old = getattr(self, name)
            new = np.zeros((cap, 3))
            new[: len(old)] = old
            setattr(self, name, new)
        for name in ("pcell", "pslot"):
            old = getattr(self, name)
            new = np.zeros(cap, np.int64)
            new[: len(old)] = old
            setattr(self, name, new)

    # ----------------------------------------------------------------- state
    @property
    def n(self) -> int:
        return int(self.nbox[0])

    @property
    def positions(self) -> np.ndarray:
        return self.pos[: self.n, : self.params.d].copy()

    @property
    def counts(self) -> np.ndarray:
        """Small-cube occupation numbers (shape ``(n_minus,)*d``)."""
        d = self.params.d
        return self.cnt.reshape(tuple(self.nminus3[:d])).copy()

    @property
    def running_energy(self) -> float:
        return float(self.energy[0])

    def full_energy(self) -> float:
        """``H(q | static)`` recomputed from scratch."""
        p = self.params
        n = int(self.nbox[0])
        lin = -p.lam * n
        if not p.kac or n == 0:
            return lin
        extra = self.grid.empty_field(self.npow)
        for i in range(n):
            deposit(extra, self.pos[i], 1.0, *self.grid.args())
        return lin + self.grid.weight * relative_field_energy(self.base, extra)

    def refresh_field(self):
        """Rebuild the incremental field from the positions (removes rounding drift)."""
        self.field = self.base.copy()
        if self.params.kac:
            for i in range(self.n):
                deposit(self.field, self.pos[i], 1.0, *self.grid.args())

    def audit(self) -> dict:
        """Compare running and recomputed energies; check admissibility and counts."""
        full = self.full_energy()
        run = self.running_energy
        rel = abs(run - full) / max(1.0, abs(full))
        pos = self.positions
        adm = not pair_violations(np.vstack([pos, self.static]), self.params.hc_radius, self.domain)
        cnt_ok = np.array_equal(
            cube_counts(pos, self.domain.side, self.params.ell_minus, self.params.d).ravel(), self.cnt)
        cells_ok = (not self.hc_on) or int(self.cell_count.sum()) == self.n
        return {"running": run, "full": full, "relative_drift": rel, "admissible": adm,
                "counts_consistent": cnt_ok, "cells_consistent": cells_ok}

    def acceptance_rates(self) -> dict:
        out = {}
        for k, name in enumerate(MOVE_NAMES):
            att = self.counters[2 * k]
            out[name] = float(self.counters[2 * k + 1] / att) if att else float("nan")
        return out

    # ----------------------------------------------------------------- dynamics
    def _kernel_args(self):
        p = self.params
        g = self.grid
        return (self.pos, self.nbox, self.field, self.energy, self.counters,
                g.lo, g.shape, g.periodic, g.h, g.gamma, g.cd, p.d, g.weight,
                p.beta, p.lam, p.kac, self.p_ins, self.p_del, 0.5 / p.gamma, self.domain.side,
                self.max_particles,
                self.hc_on, p.hc_radius, self.hc_side, self.ncell, self.pad, self.dims,
                self.cell_count, self.cell_members, self.pcell, self.pslot,
                self.st_start, self.st_pos,
                p.ell_plus, self.nplus3, self.act_mask, self.act_list,
                p.ell_minus, self.nminus3, self.cnt, self.cmask, self.nlo, self.nhi)

    def _draw(self, n):
        d = self.params.d
        U = self.rng.random((n, 7))
        G = np.zeros((n, 3))
        G[:, :d] = self.rng.standard_normal((n, d))
        return U, G

    def step(self, n_steps: int) -> None:
        """Advance the chain by ``n_steps`` proposals."""
        remaining = int(n_steps)
        while remaining > 0:
            b = min(self.block, remaining)
            U, G = self._draw(b)
            off = 0
            while off < b:
                status, done = core.run_block(b - off, U[off:], G[off:], *self._kernel_args())
                off += done
                if status == core.NEED_CAPACITY:
                    self._grow()
            remaining -= b
            self.steps += b

    # ----------------------------------------------------------------- single moves (audits)
    def delta_insert(self, x) -> float:
        from ..model.grid import delta_energy_add
        p = self.params
        dE = -p.lam
        if p.kac:
            dE += self.grid.weight * delta_energy_add(self.field, pad3(x), 1.0, *self.grid.args())
        return dE

    def delta_delete(self, i: int) -> float:
        from ..model.grid import delta_energy_add
        p = self.params
        dE = p.lam
        if p.kac:
            dE += self.grid.weight * delta_energy_add(self.field, self.pos[i].copy(), -1.0,
                                                      *self.grid.args())
        return dE

    def delta_displace(self, i: int, x) -> float:
        from ..model.grid import delta_energy_move
        if not self.params.kac:
            return 0.0
        return self.grid.weight * delta_energy_move(self.field, self.pos[i].copy(), pad3(x),
                                                    *self.grid.args())

    def admissible_at(self, x, skip: int = -1) -> bool:
        if not self.hc_on:
            return True
        p = self.params
        return core.hc_ok(pad3(x), skip, self.pos, p.hc_radius, self.domain.periodic,
                          self.domain.side, p.d, self.hc_side, self.ncell, self.pad, self.dims,
                          self.cell_count, self.cell_members, self.st_start, self.st_pos)

    def set_positions(self, positions) -> None:
        """Replace the configuration (admissibility is checked)."""
        positions = np.asarray(positions, float).reshape(-1, self.params.d)
        if pair_violations(np.vstack([positions, self.static]), self.params.hc_radius, self.domain):
            raise HardCoreViolation("configuration is not admissible")
        self._load(positions)
