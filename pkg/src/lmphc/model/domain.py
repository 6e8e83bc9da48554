"""Domains, particle configurations and hard-core bookkeeping."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .params import ModelParams, ParameterError


class HardCoreViolation(ValueError):
    """Two particles closer than (or exactly at) the hard-core distance."""


def _as_positions(positions, d: int) -> np.ndarray:
    arr = np.asarray(positions, dtype=float)
    if arr.size == 0:
        return np.zeros((0, d))
    arr = arr.reshape(-1, d) if arr.ndim == 1 and d == 1 else np.atleast_2d(arr)
    if arr.shape[1] != d:
        raise ValueError(f"positions must have shape (N, {d}), got {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class Domain:
    """Either a box ``[0, side)^d`` with fixed exterior particles, or a torus.

    ``side`` is always an integer multiple of ``ell_plus``; use
    :meth:`from_params` to snap an arbitrary length.
    """

    kind: str
    side: float
    d: int
    ell_plus: float
    boundary: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("box", "torus"):
            raise ParameterError(f"domain kind must be 'box' or 'torus', got {self.kind!r}")
        ratio = self.side / self.ell_plus
        if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ParameterError(
                f"side {self.side} is not an integer multiple of ell_plus {self.ell_plus}"
            )
        bnd = _as_positions(self.boundary if self.boundary is not None else [], self.d)
        if self.kind == "torus" and len(bnd):
            raise ParameterError("a torus has no boundary configuration")
        object.__setattr__(self, "boundary", bnd)

    @classmethod
    def from_params(cls, params: ModelParams, kind: str = "box", side: float | None = None,
                    n_plus: int | None = None, boundary=None, boundary_reach: float | None = None):
        """Build a domain whose side is snapped to a multiple of ``ell_plus``.

        Boundary particles farther than ``boundary_reach`` (default ``2/gamma``)
        from the box are dropped since they cannot interact with it.  Points
        inside the box are rejected.
        """
        if n_plus is None:
            if side is None:
                raise ParameterError("give either side or n_plus")
            n_plus = max(1, int(round(side / params.ell_plus)))
            snapped = n_plus * params.ell_plus
            if abs(snapped - side) > 1e-9 * side:
                warnings.warn(f"domain side snapped from {side} to {snapped}", stacklevel=2)
        length = n_plus * params.ell_plus
        bnd = _as_positions(boundary if boundary is not None else [], params.d)
        if len(bnd):
            inside = np.all((bnd >= 0.0) & (bnd < length), axis=1)
            if np.any(inside):
                raise ParameterError("boundary particles must lie outside the box")
            reach = 2.0 / params.gamma if boundary_reach is None else boundary_reach
            gap = np.maximum(np.maximum(-bnd, bnd - length), 0.0)
            bnd = bnd[np.sqrt(np.sum(gap * gap, axis=1)) <= reach]
        return cls(kind, length, params.d, params.ell_plus, bnd)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def volume(self) -> float:
        return self.side**self.d

    @property
    def n_plus(self) -> int:
        return int(round(self.side / self.ell_plus))

    def with_boundary(self, boundary) -> "Domain":
        return Domain(self.kind, self.side, self.d, self.ell_plus, boundary)

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        if not self.periodic:
            return positions
        out = np.mod(positions, self.side)
        out[out >= self.side] = 0.0
        return out

    def contains(self, positions) -> np.ndarray:
        p = np.atleast_2d(positions)
        return np.all((p >= 0.0) & (p < self.side), axis=1)

    def displacement(self, a, b) -> np.ndarray:
        """``a - b`` using minimum images on a torus."""
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.periodic:
            diff = diff - self.side * np.round(diff / self.side)
        return diff


class CellIndex:
    """Spatial hash: particles bucketed into cubic cells, stored in CSR form.

    Cells cover the box (or torus) plus one layer of spill-over cells on each
    side of a box so that exterior points can be looked up too.
    """

    def __init__(self, positions: np.ndarray, domain: Domain, cell_side: float):
        self.domain = domain
        self.d = domain.d
        ncell = max(1, int(math.floor(domain.side / cell_side)))
        if domain.periodic and ncell < 3:
            ncell = 1
        self.cell_side = domain.side / ncell
        self.ncell = ncell
        self.pad = 0 if domain.periodic else 1
        self.dims = (ncell + 2 * self.pad,) * self.d
        self.rebuild(positions)

    def cell_of(self, positions: np.ndarray) -> np.ndarray:
        c = np.floor(np.atleast_2d(positions) / self.cell_side).astype(np.int64)
        if self.domain.periodic:
            c %= self.ncell
        else:
            c = np.clip(c + self.pad, 0, self.ncell + 2 * self.pad - 1)
        return c

    def _flat(self, cells: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(cells.T), self.dims)

    def rebuild(self, positions: np.ndarray) -> None:
        self.positions = positions
        n_cells = int(np.prod(self.dims))
        flat = self._flat(self.cell_of(positions)) if len(positions) else np.zeros(0, np.int64)
        self.order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=n_cells)
        self.starts = np.concatenate([[0], np.cumsum(counts)])
        self._flat_ids = flat

    def audit(self) -> bool:
        """True iff the stored buckets agree with the current positions."""
        if len(self.positions) == 0:
            return self.starts[-1] == 0
        flat = self._flat(self.cell_of(self.positions))
        if not np.array_equal(flat, self._flat_ids):
            return False
        for c in range(len(self.starts) - 1):
            members = self.order[self.starts[c]:self.starts[c + 1]]
            if np.any(flat[members] != c):
                return False
        return True

    def candidates(self, point, radius: float) -> np.ndarray:
        """Indices of particles possibly within ``radius`` of ``point``."""
        reach = int(math.ceil(radius / self.cell_side))
        base = self.cell_of(np.asarray(point, dtype=float).reshape(1, -1))[0]
        if not self.domain.periodic:
            # spill-over cells aggregate everything beyond the box: scan wider
            reach = max(reach, 1)
        rng = [np.arange(b - reach, b + reach + 1) for b in base]
        grids = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, self.d)
        if self.domain.periodic:
            grids = np.unique(grids % self.ncell, axis=0)
        else:
            lim = self.ncell + 2 * self.pad
            grids = grids[np.all((grids >= 0) & (grids < lim), axis=1)]
            if self.pad:
                # points far outside collapse into the spill-over layer
                grids = np.unique(np.clip(grids, 0, lim - 1), axis=0)
        if len(grids) == 0:
            return np.zeros(0, np.int64)
        flat = self._flat(grids)
        return np.concatenate([self.order[self.starts[c]:self.starts[c + 1]] for c in flat])


class ParticleConfiguration:
    """A hard-core admissible finite point set in a domain.

    Positions inside a box must lie in ``[0, side)^d``; on a torus they are
    wrapped.  Constructors and mutators refuse inadmissible configurations.
    """

    def __init__(self, positions, domain: Domain, params: ModelParams, check: bool = True):
        self.domain = domain
        self.params = params
        pos = domain.wrap(_as_positions(positions, params.d).copy())
        if len(pos) and not np.all(domain.contains(pos)):
            raise ValueError("particle positions must lie inside the box")
        self.positions = pos
        if check:
            bad = pair_violations(pos, params.hc_radius, domain)
            if bad:
                raise HardCoreViolation(f"{len(bad)} pair(s) at distance <= R, e.g. {bad[0]}")
            if len(domain.boundary) and len(pos):
                if not _cross_admissible(pos, domain.boundary, params.hc_radius):
                    raise HardCoreViolation("particle overlaps the boundary configuration")
        self.cell_index = CellIndex(pos, domain, max(params.hc_radius, 1.0 / params.gamma))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n(self) -> int:
        return len(self.positions)

    def copy(self) -> "ParticleConfiguration":
        return ParticleConfiguration(self.positions.copy(), self.domain, self.params, check=False)

    def with_positions(self, positions) -> "ParticleConfiguration":
        return ParticleConfiguration(positions, self.domain, self.params)

    def add(self, point) -> "ParticleConfiguration":
        return self.with_positions(np.vstack([self.positions, np.atleast_2d(point)]))

    def remove(self, index: int) -> "ParticleConfiguration":
        return self.with_positions(np.delete(self.positions, index, axis=0))

    def audit(self) -> bool:
        return self.cell_index.audit() and hardcore_admissible(self)


def pair_violations(positions, R: float, domain: Domain | None = None) -> list:
    """Sorted list of index pairs ``(i, j)`` with ``|q_i - q_j| <= R``."""
    pos = np.asarray(positions, dtype=float)
    if len(pos) < 2:
        return []
    if domain is not None and domain.periodic:
        tree = cKDTree(pos, boxsize=domain.side)
    else:
        tree = cKDTree(pos)
    # the tree only proposes candidates; the verdict uses one canonical distance
    cand = tree.query_pairs(R * (1 + 1e-9) + 1e-300, output_type="ndarray")
    if len(cand) == 0:
        return []
    diff = pos[cand[:, 0]] - pos[cand[:, 1]]
    if domain is not None and domain.periodic:
        diff = diff - domain.side * np.round(diff / domain.side)
    keep = distance(diff) <= R
    return sorted(map(tuple, cand[keep].tolist()))


def distance(diff) -> np.ndarray:
    """Euclidean length along the last axis; the single rule used for hard-core tests."""
    diff = np.asarray(diff, dtype=float)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _cross_admissible(a: np.ndarray, b: np.ndarray, R: float) -> bool:
    if len(a) == 0 or len(b) == 0:
        return True
    pairs = cKDTree(b).query_ball_point(a, R * (1 + 1e-9) + 1e-300)
    for i, js in enumerate(pairs):
        if js and np.any(distance(b[js] - a[i]) <= R):
            return False
    return True


def hardcore_admissible(q, R: float | None = None) -> bool:
    """True iff all pairwise distances exceed R (distance exactly R is excluded)."""
    if isinstance(q, ParticleConfiguration):
        R = q.params.hc_radius if R is None else R
        ok = not pair_violations(q.positions, R, q.domain)
        return ok and _cross_admissible(q.positions, q.domain.boundary, R)
    return not pair_violations(np.asarray(q, dtype=float), 0.0 if R is None else R)
