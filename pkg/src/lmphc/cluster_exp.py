"""Diagrams, pruning and truncated cluster sums for the particle remainder ``h^p``.

Labels are ``(cube, index)`` pairs.  A diagram carries R-links (hard-core
Mayer factors), gamma-links (Kac pair corrections) and 4-links (Kac
quadruple corrections).  The pair factor of a labelled pair is

    (1 + f_R)(1 + g) = 1 + f_R + g~,      g~ = (1 + f_R) g,

so a pair is either unlinked, R-linked or gamma-linked and double links
never occur.  R-links are reduced to a forest by removing redundant links;
the removed links are resummed into Penrose factors ``prod (1 + f_R)``
attached to each reduced diagram, which keeps the polymer representation
exact.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .effective_ham import DensityConfig, Estimate, _points, _sample_positions
from .model.coarse import coarse_kernel
from .model.domain import distance
from .model.grid import QuadratureGrid, deposit
from .model.params import ModelParams

MAX_ENUM_LABELS = 8
MAX_ENUM_LINKS = 4
MAX_ORDER = 2


class GuardError(ValueError):
    """A combinatorial guard was exceeded."""


def _pair(a, b) -> tuple:
    if a == b:
        raise ValueError("a 2-link needs two distinct labels")
    return (a, b) if a < b else (b, a)


def _quad(q) -> tuple:
    q = tuple(sorted(q))
    if len(set(q)) != 4:
        raise ValueError("a 4-link needs four distinct labels")
    return q


@dataclass(frozen=True)
class Diagram:
    labels: frozenset
    links_R: frozenset = frozenset()
    links_gamma: frozenset = frozenset()
    links_4: frozenset = frozenset()

    def __post_init__(self):
        for link in itertools.chain(self.links_R, self.links_gamma, self.links_4):
            if not set(link) <= self.labels:
                raise ValueError(f"link {link} has an endpoint outside the label set")
        for q in self.links_4:
            if len(set(q)) != 4:
                raise ValueError("4-links need four distinct labels")

    @classmethod
    def of(cls, R=(), gamma=(), four=(), labels=None) -> "Diagram":
        lr = frozenset(_pair(*p) for p in R)
        lg = frozenset(_pair(*p) for p in gamma)
        l4 = frozenset(_quad(q) for q in four)
        ends = {v for link in itertools.chain(lr, lg, l4) for v in link}
        return cls(frozenset(ends if labels is None else set(labels) | ends), lr, lg, l4)

    @property
    def n_links(self) -> int:
        return len(self.links_R) + len(self.links_gamma) + len(self.links_4)

    def replace(self, **kw) -> "Diagram":
        data = dict(labels=self.labels, links_R=self.links_R, links_gamma=self.links_gamma,
                    links_4=self.links_4)
        data.update({k: frozenset(v) for k, v in kw.items()})
        return Diagram(**data)

    def is_connected(self) -> bool:
        if not self.labels:
            return False
        adj = {v: set() for v in self.labels}
        for link in itertools.chain(self.links_R, self.links_gamma, self.links_4):
            for a in link:
                adj[a].update(link)
        start = min(self.labels)
        seen, todo = {start}, [start]
        while todo:
            for w in adj[todo.pop()] - seen:
                seen.add(w)
                todo.append(w)
        return seen == set(self.labels)

    def to_dict(self) -> dict:
        return {
            "labels": _jsonable(sorted(self.labels)),
            "R": _jsonable(sorted(self.links_R)),
            "gamma": _jsonable(sorted(self.links_gamma)),
            "four": _jsonable(sorted(self.links_4)),
        }


def _jsonable(v):
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


def compatible(theta1: Diagram, theta2: Diagram) -> bool:
    return theta1.labels.isdisjoint(theta2.labels)


def dump_diagrams(diagrams, path=None) -> str:
    text = json.dumps([t.to_dict() for t in diagrams], indent=1)
    if path is not None:
        from .model.snapshot import atomic_write_text
        atomic_write_text(path, text + "\n")
    return text


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------
def prune_double_links(theta: Diagram) -> Diagram:
    """Drop R-links whose pair also carries a gamma-link."""
    return theta.replace(links_R=theta.links_R - theta.links_gamma)


@dataclass(frozen=True)
class OrderedDiagram:
    diagram: Diagram
    order: tuple  # R-links in lexicographic order
    depth: dict  # label -> graph distance along R-links from its component's first vertex
    root: dict  # label -> first vertex of its R-component


def ordered(theta: Diagram) -> OrderedDiagram:
    adj: dict = {}
    for a, b in theta.links_R:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    depth, root = {}, {}
    for start in sorted(adj):
        if start in depth:
            continue
        depth[start], root[start] = 0, start
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in sorted(adj[v]):
                if w not in depth:
                    depth[w], root[w] = depth[v] + 1, start
                    queue.append(w)
    return OrderedDiagram(theta, tuple(sorted(theta.links_R)), depth, root)


def redundant_links(theta) -> set:
    od = theta if isinstance(theta, OrderedDiagram) else ordered(theta)
    d = od.depth
    out = set()
    parents: dict = {}
    for link in od.order:
        i, j = link
        if d[i] == d[j]:
            out.add(link)
            continue
        child = j if d[j] > d[i] else i
        parents.setdefault(child, []).append(link)
    for links in parents.values():
        out.update(sorted(links)[1:])
    return out


def prune_redundant(theta) -> Diagram:
    """Remove redundant R-links until none is left; the R-part becomes a forest."""
    diag = theta.diagram if isinstance(theta, OrderedDiagram) else theta
    while True:
        red = redundant_links(diag)
        if not red:
            return diag
        diag = diag.replace(links_R=diag.links_R - red)


def prune(theta: Diagram) -> Diagram:
    return prune_redundant(prune_double_links(theta))


def in_theta_hat(theta: Diagram) -> bool:
    return not (theta.links_R & theta.links_gamma)


def in_theta_bar(theta: Diagram) -> bool:
    return in_theta_hat(theta) and not redundant_links(theta)


def penrose_links(theta: Diagram) -> set:
    """R-pairs whose addition maps back to ``theta`` under pruning.

    Pairs inside one R-component at equal depth, or one level apart when
    the existing parent link precedes them.  Gamma-linked pairs are
    excluded (they cannot carry an R-link).
    """
    od = ordered(theta)
    d, root = od.depth, od.root
    parent = {}
    for i, j in od.order:
        child = j if d[j] > d[i] else i
        parent[child] = (i, j)
    out = set()
    verts = sorted(d)
    for a, b in itertools.combinations(verts, 2):
        pair = (a, b)
        if root[a] != root[b] or pair in theta.links_R or pair in theta.links_gamma:
            continue
        if d[a] == d[b]:
            out.add(pair)
        elif abs(d[a] - d[b]) == 1:
            child = b if d[b] > d[a] else a
            if parent[child] < pair:
                out.add(pair)
    return out


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------
def _reduced_forests(pairs, size):
    for combo in itertools.combinations(pairs, size):
        if not redundant_links(Diagram.of(R=combo)):
            yield combo


def enumerate_diagrams(labels, max_total_links: int, kinds=("R", "gamma", "4")):
    """All nonempty diagrams of the reduced class with at most ``max_total_links`` links.

    Built constructively: reduced R-forests, then gamma-links on pairs not
    carrying an R-link, then 4-links.
    """
    labels = sorted(labels)
    if len(labels) > MAX_ENUM_LABELS or max_total_links > MAX_ENUM_LINKS:
        raise GuardError(f"enumeration guard: at most {MAX_ENUM_LABELS} labels and "
                         f"{MAX_ENUM_LINKS} links")
    pairs = list(itertools.combinations(labels, 2))
    quads = list(itertools.combinations(labels, 4))
    use_r, use_g, use_4 = ("R" in kinds), ("gamma" in kinds), ("4" in kinds)
    for total in range(1, max_total_links + 1):
        for nr in range(total + 1 if use_r else 1):
            for ng in range(total - nr + 1 if use_g else 1):
                n4 = total - nr - ng
                if n4 and not use_4:
                    continue
                for rset in _reduced_forests(pairs, nr):
                    free = [p for p in pairs if p not in rset]
                    for gset in itertools.combinations(free, ng):
                        for qset in itertools.combinations(quads, n4):
                            yield Diagram.of(R=rset, gamma=gset, four=qset)


# ---------------------------------------------------------------------------
# link factors on E0 samples
# ---------------------------------------------------------------------------
@nb.njit(cache=True)
def _fill_fields(pos3, out, lo, shape, periodic, h, gamma, cd, d):
    for s in range(pos3.shape[0]):
        for i in range(pos3.shape[1]):
            deposit(out[s, i], pos3[s, i], 1.0, lo, shape, periodic, h, gamma, cd, d)


def _cube_gap(a, b, ell: float) -> float:
    g = np.maximum(np.abs(np.asarray(a) - np.asarray(b)) - 1, 0) * ell
    return float(np.sqrt(np.sum(g * g)))


class LinkFactors:
    """Mayer factors of every labelled pair and quadruple on a shared E0 sample set."""

    def __init__(self, rho: DensityConfig, q_bar, params: ModelParams, n_samples: int = 20_000,
                 seed: int = 0, chunk: int = 512):
        rho = rho if isinstance(rho, DensityConfig) else DensityConfig(*rho)
        d = params.d
        bar = _points(q_bar, d)
        if len(bar) and params.kac and params.beta > 0:
            raise NotImplementedError(
                "Kac couplings to boundary particles are not expanded; use h_p_direct")
        self.params, self.rho = params, rho
        self.labels = [(tuple(int(v) for v in c), i) for c, n in zip(rho.cubes, rho.counts)
                       for i in range(n)]
        self.col = {lab: k for k, lab in enumerate(self.labels)}
        self.cube = {lab: np.array(lab[0]) for lab in self.labels}
        self.n_samples = n_samples
        rng = np.random.default_rng(seed)
        self.pos = _sample_positions(rho, bar, params, n_samples, rng)
        N = len(self.labels)
        R = params.hc_radius
        ell = params.ell_minus
        reach = 2.0 / params.gamma
        self.kac = params.kac and params.beta > 0
        self.R_pairs, self.gamma_pairs, self.quads = [], [], []
        for a, b in itertools.combinations(self.labels, 2):
            gap = _cube_gap(a[0], b[0], ell)
            if R > 0 and gap <= R:
                self.R_pairs.append((a, b))
            if self.kac and gap < reach:
                self.gamma_pairs.append((a, b))
        if self.kac:
            for q in itertools.combinations(self.labels, 4):
                if all(_cube_gap(x[0], y[0], ell) < reach for x, y in itertools.combinations(q, 2)):
                    self.quads.append(q)
        self.fR = {}
        for a, b in self.R_pairs:
            diff = self.pos[:, self.col[a]] - self.pos[:, self.col[b]]
            self.fR[(a, b)] = -(distance(diff) <= R).astype(float)
        self.g2, self.g4, self.dJ2, self.dJ4 = {}, {}, {}, {}
        if self.kac and (self.gamma_pairs or self.quads):
            self._kac_factors(N, chunk)

    def _kac_factors(self, N: int, chunk: int):
        p = self.params
        ck = coarse_kernel(p)
        ell = p.ell_minus
        cubes = np.array([lab[0] for lab in self.labels])
        grid = QuadratureGrid.covering(p, np.vstack([cubes * ell, (cubes + 1) * ell]))
        g = grid
        S = self.n_samples
        J2 = {pair: np.empty(S) for pair in self.gamma_pairs}
        J4 = {q: np.empty(S) for q in self.quads}
        for s0 in range(0, S, chunk):
            sl = slice(s0, min(S, s0 + chunk))
            c = sl.stop - sl.start
            pos3 = np.zeros((c, N, 3))
            pos3[:, :, : p.d] = self.pos[sl]
            out = np.zeros((c, N, 1, *g.shape.tolist()))
            _fill_fields(pos3, out, g.lo, g.shape, g.periodic, g.h, g.gamma, g.cd, p.d)
            F = out.reshape(c, N, -1)
            for a, b in self.gamma_pairs:
                J2[(a, b)][sl] = g.weight * np.einsum("sg,sg->s", F[:, self.col[a]], F[:, self.col[b]])
            for q in self.quads:
                k = [self.col[x] for x in q]
                J4[q][sl] = g.weight * np.sum(F[:, k[0]] * F[:, k[1]] * F[:, k[2]] * F[:, k[3]], axis=1)
        memo: dict = {}

        def jt(cs):
            key = tuple(sorted(cs))
            if key not in memo:
                memo[key] = ck.coarse_potential(np.array(key))
            return memo[key]

        beta = p.beta
        self.dJ2, self.dJ4 = {}, {}
        for a, b in self.gamma_pairs:
            dj = self.dJ2[(a, b)] = J2[(a, b)] - jt((a[0], b[0]))
            # Delta H carries -(J2 - J~2) per pair; the hard core multiplies the gamma factor
            self.g2[(a, b)] = (1.0 + self.fR.get((a, b), 0.0)) * np.expm1(beta * dj)
        for q in self.quads:
            dj = self.dJ4[q] = J4[q] - jt(tuple(x[0] for x in q))
            self.g4[q] = np.expm1(-beta * dj)

    # -- per-link sample arrays -----------------------------------------------------
    def phi(self, kind: str, link) -> np.ndarray | float:
        if kind == "R":
            return self.fR.get(link, 0.0)
        if kind == "gamma":
            return self.g2.get(link, 0.0)
        return self.g4.get(link, 0.0)

    def first_order(self) -> list[tuple[str, tuple]]:
        return ([("R", x) for x in self.R_pairs if np.any(self.fR[x])]
                + [("gamma", x) for x in self.gamma_pairs] + [("4", x) for x in self.quads])

    def delta_H_samples(self) -> np.ndarray:
        """``Delta H`` per sample reassembled from the link differences (Kac part only)."""
        out = np.zeros(self.n_samples)
        for dj in self.dJ2.values():
            out -= dj
        for dj in self.dJ4.values():
            out += dj
        return out

    def product(self, theta: Diagram) -> np.ndarray:
        """Per-sample product of link factors times the Penrose factor of ``theta``."""
        out = np.ones(self.n_samples)
        for link in theta.links_R:
            out = out * self.phi("R", link)
        for link in theta.links_gamma:
            out = out * self.phi("gamma", link)
        for link in theta.links_4:
            out = out * self.phi("4", link)
        for link in penrose_links(theta):
            out = out * (1.0 + self.phi("R", link))
        return out


def diagram_activity(theta: Diagram, factors: LinkFactors) -> Estimate:
    """``E0`` of the link factors of ``theta`` times its Penrose factor."""
    if not in_theta_bar(theta):
        raise ValueError("activity is defined on reduced diagrams only")
    v = factors.product(theta)
    n = len(v)
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)), n)


# ---------------------------------------------------------------------------
# truncated cluster sum
# ---------------------------------------------------------------------------
@dataclass
class TruncationResult:
    value: float
    sigma: float
    discarded_bound: float
    order: int
    terms: list = field(default_factory=list)  # (term id, order, activity, cumulative)

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", "order", "activity", "cumulative"])
        for row in self.terms:
            w.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3]))])
        return buf.getvalue()


def _diagram_of(kind: str, link) -> Diagram:
    return Diagram.of(R=[link] if kind == "R" else (), gamma=[link] if kind == "gamma" else (),
                      four=[link] if kind == "4" else ())


def truncated_hp(rho: DensityConfig, q_bar, params: ModelParams, order: int = 2,
                 n_samples: int = 20_000, seed: int = 0, batches: int = 10,
                 factors: LinkFactors | None = None) -> TruncationResult:
    """``h^p`` from clusters of total link count at most ``order``.

    ``-h^p = sum_pi phi^T(pi) prod z``: at first order the single-link
    activities, at second order the connected two-link diagrams minus half
    the products of overlapping single-link pairs (Ursell coefficient -1).
    The discarded bound is ``N (e s)^{k+1} / (1 - e s)`` with ``s`` the
    largest summed first-order norm ``E0|phi|`` through one label.
    """
    if order > MAX_ORDER:
        raise GuardError(f"truncation order {order} exceeds the desk limit {MAX_ORDER}")
    rho = rho if isinstance(rho, DensityConfig) else DensityConfig(*rho)
    if order <= 0 or rho.total < 2:
        return TruncationResult(0.0, 0.0, 0.0, order)
    lf = factors or LinkFactors(rho, q_bar, params, n_samples, seed)
    first = lf.first_order()
    S = lf.n_samples
    diags1 = [_diagram_of(k, link) for k, link in first]
    Phi = np.array([np.broadcast_to(lf.phi(k, link), (S,)) for k, link in first]) if first \
        else np.zeros((0, S))
    M = len(first)
    inc = np.array([[not compatible(a, b) for b in diags1] for a in diags1], bool) if M \
        else np.zeros((0, 0), bool)
    second = []
    if order >= 2:
        for i, j in itertools.combinations(range(M), 2):
            (ki, li), (kj, lj) = first[i], first[j]
            if not inc[i, j]:
                continue
            if {ki, kj} == {"R", "gamma"} and li == lj:
                continue
            theta = Diagram.of(R=[x for k, x in (first[i], first[j]) if k == "R"],
                               gamma=[x for k, x in (first[i], first[j]) if k == "gamma"],
                               four=[x for k, x in (first[i], first[j]) if k == "4"])
            second.append((f"{ki}{li}+{kj}{lj}", lf.product(theta)))

    def evaluate(sl):
        z1 = Phi[:, sl].mean(axis=1)
        t1 = float(z1.sum())
        t2 = sum(float(v[sl].mean()) for _, v in second) - 0.5 * float(z1 @ inc @ z1) if order >= 2 else 0.0
        return t1, t2, z1

    t1, t2, z1 = evaluate(slice(None))
    value = -(t1 + t2)
    edges = np.linspace(0, S, batches + 1).astype(int)
    per = [-sum(evaluate(slice(a, b))[:2]) for a, b in zip(edges[:-1], edges[1:])]
    sigma = float(np.std(per, ddof=1) / math.sqrt(batches))
    norms = np.abs(Phi).mean(axis=1)
    s = 0.0
    for lab in lf.labels:
        s = max(s, sum(nv for d1, nv in zip(diags1, norms) if lab in d1.labels))
    es = math.e * s
    bound = len(lf.labels) * es ** (order + 1) / (1 - es) if es < 1 else math.inf
    terms, cum = [], 0.0
    for (k, link), z in zip(first, z1):
        cum -= z
        terms.append((f"{k}{link}", 1, float(z), cum))
    if order >= 2:
        for name, v in second:
            cum -= float(v.mean())
            terms.append((name, 2, float(v.mean()), cum))
        corr = -0.5 * float(z1 @ inc @ z1)
        cum -= corr
        terms.append(("overlap-products", 2, corr, cum))
    return TruncationResult(value, sigma, bound, order, terms)


# ---------------------------------------------------------------------------
# polymers over contours
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Cluster:
    """A connected collection of non-compatible diagrams, reduced to the small cubes it touches."""

    cells: frozenset  # small-cube index tuples
    diagrams: tuple = ()

    @classmethod
    def of_diagrams(cls, diagrams) -> "Cluster":
        cells = frozenset(lab[0] for t in diagrams for lab in t.labels)
        return cls(cells, tuple(diagrams))


@dataclass
class Frames:
    D: np.ndarray
    D_star: np.ndarray
    D_bar: np.ndarray


def _gap_within(mask: np.ndarray, ell: float, radius: float) -> np.ndarray:
    """Small cubes whose gap distance to ``mask`` is at most ``radius``."""
    src = np.argwhere(mask)
    allc = np.argwhere(np.ones_like(mask))
    out = np.zeros(mask.size, bool)
    if len(src) == 0:
        return out.reshape(mask.shape)
    for s0 in range(0, len(allc), 4096):
        block = allc[s0:s0 + 4096]
        gap = np.maximum(np.abs(block[:, None, :] - src[None]) - 1, 0) * ell
        out[s0:s0 + len(block)] = np.min(np.sum(gap * gap, axis=-1), axis=1) <= radius * radius + 1e-12
    return out.reshape(mask.shape)


def contour_frames(contour, params: ModelParams) -> Frames:
    """``D``: small cubes outside ``c(Gamma)`` within ``2/gamma``; ``D*`` adds one layer of
    neighbouring cubes; ``D-bar`` adds everything within ``ell_+/4`` of ``D``."""
    from scipy import ndimage
    r = params.scale_ratio
    ell = params.ell_minus
    c = np.kron(contour.c, np.ones((r,) * contour.d, bool)).astype(bool)
    D = _gap_within(c, ell, 2.0 / params.gamma) & ~c
    D_star = D | (ndimage.binary_dilation(D, structure=np.ones((3,) * D.ndim, bool)) & ~c)
    D_bar = D | _gap_within(D, ell, params.ell_plus / 4)
    return Frames(D, D_star, D_bar)


@dataclass
class Polymer:
    contours: list  # contour indices
    clusters: list  # cluster indices (connections and decorations)
    witnesses: dict  # (i, j) -> cluster index joining D*_i and D*_j

    def is_connected(self) -> bool:
        if len(self.contours) <= 1:
            return True
        adj = {i: set() for i in self.contours}
        for i, j in self.witnesses:
            adj[i].add(j)
            adj[j].add(i)
        seen, todo = {self.contours[0]}, [self.contours[0]]
        while todo:
            for w in adj[todo.pop()] - seen:
                seen.add(w)
                todo.append(w)
        return seen == set(self.contours)


@dataclass
class PolymerPartition:
    polymers: list
    absorbed: dict  # contour index -> cluster indices (the B_i classes)
    bulk: list  # clusters touching no frame


def _cells_mask(cells, shape) -> np.ndarray:
    m = np.zeros(shape, bool)
    for c in cells:
        if all(0 <= v < s for v, s in zip(c, shape)):
            m[tuple(c)] = True
    return m


def build_polymers(contours, clusters, params: ModelParams, frames=None) -> PolymerPartition:
    """Classify clusters against contour frames and group contours into polymers.

    A cluster inside ``D-bar_i`` is absorbed into contour ``i``; a cluster
    meeting ``D*_i`` and leaving ``D-bar_i`` connects to contour ``i``.
    Polymers are the connected components of the contour/connecting-cluster
    graph; clusters meeting no frame are bulk and cancel.
    """
    frames = frames or [contour_frames(c, params) for c in contours]
    absorbed = {i: [] for i in range(len(contours))}
    links: dict = {}
    bulk = []
    for k, cl in enumerate(clusters):
        touched = False
        for i, fr in enumerate(frames):
            m = _cells_mask(cl.cells, fr.D.shape)
            outside_box = len(cl.cells) > int(m.sum())
            if m.any() and not outside_box and not (m & ~fr.D_bar).any():
                absorbed[i].append(k)
                touched = True
            elif (m & fr.D_star).any():
                links.setdefault(k, []).append(i)
                touched = True
        if not touched:
            bulk.append(k)
    seen_abs: set = set()
    for i, ks in absorbed.items():
        if seen_abs & set(ks):
            raise ValueError("absorbed cluster classes overlap: the contours are too close "
                             "for disjoint frames")
        seen_abs |= set(ks)
    # union-find over contours through connecting clusters
    parent = list(range(len(contours)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, owners in links.items():
        for a, b in zip(owners, owners[1:]):
            parent[find(a)] = find(b)
    groups: dict = {}
    for i in range(len(contours)):
        groups.setdefault(find(i), []).append(i)
    polymers = []
    for members in groups.values():
        ms = set(members)
        cls = sorted(k for k, owners in links.items() if ms & set(owners))
        wit = {}
        for k in cls:
            for a, b in itertools.combinations(sorted(set(links[k])), 2):
                wit.setdefault((a, b), k)
        polymers.append(Polymer(sorted(members), cls, wit))
    polymers.sort(key=lambda P: P.contours)
    return PolymerPartition(polymers, absorbed, bulk)


# ---------------------------------------------------------------------------
# convergence ledger
# ---------------------------------------------------------------------------
@dataclass
class ConvergenceReport:
    margins: np.ndarray
    sizes: np.ndarray

    @property
    def worst_margin(self) -> float:
        return float(self.margins.min()) if len(self.margins) else math.inf

    @property
    def satisfied(self) -> bool:
        return bool(np.all(self.margins >= 0))


def convergence_check(activity_norms, geometry, a_per_cell: float = 1.0) -> ConvergenceReport:
    """Margins ``a(P) - sum_{P' incompatible with P} |z(P')| e^{a(P')}`` with ``a(P) = a |A(P)|``.

    ``geometry`` lists the cell sets ``A(P)``; polymers are incompatible
    when their cell sets intersect (each polymer is incompatible with
    itself).  Advisory only: a negative margin is reported, never raised.
    """
    z = np.abs(np.asarray(activity_norms, dtype=float))
    cells = [frozenset(map(tuple, g)) if not isinstance(g, frozenset) else g for g in geometry]
    a = a_per_cell * np.array([len(c) for c in cells], dtype=float)
    weight = z * np.exp(a)
    margins = np.empty(len(cells))
    for i, ci in enumerate(cells):
        margins[i] = a[i] - sum(weight[j] for j, cj in enumerate(cells) if ci & cj)
    return ConvergenceReport(margins, a)
