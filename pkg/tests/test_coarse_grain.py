import itertools
import json
import math
from collections import deque

import numpy as np
import pytest

from lmphc.coarse_grain import (AmbiguousWindowError, ContourBoundaryError,
                                InsufficientStatistics, PhaseField, Theta_values, coarse_grid,
                                contour_events, correlation_observable,
                                cutoff_weight, dump_contours, empirical_density,
                                euler_characteristic_2d, eta_field, eta_of_counts, eta_window,
                                extract_contours, field_csv, is_simply_connected,
                                kernel_product_integral, outer_boundary, peierls_statistics,
                                theta_fields, theta_fields_direct, theta_values, wilson_interval)
from lmphc.meanfield import MeanFieldSolution, find_coexistence
from lmphc.model import Domain, ModelParams, ParticleConfiguration
from lmphc.sampler import lattice_fill


@pytest.fixture(scope="module")
def setup2d():
    p = ModelParams(d=2, gamma=0.25, hc_radius=0.1, beta=1.9, lam=0.0, alpha=0.25, a=1.66)
    mf = find_coexistence(p.beta, p.hc_radius, p.d)
    return p, mf


# ---------------------------------------------------------------- densities
def test_empirical_density_trivial(setup2d):
    p, _ = setup2d
    dom = Domain.from_params(p, "box", n_plus=2)
    q = ParticleConfiguration(np.zeros((0, 2)), dom, p)
    assert empirical_density(q, p.ell_minus, (0, 0)) == 0.0
    pts = np.array([[0.5, 0.5], [1.0, 1.5], [2.0, 0.3]])
    q = ParticleConfiguration(pts, dom, p)
    assert empirical_density(q, p.ell_minus, (0, 0)) == 3 / p.ell_minus**2
    assert empirical_density(q, p.ell_minus, np.array([1.0, 1.0])) == 3 / p.ell_minus**2


def test_counts_partition_and_refinement(setup2d):
    p, _ = setup2d
    dom = Domain.from_params(p, "box", n_plus=3)
    rng = np.random.default_rng(0)
    pos = rng.random((500, 2)) * dom.side
    q = ParticleConfiguration(pos, dom, p, check=False)
    small = coarse_grid(q, "minus")
    large = coarse_grid(q, "plus")
    assert small.counts.sum() == 500
    assert np.array_equal(small.coarsen(p.scale_ratio).counts, large.counts)
    assert large.ell == pytest.approx(small.ell * p.scale_ratio)
    assert small.centers()[0, 0] == pytest.approx([p.ell_minus / 2] * 2)
    np.testing.assert_allclose(small.densities(), small.counts / p.ell_minus**2)


# ---------------------------------------------------------------- eta
def test_eta_lattice_plus_and_empty(setup2d):
    p, mf = setup2d
    dom = Domain.from_params(p, "box", n_plus=2)
    lo, hi = eta_window(mf.rho_plus, p.zeta, p.ell_minus, 2)
    per = int(np.clip(round(mf.rho_plus * p.ell_minus**2), lo, hi))
    q = ParticleConfiguration(lattice_fill(p, dom, per), dom, p)
    assert np.all(eta_field(q, p, mf).values == 1)
    empty = ParticleConfiguration(np.zeros((0, 2)), dom, p)
    assert mf.rho_minus > p.zeta
    assert np.all(eta_field(empty, p, mf).values == 0)


def test_eta_boundary_inclusive():
    ell, d = 2.0, 2
    rho_p, rho_m = 1.0, 0.25
    n = 5
    zeta = n / ell**d - rho_p  # density exactly rho_+ + zeta
    assert eta_of_counts(np.array([n]), ell, d, rho_m, rho_p, zeta)[0] == 1
    assert eta_of_counts(np.array([n]), ell, d, rho_m, rho_p, math.nextafter(zeta, 0))[0] == 0


def test_eta_ambiguous_windows_rejected():
    with pytest.raises(AmbiguousWindowError):
        eta_of_counts(np.array([1]), 1.0, 1, 0.5, 1.0, 0.25)


# ---------------------------------------------------------------- theta / Theta
def test_theta_all_plus():
    eta = PhaseField("eta", 1.0, np.ones((8, 8), np.int8))
    th, Th = theta_fields(eta, 2)
    assert np.all(th.values == 1) and np.all(Th.values == 1)


def test_single_zero_subcube():
    eta = np.ones((10, 10), np.int8)
    eta[4, 5] = 0
    th, Th = theta_values(eta, 2), Theta_values(theta_values(eta, 2))
    assert th[2, 2] == 0 and (th == 0).sum() == 1
    zero = np.argwhere(Th == 0)
    assert len(zero) == 9
    assert np.all(np.abs(zero - [2, 2]).max(axis=1) <= 1)
    ref_th, ref_Th = theta_fields_direct(eta, 2)
    assert np.array_equal(th, ref_th) and np.array_equal(Th, ref_Th)


def test_checkerboard_at_large_scale():
    blocks = np.where(np.indices((4, 4)).sum(0) % 2 == 0, 1, -1).astype(np.int8)
    eta = np.kron(blocks, np.ones((3, 3), np.int8))
    th, Th = theta_values(eta, 3), Theta_values(theta_values(eta, 3))
    assert np.array_equal(th, blocks)
    assert np.all(Th == 0)
    assert np.array_equal(Th, theta_fields_direct(eta, 3)[1])


def test_theta_vs_direct_and_strictness_chain():
    rng = np.random.default_rng(1)
    for k in range(1000):
        d = 1 + k % 3
        r = 2 if d == 3 else 3
        n = {1: 8, 2: 5, 3: 3}[d]
        # blocky fields so that all three values of Theta occur
        base = rng.choice([-1, 0, 1], size=(n,) * d, p=[0.3, 0.1, 0.6])
        eta = np.kron(base, np.ones((r,) * d, np.int8)).astype(np.int8)
        flip = rng.random(eta.shape) < 0.03
        eta[flip] = rng.choice([-1, 0, 1], size=flip.sum())
        th = theta_values(eta, r)
        Th = Theta_values(th)
        ref_th, ref_Th = theta_fields_direct(eta, r)
        assert np.array_equal(th, ref_th) and np.array_equal(Th, ref_Th)
        fine_th = np.kron(th, np.ones((r,) * d, np.int8))
        fine_Th = np.kron(Th, np.ones((r,) * d, np.int8))
        assert np.all((Th == 0) | (Th == th))
        assert np.all((fine_th == 0) | (fine_th == eta))
        assert np.all((fine_Th == 0) | (fine_Th == eta))


def test_theta_outside_value():
    th = np.ones((3, 3), np.int8)
    assert np.all(Theta_values(th, outside=1) == 1)
    Th = Theta_values(th, outside=-1)
    assert Th[1, 1] == 1 and (Th == 0).sum() == 8


# ---------------------------------------------------------------- contours
def _flood_components(mask, neighbours):
    seen = np.zeros(mask.shape, bool)
    comps = []
    for start in map(tuple, np.argwhere(mask)):
        if seen[start]:
            continue
        comp, queue = set(), deque([start])
        seen[start] = True
        while queue:
            c = queue.popleft()
            comp.add(c)
            for off in neighbours:
                nb = tuple(a + o for a, o in zip(c, off))
                if all(0 <= a < s for a, s in zip(nb, mask.shape)) and mask[nb] and not seen[nb]:
                    seen[nb] = True
                    queue.append(nb)
        comps.append(frozenset(comp))
    return comps


def _vertex_offsets(d):
    return [o for o in itertools.product((-1, 0, 1), repeat=d) if any(o)]


def _face_offsets(d):
    return [tuple(s if i == a else 0 for i in range(d)) for a in range(d) for s in (-1, 1)]


def flood_fill_oracle(Theta):
    """Components of Theta == 0, their interiors and signs, by explicit BFS."""
    d = Theta.ndim
    out = []
    for sp in _flood_components(Theta == 0, _vertex_offsets(d)):
        spm = np.zeros(Theta.shape, bool)
        spm[tuple(np.array(list(sp)).T)] = True
        rest = _flood_components(~spm, _face_offsets(d))
        interiors = []
        for comp in rest:
            touches = any(any(a in (0, s - 1) for a, s in zip(c, Theta.shape)) for c in comp)
            if touches:
                continue
            adj = [c for c in comp
                   if any(tuple(a + o for a, o in zip(c, off)) in sp for off in _vertex_offsets(d))]
            interiors.append((frozenset(comp), int(Theta[adj[0]])))
        out.append((sp, frozenset(interiors)))
    return sorted(out, key=lambda t: sorted(t[0]))


def _random_theta(rng, d, n, r):
    base = rng.choice([-1, 0, 1], size=(n,) * d, p=[0.25, 0.15, 0.6])
    frame = np.ones((n,) * d, bool)
    frame[tuple(slice(2, -2) for _ in range(d))] = False
    base[frame] = 1
    eta = np.kron(base, np.ones((r,) * d, np.int8)).astype(np.int8)
    flip = (rng.random(eta.shape) < 0.02) & ~np.kron(frame, np.ones((r,) * d, bool)).astype(bool)
    eta[flip] = rng.choice([-1, 0, 1], size=flip.sum())
    return eta, Theta_values(theta_values(eta, r))


def test_contours_match_flood_fill_oracle():
    rng = np.random.default_rng(5)
    n_nontrivial = 0
    for k in range(100):
        d = 2 if k < 80 else 3
        n = 11 if d == 2 else 7
        eta, Th = _random_theta(rng, d, n, 2)
        contours = extract_contours(Th, eta, 2)
        got = sorted(((frozenset(map(tuple, c.cubes)),
                       frozenset((frozenset(map(tuple, p.cubes)), p.sign) for p in c.interiors))
                      for c in contours), key=lambda t: sorted(t[0]))
        assert got == flood_fill_oracle(Th)
        n_nontrivial += len(contours) > 0
        for c in contours:
            assert np.all(Th[c.A_ext] == c.sign)
            assert not np.any(c.A_ext & c.c)
            assert np.all(c.A <= c.interior)
            for piece in c.interiors:
                assert np.all(Th[piece.boundary] == piece.sign)
            if d <= 3:
                assert is_simply_connected(c.c)
                for piece in c.interiors:
                    assert is_simply_connected(piece.mask)
        for a, b in itertools.combinations(contours, 2):
            assert not np.any(outer_boundary(a.sp) & b.sp)
    assert n_nontrivial > 50


def test_no_contours_for_all_plus():
    assert extract_contours(np.ones((5, 5), np.int8)) == []


def test_square_block_contour():
    Th = np.ones((9, 9), np.int8)
    Th[3:6, 3:6] = 0
    (c,) = extract_contours(Th)
    assert c.sign == 1 and c.n_gamma == 9 and c.interiors == []
    assert c.A_ext.sum() == 25 - 9


def test_annulus_contour():
    Th = np.ones((9, 9), np.int8)
    Th[3:6, 3:6] = 0
    Th[4, 4] = -1
    (c,) = extract_contours(Th)
    assert c.sign == 1 and c.n_gamma == 8
    assert len(c.interiors) == 1
    (piece,) = c.interiors
    assert piece.sign == -1 and piece.cubes == [[4, 4]]
    assert c.A.sum() == 1
    assert c.c.sum() == 9


def test_contour_reaching_boundary():
    Th = np.ones((5, 5), np.int8)
    Th[0, 2] = 0
    with pytest.raises(ContourBoundaryError, match="boundary"):
        extract_contours(Th)


def test_diagonal_ring_separates_inside():
    # a diamond of vertex-connected cubes encloses the centre
    Th = np.ones((7, 7), np.int8)
    for i, j in [(1, 3), (2, 2), (2, 4), (3, 1), (3, 5), (4, 2), (4, 4), (5, 3)]:
        Th[i, j] = 0
    (c,) = extract_contours(Th)
    assert len(c.interiors) == 1
    assert c.interiors[0].cubes == [[2, 3], [3, 2], [3, 3], [3, 4], [4, 3]]


def test_contour_json_and_csv_dump(tmp_path):
    Th = np.ones((9, 9), np.int8)
    Th[3:6, 3:6] = 0
    Th[4, 4] = -1
    eta = np.ones((18, 18), np.int8)
    eta[8:10, 8:10] = -1
    eta[6, 6] = 0
    cs = extract_contours(PhaseField("Theta", 1.0, Th), eta, 2)
    text = dump_contours(cs, tmp_path / "c.json")
    data = json.loads((tmp_path / "c.json").read_text())
    assert data == json.loads(text)
    assert set(data[0]) == {"sign", "cubes", "eta", "interiors", "N_gamma"}
    assert data[0]["interiors"] == [{"sign": -1, "cubes": [[4, 4]]}]
    assert data[0]["eta"][0] == [0, 1, 1, 1]
    lines = field_csv(Th).splitlines()
    assert lines[0] == "i0,i1,value" and len(lines) == 82 and lines[1] == "0,0,1"


def test_euler_characteristic():
    ring = np.ones((3, 3), bool)
    ring[1, 1] = False
    assert euler_characteristic_2d(ring) == 0
    assert euler_characteristic_2d(np.ones((3, 3), bool)) == 1
    assert euler_characteristic_2d(np.eye(3, dtype=bool)) == 1
    assert not is_simply_connected(ring)
    shell = np.ones((3, 3, 3), bool)
    shell[1, 1, 1] = False
    assert not is_simply_connected(shell)


# ---------------------------------------------------------------- correlation observable
@pytest.fixture(scope="module")
def obs_setup():
    p = ModelParams(d=2, gamma=0.25, hc_radius=0.1, beta=1.9, lam=0.0)
    dom = Domain.from_params(p, "box", n_plus=2)
    return p, dom


def _brute_observable(q, cells, p):
    ell = p.ell_minus
    members = []
    for c in cells:
        lo = np.asarray(c) * ell
        members.append([x for x in q.positions if np.all((x >= lo) & (x < lo + ell))])
    total = 0.0
    for tup in itertools.product(*members):
        total += kernel_product_integral(np.array(tup), p)
    return total / math.factorial(len(cells))


def test_observable_empty_cell(obs_setup):
    p, dom = obs_setup
    q = ParticleConfiguration([[0.5, 0.5]], dom, p)
    assert correlation_observable(q, [(0, 0), (1, 0)], 2) == 0.0


def test_observable_one_particle_each(obs_setup):
    p, dom = obs_setup
    x1, x2 = [1.0, 1.0], [3.5, 1.2]
    q = ParticleConfiguration([x1, x2], dom, p)
    f = correlation_observable(q, [(0, 0), (1, 0)], 2)
    assert f == pytest.approx(kernel_product_integral([x1, x2], p) / 2, rel=1e-12)
    assert f > 0


def test_observable_brute_force(obs_setup):
    p, dom = obs_setup
    rng = np.random.default_rng(3)
    ell = p.ell_minus
    pts = np.vstack([rng.random((3, 2)) * ell * 0.98 + [0, 0], rng.random((2, 2)) * ell * 0.98 + [ell, 0]])
    q = ParticleConfiguration(pts, dom, p, check=False)
    cells = [(0, 0), (1, 0)]
    assert correlation_observable(q, cells, 2) == pytest.approx(_brute_observable(q, cells, p), abs=1e-12)
    pts4 = np.vstack([rng.random((2, 2)) * ell * 0.98 + np.array(c) * ell
                      for c in [(0, 0), (1, 0), (0, 1), (1, 1)]])
    q4 = ParticleConfiguration(pts4, dom, p, check=False)
    cells4 = [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert correlation_observable(q4, cells4, 4) == pytest.approx(
        _brute_observable(q4, cells4, p), abs=1e-12)
    assert correlation_observable(q, [(0, 0)], 1) == 3.0


def test_observable_out_of_range():
    p = ModelParams(d=1, gamma=0.25, hc_radius=0.0)
    dom = Domain.from_params(p, "box", n_plus=4)
    ell = p.ell_minus
    q = ParticleConfiguration([[0.5], [5 * ell + 0.5]], dom, p)
    assert correlation_observable(q, [(0,), (5,)], 2) == 0.0


# ---------------------------------------------------------------- Peierls statistics
def test_wilson_interval_reference():
    # textbook value: 10 successes in 20 trials, 95 percent
    lo, hi = wilson_interval(0.5, 20)
    assert lo == pytest.approx(0.2993, abs=1e-4) and hi == pytest.approx(0.7007, abs=1e-4)
    assert wilson_interval(0.0, 100)[0] == pytest.approx(0.0, abs=1e-15)


def test_cutoff_weight_value():
    p = ModelParams(d=1, gamma=0.25, beta=2.0).with_zeta(0.2)
    assert cutoff_weight(p, 3, c=5.0) == pytest.approx(
        math.exp(-2.0 * 0.05 * 0.04 * p.ell_minus * 3))


def _one_cube_contour(n=5, d=1):
    Th = np.ones((n,) * d, np.int8)
    Th[(n // 2,) * d] = 0
    return Th


def _poisson_meanfield(p, rho_minus, rho_plus):
    return MeanFieldSolution(p.beta, p.hc_radius, 0.0, p.lam, rho_minus, rho_plus, 0.5, 0.4, 0.6,
                             0.0, 0.0)


@pytest.fixture(scope="module")
def poisson_setup():
    # interactions off: occupation numbers are independent Poisson(ell_-) variables
    p = ModelParams(d=1, gamma=0.25, hc_radius=0.0, beta=1.0, lam=0.0, kac=False).with_zeta(0.2)
    mf = _poisson_meanfield(p, 0.35, 1.06)
    Th = _one_cube_contour()
    r = p.scale_ratio
    eta = np.ones(5 * r, np.int8)
    eta[2 * r] = 0
    (c,) = extract_contours(Th, eta, r)
    return p, mf, c


def test_identical_events_give_ratio_one(poisson_setup):
    p, mf, c = poisson_setup
    plus = np.ones_like(c.eta)
    est = peierls_statistics(c, 1, p, mf, n_samples=300, thin=50, burn_in=1000, eta_gamma=plus)
    assert est.ratio == 1.0 and est.ratio_ci == (1.0, 1.0)


def test_poisson_limit_against_sector_probabilities(poisson_setup):
    from scipy.stats import poisson
    p, mf, c = poisson_setup
    mean = p.ell_minus
    lo, hi = eta_window(mf.rho_plus, p.zeta, p.ell_minus, 1)
    mlo, mhi = eta_window(mf.rho_minus, p.zeta, p.ell_minus, 1)
    p_plus = poisson.cdf(hi, mean) - poisson.cdf(lo - 1, mean)
    p_minus = poisson.cdf(mhi, mean) - poisson.cdf(mlo - 1, mean)
    p_zero = 1 - p_plus - p_minus
    expected = p_zero * p_plus / (p_plus * p_plus)
    est = peierls_statistics(c, 1, p, mf, n_samples=4000, thin=40, burn_in=2000, seed=2)
    assert est.ratio_ci[0] <= expected <= est.ratio_ci[1]
    assert est.p_denominator == pytest.approx(p_plus**2, abs=4 * math.sqrt(p_plus**2 / est.n_eff))


def test_two_seeds_overlap(poisson_setup):
    p, mf, c = poisson_setup
    a = peierls_statistics(c, 1, p, mf, n_samples=2000, thin=40, burn_in=1000, seed=10)
    b = peierls_statistics(c, 1, p, mf, n_samples=2000, thin=40, burn_in=1000, seed=11)
    assert a.overlaps(b)


def test_insufficient_statistics_and_cap(poisson_setup):
    p, mf, c = poisson_setup
    # an unreachable plus density makes the reference event impossible
    mf_far = _poisson_meanfield(p, 0.35, 40.0)
    with pytest.raises(InsufficientStatistics) as err:
        peierls_statistics(c, 1, p, mf_far, n_samples=50, thin=20, burn_in=0)
    assert err.value.hits_denominator == 0
    big = np.ones((9,), np.int8)
    big[2:7] = 0
    (cb,) = extract_contours(big, np.zeros(18, np.int8), 2)
    with pytest.raises(ValueError, match="cap"):
        peierls_statistics(cb, 1, p, mf, max_support=4)


def test_cutoff_applied(poisson_setup):
    p, mf, c = poisson_setup
    est = peierls_statistics(c, 1, p, mf, n_samples=400, thin=40, burn_in=500, cutoff_c=1e6)
    assert est.cutoff == pytest.approx(cutoff_weight(p, 1, 1e6))
    assert est.weight == min(est.ratio, est.cutoff)


def test_contour_events_direct(poisson_setup):
    p, mf, c = poisson_setup
    lo, hi = eta_window(mf.rho_plus, p.zeta, p.ell_minus, 1)
    counts = np.full(5 * p.scale_ratio, lo)
    assert contour_events(counts, c, c.eta, 1, p, mf) == (False, True)
    counts[2 * p.scale_ratio] = 0
    assert contour_events(counts, c, c.eta, 1, p, mf) == (True, False)
