import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog
from scipy.stats import poisson

from lmphc.dobrushin import (DiscreteDistribution, DobrushinContext, UnderflowError,
                             compare_geometries, conditional_measure, cube_gap, discrepancy,
                             dobrushin_coefficient, fit_decay, interaction_reach,
                             restricted_window, uniqueness_check, vaserstein_1d)
from lmphc.effective_ham import DensityConfig
from lmphc.meanfield import find_beta_c, find_coexistence, unique_minimizer
from lmphc.model.params import ModelParams


def random_dist(rng, max_support=10, offset_range=5):
    k = int(rng.integers(1, max_support + 1))
    w = rng.random(k) ** 2
    w[rng.random(k) < 0.2] = 0.0
    if w.sum() == 0:
        w[0] = 1.0
    return DiscreteDistribution(int(rng.integers(-offset_range, offset_range + 1)), w / w.sum())


def lp_transport(p1, p2):
    """Optimal transport cost with cost |n1 - n2| solved as a linear program."""
    s1, s2 = p1.support, p2.support
    cost = np.abs(s1[:, None] - s2[None, :]).ravel().astype(float)
    a, b = len(s1), len(s2)
    A = np.zeros((a + b, a * b))
    for i in range(a):
        A[i, i * b:(i + 1) * b] = 1
    for j in range(b):
        A[a + j, j::b] = 1
    res = linprog(cost, A_eq=A, b_eq=np.concatenate([p1.probs, p2.probs]), bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                            "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0
    return res.fun


def random_coupling(p1, p2, rng):
    """Feasible coupling from the north-west corner rule on shuffled supports."""
    i_order, j_order = rng.permutation(len(p1.probs)), rng.permutation(len(p2.probs))
    a, b = p1.probs[i_order].copy(), p2.probs[j_order].copy()
    Q = np.zeros((len(a), len(b)))
    i = j = 0
    while i < len(a) and j < len(b):
        m = min(a[i], b[j])
        Q[i_order[i], j_order[j]] += m
        a[i] -= m
        b[j] -= m
        if a[i] <= b[j]:
            i += 1
        else:
            j += 1
    return Q


@pytest.fixture(scope="module")
def hot():
    """1D toy above the critical temperature with its window around the unique minimizer."""
    bc = find_beta_c(0.0, 1)
    p = ModelParams(d=1, gamma=0.25, beta=0.3 * bc, lam=0.0, alpha=0.25, a=0.1,
                    hamiltonian="multibody")
    rho = unique_minimizer(p.lam, p.beta, 0.0, 1)
    return p, restricted_window(p, rho), int(round(rho * p.ell_minus))


def toy_context(p, window, n0, sites=8):
    L = np.arange(sites)[:, None]
    return L, DobrushinContext(DensityConfig(L, np.full(sites, n0)), window)


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------
class TestDiscreteDistribution:
    def test_normalization_enforced(self):
        with pytest.raises(ValueError):
            DiscreteDistribution(0, [0.5, 0.4])
        with pytest.raises(ValueError):
            DiscreteDistribution(0, [1.5, -0.5])

    def test_restricted_support_must_fit_window(self):
        with pytest.raises(ValueError):
            DiscreteDistribution(2, [0.5, 0.5], restricted=True, window=(3, 5))

    def test_log_weights_rescaled_when_underflowing(self):
        lw = np.array([-2000.0, -2001.0, -2003.0])
        p = DiscreteDistribution.from_log_weights(0, lw)
        ref = np.exp(lw - lw.max())
        np.testing.assert_allclose(p.probs, ref / ref.sum(), rtol=1e-14)

    def test_all_zero_weights_error(self):
        with pytest.raises(UnderflowError):
            DiscreteDistribution.from_log_weights(0, [-np.inf, -np.inf])


# ---------------------------------------------------------------------------
# conditional measures
# ---------------------------------------------------------------------------
class TestConditionalMeasure:
    def test_entropy_only_is_truncated_poisson(self):
        p = ModelParams(d=2, gamma=0.25, kac=False, beta=1.0, alpha=0.25, a=0.1)
        rest = DensityConfig([[1, 0], [0, 1]], [3, 5])
        lo, hi = 2, 14
        m = conditional_measure((0, 0), rest, None, p, window=(lo, hi))
        ref = poisson.pmf(np.arange(lo, hi + 1), p.ell_minus**2)
        np.testing.assert_allclose(m.probs, ref / ref.sum(), rtol=1e-12)
        assert m.restricted and m.window == (lo, hi)

    def test_constant_shift_leaves_measure_unchanged(self, hot):
        p, window, n0 = hot
        rest = DensityConfig([[1], [2]], [n0, n0])
        from lmphc.effective_ham import assemble_h
        h = lambda rho: assemble_h(rho, None, p)
        a = conditional_measure((0,), rest, None, p, window=window, h=h)
        b = conditional_measure((0,), rest, None, p, window=window, h=lambda rho: h(rho) + 17.25)
        np.testing.assert_allclose(a.probs, b.probs, rtol=1e-12, atol=1e-15)

    def test_width_zero_window_is_point_mass(self, hot):
        p, _, n0 = hot
        m = conditional_measure((0,), DensityConfig([[1]], [n0]), None, p, window=(n0, n0))
        assert m.n_min == m.n_max == n0 and m.probs[0] == 1.0

    def test_window_from_coexistence(self):
        p = ModelParams(d=1, gamma=0.25, beta=2.2, alpha=0.25, a=0.1, hamiltonian="multibody")
        sol = find_coexistence(2.2, 0.0, 1)
        lo, hi = restricted_window(p, sol, "plus")
        vol = p.ell_minus
        assert all(abs(n / vol - sol.rho_plus) <= p.zeta for n in (lo, hi))
        assert abs((lo - 1) / vol - sol.rho_plus) > p.zeta
        assert abs((hi + 1) / vol - sol.rho_plus) > p.zeta
        mlo, mhi = restricted_window(p, sol, "minus")
        assert mhi < hi
        with pytest.raises(ValueError):
            restricted_window(p, sol, "sideways")

    def test_far_sites_do_not_matter_bit_for_bit(self, hot):
        p, window, n0 = hot
        reach = interaction_reach(p)
        far = int(math.ceil(reach / p.ell_minus)) + 2
        assert cube_gap((0,), (far,), p.ell_minus) > reach
        near = [[1], [-1], [2]]
        a = DensityConfig(near + [[far], [-far]], [n0, n0 + 1, n0 - 1, n0, n0])
        b = DensityConfig(near + [[far], [-far]], [n0, n0 + 1, n0 - 1, n0 + 3, 0])
        ma = conditional_measure((0,), a, None, p, window=window)
        mb = conditional_measure((0,), b, None, p, window=window)
        assert np.array_equal(ma.probs, mb.probs)

    def test_near_sites_matter(self, hot):
        p, window, n0 = hot
        ma = conditional_measure((0,), DensityConfig([[1]], [window[0]]), None, p, window=window)
        mb = conditional_measure((0,), DensityConfig([[1]], [window[1]]), None, p, window=window)
        assert vaserstein_1d(ma, mb) > 1e-3


# ---------------------------------------------------------------------------
# Vaserstein distance
# ---------------------------------------------------------------------------
class TestVaserstein:
    def test_trivial_cases(self):
        p = DiscreteDistribution(2, [0.25, 0.5, 0.25])
        assert vaserstein_1d(p, p) == 0.0
        assert vaserstein_1d(DiscreteDistribution.point_mass(3),
                             DiscreteDistribution.point_mass(5)) == 2.0

    def test_matches_lp_transport(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(200):
            p1, p2 = random_dist(rng), random_dist(rng)
            worst = max(worst, abs(vaserstein_1d(p1, p2) - lp_transport(p1, p2)))
        assert worst <= 1e-9

    def test_not_above_random_couplings(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            p1, p2 = random_dist(rng), random_dist(rng)
            Q = random_coupling(p1, p2, rng)
            np.testing.assert_allclose(Q.sum(axis=1), p1.probs, atol=1e-12)
            np.testing.assert_allclose(Q.sum(axis=0), p2.probs, atol=1e-12)
            cost = np.sum(Q * np.abs(p1.support[:, None] - p2.support[None, :]))
            assert vaserstein_1d(p1, p2) <= cost + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_metric_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_dist(rng) for _ in range(3))
        ab, ba = vaserstein_1d(a, b), vaserstein_1d(b, a)
        assert ab >= 0 and abs(ab - ba) <= 1e-12
        assert ab <= vaserstein_1d(a, c) + vaserstein_1d(c, b) + 1e-12

    def test_zero_only_for_equal(self):
        a = DiscreteDistribution(0, [0.5, 0.5])
        b = DiscreteDistribution(0, [0.5 + 1e-6, 0.5 - 1e-6])
        assert vaserstein_1d(a, b) > 0

    def test_unnormalized_input_rejected(self):
        with pytest.raises(ValueError):
            vaserstein_1d((0, [0.5, 0.4]), (0, [1.0]))

    def test_raw_pairs_accepted(self):
        assert vaserstein_1d((0, [1.0]), (4, [0.5, 0.5])) == 4.5


# ---------------------------------------------------------------------------
# boundary discrepancy
# ---------------------------------------------------------------------------
def exhaustive_discrepancy(a, b):
    if len(a) > len(b):
        a, b = b, a
    n, p = len(a), len(b) - len(a)
    best = n
    for inj in itertools.permutations(range(len(b)), n):
        best = min(best, sum(not np.array_equal(a[i], b[j]) for i, j in enumerate(inj)))
    return p + best


class TestDiscrepancy:
    def test_equal_sets(self):
        q = np.random.default_rng(0).random((5, 2))
        assert discrepancy(q, q) == 0

    def test_disjoint_sets(self):
        rng = np.random.default_rng(1)
        assert discrepancy(rng.random((3, 2)), rng.random((7, 2)) + 5) == 3 + 4

    def test_empty_side(self):
        assert discrepancy(np.zeros((0, 2)), np.ones((4, 2))) == 4
        assert discrepancy(None, None) == 0

    def test_matches_exhaustive_injections(self):
        rng = np.random.default_rng(2)
        pool = np.round(rng.random((8, 2)) * 4) / 4  # coarse pool: planted coincidences, repeats
        for _ in range(150):
            n = int(rng.integers(0, 7))
            p = int(rng.integers(0, 3))
            a = pool[rng.integers(0, len(pool), n)]
            b = np.vstack([pool[rng.integers(0, len(pool), n + p)], np.zeros((0, 2))])
            assert discrepancy(a, b) == exhaustive_discrepancy(a, b)
            assert discrepancy(b, a) == discrepancy(a, b)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        pool = rng.random((4, 1))
        a, b = pool[[0, 1, 1, 2]], pool[[1, 2, 3, 3, 0]]
        ref = discrepancy(a, b)
        for _ in range(20):
            assert discrepancy(a[rng.permutation(4)], b[rng.permutation(5)]) == ref

    def test_restricted_to_cube(self):
        a = np.array([[0.5, 0.5], [3.5, 0.5]])
        b = np.array([[0.5, 0.5], [3.7, 0.5], [9.0, 9.0]])
        assert discrepancy(a, b) == 2
        assert discrepancy(a, b, z=(0, 0), ell=1.0) == 0
        assert discrepancy(a, b, z=(3, 0), ell=1.0) == 1
        with pytest.raises(ValueError):
            discrepancy(a, b, z=(0, 0))


# ---------------------------------------------------------------------------
# coefficients and the uniqueness check
# ---------------------------------------------------------------------------
class TestCoefficient:
    def test_far_site_gives_zero(self, hot):
        p, window, n0 = hot
        _, ctx = toy_context(p, window, n0)
        far = int(math.ceil(interaction_reach(p) / p.ell_minus)) + 2
        assert dobrushin_coefficient((0,), (far,), p, ctx) == 0.0

    def test_identical_probes_give_zero(self, hot):
        p, _, n0 = hot
        ctx = DobrushinContext(DensityConfig([[0], [1]], [n0, n0]), (n0, n0))
        assert dobrushin_coefficient((0,), (1,), p, ctx) == 0.0

    def test_same_site_rejected(self, hot):
        p, window, n0 = hot
        _, ctx = toy_context(p, window, n0)
        with pytest.raises(ValueError):
            dobrushin_coefficient((2,), (2,), p, ctx)

    @pytest.mark.parametrize("a,b", [(0.3, 1.1), (-0.7, 0.4), (1.5, -2.0)])
    def test_quadratic_two_site_toy(self, hot, a, b):
        p = hot[0]

        def h(rho):
            n = dict(zip(map(tuple, rho.cubes), rho.counts))
            nx, nz = n.get((0,), 0), n.get((1,), 0)
            return a * nx**2 + b * nx * nz + 0.9 * nz**2

        ctx = DobrushinContext(DensityConfig([[0], [1]], [0, 0]), (0, 1), h=h)
        sig = lambda t: 1.0 / (1.0 + math.exp(t))
        expected = abs(sig(a) - sig(a + b))  # P(n_x = 1) for n_z = 0 and 1
        assert dobrushin_coefficient((0,), (1,), p, ctx) == pytest.approx(expected, abs=1e-6)


class TestUniqueness:
    def test_couplings_off(self):
        p = ModelParams(d=1, gamma=0.25, kac=False, beta=1.0, alpha=0.25, a=0.1)
        L, ctx = toy_context(p, (1, 6), 3, sites=5)
        rep = uniqueness_check(L, p, ctx)
        assert rep.u <= 1e-12 and rep.verdict

    def test_high_temperature_verdict(self, hot):
        p, window, n0 = hot
        L, ctx = toy_context(p, window, n0)
        rep = uniqueness_check(L, p, ctx)
        assert rep.u < 1 and rep.verdict
        assert rep.fit is not None and rep.fit.c2 > 0
        assert "lower bounds" in rep.caveat
        doc = json.loads(rep.to_json())
        assert doc["u"] == rep.u and len(doc["r"]) == 8 * 7

    def test_monotone_in_beta(self, hot):
        p, window, n0 = hot
        L, ctx = toy_context(p, window, n0)
        u_lo = uniqueness_check(L, p, ctx).u
        u_hi = uniqueness_check(L, p.replace(beta=2 * p.beta), ctx).u
        assert u_lo <= u_hi

    def test_parallel_matches_serial(self, hot):
        p, window, n0 = hot
        L, ctx = toy_context(p, window, n0, sites=5)
        assert uniqueness_check(L, p, ctx, jobs=3).r == uniqueness_check(L, p, ctx).r

    def test_fit_recovers_synthetic_decay(self):
        s = np.linspace(0.5, 12.0, 25)
        fit = fit_decay(s, 0.3 * np.exp(-0.2 * s))
        assert fit.c1 == pytest.approx(0.3, rel=0.01)
        assert fit.c2 == pytest.approx(0.2, rel=0.01)
        assert fit_decay([1.0, 1.0], [0.1, 0.2]) is None


# ---------------------------------------------------------------------------
# box versus torus
# ---------------------------------------------------------------------------
@pytest.fixture(scope="module")
def hot_comparison(hot):
    return compare_geometries(hot[0], n_plus=3, seeds=(0, 1), n_steps=200_000, record_every=100,
                              burn_in=20_000)


class TestCompareGeometries:
    def test_identical_geometry(self, hot):
        r = compare_geometries(hot[0], n_plus=3, seeds=(0, 1), n_steps=100_000, record_every=100,
                               burn_in=20_000, reference="box")
        assert np.all(np.abs(r.difference) <= 3 * r.sigma)
        assert r.noise_dominated and r.upper_bound is not None

    def test_high_temperature_far_difference_vanishes(self, hot_comparison):
        r = hot_comparison
        assert abs(r.difference[-1]) <= 3 * r.sigma[-1]

    def test_monotone_in_distance(self, hot_comparison):
        r = hot_comparison
        mag = np.abs(r.difference)
        for k in range(len(mag) - 1):
            assert mag[k + 1] <= mag[k] + 3 * math.hypot(r.sigma[k], r.sigma[k + 1])

    def test_csv(self, hot_comparison):
        lines = hot_comparison.to_csv().splitlines()
        assert lines[0] == "distance,difference,sigma"
        assert len(lines) == 1 + len(hot_comparison.distance)

    def test_small_torus_rejected(self, hot):
        with pytest.raises(ValueError):
            compare_geometries(hot[0], n_plus=2, torus_factor=2)
