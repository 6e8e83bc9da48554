import math
import warnings

import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from lmphc import effective_ham as eh
from lmphc.meanfield import e_lambda, find_coexistence
from lmphc.model.domain import Domain
from lmphc.model.energy import energy_multibody
from lmphc.model.kernel import kernel_of_distance
from lmphc.model.params import ModelParams
from lmphc.sampler import GCMCSampler, integrated_autocorrelation

warnings.filterwarnings("ignore", message="scale ordering")


def kac2d(**kw):
    base = dict(d=2, gamma=0.25, hc_radius=0.2, beta=1.9, lam=0.0)
    base.update(kw)
    return ModelParams(**base)


def place(rho, ell, rng):
    return np.vstack([(c + rng.random((n, len(c)))) * ell for c, n in zip(rho.cubes, rho.counts)])


# ---------------------------------------------------------------- admissible volume
def test_admissible_volume_fast_path():
    p = kac2d(hc_radius=0.5)
    ell = p.ell_minus
    assert eh.admissible_volume((0, 0), np.zeros((0, 2)), 0.5, ell, 2) == ell**2
    assert eh.admissible_volume((0, 0), [[-0.6, 1.0]], 0.5, ell, 2) == ell**2


def test_admissible_volume_half_disc():
    ell, R = 2.8284271247461903, 0.5
    v = eh.admissible_volume((0, 0), [[ell / 2, 0.0]], R, ell, 2, resolution=32)
    exact = ell**2 - math.pi * R**2 / 2
    assert abs(v - exact) / exact <= 1e-3


def test_admissible_volume_half_ball_3d_and_1d():
    ell, R = 2.0, 0.4
    v3 = eh.admissible_volume((0, 0, 0), [[1.0, 1.0, 0.0]], R, ell, 3)
    assert v3 == pytest.approx(ell**3 - 2 / 3 * math.pi * R**3, rel=1e-6)
    v1 = eh.admissible_volume((0,), [[0.1], [0.3], [2.3]], R, ell, 1)
    assert v1 == pytest.approx(ell - (0.7 - 0.0) - (2.0 - 1.9))


def test_admissible_volume_against_monte_carlo():
    ell, R = 2.0, 0.6
    pts = np.array([[0.9, -0.1], [0.2, 2.2], [1.9, 1.0], [1.4, 0.3]])
    v = eh.admissible_volume((0, 0), pts, R, ell, 2)
    rng = np.random.default_rng(4)
    x = rng.random((2_000_000, 2)) * ell
    ok = np.all(np.linalg.norm(x[:, None] - pts[None], axis=-1) > R, axis=1)
    sigma = ell**2 * math.sqrt(ok.mean() * (1 - ok.mean()) / len(x))
    assert abs(v - ell**2 * ok.mean()) <= 3 * sigma


def test_admissible_volume_requires_resolution():
    with pytest.raises(ValueError):
        eh.admissible_volume((0, 0), [[0.0, 0.0]], 0.5, 2.0, 2, resolution=16)


def test_boundary_factor_log_z():
    bf = eh.BoundaryFactor((0, 0), 3.0, 2.0, 2)
    assert bf.log_Z(0) == 0.0
    assert bf.log_Z(2) == pytest.approx(2 * math.log(3.0 / 4.0))
    assert eh.BoundaryFactor((0, 0), 0.0, 2.0, 2).log_Z(1) == -math.inf


# ---------------------------------------------------------------- h0 / delta H
def test_h0_trivial_cases():
    p = kac2d(lam=0.7)
    assert eh.h0(eh.DensityConfig.empty(2), None, p) == 0.0
    assert eh.h0(eh.DensityConfig([[3, 1]], [1]), None, p) == pytest.approx(-0.7, abs=1e-15)


def test_h0_matches_explicit_label_sums():
    p = kac2d(lam=0.3)
    rng = np.random.default_rng(11)
    for _ in range(3):
        cubes = np.array([[0, 0], [1, 0], [0, 1]]) + rng.integers(-2, 3, 2)
        rho = eh.DensityConfig(cubes, rng.integers(0, 3, 3) + 1)
        assert eh.h0(rho, None, p) == pytest.approx(eh.h0_direct(rho, p), abs=1e-9)


def test_h0_with_boundary_counts_is_relative_energy():
    p = kac2d(lam=0.3)
    rho = eh.DensityConfig([[0, 0], [1, 0]], [2, 1])
    bar = eh.DensityConfig([[2, 0], [0, 1]], [1, 2])
    union = eh.DensityConfig([[0, 0], [1, 0], [2, 0], [0, 1]], [2, 1, 1, 2])
    expected = eh.h0_direct(union, p) - eh.h0_direct(bar, p)
    assert eh.h0(rho, bar, p) == pytest.approx(expected, abs=1e-9)


def test_h0_count_sufficiency_bit_identical():
    p = kac2d()
    ell = p.ell_minus
    rho = eh.DensityConfig([[0, 0], [1, 1], [0, 1]], [3, 1, 2])
    rng = np.random.default_rng(5)
    vals = {eh.h0(eh.DensityConfig.from_positions(place(rho, ell, rng), ell, 2), None, p)
            for _ in range(4)}
    assert len(vals) == 1


def test_h0_rejects_foreign_tables():
    p = kac2d()
    other = eh.precompute_tables(kac2d(gamma=0.2))
    with pytest.raises(eh.MissingPrecomputationError):
        eh.h0(eh.DensityConfig([[0, 0]], [2]), None, p, tables=other)


def test_delta_h_empty_and_definition():
    p = kac2d(lam=0.2)
    assert eh.delta_H(np.zeros((0, 2)), None, p) == 0.0
    rng = np.random.default_rng(2)
    rho = eh.DensityConfig([[0, 0], [1, 0]], [2, 2])
    q = place(rho, p.ell_minus, rng)
    full = energy_multibody(q, p, distinct=True)
    assert eh.delta_H(q, None, p) == pytest.approx(full - eh.h0(rho, None, p), abs=1e-12)


def test_delta_h_lipschitz_bound_on_six_particles():
    p = kac2d()
    rng = np.random.default_rng(8)
    rho = eh.DensityConfig([[0, 0], [1, 0], [0, 1], [1, 1]], [2, 2, 1, 1])
    for _ in range(10):
        q = place(rho, p.ell_minus, rng)
        assert abs(eh.delta_H(q, None, p)) <= eh.delta_H_bound(q, p)


def test_delta_h_vanishes_with_cube_size():
    # with gamma fixed, shrinking ell_- makes J nearly constant over each cube;
    # the worst |Delta H| falls roughly in proportion to ell_-
    rng = np.random.default_rng(9)
    worst, ells = [], []
    for alpha in (0.25, 0.6, 0.9):
        p = kac2d(alpha=alpha, a=0.05, hc_radius=0.0)
        rho = eh.DensityConfig([[0, 0], [1, 0], [0, 1]], [1, 1, 1])
        worst.append(max(abs(eh.delta_H(place(rho, p.ell_minus, rng), None, p)) for _ in range(40)))
        ells.append(p.ell_minus)
    assert worst[0] > worst[1] > worst[2]
    assert worst[2] / worst[0] < 1.2 * ells[2] / ells[0]


# ---------------------------------------------------------------- E0 and h^p
def test_e0_constant_observable():
    p = kac2d()
    rho = eh.DensityConfig([[0, 0], [1, 0]], [2, 1])
    est = eh.reference_expectation_E0(rho, [[-0.1, 1.0]], lambda x: 1.0, p, n_samples=500)
    assert est.value == 1.0 and est.sigma == 0.0


def test_e0_left_half_indicator():
    p = kac2d()
    ell = p.ell_minus
    rho = eh.DensityConfig([[0, 0]], [1])
    est = eh.reference_expectation_E0(rho, None, lambda x: float(x[0, 0] < ell / 2), p,
                                      n_samples=20_000, seed=3)
    assert est.within(0.5)


def test_e0_two_particle_hard_core_against_quadrature():
    p = kac2d(hc_radius=0.8)
    ell, R = p.ell_minus, p.hc_radius
    rho = eh.DensityConfig([[0, 0]], [2])
    est = eh.reference_expectation_E0(rho, None, lambda x: float(np.linalg.norm(x[0] - x[1]) > R), p,
                                      n_samples=40_000, seed=1)
    # density of the difference vector of two uniform points in a square
    inside, _ = dblquad(lambda y, x: (ell - abs(x)) * (ell - abs(y)) / ell**4, -R, R,
                        lambda x: -math.sqrt(R * R - x * x), lambda x: math.sqrt(R * R - x * x))
    assert est.within(1.0 - inside)


def test_e0_respects_boundary_exclusion_and_factorizes():
    p = kac2d(hc_radius=0.9)
    ell, R = p.ell_minus, p.hc_radius
    q_bar = np.array([[ell / 2, -0.2], [ell + 0.4, ell + 0.1]])
    rho = eh.DensityConfig([[0, 0], [1, 0]], [2, 1])
    pos = eh._sample_positions(rho, q_bar, p, 2000, np.random.default_rng(0))
    assert np.all(np.linalg.norm(pos[:, :, None] - q_bar[None, None], axis=-1) > R)
    # uniform product measure: probability of avoiding qbar = prod_x (|C_x|/ell^d)^n_x
    rng = np.random.default_rng(1)
    n = 400_000
    x0 = rng.random((n, 2, 2)) * ell
    x1 = np.array([ell, 0.0]) + rng.random((n, 1, 2)) * ell
    x = np.concatenate([x0, x1], axis=1)
    ok = np.all(np.linalg.norm(x[:, :, None] - q_bar[None, None], axis=-1) > R, axis=(1, 2))
    logz = sum(bf.log_Z(int(k)) for bf, k in zip(eh.boundary_factors(rho, q_bar, p), rho.counts))
    sigma = math.sqrt(ok.mean() * (1 - ok.mean()) / n)
    assert abs(ok.mean() - math.exp(logz)) <= 3 * sigma


def test_log_z_matches_rejection_statistics():
    p = kac2d(hc_radius=1.0)
    ell, R = p.ell_minus, p.hc_radius
    q_bar = np.array([[ell / 2, 0.0], [0.0, 0.0]])
    frac = eh.admissible_volume((0, 0), q_bar, R, ell, 2) / ell**2
    rng = np.random.default_rng(6)
    x = rng.random((200_000, 2)) * ell
    acc = np.all(np.linalg.norm(x[:, None] - q_bar[None], axis=-1) > R, axis=1)
    assert abs(acc.mean() - frac) <= 3 * math.sqrt(frac * (1 - frac) / len(x))


def test_e0_rejects_swallowed_cube():
    p = kac2d(hc_radius=3.5, gamma=0.25)
    ell = p.ell_minus
    rho = eh.DensityConfig([[0, 0]], [1])
    with pytest.raises(eh.RejectionError):
        eh.reference_expectation_E0(rho, [[ell / 2, ell / 2]], lambda x: 1.0, p, n_samples=10)


def test_hp_zero_at_infinite_temperature():
    p = kac2d(beta=0.0, hc_radius=0.0)
    rho = eh.DensityConfig([[0, 0], [1, 0]], [3, 2])
    est = eh.h_p_direct(rho, None, p, n_samples=1000)
    assert est.value == 0.0 and est.sigma == 0.0


def test_hp_single_particle_is_zero():
    p = kac2d()
    est = eh.h_p_direct(eh.DensityConfig([[0, 0]], [1]), None, p, n_samples=1000)
    assert est.value == pytest.approx(0.0, abs=1e-12)


def test_hp_batch_matches_delta_h():
    p = kac2d(lam=0.4)
    rho = eh.DensityConfig([[0, 0], [1, 0], [0, 1]], [2, 1, 1])
    q_bar = np.array([[-0.1, 1.0], [3.0, -0.1]])
    pos = eh._sample_positions(rho, q_bar, p, 4, np.random.default_rng(3))
    logw, _ = eh._log_weights(pos, rho, q_bar, p)
    for lw, q in zip(logw, pos):
        assert -lw / p.beta == pytest.approx(eh.delta_H(q, q_bar, p), abs=1e-12)


def test_hp_budgets_agree():
    p = kac2d()
    rho = eh.DensityConfig([[0, 0], [1, 0], [0, 1]], [2, 1, 1])
    a = eh.h_p_direct(rho, None, p, n_samples=10_000, seed=0)
    b = eh.h_p_direct(rho, None, p, n_samples=100_000, seed=1)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.sigma, b.sigma)


def test_hp_rejects_vanishing_estimate():
    p = kac2d(hc_radius=2.5)
    with pytest.raises(eh.EstimateError):
        eh.h_p_direct(eh.DensityConfig([[0, 0]], [6]), None, p, n_samples=200)


def test_tilted_expectation_constant_and_reference_limit():
    p = kac2d(beta=0.0, hc_radius=0.0)
    ell = p.ell_minus
    rho = eh.DensityConfig([[0, 0]], [2])
    assert eh.tilted_expectation(lambda x: 2.0, rho, None, p, n_samples=200).value == pytest.approx(2.0)
    est = eh.tilted_expectation(lambda x: float(x[0, 0] < ell / 2), rho, None, p, n_samples=20_000)
    assert est.within(0.5)


# ---------------------------------------------------------------- assembly
def test_assemble_trivial_and_entropy():
    p = kac2d()
    assert eh.assemble_h(eh.DensityConfig.empty(2), None, p) == 0.0
    assert eh.entropy_term(eh.DensityConfig([[0, 0]], [2]), 2.0, 2) == pytest.approx(-math.log(8.0))


def _toy_weights(p, cap, n_samples=20_000):
    """Normalized e^{-h} over (n0, n1) with n0 + n1 <= cap, plus relative errors."""
    states, logw, err = [], [], []
    for n0 in range(cap + 1):
        for n1 in range(cap + 1 - n0):
            rho = eh.DensityConfig([[0], [1]], [n0, n1])
            hp = eh.h_p_direct(rho, None, p, n_samples=n_samples, seed=n0 * 10 + n1) \
                if n0 + n1 > 1 else eh.Estimate(0.0, 0.0, 0)
            states.append((n0, n1))
            logw.append(-eh.assemble_h(rho, None, p, hp_provider=lambda *_: hp))
            err.append(hp.sigma)
    w = np.exp(np.array(logw) - max(logw))
    return states, w / w.sum(), np.array(err)


def test_two_cube_toy_reproduces_sampler_histogram():
    p = ModelParams(d=1, gamma=0.25, hc_radius=0.3, beta=1.9, lam=-0.3, hamiltonian="multibody")
    assert p.scale_ratio == 2
    cap = 4
    states, w, rel = _toy_weights(p, cap)
    dom = Domain.from_params(p, "box", n_plus=1)
    s = GCMCSampler(p, dom, seed=12, max_particles=cap, convention="multibody")
    s.step(20_000)
    counts = np.empty((100_000, 2), np.int64)
    for k in range(len(counts)):
        s.step(20)
        counts[k] = s.counts
    for (n0, n1), wk, rk in zip(states, w, rel):
        ind = ((counts[:, 0] == n0) & (counts[:, 1] == n1)).astype(float)
        tau = integrated_autocorrelation(ind)
        sigma = math.sqrt(max(wk * (1 - wk), 1e-12) * 2 * tau / len(ind)) + wk * rk
        assert abs(ind.mean() - wk) <= 3 * sigma, ((n0, n1), ind.mean(), wk, sigma)


# ---------------------------------------------------------------- surface term
@pytest.fixture(scope="module")
def mf1d():
    return find_coexistence(2.5, 0.04, d=1)


def _half_space_oracle(p, rho, lam):
    """Dense quadrature of the surface term of the half line (-inf, 0]."""
    g = p.gamma

    def J(s):
        return float(kernel_of_distance(np.array([abs(s)]), g, 1)[0])

    def mass_right(x):  # int_0^inf J(x - y) dy
        if x <= -1 / g:
            return 0.0
        return quad(J, -1 / g, min(x, 1 / g), epsabs=1e-14, epsrel=1e-13)[0]

    def u(x):
        return rho * mass_right(x)

    outside = quad(lambda x: e_lambda(rho, lam) - e_lambda(u(x), lam), 0, 1 / g, epsabs=1e-13,
                   epsrel=1e-12, limit=200)[0]
    inside = quad(lambda x: e_lambda(u(x), lam), -1 / g, 0, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return outside - inside


@pytest.mark.parametrize("sign", [1, -1])
def test_surface_term_half_space_1d(mf1d, sign):
    p = ModelParams(d=1, gamma=0.25, hc_radius=0.04, beta=2.5)
    rho = mf1d.rho_plus if sign > 0 else mf1d.rho_minus
    half = _half_space_oracle(p, rho, mf1d.lambda_coex)
    # an interval longer than 2/gamma has two independent half-line boundaries
    value = eh.surface_term_I(np.ones(3, bool), sign, p, mf1d)
    assert value == pytest.approx(2 * half, abs=1e-6)


def test_surface_term_empty_boundary(mf1d):
    p = ModelParams(d=1, gamma=0.25, hc_radius=0.04, beta=2.5)
    assert eh.surface_term_I(np.zeros(4, bool), 1, p, mf1d) == 0.0


def test_surface_integrand_support_2d():
    mf = find_coexistence(2.5, 0.1, d=2)
    p = kac2d(hc_radius=0.1, beta=2.5)
    region = np.zeros((3, 3), bool)
    region[1, 1] = True
    region[1, 2] = True
    _, (grid, member, integrand) = eh.surface_term_I(region, 1, p, mf, return_fields=True)
    # distance from every node to the region boundary (boundary of the union of squares)
    xs = [grid.node_coords(a) for a in range(2)]
    X, Y = np.meshgrid(*xs, indexing="ij")
    L = p.ell_plus
    inside = member[:, :, 0]

    def dist_to_rect(x, y):
        dx = np.maximum(np.maximum(L - x, x - 2 * L), 0)
        dy = np.maximum(np.maximum(L - y, y - 3 * L), 0)
        return np.hypot(dx, dy)

    depth = np.minimum.reduce([X - L, 2 * L - X, Y - L, 3 * L - Y])
    dist = np.where(inside, depth, dist_to_rect(X, Y))
    far = dist > 1 / p.gamma + grid.h
    assert np.all(np.abs(integrand[:, :, 0][far]) < 1e-12)
    assert np.any(np.abs(integrand[:, :, 0][~far]) > 1e-6)
