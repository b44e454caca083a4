"""Tests for area minimization and first-variation audits."""

import math

import numpy as np
import pytest

from surflab import field as F
from surflab import minimize as M


def boundary_field(fn, N=65, span=1.0, n=1):
    h = 2 * span / (N - 1)
    return F.from_function(fn, 2, n, (-span, -span), h, (N, N))


def trig_boundary(eps=0.1, N=65):
    # eps * cos(2 theta) on the bounding square, extended smoothly
    def fn(p):
        th = np.arctan2(p[:, 1:2], p[:, 0:1])
        return eps * np.cos(2 * th) * (p[:, 0:1] ** 2 + p[:, 1:2] ** 2)
    return boundary_field(fn, N=N)


# ---------------------------------------------------------------------------
# minimize_area


def test_affine_boundary_solved_at_warm_start():
    f = boundary_field(lambda p: 0.2 * p[:, 0:1] - 0.1 * p[:, 1:2])
    res = M.minimize_area(f, tol=1e-10)
    assert res.iterations == 0
    assert res.final_gradient_norm < 1e-10
    assert np.abs(res.solution.values - f.values).max() < 1e-12


def test_boundary_values_bit_exact():
    f = trig_boundary()
    res = M.minimize_area(f, tol=1e-10)
    bm = M.boundary_mask(f.dims)
    assert np.array_equal(res.solution.values[bm], f.values[bm])


def test_energy_monotone_and_below_harmonic():
    f = trig_boundary(eps=0.1, N=65)
    res = M.minimize_area(f, tol=1e-12)
    hist = res.energy_history
    assert all(hist[i + 1] <= hist[i] + 1e-14 for i in range(len(hist) - 1))
    harm = M.harmonic_extension(f)
    assert M.total_area_energy(res.solution) <= M.total_area_energy(harm) + 1e-14


def test_matches_high_resolution_oracle():
    # C0 distance to a 2x-resolution solve restricted to coarse nodes ~ C h^2
    res_c = M.minimize_area(trig_boundary(eps=0.1, N=33), tol=1e-12)
    res_f = M.minimize_area(trig_boundary(eps=0.1, N=65), tol=1e-12)
    coarse = res_c.solution
    fine = res_f.solution.values[::2, ::2]
    err = np.abs(coarse.values - fine).max()
    assert err < 5e-4


def test_boundary_lipschitz_guard():
    f = boundary_field(lambda p: 0.9 * np.abs(p[:, 0:1]))
    with pytest.raises(M.MinimizeError):
        M.minimize_area(f)


def test_vertical_translation_invariance():
    f = trig_boundary(eps=0.08, N=49)
    res1 = M.minimize_area(f, tol=1e-12)
    g = f.copy()
    g.values = g.values + 0.37
    res2 = M.minimize_area(g, tol=1e-12)
    assert np.abs(res2.solution.values - res1.solution.values - 0.37).max() \
        < 1e-10


def test_symmetry_equivariance():
    f = trig_boundary(eps=0.1, N=49)     # symmetric under (x,y) -> (y,x) flip
    res = M.minimize_area(f, tol=1e-12)
    v = res.solution.values[..., 0]
    # cos(2 theta) is antisymmetric under the swap x <-> y
    assert np.abs(v + v.T).max() < 1e-8


# ---------------------------------------------------------------------------
# first variation


def test_first_variation_affine_tiny():
    f = boundary_field(lambda p: 0.3 * p[:, 0:1] + 0.1)
    kappas = M.make_test_fields(f, 6, seed=3)
    assert M.first_variation_residual(f, kappas) < 1e-10


def test_first_variation_of_minimizer():
    tol = 1e-10
    res = M.minimize_area(trig_boundary(eps=0.1, N=65), tol=tol)
    kappas = M.make_test_fields(res.solution, 8, seed=5)
    assert M.first_variation_residual(res.solution, kappas) <= 10 * tol


def test_first_variation_harmonic_not_minimal_cubic():
    # harmonic but non-minimal fields: residual ~ O(eps^3)
    residuals = []
    epss = [0.1, 0.2, 0.4]
    for eps in epss:
        f = boundary_field(
            lambda p: eps * (p[:, 0:1] ** 3 - 3 * p[:, 0:1] * p[:, 1:2] ** 2),
            N=65)
        h = M.harmonic_extension(f)
        kappas = M.make_test_fields(h, 6, seed=9)
        residuals.append(M.first_variation_residual(h, kappas))
    assert all(r > 1e-12 for r in residuals)
    slope = np.polyfit(np.log(epss), np.log(residuals), 1)[0]
    assert 2.5 < slope < 3.5


def test_first_variation_compact_support_guard():
    f = boundary_field(lambda p: 0.1 * p[:, 0:1], N=33)
    bad = boundary_field(lambda p: np.ones((p.shape[0], 1)), N=33)
    with pytest.raises(M.MinimizeError):
        M.first_variation_residual(f, [bad])


def test_first_variation_refinement_floor():
    vals = []
    for N in (33, 65):
        res = M.minimize_area(trig_boundary(eps=0.1, N=N), tol=1e-12)
        kappas = M.make_test_fields(res.solution, 5, seed=2)
        vals.append(M.first_variation_residual(res.solution, kappas))
    assert vals[1] <= max(vals[0], 1e-10) * 10


# ---------------------------------------------------------------------------
# linearization gap


def test_linearization_gap_constant_zero():
    f = boundary_field(lambda p: np.full((p.shape[0], 1), 0.2), N=33)
    assert abs(M.linearization_gap(f)) < 1e-13


def test_linearization_gap_affine_analytic():
    a = 0.1
    f = F.from_function(lambda p: a * p[:, 0:1], 2, 1, (0, 0), 1 / 128,
                        (129, 129))
    gap = M.linearization_gap(f)
    want = math.sqrt(1 + a * a) - 1 - a * a / 2
    assert abs(gap - want) < 1e-9
    assert abs(gap - (-1.2438e-5)) < 1e-9


def test_linearization_gap_quartic_scaling():
    base = boundary_field(
        lambda p: np.sin(2 * p[:, 0:1]) * np.cos(p[:, 1:2]), N=65)
    ratios = []
    for s in (0.2, 0.1, 0.05):
        f = base.copy()
        f.values = s * f.values
        ratios.append(abs(M.linearization_gap(f)) / s ** 4)
    assert max(ratios) / min(ratios) < 2.0


# ---------------------------------------------------------------------------
# integrand derivatives (oracles for the Newton machinery)


def test_integrand_derivative_matches_fd():
    rng = np.random.default_rng(4)
    for shape in ((1, 2), (2, 2)):
        A = rng.uniform(-0.8, 0.8, size=shape)
        DF = M.integrand_derivative(A[None])[0]
        step = 1e-6
        for i in np.ndindex(*shape):
            E = np.zeros(shape)
            E[i] = step
            fd = (M.integrand_value((A + E)[None])[0]
                  - M.integrand_value((A - E)[None])[0]) / (2 * step)
            assert abs(DF[i] - fd) < 1e-8


def test_integrand_derivative_small_slope_expansion():
    # DF(A) = A + O(|A|^3)
    rng = np.random.default_rng(6)
    for _ in range(20):
        A = rng.uniform(-0.05, 0.05, size=(1, 2))
        DF = M.integrand_derivative(A[None])[0]
        assert np.abs(DF - A).max() < 5 * np.linalg.norm(A) ** 3 + 1e-15


# ---------------------------------------------------------------------------
# closed-form minimal graph


def test_scherk_graph_is_stationary():
    # the exact solution's first variation vanishes up to quadrature error,
    # at the same level a converged Newton minimizer reaches
    u = M.scherk_graph(0.15, 1.2, 97)
    res = M.first_variation_residual(u, M.make_test_fields(u, 6, seed=5))
    assert res < 1e-10


def test_scherk_graph_small_parameter_expansion():
    # u = (a/2)(y^2 - x^2) + O(a^3)
    a = 0.01
    u = M.scherk_graph(a, 1.0, 41)
    p = u.points()
    saddle = (a / 2) * (p[:, 1] ** 2 - p[:, 0] ** 2)
    assert np.abs(u.values.ravel() - saddle).max() < a ** 3


def test_scherk_graph_singular_line_guard():
    with pytest.raises(M.MinimizeError):
        M.scherk_graph(1.0, 1.9, 33)
    with pytest.raises(M.MinimizeError):
        M.scherk_graph(-0.1, 1.0, 33)
