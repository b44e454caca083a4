"""Tests for the dyadic grid-and-glue construction."""

import math

import numpy as np
import pytest

from surflab import cm
from surflab import field as F
from surflab.params import Params


P1 = Params()            # m=2, n=1: N0 = 4


def affine_field(A=(0.03, -0.02), c=0.005, N=129, span=1.9):
    A = np.asarray(A, float)
    h = 2 * span / (N - 1)
    return F.from_function(lambda p: p @ A[:, None] + c, 2, 1,
                           (-span, -span), h, (N, N))


# ---------------------------------------------------------------------------
# dyadic grid combinatorics


def test_build_level_counts_and_centers():
    for k in (4, 5):
        cubes = cm.build_level(P1, k)
        assert len(cubes) == (2 ** k) ** 2
        ell = P1.side_length(k)
        for cube in (cubes[0], cubes[-1], cubes[37]):
            want = -P1.sigma + (np.array(cube.index) + 0.5) * ell
            assert np.allclose(cube.center(P1), want, atol=1e-15)
        # cube centers tile [-sigma, sigma]^2
        cs = np.array([c.center(P1) for c in cubes])
        assert abs(cs.min() - (-P1.sigma + ell / 2)) < 1e-15
        assert abs(cs.max() - (P1.sigma - ell / 2)) < 1e-15


def test_father_and_neighbors():
    cube = cm.DyadicCube(5, (10, 21))
    assert cube.father_index == (5, 10)
    # the father's doubled cube contains the son
    ell5, ell4 = P1.side_length(5), P1.side_length(4)
    father = cm.DyadicCube(4, cube.father_index)
    assert np.all(np.abs(cube.center(P1) - father.center(P1))
                  <= ell4 / 2 + 1e-15)
    assert cube.is_neighbor(cm.DyadicCube(5, (11, 20)))
    assert not cube.is_neighbor(cm.DyadicCube(5, (12, 21)))
    assert not cube.is_neighbor(cube)
    assert not cube.is_neighbor(cm.DyadicCube(4, (10, 21)))


def test_build_grid_levels_and_guard():
    grid = cm.build_grid(P1)
    assert sorted(grid) == list(range(P1.N0, P1.k_max + 1))
    with pytest.raises(cm.CmError):
        cm.build_level(P1, P1.N0 - 1)


# ---------------------------------------------------------------------------
# partition bumps


def test_partition_bump_plateau_and_support():
    t = np.linspace(-1.0, 1.0, 41)
    assert np.all(cm.partition_bump(t) == 1.0)
    t = np.array([-1.2, -1.125, 1.125, 1.2, 2.0])
    assert np.all(cm.partition_bump(t) == 0.0)
    mid = cm.partition_bump(np.array([1.05, 1.0625, 1.11]))
    assert np.all((0 < mid) & (mid < 1))
    assert mid[0] > mid[1] > mid[2]


def test_partition_bump_smooth_transition():
    # the transition profile is C^1 at the plateau junctions: finite
    # differences of the derivative stay bounded near t = 1 and t = 9/8
    t = np.linspace(0.99, 1.14, 3001)
    v = cm.partition_bump(t)
    d = np.gradient(v, t)
    assert abs(d[0]) < 1e-6 and abs(d[-1]) < 1e-6
    assert np.max(np.abs(d)) < 20.0


def test_partition_covers_unit_cube():
    # every point of [-sigma, sigma]^2 sits in the plateau of its own cube
    k = 4
    cubes = cm.build_level(P1, k)
    ell = P1.side_length(k)
    rng = np.random.default_rng(11)
    pts = rng.uniform(-P1.sigma, P1.sigma, size=(200, 2))
    total = np.zeros(len(pts))
    for cube in cubes:
        total += cm.cube_bump(pts, cube.center(P1), ell)
    assert np.all(total >= 1.0 - 1e-12)
    assert np.all(total <= 4.0 + 1e-12)     # at most 2^m overlapping plateaus


# ---------------------------------------------------------------------------
# per-cube package on affine input


@pytest.fixture(scope="module")
def affine_run():
    run = cm.CenterManifoldRun(affine_field(), P1, store_packages=True)
    run.run_level(4)
    return run


def test_affine_cube_package_exact(affine_run):
    pkg = affine_run.packages[4][(3, 12)]
    assert pkg.excess <= 1e-13
    assert abs(pkg.stats["tilt"] - math.hypot(0.03, 0.02)) < 1e-9
    assert pkg.stats["k_full"]
    assert pkg.stats["z_f_l1"] < 1e-15
    A = np.array([[0.03, -0.02]])
    want = pkg.g.points() @ A.T + 0.005
    assert np.abs(pkg.g.values.reshape(-1, 1) - want).max() < 1e-12


def test_affine_fixed_point_level(affine_run):
    zeta = affine_run.zeta[4]
    assert F.c0_distance(zeta, affine_run.u_zeta) < 1e-10


def test_affine_fixed_point_deeper_level():
    run = cm.CenterManifoldRun(affine_field(N=97), P1, store_packages=False)
    zeta = run.run_level(5)
    assert F.c0_distance(zeta, run.u_zeta) < 1e-10


def test_vertical_translation_equivariance():
    u1 = affine_field(c=0.005, N=97)
    u2 = affine_field(c=0.305, N=97)
    z1 = cm.CenterManifoldRun(u1, P1, store_packages=False).run_level(4)
    z2 = cm.CenterManifoldRun(u2, P1, store_packages=False).run_level(4)
    assert np.abs(z2.values - z1.values - 0.3).max() < 1e-11


def test_glued_interpolation_matches_run(affine_run):
    pkgs = list(affine_run.packages[4].values())
    out = cm.glued_interpolation(pkgs, P1, affine_run.u_zeta)
    gap = np.abs(out.values - affine_run.zeta[4].values)
    assert gap.max() < 1e-12


def test_glued_interpolation_incomplete_cover_raises(affine_run):
    pkgs = list(affine_run.packages[4].values())[:-40]
    with pytest.raises(cm.CmError):
        cm.glued_interpolation(pkgs, P1, affine_run.u_zeta)


# ---------------------------------------------------------------------------
# guards


def test_domain_too_small_raises():
    with pytest.raises(cm.CmError):
        cm.CenterManifoldRun(affine_field(span=1.2, N=65), P1)


def test_steep_graph_raises():
    u = affine_field(A=(1.8, 1.2), N=65)
    with pytest.raises(cm.CmError):
        cm.CenterManifoldRun(u, P1)


def test_level_below_coarsest_raises(affine_run):
    with pytest.raises(cm.CmError):
        affine_run.run_level(P1.N0 - 1)


def test_unit_excess_leaves_no_truncation_radius():
    # E >= 1 makes rho = r (1 - E^gamma) nonpositive: the construction is
    # undefined there and must refuse rather than truncate at |rho|
    from surflab.lipapprox import LipApproxError, lipschitz_approximation
    v = affine_field(A=(0.0, 0.0), N=65, span=1.0)
    with pytest.raises(LipApproxError):
        lipschitz_approximation(v, 1.2, Params(excess_threshold=2.0), r=0.9)


# ---------------------------------------------------------------------------
# laplacian helper


def test_laplacian_c0_quadratic_oracle():
    u = F.from_function(lambda p: p[:, 0:1] ** 2 + 2 * p[:, 1:2] ** 2,
                        2, 1, (-1, -1), 0.05, (41, 41))
    assert abs(cm._laplacian_c0(u, 0.8) - 6.0) < 1e-10


# ---------------------------------------------------------------------------
# non-affine smoke: smooth perturbation through the full pipeline


@pytest.fixture(scope="module")
def wavy_run():
    eps = 0.01
    u = F.from_function(
        lambda p: eps * np.sin(1.3 * p[:, 0:1]) * np.cos(0.9 * p[:, 1:2]),
        2, 1, (-1.9, -1.9), 2 * 1.9 / 192, (193, 193))
    run = cm.CenterManifoldRun(u, P1, store_packages=True)
    run.run_level(4)
    run.run_level(5)
    return run


def test_wavy_excess_positive_and_small(wavy_run):
    assert 0 < wavy_run.excess < 1e-3
    stats = wavy_run.cube_stats[4]
    assert all(s["excess"] >= 0 for s in stats)
    assert max(s["excess"] for s in stats) < P1.excess_threshold


def test_wavy_zeta_tracks_u(wavy_run):
    g4 = F.c0_distance(wavy_run.zeta[4], wavy_run.u_zeta)
    g5 = F.c0_distance(wavy_run.zeta[5], wavy_run.u_zeta)
    root = math.sqrt(wavy_run.excess)
    assert g5 < g4                       # refinement improves the glue
    assert g5 < 0.1 * root


def test_wavy_norm_report(wavy_run):
    rep = cm.cm_norm_report(wavy_run.zeta[5], wavy_run.u_zeta, P1,
                            excess=wavy_run.excess)
    assert rep["d1_c0"] > 0
    assert rep["d_c2beta"] >= rep["d1_c0"] + rep["d2_c0"] + rep["d3_c0"]
    assert rep["c0_gap"] == F.c0_distance(wavy_run.zeta[5], wavy_run.u_zeta)
    assert rep["scaled"]["d1_c0"] == rep["d1_c0"] / math.sqrt(wavy_run.excess)


def test_wavy_estimate_report_finite(wavy_run):
    rep = cm.cube_estimate_report(wavy_run, max_pairs=60)
    assert sorted(rep["levels"]) == [4, 5]
    for k, entry in rep["levels"].items():
        assert np.isfinite(entry["z_f_l1_ratio"]["max"])
        assert np.isfinite(entry["laplacian_ratio"]["max"])
    lvl5 = rep["levels"][5]
    assert "pair_c_ratio" in lvl5 and np.isfinite(lvl5["pair_c_ratio"]["max"])
    assert lvl5["pair_l1_ratio"]["median"] >= 0


def test_wavy_mollification_gap_positive(wavy_run):
    # a genuinely curved graph has z != f
    stats = wavy_run.cube_stats[4]
    assert max(s["z_f_l1"] for s in stats) > 0
    assert max(s["delta_z_c0"] for s in stats) > 0
