"""Tests for the quantitative verification suites."""

import json
import math

import numpy as np
import pytest

from surflab import verify as V
from surflab import field as F


def scalar_field(fn, N=161, span=1.0):
    h = 2 * span / (N - 1)
    return F.from_function(lambda p: fn(p)[:, None], 2, 1,
                           (-span, -span), h, (N, N))


# ---------------------------------------------------------------------------
# harmonic decay


def test_laplacian_residual_oracle():
    h = scalar_field(lambda p: p[:, 0] ** 2 - p[:, 1] ** 2, N=81)
    assert V.laplacian_residual(h) < 1e-10
    g = scalar_field(lambda p: p[:, 0] ** 2, N=81)
    assert abs(V.laplacian_residual(g) - 2.0) < 1e-9


def test_harmonic_decay_saddle_exact_ratio():
    # Dh = (2x, -2y) has zero mean on centered disks, so
    # lhs / energy = (rho/r)^{m+2} exactly in the continuum
    h = scalar_field(lambda p: p[:, 0] ** 2 - p[:, 1] ** 2, N=321)
    rep = V.harmonic_decay_check(h, (0.0, 0.0), rho=0.4, r=0.8)
    assert abs(rep["ratio"] - 1.0) < 0.01
    assert abs(rep["energy"] - 2 * math.pi * 0.8 ** 4) < 2e-3


def test_harmonic_decay_affine_zero():
    h = scalar_field(lambda p: 0.3 * p[:, 0] - 0.1 * p[:, 1] + 0.2, N=81)
    rep = V.harmonic_decay_check(h, (0.0, 0.0), rho=0.3, r=0.7)
    assert rep["lhs"] < 1e-12


def test_harmonic_decay_rejects_nonharmonic():
    g = scalar_field(lambda p: p[:, 0] ** 2, N=81)
    with pytest.raises(V.VerifyError):
        V.harmonic_decay_check(g, (0.0, 0.0), rho=0.3, r=0.7)


def test_harmonic_decay_degree_four_battery():
    # harmonic polynomials Re/Im (x + iy)^k, k <= 4: ratio bounded by 2
    polys = [
        lambda p: p[:, 0] ** 3 - 3 * p[:, 0] * p[:, 1] ** 2,
        lambda p: 3 * p[:, 0] ** 2 * p[:, 1] - p[:, 1] ** 3,
        lambda p: p[:, 0] ** 4 - 6 * p[:, 0] ** 2 * p[:, 1] ** 2
        + p[:, 1] ** 4,
    ]
    for fn in polys:
        h = scalar_field(fn, N=241)
        # the five-point stencil has O(h^2 D^4 h) truncation error, so the
        # analytic quartic presets need a loosened residual gate
        rep = V.harmonic_decay_check(h, (0.0, 0.0), rho=0.35, r=0.7,
                                     residual_tol=1e-3)
        assert rep["ratio"] <= 2.0


# ---------------------------------------------------------------------------
# excess decay sweep


def test_decay_sweep_affine_exact_zero():
    u = scalar_field(lambda p: 0.04 * p[:, 0] - 0.02 * p[:, 1], N=121,
                     span=1.3)
    table = V.excess_decay_sweep(u, (0.0, 0.0, 0.0), r0=1.0, depth=3)
    assert table.exact_zero
    assert table.slope is None
    assert all(r == 0.0 for r in table.ratios)
    assert all(e <= 1e-14 for e in table.excesses)
    assert max(table.tilt_gaps) < 1e-6


def test_decay_table_rejects_bad_ladder():
    u = scalar_field(lambda p: 0.0 * p[:, 0], N=41, span=1.2)
    t = V.excess_decay_sweep(u, (0.0, 0.0, 0.0), r0=1.0, depth=2)
    with pytest.raises(V.VerifyError):
        V.DecayTable(t.center, [1.0, 1.0, 0.5], t.excesses, t.planes,
                     t.ratios, None, True)


def test_decay_sweep_curved_graph_slope():
    # graph of a small harmonic function: excess ~ r^2 oscillation of Du,
    # so log E vs log r fits a positive slope near 2
    u = scalar_field(lambda p: 0.02 * (p[:, 0] ** 2 - p[:, 1] ** 2),
                     N=241, span=1.3)
    p0 = (0.0, 0.0, 0.0)
    table = V.excess_decay_sweep(u, p0, r0=1.0, depth=3)
    assert not table.exact_zero
    assert all(e > 0 for e in table.excesses)
    assert all(r < 0.5 for r in table.ratios)
    assert 1.5 < table.slope < 2.5


# ---------------------------------------------------------------------------
# mean oscillation


def test_mean_oscillation_affine_all_zero():
    u = scalar_field(lambda p: 0.05 * p[:, 0], N=121, span=1.4)
    rep = V.mean_oscillation_check(u, [((0.0, 0.0), 0.2), ((0.1, -0.1), 0.15)])
    assert rep["measured_C"] < 1e-12
    assert rep["closed_form_gap_max"] < 1e-14


def test_mean_oscillation_curved_finite():
    u = scalar_field(lambda p: 0.03 * (p[:, 0] ** 2 - p[:, 1] ** 2),
                     N=161, span=1.4)
    rep = V.mean_oscillation_check(u, [((0.0, 0.0), 0.2), ((0.15, 0.1), 0.2)])
    assert 0 < rep["measured_C"] < 1e4
    assert np.isfinite(rep["measured_C"])
    assert rep["closed_form_gap_max"] < 1e-12


# ---------------------------------------------------------------------------
# Morrey iteration


def test_morrey_affine_constant_averages():
    u = scalar_field(lambda p: 0.2 * p[:, 0] - 0.1 * p[:, 1], N=121, span=1.2)
    rep = V.morrey_iteration(u, (0.0, 0.0), [0.8, 0.4, 0.2, 0.1])
    assert max(rep["gaps"]) < 1e-12
    assert rep["alpha"] is None
    assert max(rep["lebesgue_gaps"]) < 1e-10


def test_morrey_cubic_quadratic_decay():
    # u = x1^3: (Du)_{0,r} = (3 r^2 / 4, 0), so gaps scale like r^2
    u = scalar_field(lambda p: p[:, 0] ** 3, N=321, span=1.1)
    radii = [0.8, 0.4, 0.2, 0.1]
    rep = V.morrey_iteration(u, (0.0, 0.0), radii)
    for r, avg in zip(radii, rep["averages"]):
        assert abs(avg[0] - 0.75 * r * r) < 2e-3
        assert abs(avg[1]) < 1e-12
    assert 1.8 < rep["alpha"] < 2.2
    # Lebesgue-point comparison: |(Du)_{0,r} - Du(0)| = 3 r^2 / 4
    for r, g in zip(radii, rep["lebesgue_gaps"]):
        assert abs(g - 0.75 * r * r) < 2e-3


def test_morrey_rejects_increasing_radii():
    u = scalar_field(lambda p: p[:, 0], N=41, span=1.1)
    with pytest.raises(V.VerifyError):
        V.morrey_iteration(u, (0.0, 0.0), [0.2, 0.4])


# ---------------------------------------------------------------------------
# harmonic blow-up comparison


def test_blowup_affine_zero_gap():
    v = scalar_field(lambda p: 0.03 * p[:, 0] + 0.01, N=81, span=1.0)
    cmp = V.harmonic_blowup_compare(v, E=1e-4, halfwidth=0.6)
    assert cmp.w12_gap < 1e-9


def test_blowup_harmonic_small_gap():
    E = 1e-4
    v = scalar_field(
        lambda p: math.sqrt(E) * (p[:, 0] ** 2 - p[:, 1] ** 2), N=161)
    cmp = V.harmonic_blowup_compare(v, E=E, halfwidth=0.7)
    # f is exactly harmonic, so the Laplace match reproduces it
    assert cmp.w12_gap < 1e-6
    assert V.laplacian_residual(cmp.h) < 1e-8


def test_blowup_requires_positive_excess():
    v = scalar_field(lambda p: 0.0 * p[:, 0], N=41)
    with pytest.raises(V.VerifyError):
        V.harmonic_blowup_compare(v, E=0.0, halfwidth=0.5)


# ---------------------------------------------------------------------------
# excess Taylor bound


def test_taylor_bound_affine():
    w = scalar_field(lambda p: 0.1 * p[:, 0], N=121, span=0.8)
    rep = V.taylor_excess_bound_check(w)
    assert rep["lhs"] < 1e-12
    assert rep["measured_C"] == 0.0
    assert rep["holds"]


def test_taylor_bound_scaling_battery():
    cs = []
    for s in (0.2, 0.1, 0.05):
        w = scalar_field(lambda p, s=s: s * np.sin(p[:, 0]) * np.cos(p[:, 1]),
                         N=161, span=0.8)
        rep = V.taylor_excess_bound_check(w)
        assert rep["holds"]
        assert np.isfinite(rep["measured_C"])
        cs.append(rep["measured_C"])
    assert max(cs) < 10.0


def test_taylor_bound_rejects_steep():
    w = scalar_field(lambda p: 3.0 * p[:, 0], N=41, span=0.8)
    with pytest.raises(V.VerifyError):
        V.taylor_excess_bound_check(w)


# ---------------------------------------------------------------------------
# interpolation inequality


def test_interpolation_zero_field():
    f = scalar_field(lambda p: 0.0 * p[:, 0], N=81)
    rep = V.interpolation_inequality_check(f, r=0.3, s=0.8, kappa=0.0625)
    assert rep["measured_C"] == 0.0


def test_interpolation_cubic_polynomial():
    f = scalar_field(
        lambda p: 0.3 + p[:, 0] - 0.5 * p[:, 1] ** 2
        + 0.2 * p[:, 0] ** 2 * p[:, 1], N=161)
    rep = V.interpolation_inequality_check(f, r=0.3, s=0.8, kappa=0.0625)
    assert 0 < rep["measured_C"] < 100.0
    for row in rep["rows"]:
        assert row["lhs"] <= rep["measured_C"] * row["rhs"] + 1e-12


def test_interpolation_guard():
    f = scalar_field(lambda p: p[:, 0], N=41)
    with pytest.raises(V.VerifyError):
        V.interpolation_inequality_check(f, r=0.8, s=0.3, kappa=0.0625)


def test_interpolation_battery_deterministic():
    a = V.interpolation_battery(4, seed=7, r=0.3, s=0.8, kappa=0.0625,
                                dims=61)
    b = V.interpolation_battery(4, seed=7, r=0.3, s=0.8, kappa=0.0625,
                                dims=61)
    assert a["member_C"] == b["member_C"]
    assert np.isfinite(a["measured_C"])
    c = V.interpolation_battery(4, seed=8, r=0.3, s=0.8, kappa=0.0625,
                                dims=61)
    assert c["member_C"] != a["member_C"]


def test_monomial_count():
    assert V.monomial_count(2, 3) == 10
    pts = np.array([[0.5, -0.25], [1.0, 2.0]])
    coeffs = np.zeros(10)
    coeffs[0] = 2.0            # constant term
    vals = V.random_polynomial_values(pts, coeffs)
    assert np.allclose(vals, 2.0)


# ---------------------------------------------------------------------------
# verdicts and files


def test_verdict_and_json_roundtrip(tmp_path):
    v = V.verdict("demo", {"r": 0.5}, {"C": 1.25}, True)
    path = tmp_path / "verdict.json"
    V.write_json(path, v)
    data = json.loads(path.read_text())
    assert data == {"check": "demo", "config": {"r": 0.5},
                    "measured_constants": {"C": 1.25}, "pass": True}
    # deterministic bytes
    path2 = tmp_path / "verdict2.json"
    V.write_json(path2, v)
    assert path.read_bytes() == path2.read_bytes()


def test_write_csv(tmp_path):
    path = tmp_path / "t.csv"
    V.write_csv(path, ["a", "b"], [[1, 2], [3, 4]])
    assert path.read_text().splitlines() == ["a,b", "1,2", "3,4"]
