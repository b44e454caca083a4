"""Tests for plane geometry, m-vector algebra and graph reparametrization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surflab import field as F
from surflab import geom as G


def plane(slope, base=None):
    slope = np.atleast_2d(slope)
    n, m = slope.shape
    if base is None:
        base = np.zeros(m + n)
    return G.NearHorizontalPlane(base, slope)


# ---------------------------------------------------------------------------
# frames and planes


def test_frame_reproduces_plane():
    rng = np.random.default_rng(1)
    for _ in range(20):
        P = plane(rng.normal(scale=0.5, size=(2, 2)))
        U, V = P.frame()
        d = U.shape[0]
        # orthonormal full frame
        Q = np.hstack([U, V])
        assert np.linalg.norm(Q.T @ Q - np.eye(d)) < 1e-12
        # columns of [Id; A] lie in span(U): projection residual <= 1e-12
        M = np.vstack([np.eye(2), P.slope])
        resid = M - U @ (U.T @ M)
        assert np.linalg.norm(resid) < 1e-12


def test_slope_bound_enforced():
    with pytest.raises(G.GeometryError):
        plane(np.full((2, 2), 3.0))


def test_plane_json_roundtrip():
    P = plane([[0.25, -0.125]], base=[1.0, 2.0, 3.0])
    Q = G.NearHorizontalPlane.from_json(P.to_json())
    assert np.array_equal(P.slope, Q.slope)
    assert np.array_equal(P.basepoint, Q.basepoint)


# ---------------------------------------------------------------------------
# m-vector inner products


def test_inner_horizontal_self():
    P = G.horizontal_plane(2, 2)
    assert abs(G.mvector_inner(P, P) - 1.0) < 1e-14


def test_inner_single_slope_analytic():
    for a in (0.1, 0.5, -1.2):
        P = plane([[a, 0.0]])
        got = G.mvector_inner(G.horizontal_plane(2, 1), P)
        assert abs(got - 1.0 / math.sqrt(1 + a * a)) < 1e-13


def test_inner_matches_wedge_oracle():
    rng = np.random.default_rng(42)
    for _ in range(100):
        P = plane(rng.normal(scale=0.6, size=(2, 2)))
        Q = plane(rng.normal(scale=0.6, size=(2, 2)))
        want = G.wedge_coordinates(P) @ G.wedge_coordinates(Q)
        assert abs(G.mvector_inner(P, Q) - want) < 1e-12


def test_inner_symmetric_and_metric():
    rng = np.random.default_rng(5)
    for _ in range(20):
        P = plane(rng.normal(scale=0.4, size=(1, 2)))
        Q = plane(rng.normal(scale=0.4, size=(1, 2)))
        assert abs(G.mvector_inner(P, Q) - G.mvector_inner(Q, P)) < 1e-13
        gap = 2 - 2 * G.mvector_inner(P, Q)
        assert gap >= -1e-14
    same = plane([[0.3, 0.1]])
    assert 2 - 2 * G.mvector_inner(same, plane([[0.3, 0.1]])) < 1e-12


def test_tangent_gap_analytic_and_lower_bound():
    for a in (0.05, 0.3, 0.9):
        got = G.tangent_mvector_gap([[a, 0.0]], G.horizontal_plane(2, 1))
        assert abs(got - (2 - 2 / math.sqrt(1 + a * a))) < 1e-13
    # gap >= |Du - A|^2 / 4 on a dense sample of small slopes
    rng = np.random.default_rng(9)
    for _ in range(200):
        Du = rng.uniform(-0.7, 0.7, size=(1, 2))
        A = rng.uniform(-0.7, 0.7, size=(1, 2))
        gap = G.tangent_mvector_gap(Du, plane(A))
        assert gap >= np.sum((Du - A) ** 2) / 4 - 1e-13


def test_tangent_gap_quadratic_leading_order():
    # value = |Du - A|^2 + O(quartic) for small slopes
    rng = np.random.default_rng(13)
    for _ in range(50):
        Du = rng.uniform(-0.1, 0.1, size=(1, 2))
        A = rng.uniform(-0.1, 0.1, size=(1, 2))
        gap = G.tangent_mvector_gap(Du, plane(A))
        lead = float(np.sum((Du - A) ** 2))
        quart = (np.linalg.norm(Du) ** 2 + np.linalg.norm(A) ** 2) ** 2
        assert abs(gap - lead) <= 3.0 * quart + 1e-15


def test_tangent_gap_slope_guard():
    with pytest.raises(G.GeometryError):
        G.tangent_mvector_gap(np.full((2, 2), 3.0), G.horizontal_plane(2, 2))


# ---------------------------------------------------------------------------
# rotations


def test_rotation_maps_plane_and_is_minimal_scale():
    P0 = G.horizontal_plane(2, 1)
    P1 = plane([[0.08, -0.05]])
    R = G.rotation_between(P0, P1)
    img = R.Q @ P0.basis()
    U2 = P1.basis()
    assert np.linalg.norm(img - U2 @ (U2.T @ img)) < 1e-12
    # deviation comparable to the principal angle
    theta = math.atan(np.linalg.norm(P1.slope))
    assert R.deviation <= 2.0 * theta + 1e-12


def test_rotation_orthogonality_and_identity():
    R = G.rotation_between(G.horizontal_plane(2, 2), G.horizontal_plane(2, 2))
    assert R.deviation < 1e-13
    P = plane(np.array([[0.05, 0.02], [-0.03, 0.04]]))
    R2 = G.rotation_between(G.horizontal_plane(2, 2), P)
    assert np.linalg.norm(R2.Q.T @ R2.Q - np.eye(4)) < 1e-12


def test_rotation_bound_enforced():
    with pytest.raises(G.GeometryError):
        G.rotation_between(G.horizontal_plane(2, 1), plane([[1.5, 0.0]]))


def test_lipschitz_bound_after_rotation():
    assert G.lipschitz_bound_after_rotation(0.7, 0.0) == 0.7
    b1 = G.lipschitz_bound_after_rotation(0.5, 0.05)
    b2 = G.lipschitz_bound_after_rotation(0.5, 0.1)
    b3 = G.lipschitz_bound_after_rotation(0.6, 0.1)
    assert b1 < b2 < b3
    with pytest.raises(G.GeometryError):
        G.lipschitz_bound_after_rotation(2.5, 0.0)


def test_lipschitz_bound_covers_measured_battery():
    # measured Lip of the reparametrized field <= certified bound
    rng = np.random.default_rng(21)
    P0 = G.horizontal_plane(2, 1)
    for trial in range(4):
        c = rng.uniform(-1, 1, size=3)
        f = F.from_function(
            lambda p: 0.1 * (np.sin(c[0] + 1.5 * p[:, 0:1])
                             * np.cos(c[1] + p[:, 1:2]) + c[2] * p[:, 0:1]),
            2, 1, (-1, -1), 0.02, (101, 101))
        slope = rng.uniform(-0.07, 0.07, size=(1, 2))
        P1 = plane(slope)
        g = G.reparametrize_graph(f, P0, P1, (-0.5, -0.5), 0.02, (51, 51),
                                  order=3)
        lip_f = F.lipschitz_constant(f, max_points=900)
        dev = G.rotation_between(P0, P1).deviation
        bound = G.lipschitz_bound_after_rotation(min(lip_f, 2.0), dev)
        lip_g = F.lipschitz_constant(g, max_points=900)
        assert lip_g <= bound * (1 + 1e-6)


# ---------------------------------------------------------------------------
# reparametrization


def test_reparametrize_affine_over_own_plane_is_zero():
    A = np.array([[0.3, -0.1]])
    f = F.from_function(lambda p: p @ A.T, 2, 1, (-1, -1), 0.02, (101, 101))
    P = plane(A)
    out = G.reparametrize_graph(f, G.horizontal_plane(2, 1), P,
                                (-0.5, -0.5), 0.05, (21, 21))
    assert np.abs(out.values).max() < 1e-10


def test_reparametrize_identity_is_bit_near():
    f = F.from_function(lambda p: 0.2 * p[:, 0:1] - 0.1 * p[:, 1:2],
                        2, 1, (-1, -1), 0.02, (101, 101))
    out = G.reparametrize_graph(f, G.horizontal_plane(2, 1),
                                G.horizontal_plane(2, 1),
                                (-0.5, -0.5), 0.05, (21, 21))
    want = 0.2 * out.points()[:, 0] - 0.1 * out.points()[:, 1]
    assert np.abs(out.values.ravel() - want).max() < 1e-12


def test_reparametrize_roundtrip_richardson():
    errs = []
    P0 = G.horizontal_plane(2, 1)
    P1 = plane([[0.1, 0.0]])
    for dims, h in ((101, 0.02), (201, 0.01)):
        f = F.from_function(
            lambda p: 0.05 * np.sin(2 * p[:, 0:1]) * np.cos(p[:, 1:2]),
            2, 1, (-1, -1), h, (dims, dims))
        mid = int(round(1.0 / h)) + 1   # keeps the tilted grid in [-0.6, 0.6]
        g = G.reparametrize_graph(f, P0, P1, (-0.6, -0.6), h * 1.2,
                                  (mid, mid), order=1)
        back = G.reparametrize_graph(g, P1, P0, (-0.4, -0.4), h, (41, 41),
                                     order=1)
        want = 0.05 * np.sin(2 * back.points()[:, 0:1]) \
            * np.cos(back.points()[:, 1:2])
        errs.append(np.abs(back.values.reshape(-1, 1) - want).max())
    assert errs[1] < errs[0]
    assert errs[1] < 1e-3  # C h^2 scale


def test_reparametrize_preserves_graph_pointset():
    # map output samples back to ambient space; they must sit on gr(f)
    P0 = G.horizontal_plane(2, 1)
    P1 = plane([[0.1, -0.06]])
    h = 0.01
    f = F.from_function(
        lambda p: 0.05 * np.cos(1.7 * p[:, 0:1] + 0.4 * p[:, 1:2]),
        2, 1, (-1, -1), h, (201, 201))
    g = G.reparametrize_graph(f, P0, P1, (-0.5, -0.5), 0.02, (51, 51),
                              order=3)
    amb = P1.embed(g.points(), g.values.reshape(-1, 1))
    base = amb[:, :2]
    height = amb[:, 2]
    want = 0.05 * np.cos(1.7 * base[:, 0] + 0.4 * base[:, 1])
    assert np.abs(height - want).max() < 5e-7  # ~C h^2


def test_reparametrize_domain_guard():
    f = F.from_function(lambda p: 0.0 * p[:, 0:1], 2, 1, (-1, -1), 0.1,
                        (21, 21))
    with pytest.raises((G.GeometryError, F.DomainError,
                        G.ReparametrizationError)):
        G.reparametrize_graph(f, G.horizontal_plane(2, 1),
                              plane([[0.1, 0.0]]), (0.5, 0.5), 0.2, (11, 11))


def test_reparametrize_tilt_injectivity_guard():
    # steep field and large tilt gap -> precondition error
    f = F.from_function(lambda p: 1.9 * np.abs(p[:, 0:1]), 2, 1,
                        (-1, -1), 0.05, (41, 41))
    with pytest.raises(G.GeometryError):
        G.reparametrize_graph(f, G.horizontal_plane(2, 1),
                              plane([[0.4, 0.0]]), (-0.2, -0.2), 0.05,
                              (9, 9))


@settings(max_examples=15, deadline=None)
@given(a=st.floats(-0.8, 0.8), b=st.floats(-0.8, 0.8))
def test_property_inner_at_most_one(a, b):
    P = plane([[a, b]])
    Q = G.horizontal_plane(2, 1)
    val = G.mvector_inner(P, Q)
    assert -1.0 - 1e-12 <= val <= 1.0 + 1e-12
