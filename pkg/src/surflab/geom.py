"""Near-horizontal m-planes, orienting m-vectors, and graph reparametrization.

Planes are stored as slope matrices A (the plane is the graph of x -> A x
through a basepoint), which keeps the optimal-plane search unconstrained.
Inner products of orienting m-vectors are Gram determinants of oriented
orthonormal bases; graphs are re-expressed over tilted planes by a pointwise
Newton solve on the projection equation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .field import GridField, DomainError, GridError, nodal_gradient_array


class GeometryError(ValueError):
    """Violated plane/rotation preconditions."""


SLOPE_BOUND = 4.0       # Hilbert-Schmidt bound for near-horizontal slopes
ROTATION_BOUND = 0.2    # |Q - Id| bound for derived rotations


# ---------------------------------------------------------------------------
# planes


@dataclass
class NearHorizontalPlane:
    """Graph plane {(x, A x)} + basepoint, A an n x m slope matrix."""

    basepoint: np.ndarray
    slope: np.ndarray

    def __post_init__(self):
        self.slope = np.atleast_2d(np.asarray(self.slope, dtype=float))
        self.n, self.m = self.slope.shape
        self.basepoint = np.asarray(self.basepoint, dtype=float).reshape(
            self.m + self.n)
        if np.linalg.norm(self.slope) > SLOPE_BOUND:
            raise GeometryError(
                f"slope norm {np.linalg.norm(self.slope):.3g} exceeds the "
                f"near-horizontal bound {SLOPE_BOUND}")
        self._frame = None

    # -- frames ------------------------------------------------------------

    def frame(self) -> tuple:
        """(U, V): oriented orthonormal bases of the plane (m+n, m) and its
        normal space (m+n, n).

        U comes from QR of the columns of [Id; A] with positive diagonal,
        i.e. Gram-Schmidt in index order, which continuously extends the
        standard orientation from the horizontal plane.
        """
        if self._frame is None:
            m, n = self.m, self.n
            M = np.zeros((m + n, m + n))
            M[:m, :m] = np.eye(m)
            M[m:, :m] = self.slope
            M[m:, m:] = np.eye(n)
            Q, R = np.linalg.qr(M)
            sign = np.sign(np.diag(R))
            sign[sign == 0] = 1.0
            Q = Q * sign
            self._frame = (Q[:, :m], Q[:, m:])
        return self._frame

    def basis(self) -> np.ndarray:
        return self.frame()[0]

    def embed(self, x: np.ndarray, vals: np.ndarray) -> np.ndarray:
        """Ambient points of the graph of ``vals`` over this plane:
        basepoint + U x + V vals, with x (N, m) and vals (N, n)."""
        U, V = self.frame()
        return self.basepoint + np.atleast_2d(x) @ U.T + np.atleast_2d(vals) @ V.T

    def coordinates(self, pts: np.ndarray) -> tuple:
        """Split ambient points into (plane coords (N, m), normal coords (N, n))."""
        U, V = self.frame()
        d = np.atleast_2d(pts) - self.basepoint
        return d @ U, d @ V

    # -- serialization -----------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({"basepoint": self.basepoint.tolist(),
                           "slope": self.slope.ravel().tolist(),
                           "m": self.m, "n": self.n}, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "NearHorizontalPlane":
        d = json.loads(s)
        slope = np.array(d["slope"]).reshape(d["n"], d["m"])
        return cls(np.array(d["basepoint"]), slope)


def horizontal_plane(m: int, n: int, basepoint=None) -> NearHorizontalPlane:
    if basepoint is None:
        basepoint = np.zeros(m + n)
    return NearHorizontalPlane(basepoint, np.zeros((n, m)))


def graph_plane(Du: np.ndarray, basepoint=None, m=None, n=None) -> NearHorizontalPlane:
    """Tangent plane of a graph with gradient ``Du`` (n x m) at a point."""
    Du = np.atleast_2d(np.asarray(Du, dtype=float))
    n_, m_ = Du.shape
    if basepoint is None:
        basepoint = np.zeros(m_ + n_)
    return NearHorizontalPlane(basepoint, Du)


# ---------------------------------------------------------------------------
# m-vector algebra


def mvector_inner(P: NearHorizontalPlane, Q: NearHorizontalPlane) -> float:
    """<pi_P, pi_Q> = det of the Gram matrix of the oriented bases."""
    if (P.m, P.n) != (Q.m, Q.n):
        raise GeometryError("planes live in different ambient spaces")
    return float(np.linalg.det(P.basis().T @ Q.basis()))


def tangent_mvector_gap(Du_point: np.ndarray, P: NearHorizontalPlane) -> float:
    """|T - pi_P|^2 = 2 - 2 <T, pi_P> for the tangent m-vector of a graph
    with gradient ``Du_point``."""
    Du = np.atleast_2d(np.asarray(Du_point, dtype=float))
    if np.linalg.norm(Du) > SLOPE_BOUND:
        raise GeometryError("gradient exceeds the near-horizontal slope bound")
    val = 2.0 - 2.0 * mvector_inner(graph_plane(Du), P)
    return float(val)


def wedge_coordinates(P: NearHorizontalPlane) -> np.ndarray:
    """Coordinates of the unit orienting m-vector in the wedge basis
    e_I = e_{i1} ^ ... ^ e_{im}, I increasing; used as a brute-force oracle."""
    from itertools import combinations
    U = P.basis()
    d = U.shape[0]
    coords = []
    for I in combinations(range(d), P.m):
        coords.append(np.linalg.det(U[list(I), :]))
    return np.array(coords)


# ---------------------------------------------------------------------------
# rotations


@dataclass
class Rotation:
    """Orthogonal matrix Q with its deviation |Q - Id| (Frobenius)."""

    Q: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        d = self.Q.shape[0]
        if np.linalg.norm(self.Q.T @ self.Q - np.eye(d)) > 1e-12:
            raise GeometryError("matrix is not orthogonal to 1e-12")
        self.deviation = float(np.linalg.norm(self.Q - np.eye(d)))
        if self.deviation > ROTATION_BOUND:
            raise GeometryError(
                f"rotation deviation {self.deviation:.3g} exceeds the bound "
                f"{ROTATION_BOUND}")


def rotation_between(P: NearHorizontalPlane, T: NearHorizontalPlane) -> Rotation:
    """Minimal rotation mapping the plane of P onto the plane of T.

    Built from the principal vectors of the two subspaces (CS decomposition):
    each principal pair is rotated in its own 2-plane, leaving the joint
    orthogonal complement fixed.  This is the rotation of smallest |Q - Id|
    among those carrying one subspace to the other.
    """
    U1 = P.basis()
    U2 = T.basis()
    d = U1.shape[0]
    X, s, Yt = np.linalg.svd(U2.T @ U1)
    A1 = U1 @ Yt.T            # aligned basis of P
    A2 = U2 @ X               # aligned basis of T
    Q = np.eye(d)
    for i in range(U1.shape[1]):
        c = min(s[i], 1.0)
        a = A1[:, i]
        w = A2[:, i] - c * a
        nw = np.linalg.norm(w)
        if nw < 1e-14:
            continue
        w = w / nw
        sn = math.sqrt(max(0.0, 1.0 - c * c))
        G = (c - 1.0) * (np.outer(a, a) + np.outer(w, w)) \
            + sn * (np.outer(w, a) - np.outer(a, w))
        Q = (np.eye(d) + G) @ Q
    return Rotation(Q)


def lipschitz_bound_after_rotation(lip_f: float, deviation: float,
                                   constant: float = 3.0) -> float:
    """Certified Lipschitz bound for a graph re-expressed after a small
    rotation: lip_f + constant * deviation.

    The constant is the implementation's measured envelope over random smooth
    batteries (see tests); callers use the bound as a precondition feeder.
    """
    if lip_f > 2.0:
        raise GeometryError("Lipschitz constant above the admissible bound 2")
    if deviation > ROTATION_BOUND:
        raise GeometryError("rotation deviation above the admissible bound")
    if lip_f < 0 or deviation < 0:
        raise GeometryError("arguments must be nonnegative")
    return lip_f + constant * deviation


# ---------------------------------------------------------------------------
# reparametrization


class ReparametrizationError(RuntimeError):
    """Newton solve failed to converge at some output point."""


def reparametrize_graph(f: GridField, f_plane: NearHorizontalPlane,
                        target: NearHorizontalPlane,
                        out_origin, out_spacing: float, out_dims,
                        order: int = 1, scale: float = 1.0,
                        residual_tol: float = 1e-10,
                        lip_f: float | None = None) -> GridField:
    """Re-express the graph of ``f`` (over ``f_plane``) as a graph over
    ``target``.

    For each output sample x' (coordinates in the target frame) the source
    parameter t solving  U_t^T (point(t) - q_t) = x'  is found by a damped
    Newton iteration, where point(t) = q_f + U_f t + V_f f(t); the output
    value is the normal coordinate V_t^T (point(t) - q_t).

    ``order`` selects the evaluation of f (1 = multilinear, 3/5 = spline).
    Residual tolerance is ``residual_tol * scale`` with ``scale`` the local
    length scale.
    """
    gap = np.linalg.norm(f_plane.slope - target.slope)
    if gap > 0:
        if lip_f is None:     # measured lazily when no bound was supplied
            from .field import lipschitz_constant
            lip_f = lipschitz_constant(f, max_points=900)
        if lip_f * gap >= 0.5:
            raise GeometryError(
                f"Lip(f)*tilt gap = {lip_f * gap:.3g} >= 1/2: projection may "
                "fail to be injective")
    out = GridField(f.m, f.n, tuple(out_dims), np.asarray(out_origin, float),
                    out_spacing, np.zeros(tuple(out_dims) + (f.n,)))
    xp = out.points()                      # (N, m) target-frame coordinates
    N = xp.shape[0]
    Uf, Vf = f_plane.frame()
    Ut, Vt = target.frame()
    qf, qt = f_plane.basepoint, target.basepoint

    ev = f.interpolator(order)
    if order == 1 or f.m != 2:
        grad_field = nodal_gradient_array(f).reshape(f.dims + (f.n * f.m,))
        gf = GridField(f.m, f.n * f.m, f.dims, f.origin, f.spacing, grad_field)
        gev = gf.interpolator(1)

        def grad(t):
            return gev(t).reshape(-1, f.n, f.m)
    else:
        grad = f.gradient_interpolator(order)

    # initial guess: invert the affine part using the plane slopes
    # point(t) ~ qf + Uf t  =>  t0 = Uf^T(qt + Ut x' - qf) to leading order
    amb0 = qt + xp @ Ut.T
    t = (amb0 - qf) @ Uf
    lo = f.origin
    hi = f.upper
    tol = residual_tol * max(scale, 1e-300)
    A = Ut.T @ Uf                          # (m, m)
    B = Ut.T @ Vf                          # (m, n)
    const = Ut.T @ (qf - qt)
    tc = np.clip(t, lo + 1e-13, hi - 1e-13)
    vals = ev(tc)                           # (N, n)
    G = tc @ A.T + vals @ B.T + const - xp
    res = np.linalg.norm(G, axis=1)
    for it in range(50):
        active = res > tol
        if not active.any():
            break
        Df = grad(tc[active])               # (Na, n, m)
        J = A[None, :, :] + np.einsum("ij,ajk->aik", B, Df)
        try:
            step = np.linalg.solve(J, G[active][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise ReparametrizationError(f"singular Jacobian: {exc}") from exc
        # damping: limit the step to one grid cell to stay on the chart
        nrm = np.linalg.norm(step, axis=1, keepdims=True)
        cap = 4.0 * f.spacing
        step = step * np.minimum(1.0, cap / np.maximum(nrm, 1e-300))
        # iterate, re-evaluating only the points that moved
        ta = np.clip(tc[active] - step, lo + 1e-13, hi - 1e-13)
        tc[active] = ta
        va = ev(ta)
        vals[active] = va
        G[active] = ta @ A.T + va @ B.T + const - xp[active]
        res[active] = np.linalg.norm(G[active], axis=1)
    else:
        idx = int(np.argmax(res))
        raise ReparametrizationError(
            f"no convergence after 50 iterations at output point "
            f"{xp[idx].tolist()} (residual {res[idx]:.3g})")
    point = qf + tc @ Uf.T + vals @ Vf.T
    out.values = ((point - qt) @ Vt).reshape(out.dims + (f.n,))
    return out
