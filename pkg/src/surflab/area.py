"""Area functional, cylindrical and spherical excess, optimal planes.

All graph integrals are computed in base coordinates through the area-element
change of variables.  A :class:`GraphQuadrature` caches, per grid cell, the
area element J and the (unnormalized) wedge coordinates W of the orienting
m-vector; every excess evaluation then reduces to

    1/2 * integral |T - pi|^2  =  sum(w J) h^m - <sum(w W) h^m, pi>,

so plane optimization costs O(1) per objective evaluation after the weighted
sums are formed once.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import optimize

from . import field as fieldmod
from .field import (Box, Disk, DomainError, GridError, GridField,
                    cell_gradient_array, cell_region_weights, cell_centers)
from .geom import (GeometryError, NearHorizontalPlane, horizontal_plane,
                   reparametrize_graph)
from .params import Params, unit_ball_volume


class ExcessError(RuntimeError):
    """Excess evaluation failed (truncated graph, bad preconditions)."""


# ---------------------------------------------------------------------------
# wedge coordinates


def _row_combos(m: int, n: int):
    return list(combinations(range(m + n), m))


def wedge_from_gradient(Df: np.ndarray) -> np.ndarray:
    """Unnormalized wedge coordinates of span[Id; Df] for a batch of
    gradients ``Df`` with shape (..., n, m); output (..., C(m+n, m))."""
    Df = np.asarray(Df, float)
    n, m = Df.shape[-2], Df.shape[-1]
    lead = Df.shape[:-2]
    M = np.zeros(lead + (m + n, m))
    M[..., :m, :] = np.eye(m)
    M[..., m:, :] = Df
    combos = _row_combos(m, n)
    out = np.empty(lead + (len(combos),))
    if m == 2:
        # 2x2 determinants in closed form (hot path)
        I0 = np.array([I[0] for I in combos])
        I1 = np.array([I[1] for I in combos])
        out[...] = (M[..., I0, 0] * M[..., I1, 1]
                    - M[..., I0, 1] * M[..., I1, 0])
    else:
        for j, I in enumerate(combos):
            out[..., j] = np.linalg.det(M[..., list(I), :])
    return out


def plane_wedge(A: np.ndarray) -> np.ndarray:
    """Unit wedge coordinates of the plane with slope ``A`` (n x m)."""
    W = wedge_from_gradient(np.atleast_2d(A))
    return W / np.linalg.norm(W)


def area_element(Df: np.ndarray) -> np.ndarray:
    """sqrt(1 + |Df|^2 + sum of squared higher minors) for gradients
    (..., n, m); equals sqrt(det(Id + Df^T Df)) by Cauchy-Binet."""
    W = wedge_from_gradient(Df)
    return np.sqrt(np.sum(W * W, axis=-1))


# ---------------------------------------------------------------------------
# graph quadrature cache


class GraphQuadrature:
    """Per-cell quadrature data for the graph of ``f``.

    Caches the wedge coordinates W (so T J = W), the area element J, and
    sub-point base positions/heights used for ball clipping (each cell is
    split into 2^m sub-cells; a cell contributes the fraction of its
    sub-points whose graph point lies in the ball).
    """

    def __init__(self, f: GridField):
        f._require_fully_active()
        self.f = f
        self.h = f.spacing
        self.cdims = tuple(d - 1 for d in f.dims)
        G = cell_gradient_array(f)
        self.W = wedge_from_gradient(G)
        self.J = np.sqrt(np.sum(self.W * self.W, axis=-1))
        self.centers = cell_centers(f)
        self._sub = None

    # sub-point data are built lazily: only ball clipping needs them
    def _subpoints(self):
        if self._sub is not None:
            return self._sub
        f = self.f
        m = f.m
        corners = list(np.ndindex(*(2,) * m))
        subs = list(np.ndindex(*(2,) * m))
        vals = np.zeros(self.cdims + (len(subs), f.n))
        pos = np.zeros(self.cdims + (len(subs), m))
        corner_vals = []
        for c in corners:
            sl = tuple(slice(cc, cc + d - 1) for cc, d in zip(c, f.dims))
            corner_vals.append(f.values[sl])
        for si, s in enumerate(subs):
            # sub-point at center of sub-cell s: offset (s - 1/2) * h/2 + h/4
            frac = np.array(s) * 0.5 + 0.25       # in [0,1] cell coordinates
            pos[..., si, :] = self.centers + (frac - 0.5) * self.h
            acc = 0.0
            for ci, c in enumerate(corners):
                wgt = np.prod([frac[a] if c[a] else 1 - frac[a]
                               for a in range(m)])
                acc = acc + wgt * corner_vals[ci]
            vals[..., si, :] = acc
        self._sub = (pos, vals)
        return self._sub

    # -- weights -----------------------------------------------------------

    def region_weights(self, region) -> np.ndarray:
        return cell_region_weights(self.f, region)

    def _window(self, center: np.ndarray, r: float):
        """Index slices of cells possibly meeting B_r(center) in the base."""
        f = self.f
        sl = []
        for a in range(f.m):
            lo = int(np.floor((center[a] - r - f.origin[a]) / self.h)) - 1
            hi = int(np.ceil((center[a] + r - f.origin[a]) / self.h)) + 1
            sl.append(slice(max(lo, 0), min(hi, self.cdims[a])))
        return tuple(sl)

    def ball_weights(self, p: np.ndarray, r: float):
        """(window slices, fractional weights in the window, boundary flag)."""
        f = self.f
        p = np.asarray(p, float)
        base, height = p[:f.m], p[f.m:]
        sl = self._window(base, r)
        pos, vals = self._subpoints()
        pw = pos[sl]
        vw = vals[sl]
        d2 = np.sum((pw - base) ** 2, axis=-1) \
            + np.sum((vw - height) ** 2, axis=-1)
        w = np.mean(d2 <= r * r, axis=-1)
        touched = False
        for a in range(f.m):
            if sl[a].start == 0:
                idx = [slice(None)] * f.m
                idx[a] = 0
                if np.any(w[tuple(idx)] > 0):
                    touched = True
            if sl[a].stop == self.cdims[a]:
                idx = [slice(None)] * f.m
                idx[a] = -1
                if np.any(w[tuple(idx)] > 0):
                    touched = True
        return sl, w, touched

    # -- weighted sums -----------------------------------------------------

    def sums(self, weights: np.ndarray, window=None):
        """(total weighted graph area Wt, weighted wedge vector S)."""
        hm = self.h ** self.f.m
        J = self.J if window is None else self.J[window]
        W = self.W if window is None else self.W[window]
        Wt = float(np.sum(weights * J) * hm)
        S = np.tensordot(weights, W, axes=self.f.m) * hm
        return Wt, S

    def ball_sums(self, p, r: float):
        sl, w, touched = self.ball_weights(p, r)
        Wt, S = self.sums(w, window=sl)
        return Wt, S, touched

    def cylinder_sums(self, p, r: float, basis_U: np.ndarray,
                      window_factor: float = 1.6):
        """Weighted sums over the graph inside the tilted cylinder of radius
        ``r`` around ``p`` with axis normal to the plane spanned by the
        columns of ``basis_U``; sub-point fraction clipping as for balls."""
        f = self.f
        p = np.asarray(p, float)
        base = p[:f.m]
        sl = self._window(base, window_factor * r)
        pos, vals = self._subpoints()
        pw = pos[sl]
        vw = vals[sl]
        amb = np.concatenate([pw - base, vw - p[f.m:]], axis=-1)
        proj = amb @ basis_U                       # cylinder-base coordinates
        inside = np.sum(proj * proj, axis=-1) <= r * r
        w = np.mean(inside, axis=-1)
        Wt, S = self.sums(w, window=sl)
        return Wt, S

    def disk_sums(self, center, r: float):
        center = np.asarray(center, float)
        f = self.f
        if np.any(center - r < f.origin - 1e-12) \
                or np.any(center + r > f.upper + 1e-12):
            raise DomainError("disk exits the base domain")
        sl = self._window(center, r)
        sub = GridField(f.m, 1, tuple(s.stop - s.start + 1 for s in sl),
                        f.origin + np.array([s.start for s in sl]) * self.h,
                        self.h,
                        np.zeros([s.stop - s.start + 1 for s in sl] + [1]))
        w = cell_region_weights(sub, Disk(tuple(center), r))
        Wt, S = self.sums(w, window=sl)
        return Wt, S


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExcessReport:
    kind: str                      # "cylindrical" | "spherical"
    center: np.ndarray
    radius: float
    plane: NearHorizontalPlane
    value: float
    quadrature_h: float

    def __post_init__(self):
        if self.value < -1e-12:
            raise ExcessError(f"negative excess {self.value:.3g}")
        self.value = max(self.value, 0.0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "center": np.asarray(self.center, float).tolist(),
            "radius": self.radius,
            "plane_slope": self.plane.slope.ravel().tolist(),
            "value": self.value,
            "quadrature_h": self.quadrature_h,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def sweep_to_csv(reports, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["radius", "value", "slope"])
        for r in reports:
            wr.writerow([r.radius, r.value] + r.plane.slope.ravel().tolist())


# ---------------------------------------------------------------------------
# area and excess functionals


def area(f: GridField, region=None) -> float:
    """m-volume of the graph over the region (cell quadrature)."""
    quad = f if isinstance(f, GraphQuadrature) else GraphQuadrature(f)
    w = quad.region_weights(region)
    return float(np.sum(w * quad.J) * quad.h ** quad.f.m)


def region_volume(f: GridField, region=None) -> float:
    w = cell_region_weights(f, region)
    return float(np.sum(w) * f.spacing ** f.m)


def excess_identity_check(f: GridField, region=None):
    """(lhs, rhs, gap) with lhs = area - |region| and rhs = the excess-type
    integral 1/2 * integral over the graph of |T - pi_0|^2.

    The two sides agree identically in the continuum; they are discretized
    differently here (corner-difference cells vs cell-averaged nodal
    gradients) so the reported gap is a genuine O(h^2) quadrature error.
    """
    quad = GraphQuadrature(f)
    w = cell_region_weights(f, region)
    lhs = float(np.sum(w * (quad.J - 1.0)) * f.spacing ** f.m)
    # independent discretization for the right-hand side
    Gn = fieldmod.nodal_gradient_array(f)
    Gc = Gn
    for a in range(f.m):
        sl0 = [slice(None)] * Gc.ndim
        sl1 = [slice(None)] * Gc.ndim
        sl0[a] = slice(0, -1)
        sl1[a] = slice(1, None)
        Gc = 0.5 * (Gc[tuple(sl0)] + Gc[tuple(sl1)])
    Wc = wedge_from_gradient(Gc)
    Jc = np.sqrt(np.sum(Wc * Wc, axis=-1))
    pi0 = plane_wedge(np.zeros((f.n, f.m)))
    inner = np.tensordot(Wc, pi0, axes=1)       # <T, pi0> * J
    integrand = 0.5 * (2.0 * Jc - 2.0 * inner)  # 1/2 |T - pi0|^2 J
    rhs = float(np.sum(w * integrand) * f.spacing ** f.m)
    return lhs, rhs, lhs - rhs


def cylindrical_excess(f, center, r: float,
                       plane: NearHorizontalPlane) -> ExcessReport:
    """1/2 * integral over gr(f, B_r(center)) of |T - pi_plane|^2."""
    quad = f if isinstance(f, GraphQuadrature) else GraphQuadrature(f)
    Wt, S = quad.disk_sums(center, r)
    value = Wt - float(S @ plane_wedge(plane.slope))
    return ExcessReport("cylindrical", np.asarray(center, float), r, plane,
                        value, quad.h)


def spherical_excess(f, p, r: float,
                     plane: NearHorizontalPlane) -> ExcessReport:
    """(omega_m r^m)^-1 * integral over gr(f) inside the ambient ball
    B_r(p) of |T - pi_plane|^2 (without the 1/2, per the normalization)."""
    quad = f if isinstance(f, GraphQuadrature) else GraphQuadrature(f)
    p = np.asarray(p, float)
    Wt, S, touched = quad.ball_sums(p, r)
    if touched:
        raise ExcessError("graph truncated: it exits the domain inside the ball")
    m = quad.f.m
    norm = unit_ball_volume(m) * r ** m
    value = 2.0 * (Wt - float(S @ plane_wedge(plane.slope))) / norm
    return ExcessReport("spherical", p, r, plane, value, quad.h)


# ---------------------------------------------------------------------------
# optimal planes


def _slope_from_unit_wedge(u: np.ndarray, m: int) -> np.ndarray:
    """Invert plane_wedge for n = 1: u proportional to wedge of some slope."""
    if u[0] <= 0:
        raise ExcessError("optimal plane is not near-horizontal (u0 <= 0)")
    a = np.empty(m)
    # lexicographic m-subsets of {0..m}: entry j >= 1 omits base row m - j
    for j in range(1, m + 1):
        i = m - j
        a[i] = u[j] / u[0] * (-1.0) ** (m - 1 - i)
    return a.reshape(1, m)


def _slope_from_wedge(S: np.ndarray, m: int, n: int) -> np.ndarray | None:
    """Slope read off the single-slope-row wedge entries of ``S`` (any n).

    For the wedge of [Id; A] the subset replacing base row i by slope row c
    carries (-1)^{m-1-i} A[c, i] times the leading entry, so the linear-in-A
    entries invert the wedge map exactly on plane wedges (and give a tight
    seed near them).  Returns None when the leading entry is not positive.
    """
    if S[0] <= 0:
        return None
    combos = _row_combos(m, n)
    index = {I: j for j, I in enumerate(combos)}
    base = list(range(m))
    A = np.empty((n, m))
    for c in range(n):
        for i in range(m):
            I = tuple(sorted([b for b in base if b != i] + [m + c]))
            A[c, i] = (-1.0) ** (m - 1 - i) * S[index[I]] / S[0]
    return A


def optimal_plane(f, p, r: float, seed=None, params: Params | None = None):
    """Minimize the spherical excess at B_r(p) over slope matrices.

    Returns (plane through p, ExcessReport).  The ball-clipped weighted sums
    are formed once, so each objective evaluation is O(1); descent is BFGS
    with a central finite-difference gradient.  For n = 1 the exact optimum
    u = S/|S| is available in closed form and used as the seed.
    """
    quad = f if isinstance(f, GraphQuadrature) else GraphQuadrature(f)
    params = params or Params(m=quad.f.m, n=quad.f.n)
    p = np.asarray(p, float)
    Wt, S, touched = quad.ball_sums(p, r)
    if touched:
        raise ExcessError("graph truncated inside the optimization ball")
    m, n = quad.f.m, quad.f.n
    norm = unit_ball_volume(m) * r ** m

    def value_of(Avec):
        A = Avec.reshape(n, m)
        return 2.0 * (Wt - float(S @ plane_wedge(A))) / norm

    if seed is None:
        if np.linalg.norm(S) > 0:
            seed = _slope_from_wedge(S / np.linalg.norm(S), m, n)
        if seed is None:
            base = p[:m]
            rr = min(r, float(np.min(np.minimum(base - quad.f.origin,
                                                quad.f.upper - base))))
            seed = fieldmod.average_gradient(quad.f, base, max(rr, 2 * quad.h))
    seed = np.asarray(seed, float).reshape(n * m)

    def grad(Avec):
        g = np.empty_like(Avec)
        step = 1e-6
        for i in range(Avec.size):
            e = np.zeros_like(Avec)
            e[i] = step
            g[i] = (value_of(Avec + e) - value_of(Avec - e)) / (2 * step)
        return g

    res = optimize.minimize(value_of, seed, jac=grad, method="BFGS",
                            options={"gtol": params.plane_gtol,
                                     "maxiter": params.plane_max_iter})
    gnorm = float(np.linalg.norm(grad(res.x)))
    if gnorm > 10 * params.plane_gtol and not res.success:
        raise ExcessError(f"optimal-plane search did not converge "
                          f"(gradient norm {gnorm:.3g})")
    A = res.x.reshape(n, m)
    if np.linalg.norm(A) >= params.slope_bound - 1e-9:
        raise ExcessError("optimal plane hit the slope bound: the "
                          "near-horizontal regime is violated")
    plane = NearHorizontalPlane(p, A)
    value = max(value_of(res.x), 0.0)
    return plane, ExcessReport("spherical", p, r, plane, value, quad.h)


# ---------------------------------------------------------------------------
# comparison checks (density / tilt constants)


def compare_planes_checks(f: GridField, configurations,
                          params: Params | None = None) -> dict:
    """Measure the smallest constants in the density and tilt-vs-excess
    bounds over a battery of (center p, radii r >= rho) configurations.

    Each configuration is a dict {p, r, rho, q (optional nearby center)}.
    Report-only: returns measured constants, never raises on size.
    """
    quad = GraphQuadrature(f)
    params = params or Params(m=f.m, n=f.n)
    m = f.m
    omega = unit_ball_volume(m)
    density_ratios = []
    tilt_constants = []
    point_constants = []
    for cfg in configurations:
        p = np.asarray(cfg["p"], float)
        r = float(cfg["r"])
        rho = float(cfg.get("rho", r / 2))
        sl, w, touched = quad.ball_weights(p, r)
        vol = float(np.sum(w * quad.J[sl]) * quad.h ** m)
        density_ratios.append(vol / (omega * r ** m))
        pl_r, rep_r = optimal_plane(quad, p, r, params=params)
        pl_rho, rep_rho = optimal_plane(quad, p, rho, params=params)
        from .geom import mvector_inner
        gap2 = max(0.0, 2.0 - 2.0 * mvector_inner(pl_r, pl_rho))
        if rep_r.value > 1e-15:
            tilt_constants.append(gap2 / ((r / rho) ** m * rep_r.value))
        if "q" in cfg:
            q = np.asarray(cfg["q"], float)
            pl_q, rep_q = optimal_plane(quad, q, rho, params=params)
            gap2q = max(0.0, 2.0 - 2.0 * mvector_inner(pl_r, pl_q))
            if rep_r.value > 1e-15:
                point_constants.append(gap2q / ((r / rho) ** m * rep_r.value))
    return {
        "density_min": min(density_ratios),
        "density_max": max(density_ratios),
        "tilt_excess_constant": max(tilt_constants) if tilt_constants else 0.0,
        "point_tilt_constant": max(point_constants) if point_constants else 0.0,
        "configurations": len(list(configurations)),
    }


# ---------------------------------------------------------------------------
# sphere-to-cylinder graphicality


@dataclass
class CylinderCertificate:
    lip_v: float
    containment_gap: float
    cylinder_excess: float
    ball_excess: float
    passed: bool


def sphere_to_cylinder(f: GridField, p, eta: float,
                       params: Params | None = None,
                       excess_threshold: float | None = None,
                       r: float = 1.0, order: int = 3):
    """Re-express gr(f) inside the ball B_r(p) as a graph v over the optimal
    plane pi_1, on the concentric cylinder of radius (1-eta) r.

    Certifies: Lip(v) <= 2; gr(v) lies on gr(f) (pointwise vertical gap);
    cylindrical excess of v <= (omega_m/2) * spherical excess at B_r(p).
    Raises :class:`ExcessError` with the measured violation otherwise.
    """
    params = params or Params(m=f.m, n=f.n)
    thresh = params.excess_threshold if excess_threshold is None \
        else excess_threshold
    quad = GraphQuadrature(f)
    p = np.asarray(p, float)
    rep0 = spherical_excess(quad, p, r, horizontal_plane(f.m, f.n, p))
    if rep0.value > thresh:
        raise ExcessError(
            f"spherical excess {rep0.value:.3g} above the graphicality "
            f"threshold {thresh:.3g}")
    pi1, rep1 = optimal_plane(quad, p, r, params=params)
    rr = (1.0 - eta) * r
    ns = max(33, int(math.ceil(2 * rr / f.spacing)) | 1)
    spacing = 2 * rr / (ns - 1)
    v = reparametrize_graph(f, horizontal_plane(f.m, f.n), pi1,
                            (-rr,) * f.m, spacing, (ns,) * f.m,
                            order=order, scale=r)
    lip_v = fieldmod.lipschitz_constant(v, max_points=1200)
    # containment: push sampled points of gr(v) to ambient space and compare
    amb = pi1.embed(v.points(), v.values.reshape(-1, f.n))
    base = amb[:, :f.m]
    inside = f.contains(base)
    heights = f.interpolator(order)(base[inside])
    gap = float(np.abs(amb[inside, f.m:] - heights).max()) if inside.any() \
        else math.inf
    # in v's own chart the reference plane pi_1 is horizontal
    rep_cyl = cylindrical_excess(GraphQuadrature(v), np.zeros(f.m), rr,
                                 horizontal_plane(f.m, f.n))
    bound = 0.5 * unit_ball_volume(f.m) * r ** f.m * rep0.value
    cert = CylinderCertificate(
        lip_v=lip_v, containment_gap=gap,
        cylinder_excess=rep_cyl.value, ball_excess=rep0.value,
        passed=(lip_v <= 2.0 and gap <= 50 * f.spacing ** 2
                and rep_cyl.value <= bound * 1.01 + 1e-12))
    if not cert.passed:
        raise ExcessError(f"cylinder certificate failed: {cert}")
    return v, cert


# ---------------------------------------------------------------------------
# rescaling helper (scaling invariance of the excess)


def rescale_graph(f: GridField, x, r: float, dims=None,
                  order: int | None = None) -> GridField:
    """f_r(y) = (f(x + r y) - f(x)) / r on a rescaled grid around x."""
    x = np.asarray(x, float)
    if dims is None:
        dims = f.dims
    if order is None:
        order = 3 if f.m == 2 else 1
    span = np.min(np.minimum(x - f.origin, f.upper - x)) / r
    ns = int(dims[0])
    spacing = 2 * span / (ns - 1)
    g = GridField(f.m, f.n, (ns,) * f.m, -span * np.ones(f.m), spacing,
                  np.zeros((ns,) * f.m + (f.n,)))
    pts = x + r * g.points()
    ev = f.interpolator(order)
    fx = ev(x[None, :])
    vals = (ev(pts) - fx) / r
    g.values = vals.reshape(g.dims + (f.n,))
    return g
