"""Uniform-grid vector fields and their discrete calculus.

A :class:`GridField` samples a map R^m -> R^n on a uniform grid.  The module
provides the derivative, norm, averaging, mollification and resampling
operations that the rest of the pipeline is built on, together with the
``gfld-1`` on-disk format.

Quadrature convention: integrals are cell-based (values and gradients taken
at cell centers, which is exact on affine maps and O(h^2) on smooth ones);
sup-type norms are nodal.  Disk regions are clipped exactly against grid
cells in dimension 2, by corner counting in dimension 3.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import signal
from scipy.interpolate import RectBivariateSpline, RegularGridInterpolator


class GridError(ValueError):
    """Malformed grid data or incompatible grids."""


class DomainError(ValueError):
    """A query left the active domain of a field."""


# ---------------------------------------------------------------------------
# core type


@dataclass
class GridField:
    """Sampled map from a uniform grid in R^m into R^n.

    ``values`` has shape ``dims + (n,)``.  ``mask`` (optional, boolean, shape
    ``dims``) marks the active domain; operations touching inactive points
    raise :class:`DomainError` instead of returning silent zeros.
    """

    m: int
    n: int
    dims: tuple
    origin: np.ndarray
    spacing: float
    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.origin = np.asarray(self.origin, dtype=float).reshape(self.m)
        if len(self.dims) != self.m:
            raise GridError("dims must have one entry per axis")
        if any(d < 2 for d in self.dims):
            raise GridError("need at least 2 samples per axis")
        if not self.spacing > 0:
            raise GridError("spacing must be positive")
        vals = np.asarray(self.values, dtype=float)
        expected = int(np.prod(self.dims)) * self.n
        if vals.size != expected:
            raise GridError(
                f"values size {vals.size} != n*prod(dims) = {expected}")
        self.values = vals.reshape(self.dims + (self.n,))
        if not np.all(np.isfinite(self.values)):
            raise GridError("field values must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool).reshape(self.dims)
        self._interp_cache: dict = {}

    # -- geometry ----------------------------------------------------------

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.dims[axis])

    def points(self) -> np.ndarray:
        """All grid points, shape (prod(dims), m)."""
        grids = np.meshgrid(*[self.axis_coords(a) for a in range(self.m)],
                            indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def contains(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo = self.origin + margin
        hi = self.upper - margin
        return np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)

    def copy(self) -> "GridField":
        return GridField(self.m, self.n, self.dims, self.origin.copy(),
                         self.spacing, self.values.copy(),
                         None if self.mask is None else self.mask.copy())

    # -- evaluation --------------------------------------------------------

    def interpolator(self, order: int = 1) -> Callable[[np.ndarray], np.ndarray]:
        """Callable evaluating the field at scattered points (N, m) -> (N, n).

        order 1 is multilinear; order 3/5 use tensor splines (m == 2 only).
        """
        key = order
        if key in self._interp_cache:
            return self._interp_cache[key]
        if order == 1:
            axes = [self.axis_coords(a) for a in range(self.m)]
            rgi = RegularGridInterpolator(axes, self.values, method="linear",
                                          bounds_error=True)

            def ev(pts, rgi=rgi):
                return rgi(np.atleast_2d(pts))
        elif self.m == 2:
            x, y = self.axis_coords(0), self.axis_coords(1)
            spl = [RectBivariateSpline(x, y, self.values[:, :, c],
                                       kx=order, ky=order)
                   for c in range(self.n)]

            def ev(pts, spl=spl):
                pts = np.atleast_2d(pts)
                if not np.all(self.contains(pts)):
                    raise DomainError("evaluation point outside domain")
                return np.stack([s.ev(pts[:, 0], pts[:, 1]) for s in spl],
                                axis=-1)
        else:
            raise GridError("spline interpolation implemented for m == 2 only")
        self._interp_cache[key] = ev
        return ev

    def gradient_interpolator(self, order: int = 3):
        """Scattered evaluation of the gradient, (N, m) -> (N, n, m); m == 2."""
        key = ("grad", order)
        if key in self._interp_cache:
            return self._interp_cache[key]
        if self.m != 2:
            raise GridError("gradient interpolation implemented for m == 2 only")
        x, y = self.axis_coords(0), self.axis_coords(1)
        spl = [RectBivariateSpline(x, y, self.values[:, :, c],
                                   kx=order, ky=order)
               for c in range(self.n)]

        def ev(pts, spl=spl):
            pts = np.atleast_2d(pts)
            out = np.empty((pts.shape[0], self.n, 2))
            for c, s in enumerate(spl):
                out[:, c, 0] = s.ev(pts[:, 0], pts[:, 1], dx=1)
                out[:, c, 1] = s.ev(pts[:, 0], pts[:, 1], dy=1)
            return out

        self._interp_cache[key] = ev
        return ev

    def _require_fully_active(self):
        if self.mask is not None and not self.mask.all():
            raise DomainError("operation requires a fully active domain")


def from_function(fn: Callable[[np.ndarray], np.ndarray], m: int, n: int,
                  origin, spacing: float, dims) -> GridField:
    """Sample ``fn`` (accepting points of shape (N, m)) on a fresh grid."""
    f = GridField(m, n, tuple(dims), np.asarray(origin, float), spacing,
                  np.zeros(tuple(dims) + (n,)))
    vals = np.asarray(fn(f.points()), dtype=float).reshape(f.dims + (n,))
    f.values = vals
    return f


# ---------------------------------------------------------------------------
# regions and quadrature weights


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float


def _interval_overlap(lo, hi, a, b):
    return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)


def _circle_halfplane_integral(x, r):
    """H(x) = integral_{-r}^{x} sqrt(r^2 - X^2) dX for x in [-r, r]."""
    x = np.clip(x, -r, r)
    return 0.5 * (x * np.sqrt(np.maximum(r * r - x * x, 0.0))
                  + r * r * np.arcsin(np.clip(x / r, -1.0, 1.0))) \
        + 0.25 * math.pi * r * r


def _disk_corner_area(x, y, r):
    """Area of {X <= x, Y <= y} intersected with the disk of radius r at 0."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xt = np.clip(x, -r, r)
    full = _circle_halfplane_integral(xt, r)          # integral of c(X)
    b = np.sqrt(np.maximum(r * r - y * y, 0.0))
    # integral of c(X) over [-r, xt] restricted to |X| >= b
    outer = (_circle_halfplane_integral(np.minimum(xt, -b), r)
             + np.where(xt > b,
                        _circle_halfplane_integral(xt, r)
                        - _circle_halfplane_integral(b, r), 0.0))
    inner_len = _interval_overlap(-b, b, -r, xt)
    clamp_term = np.where(
        y >= r, full,
        np.where(y <= -r, -full, np.sign(y + 0.0) * outer
                 + np.where(np.abs(y) < r, y * inner_len, 0.0)))
    # fix sign(0) ambiguity: for y in (-r, r) the formula above is continuous
    clamp_term = np.where((np.abs(y) < r) & (y == 0.0), 0.0 * full, clamp_term)
    return full + clamp_term


def disk_rectangle_overlap(center, r, lo, hi):
    """Exact area of the intersection of a disk with axis-aligned rectangles.

    ``lo``/``hi`` have shape (..., 2); broadcasting over the leading axes.
    """
    cx, cy = center
    x0 = lo[..., 0] - cx
    x1 = hi[..., 0] - cx
    y0 = lo[..., 1] - cy
    y1 = hi[..., 1] - cy
    area = (_disk_corner_area(x1, y1, r) - _disk_corner_area(x0, y1, r)
            - _disk_corner_area(x1, y0, r) + _disk_corner_area(x0, y0, r))
    return np.clip(area, 0.0, None)


def cell_centers(f: GridField) -> np.ndarray:
    grids = np.meshgrid(
        *[f.origin[a] + f.spacing * (np.arange(f.dims[a] - 1) + 0.5)
          for a in range(f.m)], indexing="ij")
    return np.stack(grids, axis=-1)


def cell_region_weights(f: GridField, region) -> np.ndarray:
    """Fraction of each grid cell covered by ``region`` (shape dims-1)."""
    cshape = tuple(d - 1 for d in f.dims)
    h = f.spacing
    if region is None:
        return np.ones(cshape)
    centers = cell_centers(f)
    if isinstance(region, Box):
        w = np.ones(cshape)
        for a in range(f.m):
            lo_c = centers[..., a] - h / 2
            w = w * _interval_overlap(np.asarray(region.lo)[a],
                                      np.asarray(region.hi)[a],
                                      lo_c, lo_c + h) / h
        return w
    if isinstance(region, Disk):
        c = np.asarray(region.center, float)
        r = float(region.radius)
        if f.m == 1:
            lo_c = centers[..., 0] - h / 2
            return _interval_overlap(c[0] - r, c[0] + r, lo_c, lo_c + h) / h
        if f.m == 2:
            lo = centers - h / 2
            hi = centers + h / 2
            return disk_rectangle_overlap(c, r, lo, hi) / (h * h)
        # m == 3: corner-count fraction
        count = np.zeros(cshape)
        for corner in np.ndindex(*(2,) * f.m):
            off = (np.array(corner) - 0.5) * h
            d2 = np.sum((centers + off - c) ** 2, axis=-1)
            count += d2 <= r * r
        return count / 2 ** f.m
    raise GridError(f"unknown region type {type(region)!r}")


def node_region_mask(f: GridField, region) -> np.ndarray:
    if region is None:
        return np.ones(f.dims, dtype=bool)
    pts = f.points().reshape(f.dims + (f.m,))
    if isinstance(region, Box):
        ok = np.ones(f.dims, dtype=bool)
        for a in range(f.m):
            ok &= (pts[..., a] >= region.lo[a] - 1e-12) \
                & (pts[..., a] <= region.hi[a] + 1e-12)
        return ok
    if isinstance(region, Disk):
        d2 = np.sum((pts - np.asarray(region.center)) ** 2, axis=-1)
        return d2 <= region.radius ** 2 + 1e-12
    raise GridError(f"unknown region type {type(region)!r}")


def _check_region_active(f: GridField, region):
    if f.mask is None:
        return
    w = cell_region_weights(f, region)
    # a cell is touched if any of its corners is inactive
    active = f.mask
    cell_active = np.ones_like(w, dtype=bool)
    for corner in np.ndindex(*(2,) * f.m):
        sl = tuple(slice(c, c + d - 1) for c, d in zip(corner, f.dims))
        cell_active &= active[sl]
    if np.any(w[~cell_active] > 1e-12):
        raise DomainError("region touches inactive grid points")


# ---------------------------------------------------------------------------
# derivatives


def gradient(f: GridField) -> GridField:
    """Nodal gradient: central differences inside, one-sided second order on
    the boundary.  Output stores n*m components per point (C-order (n, m))."""
    if any(d < 3 for d in f.dims):
        raise GridError("gradient needs at least 3 samples per axis")
    h = f.spacing
    out = np.empty(f.dims + (f.n, f.m))
    for a in range(f.m):
        d = np.gradient(f.values, h, axis=a, edge_order=2)
        out[..., a] = d
    g = GridField(f.m, f.n * f.m, f.dims, f.origin.copy(), f.spacing,
                  out.reshape(f.dims + (f.n * f.m,)), mask=None
                  if f.mask is None else f.mask.copy())
    return g


def nodal_gradient_array(f: GridField) -> np.ndarray:
    """Gradient values as an array of shape dims + (n, m)."""
    return gradient(f).values.reshape(f.dims + (f.n, f.m))


def cell_average_values(f: GridField) -> np.ndarray:
    """Field values at cell centers (corner average), shape (dims-1) + (n,)."""
    v = f.values
    for a in range(f.m):
        sl0 = [slice(None)] * (f.m + 1)
        sl1 = [slice(None)] * (f.m + 1)
        sl0[a] = slice(0, -1)
        sl1[a] = slice(1, None)
        v = 0.5 * (v[tuple(sl0)] + v[tuple(sl1)])
    return v


def cell_gradient_array(f: GridField) -> np.ndarray:
    """Gradient at cell centers from corner differences, shape cells+(n, m).

    Exact on affine maps and O(h^2)-accurate on smooth ones.
    """
    h = f.spacing
    out = np.empty(tuple(d - 1 for d in f.dims) + (f.n, f.m))
    for a in range(f.m):
        sl0 = [slice(None)] * (f.m + 1)
        sl1 = [slice(None)] * (f.m + 1)
        sl0[a] = slice(0, -1)
        sl1[a] = slice(1, None)
        diff = (f.values[tuple(sl1)] - f.values[tuple(sl0)]) / h
        # average the difference over the remaining axes to hit the center
        for b in range(f.m):
            if b == a:
                continue
            s0 = [slice(None)] * diff.ndim
            s1 = [slice(None)] * diff.ndim
            s0[b] = slice(0, -1)
            s1[b] = slice(1, None)
            diff = 0.5 * (diff[tuple(s0)] + diff[tuple(s1)])
        out[..., a] = diff
    return out


def derivative_tensor(f: GridField, order: int) -> GridField:
    """Iterated nodal gradient; output has n*m^order components per point."""
    g = f
    for _ in range(order):
        g = gradient(g)
    return g


# ---------------------------------------------------------------------------
# norms, distances, averages


def _check_same_grid(f: GridField, g: GridField):
    if (f.m, f.n, f.dims) != (g.m, g.n, g.dims) \
            or not np.allclose(f.origin, g.origin, atol=1e-12) \
            or abs(f.spacing - g.spacing) > 1e-12:
        raise GridError("fields live on different grids (no silent resampling)")


def dirichlet_energy(f: GridField, region=None) -> float:
    """integral over the region of |Df|^2 (cell quadrature)."""
    _check_region_active(f, region)
    w = cell_region_weights(f, region)
    G = cell_gradient_array(f)
    return float(np.sum(w * np.sum(G * G, axis=(-2, -1))) * f.spacing ** f.m)


def l1_distance(f: GridField, g: GridField, region=None) -> float:
    _check_same_grid(f, g)
    _check_region_active(f, region)
    w = cell_region_weights(f, region)
    d = cell_average_values(f) - cell_average_values(g)
    return float(np.sum(w * np.linalg.norm(d, axis=-1)) * f.spacing ** f.m)


def l2_distance(f: GridField, g: GridField, region=None) -> float:
    _check_same_grid(f, g)
    _check_region_active(f, region)
    w = cell_region_weights(f, region)
    d = cell_average_values(f) - cell_average_values(g)
    return float(math.sqrt(np.sum(w * np.sum(d * d, axis=-1))
                           * f.spacing ** f.m))


def c0_distance(f: GridField, g: GridField, region=None) -> float:
    _check_same_grid(f, g)
    mask = node_region_mask(f, region)
    if not mask.any():
        raise GridError("region contains no grid points")
    d = np.linalg.norm(f.values - g.values, axis=-1)
    return float(np.max(d[mask]))


def c0_norm(f: GridField, region=None) -> float:
    mask = node_region_mask(f, region)
    if not mask.any():
        raise GridError("region contains no grid points")
    return float(np.max(np.linalg.norm(f.values, axis=-1)[mask]))


def average_gradient(f: GridField, center, r: float) -> np.ndarray:
    """Quadrature average of the gradient over the disk B_r(center),
    with exact cell clipping at the rim.  Returns an (n, m) matrix."""
    center = np.asarray(center, float)
    if np.any(center - r < f.origin - 1e-12) \
            or np.any(center + r > f.upper + 1e-12):
        raise DomainError("averaging disk exits the field domain")
    region = Disk(tuple(center), r)
    _check_region_active(f, region)
    w = cell_region_weights(f, region)
    total = np.sum(w)
    if total <= 0:
        raise DomainError("averaging disk covers no cells")
    G = cell_gradient_array(f)
    return np.tensordot(w, G, axes=f.m) / total


def lipschitz_constant(f: GridField, region=None, max_points: int = 4000) -> float:
    """Max pairwise slope |f(x)-f(y)|/|x-y| over grid points of the region."""
    return holder_seminorm(f, order=0, exponent=1.0,
                           pair_range=(0.5 * f.spacing, np.inf),
                           region=region, max_points=max_points)


def holder_seminorm(f: GridField, order: int, exponent: float,
                    pair_range=None, region=None,
                    max_points: int | None = None) -> float:
    """sup over grid-point pairs of |D^j f(x) - D^j f(y)| / |x-y|^beta.

    The scan is exhaustive by default; ``max_points`` applies a deterministic
    stride subsampling (the result is then a lower bound).
    """
    if not (0 < exponent <= 1):
        raise ValueError("exponent must lie in (0, 1]")
    g = derivative_tensor(f, order)
    mask = node_region_mask(g, region)
    pts = g.points()[mask.ravel()]
    vals = g.values.reshape(-1, g.n)[mask.ravel()]
    if pair_range is None:
        pair_range = (2 * f.spacing, np.inf)
    r_min, r_max = pair_range
    N = pts.shape[0]
    if N < 2:
        raise GridError("need at least two points for a pair scan")
    if max_points is not None and N > max_points:
        stride = int(math.ceil(N / max_points))
        pts = pts[::stride]
        vals = vals[::stride]
        N = pts.shape[0]
    best = 0.0
    chunk = max(1, int(2e6 // max(N, 1)))
    for i0 in range(0, N, chunk):
        P = pts[i0:i0 + chunk]
        V = vals[i0:i0 + chunk]
        d2 = np.sum((P[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
        dist = np.sqrt(d2)
        ok = (dist >= r_min - 1e-15) & (dist <= r_max)
        if not ok.any():
            continue
        dv = np.linalg.norm(V[:, None, :] - vals[None, :, :], axis=-1)
        ratio = np.where(ok, dv / np.where(ok, dist ** exponent, 1.0), 0.0)
        best = max(best, float(ratio.max()))
    if best == 0.0:
        d_lo = np.linalg.norm(pts[0] - pts[-1])
        if d_lo < r_min:
            raise GridError("empty pair set for the requested range")
    return best


# ---------------------------------------------------------------------------
# mollification


def _bump_profile(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@dataclass
class Mollifier:
    """Radial kernel with compact support in the ball of ``radius``.

    The default profile is exp(-1/(1-t^2)); any radial profile vanishing at
    t = 1 works.  Sampled kernels are renormalized to sum exactly to one.
    """

    radius: float
    m: int = 2
    profile: Callable[[np.ndarray], np.ndarray] = dc_field(
        default=_bump_profile)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("mollifier radius must be positive")
        # continuum normalization constant (reported, not used in sampling)
        t = np.linspace(0.0, 1.0, 4001)
        shell = t ** (self.m - 1) * self.profile(t)
        from .params import unit_ball_volume
        surface = self.m * unit_ball_volume(self.m)
        self.normalization = 1.0 / (surface * np.trapezoid(shell, t)
                                    * self.radius ** self.m)

    def sample(self, spacing: float) -> np.ndarray:
        """Discrete kernel on the grid, renormalized to sum to one."""
        cached = getattr(self, "_sample_cache", None)
        if cached is not None and cached[0] == spacing:
            return cached[1]
        if self.radius < 2 * spacing - 1e-12:
            raise GridError("mollifier radius must be >= 2 grid spacings")
        K = int(math.ceil(self.radius / spacing)) - 1
        while (K + 1) * spacing < self.radius - 1e-12:
            K += 1
        offs = np.arange(-K, K + 1) * spacing
        grids = np.meshgrid(*([offs] * self.m), indexing="ij")
        rr = np.sqrt(sum(g * g for g in grids)) / self.radius
        ker = self.profile(rr)
        ker[rr >= 1.0] = 0.0
        s = ker.sum()
        if s <= 0:
            raise GridError("sampled mollifier kernel vanished")
        ker = ker / s
        self._sample_cache = (spacing, ker)
        return ker


def mollify(f: GridField, phi: Mollifier) -> GridField:
    """Discrete convolution with the sampled kernel; the output domain is
    shrunk by the kernel radius."""
    f._require_fully_active()
    if phi.m != f.m:
        raise GridError("mollifier dimension mismatch")
    ker = phi.sample(f.spacing)
    K = (ker.shape[0] - 1) // 2
    if any(d - 2 * K < 2 for d in f.dims):
        raise DomainError("insufficient margin for the mollifier support")
    out = np.stack(
        [signal.fftconvolve(f.values[..., c], ker, mode="valid")
         for c in range(f.n)], axis=-1)
    new_dims = tuple(d - 2 * K for d in f.dims)
    return GridField(f.m, f.n, new_dims,
                     f.origin + K * f.spacing, f.spacing, out)


# ---------------------------------------------------------------------------
# resampling


def resample(f: GridField, new_origin, new_spacing: float, new_dims) -> GridField:
    """Multilinear resampling onto a new uniform grid (exact on affine maps)."""
    f._require_fully_active()
    g = GridField(f.m, f.n, tuple(new_dims), np.asarray(new_origin, float),
                  new_spacing, np.zeros(tuple(new_dims) + (f.n,)))
    pts = g.points()
    if not np.all(f.contains(pts)):
        raise DomainError("resampling target escapes the source domain")
    same = (g.dims == f.dims and abs(g.spacing - f.spacing) < 1e-15
            and np.allclose(g.origin, f.origin, atol=1e-15))
    if same:
        g.values = f.values.copy()
        return g
    g.values = f.interpolator(order=1)(pts).reshape(g.dims + (f.n,))
    return g


# ---------------------------------------------------------------------------
# gfld-1 file format


def save_field(f: GridField, stem) -> None:
    """Write ``<stem>.json`` + ``<stem>.bin`` (little-endian float64)."""
    stem = Path(stem)
    meta = {
        "format": "gfld-1",
        "m": f.m,
        "n": f.n,
        "dims": list(f.dims),
        "origin": [float(x) for x in f.origin],
        "spacing": f.spacing,
    }
    if f.mask is not None:
        meta["mask"] = f.mask.astype(int).ravel().tolist()
    stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True))
    payload = np.ascontiguousarray(f.values, dtype="<f8")
    stem.with_suffix(".bin").write_bytes(payload.tobytes())


def load_field(stem) -> GridField:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    if meta.get("format") != "gfld-1":
        raise GridError(f"not a gfld-1 file: {stem}")
    raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    mask = None
    if "mask" in meta:
        mask = np.array(meta["mask"], dtype=bool)
    return GridField(meta["m"], meta["n"], tuple(meta["dims"]),
                     np.array(meta["origin"]), meta["spacing"],
                     raw.copy(), mask)
