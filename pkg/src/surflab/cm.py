"""Dyadic grid-and-glue smoothing of a near-horizontal graph.

The unit-scale cube [-sigma, sigma]^m is subdivided into dyadic cubes L of
sidelength ell(L) = 2 sigma 2^{-k}.  Each cube gets a local package: the
optimal plane pi_L for the ball B_{32 M0 ell}(p_L), the graph re-expressed
over pi_L, its Lipschitz truncation f_L, the mollified field z_L at scale
ell, and finally g_L -- z_L written back over the horizontal plane.  The
glued interpolation at level k is the bump-weighted quotient

    zeta_k = sum_L theta_L g_L / sum_L theta_L,

with theta_L identically one on the cube and supported in the concentric
(9/8)-dilate, so the denominator never drops below one on [-sigma, sigma]^m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import (GridField, Mollifier, c0_distance, c0_norm,
                    derivative_tensor, holder_seminorm, l1_distance,
                    lipschitz_constant, mollify)
from .area import GraphQuadrature, optimal_plane, plane_wedge
from .geom import (GeometryError, NearHorizontalPlane, horizontal_plane,
                   lipschitz_bound_after_rotation, reparametrize_graph,
                   rotation_between)
from .field import cell_average_values
from .lipapprox import (LipApproxError, _disk_weights_cached,
                        lipschitz_approximation)
from .params import Params


class CmError(RuntimeError):
    """Preconditions of the grid-and-glue construction failed."""


# ---------------------------------------------------------------------------
# dyadic cube grid


@dataclass(frozen=True)
class DyadicCube:
    """Closed dyadic cube of the subdivision of [-sigma, sigma]^m at the
    given level; ``index`` has one entry in [0, 2^level) per axis."""

    level: int
    index: tuple

    def side(self, params: Params) -> float:
        return params.side_length(self.level)

    def center(self, params: Params) -> np.ndarray:
        ell = self.side(params)
        return -params.sigma + (np.array(self.index, float) + 0.5) * ell

    @property
    def father_index(self) -> tuple:
        return tuple(i // 2 for i in self.index)

    def is_neighbor(self, other: "DyadicCube") -> bool:
        if self.level != other.level or self.index == other.index:
            return False
        return max(abs(a - b) for a, b in zip(self.index, other.index)) <= 1


def build_level(params: Params, level: int) -> list:
    if level < params.N0:
        raise CmError(f"level {level} below the coarsest level {params.N0}")
    per_axis = 2 ** level
    return [DyadicCube(level, idx)
            for idx in np.ndindex(*(per_axis,) * params.m)]


def build_grid(params: Params, levels=None) -> dict:
    """All cubes for the requested levels (default N0 .. k_max)."""
    if levels is None:
        levels = range(params.N0, params.k_max + 1)
    return {k: build_level(params, k) for k in levels}


# ---------------------------------------------------------------------------
# partition bumps


def _transition(x: np.ndarray) -> np.ndarray:
    """Smooth 0 -> 1 step on [0, 1] built from exp(-1/x)."""
    x = np.clip(np.asarray(x, float), 0.0, 1.0)
    lo = np.zeros_like(x)
    hi = np.zeros_like(x)
    pos = x > 0
    lo[pos] = np.exp(-1.0 / x[pos])
    neg = x < 1
    hi[neg] = np.exp(-1.0 / (1.0 - x[neg]))
    return lo / (lo + hi)


def partition_bump(t: np.ndarray) -> np.ndarray:
    """One-dimensional bump: 1 on [-1, 1], 0 outside (-9/8, 9/8), smooth."""
    a = np.abs(np.asarray(t, float))
    out = np.zeros_like(a)
    out[a <= 1.0] = 1.0
    mid = (a > 1.0) & (a < 1.125)
    out[mid] = _transition((1.125 - a[mid]) / 0.125)
    return out


def cube_bump(pts: np.ndarray, center: np.ndarray, side: float) -> np.ndarray:
    """theta_L at the points (..., m): product of axis bumps of
    2 (x - x_L) / ell."""
    t = 2.0 * (np.asarray(pts, float) - center) / side
    return np.prod(partition_bump(t), axis=-1)


# ---------------------------------------------------------------------------
# per-cube package


@dataclass
class CubePackage:
    cube: DyadicCube
    plane: NearHorizontalPlane       # optimal plane through p_L
    excess: float                    # E(L) = ell^-m * cylindrical excess
    g: GridField                     # local graph back over the horizontal plane
    stats: dict


class CenterManifoldRun:
    """Shared state for one grid-and-glue pass over a graph ``u``.

    ``u`` must be defined on a square grid large enough that the coarsest
    optimization balls B_{32 M0 ell(N0)}(p_L) stay inside the domain.  The
    quadrature cache, splines and the Lipschitz constant of u are built once
    and shared by every cube.
    """

    def __init__(self, u: GridField, params: Params | None = None,
                 excess: float | None = None, g_points: int = 25,
                 store_packages: bool = True, lip_sample_points: int = 320,
                 excess_floor: float = 1e-15):
        self.params = params or Params(m=u.m, n=u.n)
        p = self.params
        if (u.m, u.n) != (p.m, p.n):
            raise CmError("field dimensions disagree with the parameters")
        if g_points < 9:
            raise CmError("local output grids need at least 9 points per axis")
        self.u = u
        self.g_points = int(g_points)
        self.store_packages = bool(store_packages)
        self.lip_sample_points = int(lip_sample_points)
        self.excess_floor = float(excess_floor)
        need = p.sigma + 32.0 * p.M0 * p.side_length(p.N0)
        if np.any(u.origin > -need + 1e-12) or np.any(u.upper < need - 1e-12):
            raise CmError(
                f"domain half-width must reach {need:.3g} so the coarsest "
                "optimization balls stay inside the grid")
        self.quad = GraphQuadrature(u)
        self.u_order = 5 if u.m == 2 else 1
        u.interpolator(self.u_order)          # warm the spline caches
        if u.m == 2:
            u.gradient_interpolator(self.u_order)
        self.lip_u = lipschitz_constant(u, max_points=1500)
        if self.lip_u > 2.0:
            raise CmError(f"Lip(u) = {self.lip_u:.3g} exceeds 2")

        # glue grid: the sub-grid of u's nodes inside [-sigma, sigma]^m
        lo = np.ceil((-p.sigma - u.origin) / u.spacing - 1e-9).astype(int)
        hi = np.floor((p.sigma - u.origin) / u.spacing + 1e-9).astype(int)
        self._zeta_slices = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
        self.zeta_dims = tuple(b - a + 1 for a, b in zip(lo, hi))
        self.zeta_origin = u.origin + lo * u.spacing
        self.u_zeta = GridField(u.m, u.n, self.zeta_dims, self.zeta_origin,
                                u.spacing,
                                u.values[self._zeta_slices].copy())

        if excess is None:
            p0 = np.concatenate([np.zeros(u.m),
                                 self._eval_u(np.zeros(u.m))])
            _, rep = optimal_plane(self.quad, p0, 1.0, params=p)
            excess = rep.value
        self.excess = float(excess)

        self._moll_cache: dict = {}
        self.zeta: dict[int, GridField] = {}
        self.level_stats: dict[int, dict] = {}
        self.cube_stats: dict[int, list] = {}
        self.packages: dict[int, dict] = {}

    # -- helpers -----------------------------------------------------------

    def _eval_u(self, x: np.ndarray) -> np.ndarray:
        return self.u.interpolator(1)(np.atleast_2d(x))[0]

    def _mollifier(self, ell: float) -> Mollifier:
        key = round(ell, 15)
        if key not in self._moll_cache:
            self._moll_cache[key] = Mollifier(ell, self.u.m)
        return self._moll_cache[key]

    # -- pipeline ----------------------------------------------------------

    def cube_package(self, cube: DyadicCube) -> CubePackage:
        p = self.params
        m, n = self.u.m, self.u.n
        ell = cube.side(p)
        M0 = p.M0
        xL = cube.center(p)
        pL = np.concatenate([xL, self._eval_u(xL)])

        plane, _ = optimal_plane(self.quad, pL, 32.0 * M0 * ell, params=p)
        U, _ = plane.frame()
        Wt, S = self.quad.cylinder_sums(pL, 16.0 * M0 * ell, U)
        EL = max(Wt - float(S @ plane_wedge(plane.slope)), 0.0) / ell ** m

        # graph over pi_L on a square chart of half-width 9 M0 ell
        hc = 8.0 * M0 * ell / p.cube_samples
        half_v = 9.0 * M0 * ell
        nv = 2 * int(round(half_v / hc)) + 1
        half_v = nv // 2 * hc
        v = reparametrize_graph(
            self.u, horizontal_plane(m, n), plane,
            (-half_v,) * m, hc, (nv,) * m, order=self.u_order, scale=ell,
            residual_tol=p.newton_rel_tol, lip_f=self.lip_u)

        # truncation + extension at excess E(L), then mollification at ell;
        # the floor keeps quadrature noise in E(L) from shrinking the
        # truncation threshold below the noise level of Dv itself
        phi = self._mollifier(ell)
        margin = (phi.sample(hc).shape[0] - 1) // 2 * hc
        try:
            lip_v = lipschitz_bound_after_rotation(
                self.lip_u, rotation_between(horizontal_plane(m, n),
                                             plane).deviation)
        except GeometryError:
            lip_v = None                  # fall back to direct measurement
        try:
            approx = lipschitz_approximation(
                v, max(EL, self.excess_floor), p,
                center=np.zeros(m), r=8.0 * M0 * ell,
                extension_halfwidth=4.0 * M0 * ell + margin + 2 * hc,
                lip_max_points=self.lip_sample_points, lip_v=lip_v)
        except LipApproxError as exc:
            raise CmError(f"cube {cube.index} at level {cube.level}: "
                          f"{exc}") from exc
        fL = approx.w
        zL = mollify(fL, phi)

        # did the truncation keep every node clearly inside B_rho?
        sq = v.axis_coords(0) ** 2
        for a in range(1, m):
            sq = sq[..., None] + v.axis_coords(a) ** 2
        core = sq <= (approx.rho - 2.0 * hc) ** 2
        k_full = bool(np.all(approx.K_mask.values[..., 0][core] == 1.0))

        # diagnostics on the common grid, inside the disk where z is the
        # mollification of the genuine good chart: the kernel reads f up to
        # distance `margin`, so beyond rho - margin it samples extension
        # values; the 4 M0 ell disk of the unrestricted estimate is
        # recovered once E(L) is small enough that rho approaches 8 M0 ell
        smooth_r = float(approx.rho - margin - 2.0 * hc)
        diag_r = min(4.0 * M0 * ell, smooth_r)
        if diag_r >= 3.0 * hc:
            off = np.round((zL.origin - fL.origin) / hc).astype(int)
            crop = tuple(slice(o, o + d) for o, d in zip(off, zL.dims))
            f_crop = GridField(m, n, zL.dims, zL.origin, hc, fL.values[crop])
            wdisk = _disk_weights_cached(zL, np.zeros(m), diag_r)
            diag_area = float(np.sum(wdisk) * hc ** m)
            gap = np.linalg.norm(cell_average_values(zL)
                                 - cell_average_values(f_crop), axis=-1)
            z_f_l1 = float(np.sum(wdisk * gap) * hc ** m)
            # sup norms over windows of varying relative size are not
            # comparable level-to-level, so the Laplacian is measured on
            # a window of fixed proportion (~ one cube side)
            delta_z = _laplacian_c0(zL, min(diag_r, max(ell, 3.0 * hc)))
        else:                     # the truncation radius left no smooth core
            diag_r = float("nan")
            diag_area = 0.0
            z_f_l1 = float("nan")
            delta_z = float("nan")

        # back over the horizontal plane on a small grid around x_L
        half_g = 1.25 * ell
        sg = 2.0 * half_g / (self.g_points - 1)
        lip_z = math.sqrt(n) * approx.lip_on_K
        g = reparametrize_graph(
            zL, plane, horizontal_plane(m, n),
            xL - half_g, sg, (self.g_points,) * m,
            order=3 if m == 2 else 1, scale=ell,
            residual_tol=p.newton_rel_tol, lip_f=lip_z)

        stats = {
            "level": cube.level,
            "excess": EL,
            "tilt": float(np.linalg.norm(plane.slope)),
            "lip_on_K": approx.lip_on_K,
            "bad_measure": approx.bad_measure,
            "k_full": k_full,
            "rho": float(approx.rho),
            "smooth_radius": smooth_r,
            "diag_radius": diag_r,
            "diag_area": diag_area,
            "z_f_l1": z_f_l1,
            "delta_z_c0": delta_z,
            "g_deriv_c0": ([c0_norm(derivative_tensor(g, i))
                            for i in (1, 2, 3)]
                           if self.store_packages else None),
            "chart_spacing_ratio": hc / self.u.spacing,
        }
        return CubePackage(cube, plane, EL, g, stats)

    # -- gluing ------------------------------------------------------------

    def _support_window(self, xL: np.ndarray, s: float):
        """Glue-grid index slices of nodes with |x - x_L|_inf < s."""
        h = self.u.spacing
        sl = []
        for a in range(self.u.m):
            lo = int(math.ceil((xL[a] - s - self.zeta_origin[a]) / h - 1e-9))
            hi = int(math.floor((xL[a] + s - self.zeta_origin[a]) / h + 1e-9))
            lo = max(lo, 0)
            hi = min(hi, self.zeta_dims[a] - 1)
            if hi < lo:
                return None
            sl.append(slice(lo, hi + 1))
        return tuple(sl)

    def _accumulate(self, pkg: CubePackage, num: np.ndarray, den: np.ndarray):
        p = self.params
        ell = pkg.cube.side(p)
        xL = pkg.cube.center(p)
        sl = self._support_window(xL, 9.0 * ell / 16.0)
        if sl is None:
            return
        axes = [self.zeta_origin[a] + self.u.spacing
                * np.arange(s.start, s.stop) for a, s in enumerate(sl)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        theta = cube_bump(pts, xL, ell)
        keep = theta > 0
        if not keep.any():
            return
        vals = np.zeros((pts.shape[0], self.u.n))
        order = 3 if self.u.m == 2 else 1
        vals[keep] = pkg.g.interpolator(order)(pts[keep])
        shape = tuple(s.stop - s.start for s in sl)
        num[sl] += (theta[:, None] * vals).reshape(shape + (self.u.n,))
        den[sl] += theta.reshape(shape)

    def run_level(self, level: int) -> GridField:
        cubes = build_level(self.params, level)
        num = np.zeros(self.zeta_dims + (self.u.n,))
        den = np.zeros(self.zeta_dims)
        stats = []
        pkgs = {}
        for cube in cubes:
            pkg = self.cube_package(cube)
            self._accumulate(pkg, num, den)
            stats.append(pkg.stats)
            if self.store_packages:
                pkgs[cube.index] = pkg
        if den.min() < 1.0 - 1e-12:
            raise CmError(f"partition denominator dropped to {den.min():.6g}"
                          f" at level {level}")
        zeta = GridField(self.u.m, self.u.n, self.zeta_dims,
                         self.zeta_origin, self.u.spacing,
                         num / den[..., None])
        self.zeta[level] = zeta
        self.cube_stats[level] = stats
        self.level_stats[level] = _aggregate_level(stats)
        if self.store_packages:
            self.packages[level] = pkgs
        return zeta

    def run(self, levels=None) -> "CenterManifoldRun":
        p = self.params
        if levels is None:
            levels = range(p.N0, p.k_max + 1)
        for k in levels:
            self.run_level(k)
        return self


def glued_interpolation(packages, params: Params, grid: GridField) -> GridField:
    """Standalone glue of a complete level of packages onto the nodes of
    ``grid`` restricted to [-sigma, sigma]^m (quotient of bump-weighted
    local graphs)."""
    m, n = grid.m, grid.n
    pts = grid.points()
    inside = np.all(np.abs(pts) <= params.sigma + 1e-12, axis=1)
    num = np.zeros((pts.shape[0], n))
    den = np.zeros(pts.shape[0])
    order = 3 if m == 2 else 1
    for pkg in packages:
        ell = pkg.cube.side(params)
        xL = pkg.cube.center(params)
        theta = cube_bump(pts, xL, ell) * inside
        keep = theta > 0
        if not keep.any():
            continue
        num[keep] += theta[keep, None] * pkg.g.interpolator(order)(pts[keep])
        den[keep] += theta[keep]
    if den[inside].min() < 1.0 - 1e-12:
        raise CmError("partition denominator dropped below one")
    vals = np.zeros((pts.shape[0], n))
    vals[inside] = num[inside] / den[inside, None]
    out = grid.copy()
    out.values = vals.reshape(grid.dims + (n,))
    out.mask = inside.reshape(grid.dims)
    return out


# ---------------------------------------------------------------------------
# local helpers


def _laplacian_c0(z: GridField, radius: float) -> float:
    """Sup of |Laplacian z| (second-difference stencil) over interior nodes
    within the ball of the given radius around the grid's origin-centered
    zero point."""
    h = z.spacing
    core = tuple(slice(1, -1) for _ in range(z.m))
    lap = np.zeros(tuple(d - 2 for d in z.dims) + (z.n,))
    for a in range(z.m):
        plus = list(core)
        minus = list(core)
        plus[a] = slice(2, None)
        minus[a] = slice(0, -2)
        lap += (z.values[tuple(plus)] - 2.0 * z.values[core]
                + z.values[tuple(minus)]) / h ** 2
    axes = [z.axis_coords(a)[1:-1] for a in range(z.m)]
    grids = np.meshgrid(*axes, indexing="ij")
    inside = sum(g * g for g in grids) <= radius * radius
    if not inside.any():
        raise CmError("laplacian window contains no interior nodes")
    return float(np.abs(lap[inside]).max())


def _aggregate_level(stats: list) -> dict:
    def agg(key):
        arr = np.array([s[key] for s in stats], float)
        arr = arr[np.isfinite(arr)]       # skip cubes without a smooth core
        if arr.size == 0:
            nan = float("nan")
            return {"max": nan, "median": nan, "mean": nan}
        return {"max": float(arr.max()), "median": float(np.median(arr)),
                "mean": float(arr.mean())}

    return {
        "cubes": len(stats),
        "excess": agg("excess"),
        "tilt": agg("tilt"),
        "z_f_l1": agg("z_f_l1"),
        "delta_z_c0": agg("delta_z_c0"),
        "bad_measure": agg("bad_measure"),
        "k_full_fraction": float(np.mean([s["k_full"] for s in stats])),
    }


# ---------------------------------------------------------------------------
# reports


def _difference_field(a: GridField, b: GridField) -> GridField | None:
    """a - b resampled (cubic) onto the overlap of the two domains, on a's
    spacing; None when the overlap is degenerate."""
    lo = np.maximum(a.origin, b.origin) + 1e-9
    hi = np.minimum(a.upper, b.upper) - 1e-9
    h = a.spacing
    dims = tuple(int(np.floor((hi[c] - lo[c]) / h)) + 1 for c in range(a.m))
    if any(d < 5 for d in dims):
        return None
    out = GridField(a.m, a.n, dims, lo, h, np.zeros(dims + (a.n,)))
    pts = out.points()
    order = 3 if a.m == 2 else 1
    va = a.interpolator(order)(pts)
    vb = b.interpolator(order)(pts)
    out.values = (va - vb).reshape(dims + (a.n,))
    return out


def _pair_ratios(son: CubePackage, other: CubePackage, level: int,
                 excess: float, ell: float, params: Params):
    diff = _difference_field(son.g, other.g)
    if diff is None:
        return None
    # compare the interpolating functions only where both are genuinely
    # the smoothed good charts (within each cube's truncation radius minus
    # the mollifier read distance); outside, the values carry extension
    # artifacts the estimates do not govern
    pts = diff.points()
    ok = np.ones(pts.shape[0], dtype=bool)
    for pkg in (son, other):
        r_ok = pkg.stats.get("smooth_radius")
        if r_ok is None or not np.isfinite(r_ok) or r_ok <= 0:
            return None
        center = pkg.cube.center(params)
        ok &= np.linalg.norm(pts - center, axis=1) <= r_ok
    if int(ok.sum()) < 9:
        return None
    beta = params.beta
    scale = math.sqrt(excess) if excess > 0 else 1.0
    total = 0.0
    for i in range(4):
        field = derivative_tensor(diff, i) if i else diff
        norm = float(np.linalg.norm(
            field.values.reshape(-1, field.n), axis=1)[ok].max())
        total += 2.0 ** ((3.0 + beta - i) * level) * norm
    h = diff.spacing
    vals = np.linalg.norm(diff.values.reshape(-1, diff.n), axis=1)
    l1 = float(vals[ok].sum() * h ** diff.m)
    area = float(ok.sum() * h ** diff.m)
    l1_den = (excess if excess > 0 else 1.0) * ell ** (3.0 + beta) * area
    return {"c_ratio": total / scale, "l1_ratio": l1 / l1_den}


def cube_estimate_report(run: CenterManifoldRun, max_pairs: int = 300) -> dict:
    """Per-level scaled cube estimates and father-son / neighbor pair gaps.

    The mollification gaps are measured on the per-cube disk where z is
    the smoothed good chart and normalized by the area-density form of
    E ell^{m+3+2 beta} (L^1 of z - f) and by E ell^{1+2 beta} (C^0 of the
    Laplacian of z); pair gaps by E^{1/2} with the dyadic weights
    2^{(3+beta-i)k} on the i-th derivative.  Cubes and pairs whose
    truncation radius leaves no smooth core are skipped and counted.
    """
    p = run.params
    E = run.excess
    beta = p.beta
    levels = sorted(run.cube_stats)
    out = {"excess": E, "levels": {}}
    for k in levels:
        ell = p.side_length(k)
        stats = run.cube_stats[k]
        E0 = E if E > 0 else 1.0
        l1 = np.array([s["z_f_l1"] / (E0 * ell ** (3.0 + 2.0 * beta)
                                      * s["diag_area"])
                       for s in stats if np.isfinite(s["z_f_l1"])])
        lap = np.array([s["delta_z_c0"] / (E0 * ell ** (1.0 + 2.0 * beta))
                        for s in stats if np.isfinite(s["delta_z_c0"])])
        entry = {"cubes": len(stats), "valid_cubes": int(l1.size)}
        if l1.size:
            entry["z_f_l1_ratio"] = {"max": float(l1.max()),
                                     "median": float(np.median(l1))}
            entry["laplacian_ratio"] = {"max": float(lap.max()),
                                        "median": float(np.median(lap))}
        if k in run.packages:
            pkgs = run.packages[k]
            pair_c, pair_l1 = [], []
            if k - 1 in run.packages:
                fathers = run.packages[k - 1]
                keys = sorted(pkgs)
                stride = max(1, len(keys) // max_pairs)
                for key in keys[::stride]:
                    son = pkgs[key]
                    father = fathers.get(son.cube.father_index)
                    if father is None:
                        continue
                    r = _pair_ratios(son, father, k, E, ell, p)
                    if r is not None:
                        pair_c.append(r["c_ratio"])
                        pair_l1.append(r["l1_ratio"])
            keys = sorted(pkgs)
            stride = max(1, len(keys) // max_pairs)
            for key in keys[::stride]:
                son = pkgs[key]
                nb_key = tuple(i + 1 for i in key)
                nb = pkgs.get(nb_key)
                if nb is not None:
                    r = _pair_ratios(son, nb, k, E, ell, p)
                    if r is not None:
                        pair_c.append(r["c_ratio"])
                        pair_l1.append(r["l1_ratio"])
            if pair_c:
                pc, pl = np.array(pair_c), np.array(pair_l1)
                entry["pair_c_ratio"] = {"max": float(pc.max()),
                                         "median": float(np.median(pc))}
                entry["pair_l1_ratio"] = {"max": float(pl.max()),
                                          "median": float(np.median(pl))}
        out["levels"][k] = entry
    return out


def cm_norm_report(zeta: GridField, reference: GridField | None = None,
                   params: Params | None = None,
                   excess: float | None = None,
                   holder_points: int = 400) -> dict:
    """C^1..C^3 norms, the beta-Hoelder seminorm of D^3, and (optionally)
    the C^0 distance to a reference graph; each is also reported divided
    by E^{1/2} when an excess is supplied."""
    params = params or Params(m=zeta.m, n=zeta.n)
    d = [c0_norm(derivative_tensor(zeta, i)) for i in (1, 2, 3)]
    hold = holder_seminorm(zeta, 3, params.beta, max_points=holder_points)
    rep = {
        "d1_c0": d[0],
        "d2_c0": d[1],
        "d3_c0": d[2],
        "d3_holder": hold,
        "d_c2beta": d[0] + d[1] + d[2] + hold,
    }
    if reference is not None:
        rep["c0_gap"] = c0_distance(zeta, reference)
    if excess is not None and excess > 0:
        root = math.sqrt(excess)
        rep["scaled"] = {k: v / root for k, v in rep.items()
                        if not isinstance(v, dict)}
    rep["excess"] = excess
    return rep
