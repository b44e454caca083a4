"""Generation of approximately area-minimizing graphs by Newton descent on
the discrete area functional, plus first-variation audits.

The discrete energy is sum over cells of J(Df_cell) h^m with J the area
element and cell gradients taken from corner differences — the same
quadrature the excess module uses, so minimizers are stationary for exactly
the functional being measured downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .field import (GridField, GridError, cell_gradient_array,
                    cell_region_weights, from_function)
from .area import area, region_volume, wedge_from_gradient
from .field import dirichlet_energy


class MinimizeError(RuntimeError):
    """Descent failure or violated boundary preconditions."""


@dataclass
class MinimizeResult:
    solution: GridField
    boundary: np.ndarray          # boundary node values, shape (#bnd, n)
    iterations: int
    final_gradient_norm: float
    energy_history: list

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_gradient_norm": self.final_gradient_norm,
            "energy_history": [float(e) for e in self.energy_history],
        }


# ---------------------------------------------------------------------------
# integrand derivatives


def integrand_value(Df: np.ndarray) -> np.ndarray:
    """J(A) = sqrt(det(Id + A^T A)) for batched gradients (..., n, m)."""
    W = wedge_from_gradient(Df)
    return np.sqrt(np.sum(W * W, axis=-1))


def integrand_derivative(Df: np.ndarray) -> np.ndarray:
    """DF(A) = dJ/dA = J * A (Id + A^T A)^{-1}, batched (..., n, m)."""
    Df = np.asarray(Df, float)
    m = Df.shape[-1]
    G = np.eye(m) + np.swapaxes(Df, -1, -2) @ Df
    Ginv = np.linalg.inv(G)
    J = np.sqrt(np.linalg.det(G))
    return J[..., None, None] * (Df @ Ginv)


def integrand_hessian(Df: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """d^2 J / dA^2, batched, shape (..., n*m, n*m); central differences of
    the analytic derivative (the derivative itself is exact)."""
    Df = np.asarray(Df, float)
    n, m = Df.shape[-2], Df.shape[-1]
    lead = Df.shape[:-2]
    H = np.empty(lead + (n * m, n * m))
    for i in range(n * m):
        E = np.zeros((n, m))
        E.flat[i] = step
        dp = integrand_derivative(Df + E)
        dm = integrand_derivative(Df - E)
        H[..., i, :] = ((dp - dm) / (2 * step)).reshape(lead + (n * m,))
    return 0.5 * (H + np.swapaxes(H, -1, -2))


# ---------------------------------------------------------------------------
# boundary handling


def boundary_mask(dims) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    for a in range(len(dims)):
        sl = [slice(None)] * len(dims)
        sl[a] = 0
        mask[tuple(sl)] = True
        sl[a] = -1
        mask[tuple(sl)] = True
    return mask


def boundary_lipschitz(f: GridField) -> float:
    """Max pairwise slope of the boundary-ring values."""
    bm = boundary_mask(f.dims)
    pts = f.points()[bm.ravel()]
    vals = f.values.reshape(-1, f.n)[bm.ravel()]
    best = 0.0
    N = pts.shape[0]
    chunk = max(1, int(2e6 // max(N, 1)))
    for i0 in range(0, N, chunk):
        d = np.linalg.norm(pts[i0:i0 + chunk, None, :] - pts[None, :, :],
                           axis=-1)
        dv = np.linalg.norm(vals[i0:i0 + chunk, None, :] - vals[None, :, :],
                            axis=-1)
        ok = d > 1e-14
        if ok.any():
            best = max(best, float((dv[ok] / d[ok]).max()))
    return best


def harmonic_extension(f: GridField) -> GridField:
    """Componentwise solution of the discrete Laplace equation with the
    boundary ring of ``f`` as data (the descent warm start)."""
    dims = f.dims
    m = f.m
    bm = boundary_mask(dims)
    idx = -np.ones(dims, dtype=np.int64)
    interior = ~bm
    n_int = int(interior.sum())
    idx[interior] = np.arange(n_int)
    rows, cols, data = [], [], []
    rhs = np.zeros((n_int, f.n))
    it = np.argwhere(interior)
    my = idx[interior]
    rows.extend(my)
    cols.extend(my)
    data.extend([2.0 * m] * n_int)
    for a in range(m):
        for s in (-1, 1):
            nb = it.copy()
            nb[:, a] += s
            nb_idx = idx[tuple(nb.T)]
            is_int = nb_idx >= 0
            rows.extend(my[is_int])
            cols.extend(nb_idx[is_int])
            data.extend([-1.0] * int(is_int.sum()))
            bvals = f.values[tuple(nb[~is_int].T)]
            np.add.at(rhs, my[~is_int], bvals)
    Lap = sparse.csr_matrix((data, (rows, cols)), shape=(n_int, n_int))
    sol = f.copy()
    out = spsolve(Lap.tocsc(), rhs)
    out = np.atleast_2d(out.reshape(n_int, f.n))
    vals = sol.values.reshape(-1, f.n)
    flat_idx = idx.ravel()
    vals[flat_idx >= 0] = out[flat_idx[flat_idx >= 0]]
    sol.values = vals.reshape(f.dims + (f.n,))
    return sol


# ---------------------------------------------------------------------------
# energy / gradient / Hessian assembly


def _corner_slices(dims, m):
    out = []
    for c in np.ndindex(*(2,) * m):
        out.append((c, tuple(slice(cc, cc + d - 1)
                             for cc, d in zip(c, dims))))
    return out


def _corner_coeffs(m: int, h: float) -> np.ndarray:
    """coef[corner, axis]: weight of a corner value in the cell gradient."""
    corners = list(np.ndindex(*(2,) * m))
    C = np.empty((len(corners), m))
    for ci, c in enumerate(corners):
        for a in range(m):
            w = (1.0 if c[a] else -1.0) / h
            for b in range(m):
                if b != a:
                    w *= 0.5
            C[ci, a] = w
    return C


def total_area_energy(f: GridField) -> float:
    G = cell_gradient_array(f)
    return float(np.sum(integrand_value(G)) * f.spacing ** f.m)


def energy_gradient(f: GridField) -> np.ndarray:
    """Nodal gradient of the discrete area energy, shape dims + (n,)."""
    G = cell_gradient_array(f)
    DF = integrand_derivative(G)            # cells + (n, m)
    hm = f.spacing ** f.m
    C = _corner_coeffs(f.m, f.spacing)
    out = np.zeros(f.dims + (f.n,))
    for ci, (c, sl) in enumerate(_corner_slices(f.dims, f.m)):
        contrib = np.tensordot(DF, C[ci], axes=([-1], [0])) * hm
        out[sl] += contrib
    return out


def minimize_area(boundary: GridField, tol: float = 1e-9,
                  max_iter: int = 100) -> MinimizeResult:
    """Minimize the discrete graph area with the boundary ring of
    ``boundary`` held fixed (interior values of the input are ignored).

    Warm start is the componentwise harmonic extension; descent is damped
    Newton with an Armijo backtracking line search; iteration stops when the
    interior energy-gradient norm falls below ``tol * h^m`` (the natural
    scale of one quadrature cell).
    """
    lip = boundary_lipschitz(boundary)
    if lip > 0.5 + 1e-12:
        raise MinimizeError(
            f"boundary Lipschitz constant {lip:.3g} above the admissible 1/2")
    f = harmonic_extension(boundary)
    dims = f.dims
    m, n = f.m, f.n
    hm = f.spacing ** m
    bm = boundary_mask(dims)
    interior = ~bm
    idx = -np.ones(dims, dtype=np.int64)
    n_int = int(interior.sum())
    idx[interior] = np.arange(n_int)
    C = _corner_coeffs(m, f.spacing)
    corners = _corner_slices(dims, m)
    n_corner = len(corners)
    # per-cell interior-dof indices, built once
    cell_dofs = np.stack([idx[sl] for _, sl in corners], axis=-1)  # cells+(2^m,)
    bnd_vals = f.values[bm]

    history = [total_area_energy(f)]
    gnorm = math.inf
    it_count = 0
    scale = tol * hm * max(1.0, math.sqrt(n_int))
    for it_count in range(1, max_iter + 1):
        g_full = energy_gradient(f)
        g = g_full[interior]                     # (n_int, n)
        gnorm = float(np.linalg.norm(g))
        if gnorm < scale:
            it_count -= 1
            break
        # assemble the sparse Newton system over interior dofs
        G = cell_gradient_array(f)
        Hc = integrand_hessian(G) * hm           # cells + (n m, n m)
        # cell Hessian in corner-value variables: (B^T Hc B) with
        # B[(i,a),(ci,j)] = C[ci,a] delta_ij
        rows, cols, data = [], [], []
        flat_dofs = cell_dofs.reshape(-1, n_corner)
        Hc_flat = Hc.reshape(-1, n * m, n * m)
        # expand per component pair
        for i in range(n):
            for j in range(n):
                Hij = Hc_flat[:, i * m:(i + 1) * m, j * m:(j + 1) * m]
                block = np.einsum("ca,kab,db->kcd", C, Hij, C)
                for ci in range(n_corner):
                    for di in range(n_corner):
                        r = flat_dofs[:, ci]
                        c_ = flat_dofs[:, di]
                        ok = (r >= 0) & (c_ >= 0)
                        rows.append(r[ok] * n + i)
                        cols.append(c_[ok] * n + j)
                        data.append(block[ok, ci, di])
        H = sparse.csr_matrix(
            (np.concatenate(data),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_int * n, n_int * n))
        try:
            step = spsolve(H.tocsc(), g.reshape(-1))
        except Exception as exc:          # pragma: no cover - fallback path
            raise MinimizeError(f"Newton solve failed: {exc}") from exc
        step = step.reshape(n_int, n)
        # Armijo backtracking
        t = 1.0
        e0 = history[-1]
        slope = float(np.sum(g * step))
        accepted = False
        for _ in range(40):
            trial = f.copy()
            tv = trial.values
            tv[interior] = f.values[interior] - t * step
            trial.values = tv
            e1 = total_area_energy(trial)
            if e1 <= e0 - 1e-4 * t * slope + 1e-15:
                f = trial
                history.append(e1)
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # stagnation at numerical floor: accept current iterate
            break
    else:
        raise MinimizeError(
            f"no convergence in {max_iter} Newton iterations "
            f"(gradient norm {gnorm:.3g})")
    f.values[bm] = bnd_vals               # bit-exact boundary
    g_final = energy_gradient(f)[interior]
    return MinimizeResult(
        solution=f, boundary=bnd_vals, iterations=it_count,
        final_gradient_norm=float(np.linalg.norm(g_final)),
        energy_history=history)


# ---------------------------------------------------------------------------
# first variation and linearization diagnostics


def first_variation_residual(f: GridField, test_fields) -> float:
    """max over kappa of |integral DF(Df) : Dkappa| / ||Dkappa||_C0.

    Every ``kappa`` must vanish on the two outermost node rings (compact
    support inside the domain).
    """
    G = cell_gradient_array(f)
    DF = integrand_derivative(G)
    hm = f.spacing ** f.m
    worst = 0.0
    for kappa in test_fields:
        if kappa.dims != f.dims or abs(kappa.spacing - f.spacing) > 1e-12:
            raise GridError("test field grid mismatch")
        ring = boundary_mask(kappa.dims)
        inner_ring = boundary_mask(tuple(d - 2 for d in kappa.dims))
        pad = np.zeros(kappa.dims, dtype=bool)
        pad[tuple(slice(1, -1) for _ in range(f.m))] = inner_ring
        if np.any(np.abs(kappa.values[ring | pad]) > 0):
            raise MinimizeError("test field is not compactly supported")
        Dk = cell_gradient_array(kappa)
        pairing = float(np.sum(DF * Dk) * hm)
        dk_c0 = float(np.abs(Dk).max())
        if dk_c0 == 0:
            continue
        worst = max(worst, abs(pairing) / dk_c0)
    return worst


def scherk_graph(a: float, halfwidth: float, points: int) -> GridField:
    """Closed-form minimal graph u(x, y) = a^{-1} log(cos(a x) / cos(a y))
    on the square of the given half-width (m = 2, n = 1).

    Exactly area-minimizing for every a with a * halfwidth < pi/2, with
    leading behavior (a/2)(y^2 - x^2) for small a; useful as an analytic
    minimizer free of any discretization floor.
    """
    if a <= 0:
        raise MinimizeError("scherk parameter must be positive")
    if a * halfwidth * (1 + 1e-12) >= math.pi / 2:
        raise MinimizeError(
            f"scherk parameter {a:.3g} puts the singular lines inside the "
            f"square of half-width {halfwidth:.3g}")
    h = 2.0 * halfwidth / (points - 1)

    def fn(p):
        return (np.log(np.cos(a * p[:, 0:1]) / np.cos(a * p[:, 1:2])) / a)

    return from_function(fn, 2, 1, (-halfwidth, -halfwidth), h,
                         (points, points))


def make_test_fields(like: GridField, count: int, seed: int = 0) -> list:
    """Deterministic battery of smooth compactly supported bump fields on
    the grid of ``like`` (Philox counter-based generator)."""
    rng = np.random.Generator(np.random.Philox(seed))
    lo = like.origin
    hi = like.upper
    span = hi - lo
    out = []
    for _ in range(count):
        center = lo + span * rng.uniform(0.3, 0.7, size=like.m)
        width = float(rng.uniform(0.1, 0.25) * span.min())
        amp = rng.normal(size=like.n)

        def fn(p, c=center, w=width, a=amp):
            t2 = np.sum(((p - c) / w) ** 2, axis=1)
            prof = np.zeros_like(t2)
            inside = t2 < 1.0
            prof[inside] = np.exp(-1.0 / (1.0 - t2[inside]))
            return prof[:, None] * a

        out.append(from_function(fn, like.m, like.n, lo, like.spacing,
                                 like.dims))
    return out


def linearization_gap(f: GridField, region=None) -> float:
    """area - |region| - 1/2 * Dirichlet energy: the quadratic-approximation
    defect of the area functional."""
    return area(f, region) - region_volume(f, region) \
        - 0.5 * dirichlet_energy(f, region)
