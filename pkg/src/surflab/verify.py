"""Quantitative verification suites: excess decay, mean oscillation,
Morrey-type iteration, harmonic comparisons, and the interpolation
inequality.

Every suite measures the smallest constant that makes its inequality hold
over a configuration battery and reports it alongside a pass flag; limit
statements are checked as monotone trends over parameter sweeps.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .area import GraphQuadrature, cylindrical_excess, optimal_plane
from .field import (Disk, GridField, average_gradient, c0_norm,
                    cell_gradient_array, cell_region_weights,
                    derivative_tensor, dirichlet_energy, from_function,
                    holder_seminorm, l1_distance, l2_distance,
                    lipschitz_constant)
from .geom import graph_plane, wedge_coordinates
from .minimize import harmonic_extension
from .params import Params


class VerifyError(RuntimeError):
    """A verification suite's preconditions failed."""


# ---------------------------------------------------------------------------
# excess decay sweep


@dataclass
class DecayTable:
    center: np.ndarray               # ambient point p
    radii: list                      # strictly decreasing ladder
    excesses: list                   # spherical excess at each radius
    planes: list                     # optimal plane per radius
    ratios: list                     # E(r_{j+1}) / E(r_j)
    slope: float | None              # fitted d log E / d log r; None if exact 0
    exact_zero: bool
    tilt_gaps: list = field(default_factory=list)   # per-step |pi_{j+1}-pi_j|

    def __post_init__(self):
        r = np.asarray(self.radii, float)
        if np.any(np.diff(r) >= 0):
            raise VerifyError("radius ladder must be strictly decreasing")
        if any(e < 0 for e in self.excesses):
            raise VerifyError("negative excess in decay table")

    def to_dict(self) -> dict:
        return {
            "center": np.asarray(self.center, float).tolist(),
            "radii": list(map(float, self.radii)),
            "excesses": list(map(float, self.excesses)),
            "plane_slopes": [p.slope.ravel().tolist() for p in self.planes],
            "ratios": list(map(float, self.ratios)),
            "slope": self.slope,
            "exact_zero": self.exact_zero,
            "tilt_gaps": list(map(float, self.tilt_gaps)),
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["radius", "excess", "ratio"])
            for j, (r, e) in enumerate(zip(self.radii, self.excesses)):
                ratio = self.ratios[j - 1] if j > 0 else ""
                wr.writerow([r, e, ratio])


def excess_decay_sweep(u: GridField, p, r0: float, depth: int,
                       params: Params | None = None,
                       zero_tol: float = 1e-14) -> DecayTable:
    """Spherical excess at the dyadic radii r0 2^{-j}, j = 0..depth, each
    minimized over its own plane, with per-step ratios and the log-log fit
    of E against r."""
    quad = u if isinstance(u, GraphQuadrature) else GraphQuadrature(u)
    params = params or Params(m=quad.f.m, n=quad.f.n)
    p = np.asarray(p, float)
    radii, excesses, planes = [], [], []
    for j in range(depth + 1):
        r = r0 * 2.0 ** (-j)
        plane, rep = optimal_plane(quad, p, r, params=params)
        radii.append(r)
        excesses.append(rep.value)
        planes.append(plane)
    ratios = [excesses[j + 1] / excesses[j] if excesses[j] > 0 else 0.0
              for j in range(depth)]
    tilt_gaps = [float(np.linalg.norm(wedge_coordinates(planes[j + 1])
                                      - wedge_coordinates(planes[j])))
                 for j in range(depth)]
    exact_zero = max(excesses) <= zero_tol
    if exact_zero or min(excesses) <= 0:
        slope = None
    else:
        slope = float(np.polyfit(np.log(radii), np.log(excesses), 1)[0])
    return DecayTable(p, radii, excesses, planes, ratios, slope, exact_zero,
                      tilt_gaps)


# ---------------------------------------------------------------------------
# mean oscillation of the gradient


def _gradient_oscillation(u: GridField, x, r: float):
    """(integral over B_r(x) of |Du - avg|^2, avg, disk volume) with cell
    quadrature; also returns the closed-form minimum of A -> int |Du - A|^2,
    which the average attains."""
    w = cell_region_weights(u, Disk(tuple(x), r))
    vol = float(np.sum(w)) * u.spacing ** u.m
    if vol <= 0:
        raise VerifyError("oscillation disk misses every cell")
    G = cell_gradient_array(u)                       # (..., n, m)
    wsum = np.sum(w[..., None, None] * G, axis=tuple(range(u.m)))
    avg = wsum * u.spacing ** u.m / vol
    dev = G - avg
    lhs = float(np.sum(w * np.sum(dev * dev, axis=(-2, -1)))
                * u.spacing ** u.m)
    total_sq = float(np.sum(w * np.sum(G * G, axis=(-2, -1)))
                     * u.spacing ** u.m)
    closed_form = total_sq - float(np.sum(wsum * wsum)) \
        * u.spacing ** (2 * u.m) / vol
    return lhs, avg, vol, closed_form


def mean_oscillation_check(u: GridField, configurations,
                           params: Params | None = None) -> dict:
    """Smallest C with  int_{B_r(x)} |Du - (Du)_{x,r}|^2 <= C r^m E(B_{4r})
    over the (x, r) battery; E is the plane-minimized spherical excess at
    p = (x, u(x))."""
    quad = GraphQuadrature(u)
    params = params or Params(m=u.m, n=u.n)
    rows, cs = [], []
    for x, r in configurations:
        x = np.asarray(x, float)
        lhs, _, _, closed = _gradient_oscillation(u, x, r)
        p = np.concatenate([x, u.interpolator(1)(x[None])[0]])
        _, rep = optimal_plane(quad, p, 4.0 * r, params=params)
        rhs = r ** u.m * rep.value
        c = lhs / rhs if rhs > 0 else 0.0
        cs.append(c)
        rows.append({"x": x.tolist(), "r": r, "lhs": lhs, "excess_4r":
                     rep.value, "C": c, "closed_form_gap": abs(lhs - closed)})
    return {
        "check": "mean_oscillation",
        "rows": rows,
        "measured_C": float(max(cs)) if cs else 0.0,
        "closed_form_gap_max": float(max(r["closed_form_gap"] for r in rows))
        if rows else 0.0,
    }


# ---------------------------------------------------------------------------
# Morrey-type iteration


def _gradient_at(u: GridField, x: np.ndarray) -> np.ndarray:
    order = 3 if u.m == 2 else 1
    interp = u.interpolator(order)
    h = u.spacing
    G = np.empty((u.n, u.m))
    for a in range(u.m):
        e = np.zeros(u.m)
        e[a] = h
        G[:, a] = (interp((x + e)[None])[0] - interp((x - e)[None])[0]) \
            / (2 * h)
    return G


def morrey_iteration(u: GridField, x, radii) -> dict:
    """Dyadic gradient averages (Du)_{x,r}, their successive gaps, the
    exponent fitted from the gap decay, and the pointwise comparison
    |(Du)_{x,r} - Du(x)|."""
    x = np.asarray(x, float)
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])):
        raise VerifyError("radii must be strictly decreasing")
    avgs = [average_gradient(u, x, r).reshape(u.n, u.m) for r in radii]
    gaps = [float(np.linalg.norm(b - a)) for a, b in zip(avgs, avgs[1:])]
    Gx = _gradient_at(u, x)
    lebesgue = [float(np.linalg.norm(a - Gx)) for a in avgs]
    pos = [(r, g) for r, g in zip(radii[1:], gaps) if g > 1e-13]
    if len(pos) >= 2:
        lr = np.log([r for r, _ in pos])
        lg = np.log([g for _, g in pos])
        alpha = float(np.polyfit(lr, lg, 1)[0])
    else:
        alpha = None
    return {
        "check": "morrey_iteration",
        "x": x.tolist(),
        "radii": radii,
        "averages": [a.ravel().tolist() for a in avgs],
        "gaps": gaps,
        "alpha": alpha,
        "gradient_at_x": Gx.ravel().tolist(),
        "lebesgue_gaps": lebesgue,
    }


# ---------------------------------------------------------------------------
# harmonic comparisons


def laplacian_residual(h: GridField) -> float:
    """Max |five-point (2m+1-point) Laplacian| over interior nodes."""
    sp = h.spacing
    core = tuple(slice(1, -1) for _ in range(h.m))
    lap = np.zeros(tuple(d - 2 for d in h.dims) + (h.n,))
    for a in range(h.m):
        plus, minus = list(core), list(core)
        plus[a] = slice(2, None)
        minus[a] = slice(0, -2)
        lap += (h.values[tuple(plus)] - 2.0 * h.values[core]
                + h.values[tuple(minus)]) / sp ** 2
    return float(np.abs(lap).max())


def harmonic_decay_check(h: GridField, x, rho: float, r: float,
                         residual_tol: float = 1e-8) -> dict:
    """For a (discretely) harmonic h:  int_{B_rho}|Dh - (Dh)_{x,rho}|^2
    against (rho/r)^{m+2} int_{B_r}|Dh|^2."""
    if rho >= r:
        raise VerifyError("need rho < r")
    if laplacian_residual(h) > residual_tol:
        raise VerifyError("input is not discretely harmonic")
    x = np.asarray(x, float)
    lhs, _, _, _ = _gradient_oscillation(h, x, rho)
    energy = dirichlet_energy(h, Disk(tuple(x), r))
    bound = (rho / r) ** (h.m + 2) * energy
    return {
        "check": "harmonic_decay",
        "lhs": lhs,
        "energy": energy,
        "rhs_bound": bound,
        "ratio": lhs / bound if bound > 0 else 0.0,
    }


@dataclass
class BlowupCompare:
    f: GridField                 # normalized graph (v - avg) / sqrt(E)
    h: GridField                 # discrete harmonic match with h = f on rim
    w12_gap: float               # ||f - h||_{W^{1,2}} on the region


def harmonic_blowup_compare(v: GridField, E: float,
                            halfwidth: float) -> BlowupCompare:
    """Normalize v by its excess, solve the Laplace problem with the same
    boundary values on the centered square of the given halfwidth, and
    report the W^{1,2} gap between the two."""
    if E <= 0:
        raise VerifyError("need a positive excess for the normalization")
    lo = np.ceil((-halfwidth - v.origin) / v.spacing - 1e-9).astype(int)
    hi = np.floor((halfwidth - v.origin) / v.spacing + 1e-9).astype(int)
    if np.any(lo < 0) or np.any(hi > np.array(v.dims) - 1):
        raise VerifyError("region exceeds the domain of v")
    sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    vals = v.values[sl]
    f = GridField(v.m, v.n, vals.shape[:-1], v.origin + lo * v.spacing,
                  v.spacing, (vals - vals.mean(axis=tuple(range(v.m))))
                  / math.sqrt(E))
    h = harmonic_extension(f)
    diff = f.copy()
    diff.values = f.values - h.values
    gap = math.sqrt(l2_distance(f, h) ** 2 + dirichlet_energy(diff))
    return BlowupCompare(f, h, gap)


def taylor_excess_bound_check(w: GridField, r: float = 0.5) -> dict:
    """Cylindrical excess of gr(w) over C_r with the averaged-gradient plane
    against  1/2 int_{B_r}|Dw - (Dw)_{0,r}|^2 + C Lip(w) int_{B_r}|Dw|^2;
    reports the smallest C making the bound hold."""
    lip = lipschitz_constant(w, max_points=1500)
    if lip > 2.0:
        raise VerifyError(f"Lip(w) = {lip:.3g} exceeds 2")
    osc, avg, _, _ = _gradient_oscillation(w, np.zeros(w.m), r)
    plane = graph_plane(avg.reshape(w.n, w.m),
                        basepoint=np.zeros(w.m + w.n))
    lhs = cylindrical_excess(w, np.zeros(w.m), r, plane).value
    term_main = 0.5 * osc
    term_lip = lip * dirichlet_energy(w, Disk((0.0,) * w.m, r))
    C = max(lhs - term_main, 0.0) / term_lip if term_lip > 0 else 0.0
    return {
        "check": "taylor_excess_bound",
        "lip": lip,
        "lhs": lhs,
        "oscillation_term": term_main,
        "lip_term": term_lip,
        "measured_C": C,
        "holds": lhs <= term_main + (C + 1e-12) * term_lip + 1e-15,
    }


# ---------------------------------------------------------------------------
# interpolation inequality


def interpolation_inequality_check(f: GridField, r: float, s: float,
                                   kappa: float,
                                   holder_points: int = 300) -> dict:
    """Smallest C with, for j = 0..3,
        ||D^j f||_{C0(B_r)} <= C ( r^{-m-j} ||f||_{L1(B_s)}
                                   + r^{3+kappa-j} [D^3 f]_{kappa, B_s} )."""
    if not 0 < r < s:
        raise VerifyError("need 0 < r < s")
    m = f.m
    zero = f.copy()
    zero.values = np.zeros_like(zero.values)
    l1 = l1_distance(f, zero, Disk((0.0,) * m, s))
    hold = holder_seminorm(f, 3, kappa, region=Disk((0.0,) * m, s),
                           max_points=holder_points)
    rows = []
    cs = []
    for j in range(4):
        g = f if j == 0 else derivative_tensor(f, j)
        lhs = c0_norm(g, Disk((0.0,) * m, r))
        rhs = r ** (-m - j) * l1 + r ** (3.0 + kappa - j) * hold
        c = lhs / rhs if rhs > 0 else 0.0
        cs.append(c)
        rows.append({"j": j, "lhs": lhs, "rhs": rhs, "C": c})
    return {
        "check": "interpolation_inequality",
        "r": r, "s": s, "kappa": kappa,
        "l1": l1, "holder": hold,
        "rows": rows,
        "measured_C": float(max(cs)),
    }


def random_polynomial_values(points: np.ndarray, coeffs: np.ndarray,
                             degree: int = 3) -> np.ndarray:
    """Scalar polynomial of total degree <= degree in m variables with the
    given coefficient vector (graded-lexicographic monomial order)."""
    m = points.shape[1]
    monos = [e for d in range(degree + 1)
             for e in _monomials(m, d)]
    if coeffs.shape[0] != len(monos):
        raise VerifyError(f"need {len(monos)} coefficients")
    out = np.zeros(points.shape[0])
    for c, e in zip(coeffs, monos):
        term = np.full(points.shape[0], c)
        for a, p in enumerate(e):
            if p:
                term = term * points[:, a] ** p
        out += term
    return out


def _monomials(m: int, degree: int):
    if m == 1:
        yield (degree,)
        return
    for lead in range(degree, -1, -1):
        for rest in _monomials(m - 1, degree - lead):
            yield (lead,) + rest


def monomial_count(m: int, degree: int) -> int:
    return sum(1 for d in range(degree + 1) for _ in _monomials(m, d))


def interpolation_battery(count: int, seed: int, r: float, s: float,
                          kappa: float, dims: int = 81, span: float = 1.0,
                          noise: float = 0.0) -> dict:
    """Randomized battery for the interpolation inequality: cubic
    polynomials (plus optional smooth C^{3,kappa}-small noise) on the
    centered square of the given half-width."""
    rng = np.random.Generator(np.random.Philox(seed))
    nc = monomial_count(2, 3)
    h = 2.0 * span / (dims - 1)
    members = []
    for i in range(count):
        coeffs = rng.normal(size=nc)
        freq = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)

        def fn(pts, coeffs=coeffs, freq=freq, phase=phase):
            vals = random_polynomial_values(pts, coeffs)
            if noise:
                vals = vals + noise * np.sin(pts @ freq + phase)
            return vals[:, None]

        fld = from_function(fn, 2, 1, (-span, -span), h, (dims, dims))
        rep = interpolation_inequality_check(fld, r, s, kappa)
        members.append(rep["measured_C"])
    return {
        "check": "interpolation_battery",
        "config": {"count": count, "seed": seed, "r": r, "s": s,
                   "kappa": kappa, "dims": dims, "span": span,
                   "noise": noise},
        "member_C": members,
        "measured_C": float(max(members)),
    }


# ---------------------------------------------------------------------------
# verdicts


def verdict(check: str, config: dict, measured_constants: dict,
            passed: bool) -> dict:
    return {"check": check, "config": config,
            "measured_constants": measured_constants, "pass": bool(passed)}


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)
