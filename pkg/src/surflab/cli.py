"""Command-line orchestration: generate minimal graphs, evaluate excess,
run decay sweeps, Lipschitz approximation, grid-and-glue, and the
verification suites.

Exit codes: 0 pass, 1 verification failure, 2 configuration error,
3 numerical failure.  All reports are deterministic for a fixed config and
seed; wall-clock information goes to a separate log file.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import verify as V
from .area import (ExcessError, GraphQuadrature, cylindrical_excess,
                   optimal_plane)
from .cm import CenterManifoldRun, CmError
from .field import (DomainError, GridError, GridField, c0_distance,
                    from_function, load_field, save_field)
from .geom import GeometryError, horizontal_plane
from .lipapprox import LipApproxError, lipschitz_approximation
from .minimize import (MinimizeError, boundary_lipschitz,
                       first_variation_residual, make_test_fields,
                       minimize_area)
from .params import Params

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

NUMERICAL_ERRORS = (MinimizeError, ExcessError, CmError, LipApproxError,
                    GeometryError, V.VerifyError, GridError, DomainError)


class ConfigError(ValueError):
    """Invalid configuration, flags, or missing input files."""


@dataclass
class RunConfig:
    params: Params
    seed: int
    out: Path
    options: dict = field(default_factory=dict)
    level: int | None = None

    def opt(self, key, default=None):
        return self.options.get(key, default)


def _parse_param_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--param needs key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"--param value {raw!r} is not valid JSON")
    return out


def load_config(args) -> RunConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = json.loads(path.read_text())
    pdict = dict(data.get("params", {}))
    pdict.update(_parse_param_overrides(getattr(args, "param", None)))
    try:
        params = Params.from_dict(pdict)
    except (ValueError, AssertionError, TypeError) as exc:
        raise ConfigError(f"invalid parameters: {exc}") from exc
    options = dict(data.get("options", {}))
    for key in ("input", "preset"):
        val = getattr(args, key, None)
        if val is not None:
            options[key] = val
    seed = args.seed if args.seed is not None else int(data.get("seed", 0))
    out = Path(args.out if args.out is not None
               else data.get("out", "surflab-out"))
    level = getattr(args, "level", None)
    if level is None:
        level = data.get("level")
    return RunConfig(params=params, seed=seed, out=out, options=options,
                     level=level)


def _write_report(cfg: RunConfig, name: str, payload: dict) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    payload = dict(payload)
    payload["params"] = cfg.params.to_dict()
    payload["seed"] = cfg.seed
    path = cfg.out / name
    V.write_json(path, payload)
    with open(cfg.out / "run.log", "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} wrote {name}\n")
    return path


def _load_input(cfg: RunConfig) -> GridField:
    stem = cfg.opt("input")
    if not stem:
        raise ConfigError("this command needs an input field "
                          "(--input STEM or options.input)")
    meta = Path(stem).with_suffix(".json")
    if not meta.exists():
        raise ConfigError(f"input field not found: {meta}")
    return load_field(stem)


# ---------------------------------------------------------------------------
# presets


def _preset_boundary(cfg: RunConfig) -> GridField:
    preset = cfg.opt("preset", "trig")
    dims = int(cfg.opt("dims", 161))
    # wide enough for every downstream command, including the coarsest
    # plane-optimization balls of the grid-and-glue pass
    span = float(cfg.opt("span", 1.9))
    h = 2.0 * span / (dims - 1)
    if preset == "affine":
        a = np.asarray(cfg.opt("slope", [0.05, -0.03]), float)
        b = float(cfg.opt("offset", 0.0))
        fn = lambda p: (p @ a[:, None]) + b
    elif preset == "trig":
        eps = float(cfg.opt("eps", 0.1))
        kx = float(cfg.opt("kx", 2.0))
        ky = float(cfg.opt("ky", 2.0))
        fn = lambda p: eps * (np.sin(kx * p[:, 0])
                              * np.cos(ky * p[:, 1]))[:, None]
    else:
        raise ConfigError(f"unknown preset {preset!r} (affine | trig)")
    return from_function(fn, 2, 1, (-span, -span), h, (dims, dims))


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig) -> int:
    boundary = _preset_boundary(cfg)
    lip = boundary_lipschitz(boundary)
    if lip > 0.5:
        raise ConfigError(
            f"boundary Lipschitz constant {lip:.3g} above the admissible 1/2")
    result = minimize_area(boundary, tol=float(cfg.opt("tol", 1e-9)),
                           max_iter=int(cfg.opt("max_iter", 100)))
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_field(result.solution, cfg.out / "field")
    tests = make_test_fields(result.solution, count=8, seed=cfg.seed)
    residual = first_variation_residual(result.solution, tests)
    _write_report(cfg, "generate.json", {
        "command": "generate",
        "preset": cfg.opt("preset", "trig"),
        "options": {k: cfg.options[k] for k in sorted(cfg.options)
                    if k != "input"},
        "result": result.to_dict(),
        "boundary_lipschitz": lip,
        "first_variation_residual": residual,
        "field": "field",
    })
    return EXIT_PASS


def cmd_excess(cfg: RunConfig) -> int:
    u = _load_input(cfg)
    quad = GraphQuadrature(u)
    x = np.asarray(cfg.opt("center", [0.0] * u.m), float)
    r = float(cfg.opt("radius", 1.0))
    p = np.concatenate([x, u.interpolator(1)(x[None])[0]])
    mode = cfg.opt("mode", "optimal")
    if mode == "optimal":
        _, rep = optimal_plane(quad, p, r, params=cfg.params)
    elif mode == "cylindrical":
        rep = cylindrical_excess(quad, x, r, horizontal_plane(u.m, u.n))
    else:
        raise ConfigError(f"unknown excess mode {mode!r}")
    _write_report(cfg, "excess.json", {"command": "excess",
                                       "mode": mode,
                                       "report": rep.to_dict()})
    return EXIT_PASS


def cmd_decay(cfg: RunConfig) -> int:
    u = _load_input(cfg)
    x = np.asarray(cfg.opt("center", [0.0] * u.m), float)
    p = np.concatenate([x, u.interpolator(1)(x[None])[0]])
    r0 = float(cfg.opt("r0", 1.0))
    depth = int(cfg.opt("depth", 3))
    table = V.excess_decay_sweep(u, p, r0, depth, params=cfg.params)
    cfg.out.mkdir(parents=True, exist_ok=True)
    table.to_csv(cfg.out / "decay.csv")
    _write_report(cfg, "decay.json", {"command": "decay",
                                      "table": table.to_dict()})
    return EXIT_PASS


def cmd_lipapprox(cfg: RunConfig) -> int:
    v = _load_input(cfg)
    quad = GraphQuadrature(v)
    r = float(cfg.opt("radius", 1.0))
    E = cfg.opt("excess")
    if E is None:
        p = np.concatenate([np.zeros(v.m), v.interpolator(1)(
            np.zeros((1, v.m)))[0]])
        _, rep = optimal_plane(quad, p, r, params=cfg.params)
        E = rep.value
    res = lipschitz_approximation(v, float(E), cfg.params, r=r)
    cfg.out.mkdir(parents=True, exist_ok=True)
    save_field(res.w, cfg.out / "extension")
    _write_report(cfg, "lipapprox.json", {
        "command": "lipapprox",
        "excess": res.excess_E,
        "gamma": res.gamma,
        "lambda": res.lam,
        "rho": res.rho,
        "lip_on_K": res.lip_on_K,
        "bad_measure": res.bad_measure,
        "K_fraction": float(res.K_mask.values.mean()),
        "conclusions_hold": res.conclusions_hold(),
        "extension": "extension",
    })
    return EXIT_PASS


def cmd_cm(cfg: RunConfig) -> int:
    u = _load_input(cfg)
    p = cfg.params
    top = int(cfg.level) if cfg.level is not None else p.k_max
    if not p.N0 <= top <= p.k_max:
        raise ConfigError(f"--level must lie in [{p.N0}, {p.k_max}]")
    run = CenterManifoldRun(u, p, store_packages=bool(cfg.opt("store", False)))
    gaps = {}
    cfg.out.mkdir(parents=True, exist_ok=True)
    for k in range(p.N0, top + 1):
        zeta = run.run_level(k)
        save_field(zeta, cfg.out / f"zeta_{k}")
        gaps[str(k)] = c0_distance(zeta, run.u_zeta)
    _write_report(cfg, "cm.json", {
        "command": "cm",
        "excess": run.excess,
        "levels": sorted(run.zeta),
        "level_stats": {str(k): run.level_stats[k] for k in run.level_stats},
        "c0_gap_to_input": gaps,
    })
    return EXIT_PASS


# ---------------------------------------------------------------------------
# verification suites


def _minimal_graph(eps: float, dims: int = 129, span: float = 1.3,
                   kind: str = "trig"):
    h = 2.0 * span / (dims - 1)
    if kind == "saddle":
        # harmonic saddle boundary: the solution keeps a nondegenerate
        # Hessian at the origin, so the excess decays cleanly like r^2
        fn = lambda p: eps * (p[:, 0] ** 2 - p[:, 1] ** 2)[:, None]
    else:
        fn = lambda p: eps * (np.cos(2.0 * p[:, 0] + 0.7)
                              * np.cos(2.0 * p[:, 1] - 0.4))[:, None]
    boundary = from_function(fn, 2, 1, (-span, -span), h, (dims, dims))
    return minimize_area(boundary).solution


def _check_harmonic(cfg: RunConfig) -> dict:
    h = 2.0 / 240
    saddle = from_function(lambda p: (p[:, 0] ** 2 - p[:, 1] ** 2)[:, None],
                           2, 1, (-1, -1), h, (241, 241))
    rep = V.harmonic_decay_check(saddle, (0.0, 0.0), rho=0.4, r=0.8)
    ok = abs(rep["ratio"] - 1.0) < 0.01
    return V.verdict("harmonic_decay", {"rho": 0.4, "r": 0.8},
                     {"ratio": rep["ratio"]}, ok)


def _check_oscillation(cfg: RunConfig) -> dict:
    battery = [((0.0, 0.0), 0.2), ((0.15, 0.1), 0.2), ((-0.1, 0.2), 0.15)]
    cs = []
    for dims in (161, 321):
        h = 2.8 / (dims - 1)
        u = from_function(
            lambda p: 0.03 * (p[:, 0] ** 2 - p[:, 1] ** 2)[:, None],
            2, 1, (-1.4, -1.4), h, (dims, dims))
        cs.append(V.mean_oscillation_check(u, battery,
                                           cfg.params)["measured_C"])
    stable = abs(cs[1] - cs[0]) <= 0.2 * abs(cs[0])
    ok = all(np.isfinite(c) and c > 0 for c in cs) and stable
    return V.verdict("mean_oscillation", {"battery": len(battery)},
                     {"C_coarse": cs[0], "C_fine": cs[1]}, ok)


def _check_morrey(cfg: RunConfig) -> dict:
    h = 2.2 / 320
    u = from_function(lambda p: (p[:, 0] ** 3)[:, None], 2, 1,
                      (-1.1, -1.1), h, (321, 321))
    rep = V.morrey_iteration(u, (0.0, 0.0), [0.8, 0.4, 0.2, 0.1])
    ok = rep["alpha"] is not None and 1.8 < rep["alpha"] < 2.2
    return V.verdict("morrey_iteration", {"radii": rep["radii"]},
                     {"alpha": rep["alpha"]}, ok)


def _check_decay(cfg: RunConfig) -> dict:
    u = _minimal_graph(eps=0.08, kind="saddle")
    p = np.concatenate([np.zeros(2), u.interpolator(1)(np.zeros((1, 2)))[0]])
    table = V.excess_decay_sweep(u, p, r0=1.0, depth=3, params=cfg.params)
    ratio_ok = all(r <= 2.0 ** -1.6 for r in table.ratios)
    slope_ok = table.slope is not None and 1.8 <= table.slope <= 2.2
    return V.verdict("excess_decay", {"r0": 1.0, "depth": 3},
                     {"ratios": table.ratios, "slope": table.slope},
                     ratio_ok and slope_ok)


def _check_blowup(cfg: RunConfig) -> dict:
    gaps = []
    for eps in (0.15, 0.05):
        u = _minimal_graph(eps=eps)
        p = np.concatenate([np.zeros(2),
                            u.interpolator(1)(np.zeros((1, 2)))[0]])
        _, rep = optimal_plane(u, p, 1.0, params=cfg.params)
        cmpres = V.harmonic_blowup_compare(u, max(rep.value, 1e-16),
                                           halfwidth=0.8)
        gaps.append(cmpres.w12_gap)
    ok = all(np.isfinite(g) for g in gaps) and gaps[1] <= gaps[0]
    return V.verdict("harmonic_blowup", {"eps": [0.15, 0.05]},
                     {"w12_gaps": gaps}, ok)


def _check_taylor(cfg: RunConfig) -> dict:
    cs, holds = [], []
    for s in (0.2, 0.1, 0.05):
        h = 1.6 / 160
        w = from_function(
            lambda p, s=s: s * (np.sin(p[:, 0]) * np.cos(p[:, 1]))[:, None],
            2, 1, (-0.8, -0.8), h, (161, 161))
        rep = V.taylor_excess_bound_check(w)
        cs.append(rep["measured_C"])
        holds.append(rep["holds"])
    ok = all(holds) and max(cs) < 10.0
    return V.verdict("taylor_excess_bound", {"scales": [0.2, 0.1, 0.05]},
                     {"C": cs}, ok)


def _check_interpolation(cfg: RunConfig) -> dict:
    kappa = cfg.params.kappa
    reps = [V.interpolation_battery(8, seed=cfg.seed, r=0.3, s=0.8,
                                    kappa=kappa, dims=dims)
            for dims in (61, 121)]
    cs = [r["measured_C"] for r in reps]
    ok = all(np.isfinite(c) for c in cs) \
        and abs(cs[1] - cs[0]) <= 0.2 * abs(cs[0])
    return V.verdict("interpolation_inequality",
                     reps[0]["config"], {"C_coarse": cs[0], "C_fine": cs[1]},
                     ok)


def _check_lipapprox(cfg: RunConfig) -> dict:
    u = _minimal_graph(eps=0.1)
    p = np.concatenate([np.zeros(2), u.interpolator(1)(np.zeros((1, 2)))[0]])
    _, rep = optimal_plane(u, p, 1.0, params=cfg.params)
    res = lipschitz_approximation(u, rep.value, cfg.params, r=1.0)
    ok = res.conclusions_hold() and res.bad_measure >= 0
    return V.verdict("lipschitz_approximation", {"r": 1.0},
                     {"excess": res.excess_E, "lip_on_K": res.lip_on_K,
                      "bad_measure": res.bad_measure}, ok)


def _check_cm(cfg: RunConfig) -> dict:
    h = 3.8 / 128
    u = from_function(lambda p: (p @ np.array([[0.03], [-0.02]])) + 0.01,
                      2, 1, (-1.9, -1.9), h, (129, 129))
    run = CenterManifoldRun(u, cfg.params, store_packages=False)
    zeta = run.run_level(cfg.params.N0)
    gap = c0_distance(zeta, run.u_zeta)
    return V.verdict("cm_affine_fixed_point", {"level": cfg.params.N0},
                     {"c0_gap": gap}, gap <= 1e-10)


_VERIFY_CHECKS = {
    "harmonic": _check_harmonic,
    "oscillation": _check_oscillation,
    "morrey": _check_morrey,
    "decay": _check_decay,
    "blowup": _check_blowup,
    "taylor": _check_taylor,
    "interpolation": _check_interpolation,
    "lipapprox": _check_lipapprox,
    "cm": _check_cm,
}


def cmd_verify(cfg: RunConfig, target: str) -> int:
    if target == "all":
        names = sorted(_VERIFY_CHECKS)
    elif target in _VERIFY_CHECKS:
        names = [target]
    else:
        raise ConfigError(f"unknown verify target {target!r}; choose from "
                          f"all, {', '.join(sorted(_VERIFY_CHECKS))}")
    verdicts = [_VERIFY_CHECKS[name](cfg) for name in names]
    all_pass = all(v["pass"] for v in verdicts)
    _write_report(cfg, "verify.json", {
        "command": "verify",
        "target": target,
        "verdicts": verdicts,
        "pass": all_pass,
    })
    cfg.out.mkdir(parents=True, exist_ok=True)
    V.write_csv(cfg.out / "verify.csv", ["check", "pass"],
                [[v["check"], int(v["pass"])] for v in verdicts])
    return EXIT_PASS if all_pass else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surflab",
        description="area-minimizing graph laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_level=False, with_input=False, with_preset=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--param", action="append", metavar="K=V",
                       help="parameter override (JSON value); flags win")
        if with_level:
            p.add_argument("--level", type=int, default=None)
        if with_input:
            p.add_argument("--input", help="input field file stem")
        if with_preset:
            p.add_argument("--preset", choices=("affine", "trig"))

    common(sub.add_parser("generate", help="minimize area over a preset "
                          "boundary and save the graph"), with_preset=True)
    common(sub.add_parser("excess", help="excess of a stored graph"),
           with_input=True)
    common(sub.add_parser("decay", help="dyadic excess-decay sweep"),
           with_input=True)
    common(sub.add_parser("lipapprox", help="Lipschitz truncation and "
                          "extension"), with_input=True)
    common(sub.add_parser("cm", help="grid-and-glue interpolation"),
           with_input=True, with_level=True)
    pv = sub.add_parser("verify", help="verification suites")
    pv.add_argument("target", nargs="?", default="all")
    common(pv)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "excess":
            return cmd_excess(cfg)
        if args.command == "decay":
            return cmd_decay(cfg)
        if args.command == "lipapprox":
            return cmd_lipapprox(cfg)
        if args.command == "cm":
            return cmd_cm(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.target)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
