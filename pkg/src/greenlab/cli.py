"""Command line entry point: greenlab {gen,cap,green,verify,scan}.

Every run reads an optional JSON config with "space", "solver" and
"experiment" blocks; scalar flags override config fields. Outputs land in
--out next to a run.json manifest. Exit codes: 0 all checks pass, 1 a
mathematical check failed, 2 configuration error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .asympt import (classify_expected, fit_local_behavior, harnack_sphere_ratio,
                     integrability_scan)
from .capacity import (LEVEL_GRID, check_capacity_sandwich, ring_capacity_sweep,
                       singleton_capacity_trend, solve_capacity, ring_problem,
                       verify_potential_scaling)
from .errors import EmptyLevelSet, GreenlabError, InsufficientRows, InsufficientShells, NonConvergence
from .green import (attach_ring_capacities, check_definition_criteria,
                    check_growth_bounds, compute_K, default_cutoff, load_green, normalize,
                    radial_extrema, save_green, solve_singular)
from .mmspace import (build_cone, build_glued_balls, build_grid, dyadic_radii,
                      estimate_doubling, estimate_pointwise_dimension, half_octave_radii,
                      load_space, save_space)
from .penergy import EnergyConfig

log = logging.getLogger("greenlab")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def fmt(v) -> str:
    return f"{float(v):.12g}"


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, (float, int, np.floating)) and
                              not isinstance(v, bool) else str(v) for v in row) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(fmt(v)) if np.isfinite(v) else None
    return obj


def write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# config


SPACE_KEYS = {"generator", "n", "h", "halfWidth", "halfHeight", "alpha", "neckLength",
              "neckMeasure", "path"}


def make_space(block: dict):
    if not isinstance(block, dict):
        raise ConfigError("space block must be an object")
    unknown = set(block) - SPACE_KEYS
    if unknown:
        raise ConfigError(f"unknown space fields: {sorted(unknown)}")
    try:
        if "path" in block:
            return load_space(block["path"])
        gen = block.get("generator", "grid")
        h = float(block.get("h", 1 / 32))
        n = int(block.get("n", 2))
        if gen == "grid":
            return build_grid(n, float(block.get("halfWidth", 1.0)), h,
                              float(block.get("alpha", 0.0)))
        if gen == "cone":
            return build_cone(n, float(block.get("halfHeight", 1.0)), h)
        if gen == "glued":
            nm = block.get("neckMeasure")
            return build_glued_balls(n, h, float(block.get("neckLength", 0.25)),
                                     None if nm is None else float(nm))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid space: {exc}") from exc
    raise ConfigError(f"unknown generator {gen!r}")


def make_solver(block: dict, p=None) -> EnergyConfig:
    block = dict(block or {})
    names = {"p": "p", "tolRel": "tol_rel", "maxIter": "max_iter", "epsilon0": "epsilon0",
             "epsDecay": "eps_decay", "epsFinal": "eps_final"}
    unknown = set(block) - set(names)
    if unknown:
        raise ConfigError(f"unknown solver fields: {sorted(unknown)}")
    kw = {names[k]: v for k, v in block.items()}
    if p is not None:
        kw["p"] = p
    try:
        return EnergyConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver block: {exc}") from exc


def load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    cfg.setdefault("space", {})
    cfg.setdefault("solver", {})
    cfg.setdefault("experiment", {})
    cfg.setdefault("seed", 0)
    if not isinstance(cfg["experiment"], dict):
        raise ConfigError("experiment block must be an object")
    kind = cfg["experiment"].get("kind", args.command)
    if kind != args.command:
        raise ConfigError(f"config holds a {kind!r} experiment, not {args.command!r}")
    cfg["experiment"]["kind"] = kind
    for flag, key in (("p", "p"), ("R", "R"), ("x0", "x0"), ("radii", "radii"),
                      ("normalize", "normalize")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg["experiment"][key] = v
    if getattr(args, "space", None):
        cfg["space"] = {"path": args.space}
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    out = getattr(args, "out", None) or cfg.get("out")
    if not out:
        raise ConfigError("an output directory is required (--out)")
    cfg["out"] = str(out)
    return cfg


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def resolve_x0(space, x0):
    if x0 is None:
        raise ConfigError("the singularity/center x0 is required")
    if isinstance(x0, str):
        parts = [s for s in x0.split(",") if s.strip()]
        if len(parts) == 1:
            x0 = int(parts[0])
        else:
            x0 = [float(s) for s in parts]
    if isinstance(x0, (list, tuple)):
        if len(x0) != space.n:
            raise ConfigError(f"x0 needs {space.n} coordinates")
        return space.nearest_vertex(np.asarray(x0, dtype=float))
    x0 = int(x0)
    if not 0 <= x0 < space.num_vertices:
        raise ConfigError(f"vertex {x0} out of range")
    return x0


def parse_radii(value):
    if value is None:
        return None
    if isinstance(value, str):
        return [float(s) for s in value.split(",") if s.strip()]
    return [float(v) for v in value]


def _require(exp, key, cast=float):
    if key not in exp or exp[key] is None:
        raise ConfigError(f"experiment field {key!r} is required")
    try:
        return cast(exp[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}") from exc


# ---------------------------------------------------------------------------
# run bookkeeping


class Run:
    """Output directory, lock, file inventory, verdicts and the manifest."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.command = command
        self.out = Path(cfg["out"])
        self.files = []
        self.checks = {}
        self.timings = {}
        self.warnings = []

    @contextmanager
    def locked(self):
        self.out.mkdir(parents=True, exist_ok=True)
        lock = self.out / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"another run holds {lock}") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield self
        finally:
            lock.unlink(missing_ok=True)

    def path(self, name):
        self.files.append(name)
        return self.out / name

    @contextmanager
    def timed(self, name):
        t = time.perf_counter()
        yield
        self.timings[name] = time.perf_counter() - t

    def check(self, name, passed, **detail):
        self.checks[name] = {"pass": bool(passed), **detail}

    def finish(self, status="ok"):
        write_json(self.out / "timings.json", self.timings)
        inventory = []
        for name in sorted(set(self.files)):
            data = (self.out / name).read_bytes()
            inventory.append({"file": name, "sha256": hashlib.sha256(data).hexdigest()})
        manifest = {
            "tool": "greenlab",
            "version": __version__,
            "command": self.command,
            "configHash": self.hash,
            "seed": self.cfg.get("seed", 0),
            "status": status,
            "checks": self.checks,
            "allPassed": all(c["pass"] for c in self.checks.values()),
            "warnings": self.warnings,
            "outputs": inventory,
            "timingsFile": "timings.json",
        }
        write_json(self.out / "run.json", manifest)
        return manifest


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = load_config(args)
    block = dict(cfg["space"])
    for flag, key in (("generator", "generator"), ("n", "n"), ("h", "h"),
                      ("half_width", "halfWidth"), ("alpha", "alpha"),
                      ("neck_length", "neckLength")):
        v = getattr(args, flag, None)
        if v is not None:
            block[key] = v
    cfg["space"] = block
    run = Run(cfg, "gen")
    with run.locked():
        with run.timed("build"):
            space = make_space(block)
        save_space(space, run.path("space.json"))
        c = space.nearest_vertex(np.zeros(space.n))
        radii = dyadic_radii(space.diameter() / 4, space.h)
        doubling = estimate_doubling(space, c, radii) if len(radii) >= 2 else float("nan")
        summary = {"vertices": space.num_vertices, "edges": space.num_edges,
                   "generator": space.generator, "h": space.h, "doubling": doubling}
        write_json(run.path("summary.json"), summary)
        print(f"{space.generator}: {space.num_vertices} vertices, {space.num_edges} edges, "
              f"doubling constant {doubling:.4g}")
        run.finish()
    return EXIT_OK


def _dimension(space, x0, R):
    return estimate_pointwise_dimension(space, x0, half_octave_radii(R, space.h))


def _sweep(run, space, x0, exp, solver, name="capacity"):
    p = solver.p
    R = _require(exp, "R")
    min_cells = float(exp.get("minCells", 1.0))
    radii = parse_radii(exp.get("radii")) or dyadic_radii(R / 2, space.h, min_cells)
    dim = _dimension(space, x0, R)
    with run.timed(f"{name}_sweep"):
        prof = ring_capacity_sweep(space, x0, radii, R, p, solver,
                                   pointwise_q=dim.log_mass_slope, global_q=dim.global_q,
                                   min_cells=min_cells)
    rows = sorted(prof.rows, key=lambda r: r.r)
    write_csv(run.path(f"{name}_profile.csv"), ["r", "cap", "ballMass"],
              [(r.r, r.cap, r.ball_mass) for r in rows])
    return prof, dim


def cmd_cap(args) -> int:
    cfg = load_config(args)
    exp = cfg["experiment"]
    run = Run(cfg, "cap")
    with run.locked():
        space = make_space(cfg["space"])
        x0 = resolve_x0(space, exp.get("x0"))
        solver = make_solver(cfg["solver"], exp.get("p"))
        prof, dim = _sweep(run, space, x0, exp, solver)
        failed = [r for r in prof.rows if not r.ok]
        try:
            rep = check_capacity_sandwich(prof)
            verdict = {"regime": rep.regime, "spread": rep.spread, "pass": rep.passed,
                       "pointwiseQ": dim.log_mass_slope}
        except InsufficientRows as exc:
            verdict = {"regime": None, "spread": None, "pass": False, "error": str(exc)}
        write_json(run.path("sandwich.json"), verdict)
        run.check("capacity_sandwich", verdict["pass"], spread=verdict["spread"])
        run.finish("nonconvergence" if failed else "ok")
    print(f"sandwich spread {verdict['spread']} regime {verdict['regime']}")
    return EXIT_SOLVER if failed else EXIT_OK


def _profile_radii(space, R):
    """Shells at every mesh step in [4h, R/8] plus half-octave radii in [2h, R/2]."""
    h = space.h
    fine = [k * h for k in range(4, int(R / (8 * h) + 1e-9) + 1)]
    coarse = half_octave_radii(R / 2, h)
    return sorted({round(r, 12) for r in fine + coarse})


def _default_levels(G):
    peak = G.peak
    return [(a * peak, b * peak) for a, b in LEVEL_GRID]


def _green_checks(run, space, G, exp, solver):
    """Criteria, growth, fit and Harnack checks shared by green and verify."""
    p = G.p
    R = float(exp["R"])
    levels = exp.get("levels")
    levels = _default_levels(G) if levels is None else [tuple(map(float, ab)) for ab in levels]
    usable, flagged = [], []
    for a, b in levels:
        (usable if b <= G.peak else flagged).append((a, b))
    for a, b in flagged:
        run.warnings.append(f"level pair ({a:g}, {b:g}) exceeds max G = {G.peak:.6g}")
    with run.timed("criteria"):
        rep = check_definition_criteria(space, G, usable, solver)
    rows = [(r.alpha, r.beta, r.product, r.target, r.rel_error, int(r.passed)) for r in rep.levels]
    rows += [(a, b, float("nan"), float("nan"), float("nan"), "flagged") for a, b in flagged]
    write_csv(run.path("criteria_levels.csv"),
              ["alpha", "beta", "product", "target", "relError", "pass"], rows)
    run.check("criterion1_positive_harmonic", rep.positive and rep.residual_ok,
              residual=rep.residual)
    run.check("criterion2_zero_outside", rep.zero_outside and rep.finite_energy)
    run.check("criterion4_level_sets", all(r.passed for r in rep.levels),
              worst=max((r.rel_error for r in rep.levels), default=0.0))
    with run.timed("K"):
        k1 = compute_K(space, G, default_cutoff(space, G, None, solver))
        k2 = compute_K(space, G, default_cutoff(space, G, 8 * space.h, solver))
    target = 1.0 if G.normalized else G.k_value
    run.check("K_value", abs(k1 - target) <= 0.03 * abs(target), K=k1, target=target)
    run.check("K_cutoff_independence", abs(k1 - k2) <= 0.02 * abs(k1), K4h=k1, K8h=k2)

    radii = parse_radii(exp.get("profileRadii")) or _profile_radii(space, R)
    prof = radial_extrema(space, G, radii)
    with run.timed("ring_capacities"):
        prof = attach_ring_capacities(space, prof, p, solver)
    run.path("green_profile.csv").write_text(prof.to_csv())
    m = [s.m for s in prof.shells]
    run.check("m_monotone", all(b <= a for a, b in zip(m, m[1:])))
    # shells of half-width h only resolve a sphere from r = 4h on
    ratio, _ = harnack_sphere_ratio(replace(prof, shells=tuple(
        s for s in prof.shells if s.r >= 4 * space.h - 1e-12)))
    limit = 3.0 if space.generator == "grid" else 10.0
    run.check("sphere_harnack", ratio <= limit, ratio=ratio, limit=limit)
    try:
        growth = check_growth_bounds(prof, p)
        run.check("growth_bounds", growth.passed, upperSpread=growth.upper_spread,
                  lowerSpread=growth.lower_spread, r0=growth.r0)
    except InsufficientRows as exc:
        run.check("growth_bounds", False, error=str(exc))
    dim = _dimension(space, G.x0, R)
    try:
        fit = fit_local_behavior(prof, G, dim)
        run.check("local_fit", fit.passed, model=fit.model, slope=fit.fitted_slope,
                  rSquared=fit.r_squared)
    except InsufficientShells as exc:
        run.warnings.append(f"local fit skipped: {exc}")
    return prof


def _solve_green(run, space, exp, solver):
    x0 = resolve_x0(space, exp.get("x0"))
    R = _require(exp, "R")
    domain = space.open_ball_mask(x0, R)
    with run.timed("green_solve"):
        G = solve_singular(space, domain, x0, solver.p, solver)
    if exp.get("normalize", True):
        G = normalize(G)
    return G


def cmd_green(args) -> int:
    cfg = load_config(args)
    exp = cfg["experiment"]
    run = Run(cfg, "green")
    with run.locked():
        space = make_space(cfg["space"])
        solver = make_solver(cfg["solver"], exp.get("p"))
        G = _solve_green(run, space, exp, solver)
        save_green(G, run.path("green.json"))
        _green_checks(run, space, G, exp, solver)
        manifest = run.finish()
    for w in manifest["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if manifest["allPassed"] else EXIT_CHECK


def cmd_verify(args) -> int:
    cfg = load_config(args)
    exp = cfg["experiment"]
    run = Run(cfg, "verify")
    with run.locked():
        space = make_space(cfg["space"])
        solver = make_solver(cfg["solver"], exp.get("p"))
        p = solver.p
        x0 = resolve_x0(space, exp.get("x0"))
        exp["x0"] = int(x0)
        R = _require(exp, "R")

        prof, dim = _sweep(run, space, x0, exp, solver)
        if any(not r.ok for r in prof.rows):
            run.finish("nonconvergence")
            return EXIT_SOLVER
        rep = check_capacity_sandwich(prof)
        run.check("capacity_sandwich", rep.passed, regime=rep.regime, spread=rep.spread)
        trend = singleton_capacity_trend(prof)
        if trend.applicable:
            run.check("singleton_capacity_decay", trend.passed, detail=trend.detail)

        r_core = float(exp.get("coreRadius", R / 4))
        with run.timed("level_set_law"):
            cap = solve_capacity(space, ring_problem(space, x0, r_core, R, p), solver)
            law = verify_potential_scaling(space, cap, LEVEL_GRID, solver)
        write_csv(run.path("level_set_law.csv"),
                  ["alpha", "beta", "measured", "predicted", "relError"],
                  [(r.alpha, r.beta, r.measured, r.predicted, r.rel_error) for r in law.rows])
        run.check("level_set_law", law.passed,
                  worst=max(r.rel_error for r in law.rows))

        if exp.get("greenFile"):
            try:
                G = load_green(exp["greenFile"])
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot read green file: {exc}") from exc
            if len(G.values) != space.num_vertices:
                raise ConfigError("green file does not match the space")
        else:
            G = _solve_green(run, space, exp, solver)
        save_green(G, run.path("green.json"))
        _green_checks(run, space, G, exp, solver)
        manifest = run.finish()
    failed = [k for k, v in manifest["checks"].items() if not v["pass"]]
    print("all checks passed" if not failed else "failed: " + ", ".join(failed))
    return EXIT_OK if not failed else EXIT_CHECK


def cmd_scan(args) -> int:
    cfg = load_config(args)
    exp = cfg["experiment"]
    run = Run(cfg, "scan")
    with run.locked():
        block = dict(cfg["space"])
        meshes = exp.get("meshes") or [block.get("h", 1 / 16) / 2**k for k in range(3)]
        spaces = []
        for h in meshes:
            spaces.append(make_space({**block, "h": float(h)}))
        solver = make_solver(cfg["solver"], exp.get("p"))
        p = solver.p
        x0 = exp.get("x0") or [0.0] * spaces[0].n
        if isinstance(x0, str):
            x0 = [float(s) for s in x0.split(",")]
        r = _require(exp, "r")
        q_list = [float(q) for q in exp.get("q", [1.0, 2.0, 4.0])]
        with run.timed("scan"):
            reports = integrability_scan(spaces, np.asarray(x0, dtype=float), p, q_list, r,
                                         solver, domain_radius=exp.get("domainRadius"))
        rows = []
        for rep in reports:
            expected = classify_expected(rep)
            rows.append((rep.q, rep.quantity, rep.trend, expected or "none", rep.critical_q,
                         *rep.norms))
            if expected is not None:
                run.check(f"integrability_{rep.quantity}_q{rep.q:g}", rep.trend == expected,
                          trend=rep.trend, expected=expected)
        write_csv(run.path("integrability.csv"),
                  ["q", "quantity", "trend", "expected", "criticalQ"] +
                  [f"h{i}" for i in range(len(meshes))], rows)
        manifest = run.finish()
    return EXIT_OK if manifest["allPassed"] else EXIT_CHECK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="greenlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, space=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        if space:
            p.add_argument("--space", help="space JSON written by `gen`")

    g = sub.add_parser("gen", help="build a metric measure space")
    common(g, space=False)
    g.add_argument("--generator", choices=["grid", "cone", "glued"])
    g.add_argument("--n", type=int)
    g.add_argument("--h", type=float)
    g.add_argument("--half-width", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--neck-length", type=float)

    c = sub.add_parser("cap", help="ring capacity sweep and sandwich check")
    common(c)
    c.add_argument("--x0", "--center", dest="x0", help="vertex id or comma coordinates")
    c.add_argument("--p", type=float)
    c.add_argument("--R", type=float)
    c.add_argument("--radii", help="comma separated radii")

    gr = sub.add_parser("green", help="Green's function, profile and criteria")
    common(gr)
    gr.add_argument("--x0", help="vertex id or comma coordinates")
    gr.add_argument("--p", type=float)
    gr.add_argument("--R", type=float, help="radius of the ball Omega")
    gr.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)

    v = sub.add_parser("verify", help="run every check and write a manifest")
    common(v)
    v.add_argument("--x0")
    v.add_argument("--p", type=float)
    v.add_argument("--R", type=float)

    s = sub.add_parser("scan", help="integrability scan over refining meshes")
    common(s, space=False)
    s.add_argument("--p", type=float)
    return ap


COMMANDS = {"gen": cmd_gen, "cap": cmd_cap, "green": cmd_green, "verify": cmd_verify,
            "scan": cmd_scan}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except EmptyLevelSet as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except GreenlabError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
