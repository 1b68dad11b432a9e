"""Command-line interface: ``verify``, ``simulate``, ``transform`` and ``find-point``.

Exit codes: 0 success, 1 a check failed, 2 usage or scenario error,
3 numerical failure (non-convergence, domain exit, point outside the image).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checks import run_suite
from .dynamics import (
    DET_FLOOR,
    find_manifold_point,
    integrate,
    manifold_check,
    perturbed_manifold_points,
    write_sidecar,
)
from .errors import ConstructionError, ConvergenceError, DomainError
from .model import StatePoint
from .report import _plain
from .sampling import default_scale, random_segment
from .scenarios import Scenario, ScenarioError, documented_seed, echo_compatible_point, load_scenario
from .segments import DEFAULT_N, VectorSegment, max_abs_diff
from .transform import T_map, TransformContext, Y_map, classify_point

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_SEED = 42
DEFAULT_TOL = 1e-9


class UsageError(Exception):
    pass


def _setting(args, sc: Scenario, key: str, default):
    """Command-line flag, else the scenario's ``settings`` entry, else ``default``."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    settings = sc.source.get("settings", {}) if isinstance(sc.source, dict) else {}
    return settings.get(key, default)


def _write_json(path, data: dict) -> None:
    text = json.dumps(_plain(data), indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_point(path) -> StatePoint:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read point file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if isinstance(d, dict) and "point" in d:
        d = d["point"]
    try:
        return StatePoint.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: invalid point ({exc})") from None


def _provenance(sc: Scenario, seed: int, N: int, **extra) -> dict:
    out = {"scenario": sc.name, "scenario_hash": sc.hash, "seed": seed, "mesh_intervals": N}
    out.update(extra)
    return out


def _default_seed_point(sc: Scenario, N: int) -> StatePoint:
    try:
        return documented_seed(sc.name, N)
    except KeyError:
        m = sc.model
        return StatePoint(np.full(m.k, -m.h / 2.0), VectorSegment.zeros(m.h, m.n, N))


def _check_point_shape(sc: Scenario, p: StatePoint) -> None:
    m = sc.model
    if p.r.shape != (m.k,) or p.phi.n != m.n or abs(p.phi.h - m.h) > 1e-12 * m.h:
        raise UsageError(f"point does not match the scenario (k={m.k}, n={m.n}, h={m.h:g})")


# --------------------------------------------------------------------------- commands


def cmd_verify(args) -> int:
    sc = load_scenario(args.scenario)
    seed = int(_setting(args, sc, "seed", DEFAULT_SEED))
    N = int(_setting(args, sc, "mesh", DEFAULT_N))
    samples = int(_setting(args, sc, "samples", 50))
    chi_samples = int(_setting(args, sc, "chi_samples", 100))
    m = sc.model
    manifold_seed = _default_seed_point(sc, N)
    rng = np.random.default_rng(seed)
    starts = perturbed_manifold_points(m, rng, 1, N=N)
    trajectory = None
    if starts:
        # fine enough that dense output resolves the kinks propagated from t = 0
        dt = m.delta_min / 20.0
        trajectory = (starts[0], 800 * dt, dt)
    rep = run_suite(m, seed=seed, samples=samples, chi_samples=chi_samples, N=N, manifold_seed=manifold_seed, trajectory=trajectory)
    rep.provenance = {**_provenance(sc, seed, N), **rep.provenance}
    _write_json(args.out, rep.to_dict())
    if not args.quiet:
        for c in rep.checks:
            print(c.line(), file=sys.stderr)
        print(f"{'PASS' if rep.passed else 'FAIL'}: {sum(c.passed for c in rep.checks)}/{len(rep.checks)} checks", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


def _start_point(args, sc: Scenario, N: int, seed: int) -> StatePoint:
    m = sc.model
    if args.point:
        p = _read_point(args.point)
        _check_point_shape(sc, p)
        return p
    if args.start == "equilibrium":
        return find_manifold_point(m, _default_seed_point(sc, N))
    if sc.name == "echo":
        return echo_compatible_point(0.1, N)
    rng = np.random.default_rng(seed)
    base = _default_seed_point(sc, N)
    for _ in range(50):
        bump = random_segment(rng, m.h, m.n, N, 0.1 * default_scale(m))
        try:
            return find_manifold_point(m, StatePoint(base.r, base.phi + bump))
        except (ConvergenceError, DomainError):
            continue
    raise ConvergenceError("no perturbed manifold point found")


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    m = sc.model
    seed = int(_setting(args, sc, "seed", DEFAULT_SEED))
    N = int(_setting(args, sc, "mesh", DEFAULT_N))
    dt = float(_setting(args, sc, "dt", min(0.01, m.delta_min / 4.0)))
    t_end = float(_setting(args, sc, "t_end", 10.0))
    tol = float(_setting(args, sc, "tol", DEFAULT_TOL))
    if dt > m.delta_min / 4.0 * (1 + 1e-12):
        raise UsageError(f"dt={dt:g} exceeds delta_min/4={m.delta_min / 4:g}; stages would read history that is not yet computed")
    if args.out is None:
        raise UsageError("simulate needs --out <file.csv>")
    p0 = _start_point(args, sc, N, seed)
    traj = integrate(m, p0, t_end, dt, on_manifold_tol=tol)
    traj.to_csv(args.out)
    sidecar = Path(str(args.out) + ".json")
    write_sidecar(
        traj,
        sidecar,
        _provenance(
            sc,
            seed,
            N,
            t_end=t_end,
            start=args.point or args.start,
            tolerances={"newton": 1e-12, "on_manifold": tol, "blowup": 1e-3, "det_floor": DET_FLOOR},
        ),
    )
    if traj.status != "ok":
        print(f"integration stopped: {traj.error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_transform(args) -> int:
    sc = load_scenario(args.scenario)
    m = sc.model
    seed = int(_setting(args, sc, "seed", DEFAULT_SEED))
    tol = float(_setting(args, sc, "tol", DEFAULT_TOL))
    if not args.point:
        raise UsageError("transform needs --point <file.json>")
    p = _read_point(args.point)
    _check_point_shape(sc, p)
    N = int(_setting(args, sc, "mesh", p.phi.N))
    ctx = TransformContext.build(m, N=N)
    if args.direction == "forward":
        out = T_map(ctx, p)
        back = Y_map(ctx, out) if args.roundtrip else None
    else:
        out = Y_map(ctx, p)
        back = T_map(ctx, out) if args.roundtrip else None
    res = {
        "slope0": float(np.max(np.abs(out.phi.slopes[:, -1]))),
        "Q_change": float(np.max(np.abs(m.Q(out.r, out.phi) - m.Q(p.r, p.phi)))),
        "delta_change": float(np.max(np.abs(m.Delta(out, check=False) - m.Delta(p, check=False)))),
        "classification": classify_point(ctx, out if args.direction == "forward" else p, tol).to_dict(),
    }
    if back is not None:
        res["roundtrip_c1_error"] = max_abs_diff(back.phi, ctx.lift(p.phi)).c1_norm
    _write_json(
        args.out,
        {
            "direction": args.direction,
            "point": out.to_dict(),
            "residuals": res,
            "provenance": _provenance(sc, seed, N, field=ctx.field.to_dict(), tolerances={"fixed_point": ctx.fp_tol, "classification": tol}),
        },
    )
    return EXIT_OK


def cmd_find_point(args) -> int:
    sc = load_scenario(args.scenario)
    m = sc.model
    seed = int(_setting(args, sc, "seed", DEFAULT_SEED))
    N = int(_setting(args, sc, "mesh", DEFAULT_N))
    tol = float(_setting(args, sc, "tol", 1e-10))
    start = _read_point(args.point) if args.point else _default_seed_point(sc, N)
    _check_point_shape(sc, start)
    p = find_manifold_point(m, start, tol=tol)
    _write_json(
        args.out,
        {"point": p.to_dict(), "residuals": manifold_check(m, p), "provenance": _provenance(sc, seed, p.phi.N, tolerances={"search": tol})},
    )
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="built-in name (echo, lin2, pair, echo_box) or scenario JSON path")
    common.add_argument("--out", default=None, help="output path (JSON to stdout if omitted, where allowed)")
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--mesh", type=int, default=None, help="segment mesh intervals N")
    common.add_argument("--tol", type=float, default=None, help="membership / search tolerance")

    parser = argparse.ArgumentParser(prog="algdelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run the property suite and write a JSON report")
    p.add_argument("--samples", type=int, default=None, help="samples per property (default 50)")
    p.add_argument("--chi-samples", dest="chi_samples", type=int, default=None, help="samples for the complement field (default 100)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", parents=[common], help="integrate from a manifold point; CSV plus JSON sidecar")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-end", dest="t_end", type=float, default=None)
    p.add_argument("--point", default=None, help="initial point JSON (overrides --start)")
    p.add_argument("--start", choices=["perturbed", "equilibrium"], default="perturbed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("transform", parents=[common], help="apply T (forward) or Y (inverse) to a point")
    p.add_argument("--point", default=None)
    p.add_argument("--direction", choices=["forward", "inverse"], default="forward")
    p.add_argument("--roundtrip", action="store_true", help="also report the C^1 round-trip error")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("find-point", parents=[common], help="Newton search for a manifold point")
    p.add_argument("--point", default=None, help="seed point JSON")
    p.set_defaults(func=cmd_find_point)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (DomainError, ConvergenceError, ConstructionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ScenarioError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
