"""Command-line front end: ``fitness-ifs <subcommand> [options]``.

Every subcommand writes its table as CSV (or JSON with ``--format json``) to
``--out`` or to standard output, and prints a one-line summary to standard
error.  Exit codes: 0 success, 2 invalid arguments, 3 a failed check in
``verify``.

Environment convention: the good environment (probability ``p``) applies the
max-update and corresponds to the scaling map ``x -> u x`` (map index 0 of the
fitness family); the bad environment (probability ``1 - p``) applies the
min-update and the map ``x -> u + (1 - u) x`` (map index 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from ._util import DEFAULT_SEED, SEED_ENV_VAR, default_seed, make_rng
from .affine import (
    AffineFamily,
    TruncationBudgetError,
    partial_sum_paths,
    rho,
    sample_limit,
    sample_limit_geometric,
    truncation_bound,
)
from .multifractal import ae_exponent, digit_law_check, exponent_rows, exponent_curves
from .particles import ModelParams, coupled_run, simulate
from .stationary import (
    cdf_bracket,
    d_point,
    enumerate_D,
    moments,
    single_site_cdf,
    single_site_density,
    verify_functional_equations,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CHECK_FAILED = 3

# Samples per RNG stream; fixed so output does not depend on --jobs.
CHUNK = 10_000
# Word-depth cap for cdf/fig1 tables; 2**16 points at most per file.
CLI_MAX_DEPTH = 16

SAMPLE_FIELDS = ["sample_id", "value", "truncation_depth", "error_bound"]
CDF_FIELDS = ["u", "p", "y", "g", "code"]


def _grid(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("grid must contain at least one value")
    return values


def _code(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"code must be dash-joined integers, got {text!r}")


def _single(args, name: str = "u") -> float:
    values = getattr(args, name)
    if len(values) != 1:
        raise ValueError(f"--{name} takes a single value for this subcommand")
    return values[0]


# --------------------------------------------------------------------------
# output


def _render(rows: list[dict], fields: Sequence[str], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{k: row[k] for k in fields} for row in rows], indent=1) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _emit(rows, fields: Sequence[str], args, path: Path | None = None) -> None:
    text = _render(list(rows), fields, args.format)
    target = path if path is not None else (Path(args.out) if args.out else None)
    if target is None:
        sys.stdout.write(text)
    else:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)


def _summary(text: str) -> None:
    print(text, file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    params = ModelParams(args.p, args.N, args.seed, args.horizon)
    init = "uniform" if args.init == "uniform" else float(args.init)
    traj = simulate(params, init)
    _emit(traj.rows(), ["t", "site", "fitness"], args)
    final = traj.final.fitness
    ks = stats.kstest(final, lambda x: single_site_cdf(args.p, np.clip(x, 0, 1))).statistic
    good = int(traj.bits.sum())
    _summary(
        f"simulate: N={args.N} T={args.horizon} good={good} bad={args.horizon - good} "
        f"final KS distance to single-site law {ks:.4f}"
    )
    return EXIT_OK


def cmd_couple(args) -> int:
    params = ModelParams(args.p, args.N, args.seed, args.horizon)
    init = "uniform" if args.init == "uniform" else float(args.init)
    trace = coupled_run(params, args.u, init)
    _emit(trace.rows(), ["t", "u", "empirical", "theta", "deviation"], args)
    _summary(f"couple: N={args.N} T={args.horizon} max deviation {trace.max_deviation:.3e}")
    return EXIT_OK


def _family(args) -> AffineFamily:
    u = _single(args)
    if args.family == "erdos":
        return AffineFamily.erdos(u, args.p)
    return AffineFamily.fitness(u, args.p)


def _sample_chunk(task):
    family, method, epsilon, kmax, seed, index, size = task
    rng = make_rng(seed, 1, index)
    if method == "geometric":
        return sample_limit_geometric(family, kmax, rng, size=size)
    return sample_limit(family, epsilon, rng, size=size)


def draw_samples(family: AffineFamily, method: str, samples: int, epsilon: float, kmax: int, seed: int, jobs: int = 1):
    """Draws in fixed chunks of :data:`CHUNK`, each with its own stream, merged in order."""
    tasks = [
        (family, method, epsilon, kmax, seed, i, min(CHUNK, samples - start))
        for i, start in enumerate(range(0, samples, CHUNK))
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_sample_chunk, tasks))
    else:
        parts = [_sample_chunk(t) for t in tasks]
    values = np.concatenate([np.atleast_1d(s.value) for s in parts])
    bounds = np.concatenate([np.broadcast_to(s.error_bound, np.atleast_1d(s.value).shape) for s in parts])
    depth = parts[0].truncation_depth
    return values, bounds, depth


def cmd_sample(args) -> int:
    family = _family(args)
    values, bounds, depth = draw_samples(family, args.method, args.samples, args.epsilon, args.kmax, args.seed, args.jobs)
    rows = (
        {"sample_id": i, "value": float(v), "truncation_depth": depth, "error_bound": float(e)}
        for i, (v, e) in enumerate(zip(values, bounds))
    )
    _emit(rows, SAMPLE_FIELDS, args)
    se = values.std(ddof=1) / math.sqrt(values.size) if values.size > 1 else float("nan")
    _summary(
        f"sample: {args.family} family, {args.method} method, n={values.size} "
        f"mean {values.mean():.6f} +- {se:.1e}, certified bound {float(bounds.max()):.3e}"
    )
    return EXIT_OK


def _dense_rows(u: float, p: float, args):
    pts = enumerate_D(u, p, args.max_m, args.max_n, args.max_depth)
    return pts, list(pts.rows())


def cmd_cdf(args) -> int:
    u = _single(args)
    p = args.p
    pts, rows = _dense_rows(u, p, args)
    _emit(rows, CDF_FIELDS, args)
    gap = float(np.max(np.diff(np.concatenate([[0.0], pts.y]))))
    _summary(f"cdf: u={u} p={p} {len(pts)} points of D, widest gap {gap:.3e}, exact on D")
    return EXIT_OK


def cmd_fig1(args) -> int:
    out_dir = Path(args.out) if args.out else Path(".")
    ext = "json" if args.format == "json" else "csv"
    total = 0
    for u in args.u:
        pts, rows = _dense_rows(u, args.p, args)
        _emit(rows, CDF_FIELDS, args, out_dir / f"fig1_p{args.p:g}_u{u:g}.{ext}")
        total += len(pts)
    _summary(f"fig1: {len(args.u)} files in {out_dir}, {total} points of D, exact on D")
    return EXIT_OK


def cmd_moments(args) -> int:
    rows = []
    for u in args.u:
        table = moments(u, args.p, args.kmax)
        rows += [{"u": u, "p": args.p, "k": k, "moment": table[k]} for k in range(1, args.kmax + 1)]
    if args.out:
        _emit(rows, ["u", "p", "k", "moment"], args)
    else:
        for row in rows:
            print(f"{row['moment']:.15g}")
    _summary(f"moments: {len(rows)} values by exact recursion")
    return EXIT_OK


def cmd_single_site(args) -> int:
    rows = [
        {"u": u, "cdf": single_site_cdf(args.p, u), "density": single_site_density(args.p, u)}
        for u in args.u
    ]
    _emit(rows, ["u", "cdf", "density"], args)
    _summary(f"single-site: p={args.p}, {len(rows)} grid points, closed form")
    return EXIT_OK


def cmd_exponents(args) -> int:
    u = _single(args)
    rows = exponent_rows(u, args.p, make_rng(args.seed, 2), args.samples, args.t, args.code)
    _emit(rows, ["u", "p", "side", "theoretical", "empirical", "stderr"], args)
    ae = rows[-1]
    _summary(
        f"exponents: u={u} p={args.p} a.e. exponent {ae['theoretical']:.6f}, "
        f"empirical {ae['empirical']:.6f} +- {ae['stderr']:.1e} at depth {args.t}"
    )
    return EXIT_OK


def cmd_fig2(args) -> int:
    rows = exponent_curves(args.p, args.u)
    _emit(rows, ["u", "d_exponent_min", "ae_exponent"], args)
    _summary(f"fig2: p={args.p}, {len(rows)} grid points, closed form")
    return EXIT_OK


def run_checks(u: float, p: float, seed: int, samples: int = 20_000) -> list[tuple[str, bool, str]]:
    """Quick versions of the module invariants at one ``(u, p)``."""
    results = []

    def record(name, ok, detail):
        results.append((name, bool(ok), detail))

    collapse = enumerate_D(p, p, 8, 16)
    err = float(np.max(np.abs(collapse.g - collapse.y)))
    record("uniform collapse at u=p", err <= 1e-12, f"max|g-y|={err:.1e}")

    err = max(abs(d_point((n,), u, p).g - p**n) for n in range(26))
    record("power identity G(u^n)=p^n", err <= 1e-13, f"max error {err:.1e}")

    pts = enumerate_D(u, p, 8, 16)
    rep = verify_functional_equations(u, p, pts)
    record("functional equations", rep.ok, f"{rep.checked} points, max error {max(rep.max_error.values()):.1e}")
    record("monotone CDF on D", np.all(np.diff(pts.g) >= 0), f"{len(pts)} points")
    lo, hi = cdf_bracket(u, p, u**3, points=pts)
    record("bracket at u^3", lo == hi == d_point((3,), u, p).g, f"[{lo:.6g}, {hi:.6g}]")

    fam = AffineFamily.fitness(u, p)
    x = sample_limit(fam, 1e-10, make_rng(seed, 3, 0), size=samples).value
    table = moments(u, p, 3)
    ok = True
    detail = []
    for k in (1, 2, 3):
        xk = x**k
        z = abs(xk.mean() - table[k]) / (xk.std(ddof=1) / math.sqrt(samples))
        ok &= z <= 4.0
        detail.append(f"m{k} z={z:.2f}")
    record("moments vs Monte Carlo", ok, ", ".join(detail))

    rng = make_rng(seed, 3, 1)
    y = sample_limit(fam, 1e-10, rng, size=samples).value
    j = fam.draw_indices(rng, samples)
    pv = stats.ks_2samp(fam.a[j] + fam.b[j] * y, x).pvalue
    record("fixed-point law", pv > 0.01, f"KS p-value {pv:.3f}")

    r = rho(fam)
    paths = partial_sum_paths(fam, [5, 10, 20, 55, 60, 70], 0.0, make_rng(seed, 3, 2), 10_000)
    worst = 0.0
    for i, t in enumerate((5, 10, 20)):
        ratio = np.abs(paths[:, i] - paths[:, i + 3]).mean() / truncation_bound(r, t)
        worst = max(worst, ratio)
    record("truncation certificate", worst <= 1.0, f"worst error/bound {worst:.3f}")

    geo = sample_limit_geometric(fam, 200, make_rng(seed, 3, 3), size=samples).value
    pv = stats.ks_2samp(geo, x).pvalue
    record("geometric sampler agrees", pv > 0.01, f"KS p-value {pv:.3f}")

    dig = digit_law_check(u, p, samples, 20, make_rng(seed, 3, 4))
    record("digit law", dig.ok, f"p-values {dig.marginal_pvalue:.3f}/{dig.pair_pvalue:.3f}")

    grid = np.linspace(0.01, 0.99, 99)
    ae = ae_exponent(grid, p)
    off = ~np.isclose(grid, p)
    record("exponent dichotomy", np.all(ae[off] < 1), f"max off-diagonal {ae[off].max():.4f}, at u=p {ae_exponent(p, p):.12f}")

    grid = np.linspace(0.025, 0.975, 20)
    P, U = np.meshgrid(grid, grid)
    err = float(np.max(np.abs(single_site_cdf(P, U) - single_site_cdf(1 - U, 1 - P))))
    record("single-site symmetry", err <= 1e-15, f"max error {err:.1e}")
    return results


def cmd_verify(args) -> int:
    u = _single(args)
    results = run_checks(u, args.p, args.seed, args.samples)
    rows = [{"check": n, "status": "pass" if ok else "FAIL", "detail": d} for n, ok, d in results]
    _emit(rows, ["check", "status", "detail"], args)
    failed = [n for n, ok, _ in results if not ok]
    _summary(f"verify: u={u} p={args.p} {len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fitness-ifs",
        description=__doc__.split("\n\n")[0],
        epilog=(
            "Good environment = probability p = max-update = map x -> u x (index 0); "
            "bad environment = probability 1-p = min-update = map x -> u + (1-u) x (index 1). "
            f"Seed default {DEFAULT_SEED}, overridable through ${SEED_ENV_VAR}."
        ),
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p", type=float, default=0.4, help="probability of the good environment")
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV_VAR} or {DEFAULT_SEED})")
    common.add_argument("--out", default=None, help="output file (directory for fig1); stdout if omitted")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sampling")

    def add(name, func, help_text, u_default="0.3"):
        sp = sub.add_parser(name, parents=[common], help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.set_defaults(func=func)
        if u_default is not None:
            sp.add_argument("--u", type=_grid, default=_grid(u_default), help="level u or comma-separated grid")
        return sp

    def add_particles(sp):
        sp.add_argument("--N", type=int, default=1000, help="number of sites")
        sp.add_argument("--horizon", type=int, default=100, help="time steps")
        sp.add_argument("--init", default="uniform", help="'uniform' or a constant in [0, 1]")

    def add_budget(sp):
        sp.add_argument("--max-m", type=int, default=12, help="largest number of terms m")
        sp.add_argument("--max-n", type=int, default=25, help="largest exponent n_l")
        sp.add_argument("--max-depth", type=int, default=CLI_MAX_DEPTH, help="largest word depth n_m + m - 1")

    add_particles(add("simulate", cmd_simulate, "simulate the N-site fitness process", u_default=None))
    add_particles(add("couple", cmd_couple, "site fractions against the fraction recursion", "0.25,0.5,0.75"))

    sp = add("sample", cmd_sample, "draws of the stationary law with certified bounds")
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--epsilon", type=float, default=1e-8, help="certified truncation error")
    sp.add_argument("--family", choices=("fitness", "erdos"), default="fitness")
    sp.add_argument("--method", choices=("series", "geometric"), default="series")
    sp.add_argument("--kmax", type=int, default=200, help="clock terms for the geometric method")

    add_budget(add("cdf", cmd_cdf, "exact CDF values on the dense set D"))
    sp = add("moments", cmd_moments, "moments by exact recursion", "0.5")
    sp.add_argument("--kmax", type=int, default=1)
    add("single-site", cmd_single_site, "single-site stationary CDF and density", "0.1,0.3,0.5,0.7,0.9")

    sp = add("exponents", cmd_exponents, "one-sided and a.e. local exponents")
    sp.add_argument("--samples", type=int, default=10_000)
    sp.add_argument("--t", type=int, default=50, help="interval depth")
    sp.add_argument("--code", type=_code, default=(1, 1), help="dash-joined code of the D point")

    add_budget(add("fig1", cmd_fig1, "CDF on D, one file per u", "0.1,0.3,0.5,0.7,0.9"))
    add("fig2", cmd_fig2, "exponent curves over a u grid", ",".join(f"{k / 100:g}" for k in range(1, 100)))

    sp = add("verify", cmd_verify, "run the invariant suite at one (u, p)")
    sp.add_argument("--samples", type=int, default=20_000)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    try:
        if args.seed is None:
            args.seed = default_seed()
        if args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        for name in ("samples", "kmax", "t"):
            if getattr(args, name, 1) < 1:
                raise ValueError(f"--{name} must be at least 1")
        return args.func(args)
    except (ValueError, TruncationBudgetError) as exc:
        print(f"fitness-ifs {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
