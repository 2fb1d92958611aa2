"""Command-line front door: validated configs, reproducible runs, CSV/JSON output.

Every run writes a JSON summary embedding the fully resolved parameter
set (including the seed), so rerunning with `--config <summary.json>`
reproduces the outputs byte for byte. Config files may also be flat
`key = value` text; explicit flags override file values either way.
Outputs carry no timestamps, and the parallelism degree never appears
in them, so the schedule cannot leak into the files. The environment is
consulted only for the default output directory (HIERPIN_OUTDIR).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict

import numpy as np

from . import exact as ex
from . import mc, phase
from .model import (
    B_CRIT,
    ModelParams,
    annealed_exponent_fit,
    annealed_free_energy,
    annealed_hc,
    eps_of_h,
    h_of_eps,
    parse_disorder,
)

OUTDIR_ENV = "HIERPIN_OUTDIR"


# -- serialization helpers -------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(c) for c in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def write_json(path: str, obj: dict) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _floats(s) -> list[float]:
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(t) for t in str(s).split(",") if t.strip()]


# -- config plumbing -------------------------------------------------------

def _load_config(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        obj = json.loads(text)
        return obj.get("config", obj)
    kv = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line is not key = value: {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


def _coerce(action_type, value):
    if action_type is None:
        return value if isinstance(value, str) else str(value)
    if isinstance(value, str):
        return action_type(value)
    if action_type in (int, float):
        out = action_type(value)
        if action_type is int and out != value:
            raise ValueError(f"expected an integer, got {value!r}")
        return out
    return action_type(value)


def _apply_config(parser: argparse.ArgumentParser, path: str) -> None:
    types = {a.dest: a.type for a in parser._actions}
    defaults = {}
    for key, value in _load_config(path).items():
        if key not in types:
            parser.error(f"unknown config key: {key}")
        try:
            defaults[key] = _coerce(types[key], value)
        except ValueError as e:
            parser.error(f"bad config value for {key}: {e}")
    parser.set_defaults(**defaults)


def _require(parser: argparse.ArgumentParser, ns: argparse.Namespace, *keys: str) -> None:
    for k in keys:
        if getattr(ns, k) is None:
            parser.error(f"missing required parameter: {k}")


def _resolve_h(parser, ns) -> float:
    if ns.h is not None and ns.eps is not None:
        parser.error("give h or eps, not both")
    if ns.h is None and ns.eps is None:
        parser.error("one of h or eps is required")
    if ns.h is not None:
        return ns.h
    return h_of_eps(ns.B, ns.eps)


def _paths(ns, default_name: str) -> tuple[str, str]:
    out = ns.out or os.environ.get(OUTDIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    name = ns.name or default_name
    return os.path.join(out, name + ".json"), os.path.join(out, name + ".csv")


def _emit(ns, command: str, config: dict, results: dict, gates: dict | None = None,
          csv_data: tuple[list[str], list[tuple]] | None = None) -> bool:
    json_path, csv_path = _paths(ns, command.replace("-", "_"))
    summary = {"command": command, "config": config, "results": results}
    if gates is not None:
        summary["gates"] = gates
    if csv_data is not None:
        write_csv(csv_path, *csv_data)
        summary["csv"] = os.path.basename(csv_path)
    write_json(json_path, summary)
    return gates is None or all(gates.values())


# -- subcommands -----------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, *, disorder: bool = True) -> None:
    p.add_argument("--config", type=str, default=None, help="key=value file or a previous JSON summary")
    p.add_argument("--out", type=str, default=None, help=f"output directory (default ${OUTDIR_ENV} or .)")
    p.add_argument("--name", type=str, default=None, help="basename for output files")
    if disorder:
        p.add_argument("--disorder", type=str, default=None,
                       help="gaussian | rademacher | finite:v:p,v:p,...")


def _parse_disorder(parser, ns):
    _require(parser, ns, "disorder")
    try:
        return parse_disorder(ns.disorder)
    except ValueError as e:
        parser.error(str(e))


def cmd_anneal(parser, ns) -> bool:
    _require(parser, ns, "B")
    h = _resolve_h(parser, ns)
    hc = annealed_hc(ns.B, tol=1e-9)
    slope, intercept, max_resid = annealed_exponent_fit(ns.B)
    f_h = annealed_free_energy(ns.B, h)
    rows = []
    lr = h
    lb1, lB = math.log(ns.B - 1.0), math.log(ns.B)
    rows.append((0, lr, lr))
    for n in range(1, ns.N + 1):
        lr = float(np.logaddexp(lr + lr, lb1)) - lB
        rows.append((n, lr, lr / 2.0**n))
    config = {"B": ns.B, "h": h, "N": ns.N}
    results = {
        "h": h, "eps": eps_of_h(ns.B, h), "f": f_h,
        "h_c": hc, "h_c_closed": math.log(ns.B - 1.0),
        "exponent_fit": {"slope": slope, "intercept": intercept, "max_residual": max_resid},
    }
    ok = _emit(ns, "anneal", config, results,
               csv_data=(["n", "log_r", "f_n"], rows))
    print(f"h_c = {hc:.12g}  f(0, {h:.6g}) = {f_h:.12g}  exponent slope = {slope:.6g}")
    return ok


def cmd_fe(parser, ns) -> bool:
    _require(parser, ns, "B", "beta", "M", "N")
    dis = _parse_disorder(parser, ns)
    h = _resolve_h(parser, ns)
    params = ModelParams(ns.B, ns.beta, h)
    est, traj = mc.run_free_energy(params, dis, ns.M, ns.N, ns.replicas, ns.seed, ns.workers)
    rows = [(e.N, e.f_N, e.stderr, e.lower, e.upper) for e in traj]
    config = {"B": ns.B, "beta": ns.beta, "h": h, "disorder": ns.disorder,
              "M": ns.M, "N": ns.N, "replicas": ns.replicas, "seed": ns.seed}
    results = {"f_N": est.f_N, "stderr": est.stderr, "lower": est.lower,
               "upper": est.upper, "N": est.N, "replicas": est.replicas}
    ok = _emit(ns, "fe", config, results,
               csv_data=(["n", "f_n", "stderr", "lower", "upper"], rows))
    print(f"f_{est.N} = {est.f_N:.12g} +- {est.stderr:.3g}  sandwich [{est.lower:.12g}, {est.upper:.12g}]")
    return ok


def cmd_certify(parser, ns) -> bool:
    _require(parser, ns, "B", "beta", "M", "n_max")
    dis = _parse_disorder(parser, ns)
    h = _resolve_h(parser, ns)
    params = ModelParams(ns.B, ns.beta, h)
    grid = tuple(ns.gammas) if ns.gammas else phase.default_gamma_grid(ns.B)
    cert = phase.certify(params, dis, ns.n_max, ns.M, ns.replicas, ns.seed, grid, ns.workers)
    config = {"B": ns.B, "beta": ns.beta, "h": h, "disorder": ns.disorder,
              "M": ns.M, "n_max": ns.n_max, "replicas": ns.replicas,
              "seed": ns.seed, "gammas": list(grid), "require": ns.require}
    results = asdict(cert)
    gates = {"verdict": ns.require in ("any", cert.verdict)}
    ok = _emit(ns, "certify", config, results, gates)
    print(f"verdict: {cert.verdict} (level {cert.level}, "
          f"{'rigorous' if cert.rigorous else f'confidence {cert.confidence}'})")
    return ok


def cmd_hc(parser, ns) -> bool:
    _require(parser, ns, "B", "beta", "M", "n_max")
    dis = _parse_disorder(parser, ns)
    br = phase.bracket_hc(ns.beta, ns.B, dis, ns.M, ns.n_max, ns.replicas, ns.seed,
                          budget=ns.budget, tol_h=ns.tol_h, tol_rel=ns.tol_rel,
                          workers=ns.workers)
    config = {"B": ns.B, "beta": ns.beta, "disorder": ns.disorder, "M": ns.M,
              "n_max": ns.n_max, "replicas": ns.replicas, "seed": ns.seed,
              "budget": ns.budget, "tol_h": ns.tol_h, "tol_rel": ns.tol_rel}
    results = asdict(br)
    ok = _emit(ns, "hc", config, results)
    print(f"h_c bracket: [{br.h_deloc:.12g}, {br.h_loc:.12g}]  gap = {br.gap:.6g}")
    return ok


def cmd_scaling(parser, ns) -> bool:
    _require(parser, ns, "B", "betas", "M", "n_max")
    dis = _parse_disorder(parser, ns)
    study = phase.scaling_study(ns.B, list(ns.betas), dis, ns.M, ns.n_max,
                                ns.replicas, ns.seed, budget_per_beta=ns.budget,
                                tol_rel=ns.tol_rel, gap_ratio_max=ns.gap_ratio_max,
                                workers=ns.workers)
    rows = [(r.beta, r.bracket.h_deloc, r.bracket.h_loc, r.shift, r.halfwidth,
             r.bracket.gap, r.bracket.budget_spent) for r in study.rows]
    config = {"B": ns.B, "betas": list(ns.betas), "disorder": ns.disorder,
              "M": ns.M, "n_max": ns.n_max, "replicas": ns.replicas,
              "seed": ns.seed, "budget": ns.budget, "tol_rel": ns.tol_rel,
              "gap_ratio_max": ns.gap_ratio_max}
    results = {"slope": study.slope, "slope_err": study.slope_err,
               "target": study.target, "max_residual": study.max_residual,
               "rows": [asdict(r) for r in study.rows]}
    ok = _emit(ns, "scaling", config, results,
               csv_data=(["beta", "h_deloc", "h_loc", "shift", "halfwidth", "gap", "budget_spent"], rows))
    print(f"slope = {study.slope:.6g} +- {study.slope_err:.3g}  target = {study.target:.6g}")
    return ok


def cmd_marginal(parser, ns) -> bool:
    _require(parser, ns, "betas", "M", "n_max")
    dis = _parse_disorder(parser, ns)
    rows_m = phase.marginal_probe(list(ns.betas), dis, ns.M, ns.n_max, ns.replicas,
                                  ns.seed, B=ns.B, budget_per_beta=ns.budget,
                                  tol_h=ns.tol_h, workers=ns.workers)
    rows = [(r.beta, r.shift_upper, r.bound_curve) for r in rows_m]
    config = {"B": ns.B, "betas": list(ns.betas), "disorder": ns.disorder,
              "M": ns.M, "n_max": ns.n_max, "replicas": ns.replicas,
              "seed": ns.seed, "budget": ns.budget, "tol_h": ns.tol_h}
    results = {"rows": [asdict(r) for r in rows_m]}
    ok = _emit(ns, "marginal", config, results,
               csv_data=(["beta", "shift_upper", "bound_curve"], rows))
    for r in rows_m:
        print(f"beta = {r.beta:g}: shift upper bound {r.shift_upper:.6g}, envelope {r.bound_curve:.6g}")
    return ok


def cmd_tilt(parser, ns) -> bool:
    _require(parser, ns, "B", "beta", "M", "eta")
    dis = _parse_disorder(parser, ns)
    h = _resolve_h(parser, ns)
    params = ModelParams(ns.B, ns.beta, h)
    report = phase.tilt_experiment(params, dis, ns.eta, ns.M, ns.seed, n0=ns.n0,
                                   replicas=ns.replicas, a_grid=tuple(ns.a_grid))
    config = {"B": ns.B, "beta": ns.beta, "h": h, "disorder": ns.disorder,
              "eta": ns.eta, "M": ns.M, "seed": ns.seed, "n0": report.spec.n0,
              "replicas": ns.replicas, "a_grid": list(ns.a_grid)}
    results = asdict(report)
    rows = [(a, f, c) for a, f, c in report.lr_rows]
    ok = _emit(ns, "tilt", config, results,
               csv_data=(["a", "freq_loglr_below", "chebyshev"], rows))
    print(f"lambda = {report.spec.lam:.6g} (delta = {report.spec.delta:.6g}, n0 = {report.spec.n0}); "
          f"tilted median {report.median_tilted:.6g} vs plain {report.median_plain:.6g}")
    return ok


def cmd_exact_check(parser, ns) -> bool:
    _require(parser, ns, "B", "beta", "M")
    dis = _parse_disorder(parser, ns)
    h = _resolve_h(parser, ns)
    if not dis.finite_support:
        parser.error("exact-check needs finite-support disorder (the oracle enumerates atoms)")
    params = ModelParams(ns.B, ns.beta, h)
    dists = ex.exact_track(params, dis, ns.n)
    pools = mc.evolve_pools(params, dis, ns.M, ns.n, ns.replicas, ns.seed, ns.workers)
    gammas = (0.6, 0.8)
    rows = []
    gates = {}
    for n, d in enumerate(dists):
        rows.append((n, d.log_mean() / 2.0**n, d.mean(), d.frac_moment(0.6), d.frac_moment(0.8)))
    means = np.array([mc.pool_mean_log(p) for p in pools]) / 2.0**ns.n
    f_mc = float(means.mean())
    f_se = float(means.std(ddof=1) / math.sqrt(len(pools)))
    f_exact = dists[-1].log_mean() / 2.0**ns.n
    gates["f_within_3sigma"] = abs(f_mc - f_exact) <= 3.0 * f_se if f_se > 0 else f_mc == f_exact
    a_results = {}
    for g in gammas:
        est = mc.frac_moment_estimate(pools, g)
        a_exact = dists[-1].frac_moment(g)
        ok_g = abs(est.mean - a_exact) <= 3.0 * est.stderr if est.stderr > 0 else est.mean == a_exact
        gates[f"A_gamma_{g}_within_3sigma"] = ok_g
        a_results[str(g)] = {"mc": est.mean, "stderr": est.stderr, "exact": a_exact}
    config = {"B": ns.B, "beta": ns.beta, "h": h, "disorder": ns.disorder,
              "n": ns.n, "M": ns.M, "replicas": ns.replicas, "seed": ns.seed}
    results = {"f_exact": f_exact, "f_mc": f_mc, "f_stderr": f_se, "frac_moments": a_results}
    ok = _emit(ns, "exact-check", config, results, gates,
               csv_data=(["n", "f_exact", "mean_exact", "A_0.6_exact", "A_0.8_exact"], rows))
    status = "pass" if ok else "FAIL"
    print(f"exact-check: {status}  |f_mc - f_exact| = {abs(f_mc - f_exact):.3g} (3 sigma = {3*f_se:.3g})")
    return ok


# -- parser assembly -------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    top = argparse.ArgumentParser(prog="hierpin",
                                  description="Hierarchical pinning with quenched disorder: "
                                              "free energy, phase certificates, critical brackets.")
    sub = top.add_subparsers(dest="cmd", required=True)
    parsers: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("anneal", help="pure-map orbit, annealed free energy, critical exponent")
    _add_common(p, disorder=False)
    p.add_argument("--B", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--N", type=int, default=48)
    p.set_defaults(run=cmd_anneal)
    parsers["anneal"] = p

    p = sub.add_parser("fe", help="Monte Carlo free-energy estimate with sandwich bounds")
    _add_common(p)
    p.add_argument("--B", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(run=cmd_fe)
    parsers["fe"] = p

    p = sub.add_parser("certify", help="phase certificate at fixed parameters")
    _add_common(p)
    p.add_argument("--B", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--gammas", type=_floats, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--require", choices=["any", "Delocalized", "Localized", "Undecided"], default="any")
    p.set_defaults(run=cmd_certify)
    parsers["certify"] = p

    p = sub.add_parser("hc", help="certified bracket of the critical h")
    _add_common(p)
    p.add_argument("--B", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--budget", type=int, default=2_000_000_000)
    p.add_argument("--tol-h", type=float, default=1e-3)
    p.add_argument("--tol-rel", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(run=cmd_hc)
    parsers["hc"] = p

    p = sub.add_parser("scaling", help="critical-shift exponent across beta values")
    _add_common(p)
    p.add_argument("--B", type=float)
    p.add_argument("--betas", type=_floats)
    p.add_argument("--M", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--budget", type=int, default=2_000_000_000)
    p.add_argument("--tol-rel", type=float, default=0.25)
    p.add_argument("--gap-ratio-max", type=float, default=0.30)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(run=cmd_scaling)
    parsers["scaling"] = p

    p = sub.add_parser("marginal", help="shift upper bounds at B = 2 + sqrt(2)")
    _add_common(p)
    p.add_argument("--B", type=float, default=B_CRIT)
    p.add_argument("--betas", type=_floats)
    p.add_argument("--M", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--budget", type=int, default=500_000_000)
    p.add_argument("--tol-h", type=float, default=1e-3)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(run=cmd_marginal)
    parsers["marginal"] = p

    p = sub.add_parser("tilt", help="change-of-measure experiment (Gaussian disorder)")
    _add_common(p)
    p.add_argument("--B", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--a-grid", type=_floats, default=[0.25, 0.5, 1.0, 2.0])
    p.set_defaults(run=cmd_tilt)
    parsers["tilt"] = p

    p = sub.add_parser("exact-check", help="Monte Carlo vs exact-oracle gates")
    _add_common(p)
    p.add_argument("--B", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--M", type=int)
    p.add_argument("--replicas", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(run=cmd_exact_check)
    parsers["exact-check"] = p

    return top, parsers


def _find_config(argv: list[str]) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    top, parsers = build_parser()
    if argv and argv[0] in parsers:
        cfg = _find_config(argv[1:])
        if cfg is not None:
            try:
                _apply_config(parsers[argv[0]], cfg)
            except (OSError, ValueError, json.JSONDecodeError) as e:
                print(f"error: cannot read config {cfg}: {e}", file=sys.stderr)
                return 2
    ns = top.parse_args(argv)
    parser = parsers[ns.cmd]
    try:
        ok = ns.run(parser, ns)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except phase.UnresolvedBracketError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
