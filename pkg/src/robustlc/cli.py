"""Command-line front end.

Subcommands ``fit``, ``bootstrap``, ``detect``, ``simulate`` and
``synthesize``. Every command writes CSV tables plus a ``manifest.json``
carrying the seed and a hash of the resolved configuration.

A ``--config`` file holds one ``key = value`` pair per line, keys spelled
like the long flags (``nu-init = 3`` or ``nu_init = 3``); flags given on the
command line take precedence. Exit status is 0 on success, 2 for invalid
usage or input, 1 for numerical failures.
"""

import argparse
import hashlib
import json
import os
from pathlib import Path
import sys

import numpy as np

from .bootstrap import BootstrapConfig, run_bootstrap
from .data import load_dataset, load_pandemic_table, log_rates, write_csv_long
from .estimators import ESTIMATORS, estimate, fit_tppca_detailed
from .gaussian import fit_ppca_closed_form, fit_svd, normalize
from .matching import detect_outliers
from .poisson import GlmConfig
from .simulation import ScenarioConfig, run_grid, write_aggregate, write_results
from .synthetic import synthetic_panel
from .tppca import TPPCAConfig


class UsageError(ValueError):
    pass


def _fmt(x):
    return f"{x:.17g}"


def _window(text):
    try:
        lo, hi = (int(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if lo > hi:
        raise argparse.ArgumentTypeError(f"empty window {text!r}")
    return lo, hi


def _add_data_flags(p):
    p.add_argument("--input", help="mortality data file (or HMD directory)")
    p.add_argument("--format", choices=("csv_long", "hmd_txt"), default="csv_long")
    p.add_argument("--exposures", help="HMD exposures file when not next to --input")
    p.add_argument("--ages", type=_window, help="age window LO:HI")
    p.add_argument("--years", type=_window, help="year window LO:HI")


def _add_common(p):
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--config", help="flat key = value file; flags override it")


def _add_tppca_flags(p):
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--nu-init", type=float, default=3.0)


def build_parser():
    parser = argparse.ArgumentParser(prog="robustlc",
                                     description="Robust Lee-Carter mortality estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate a, b and k")
    _add_data_flags(p)
    p.add_argument("--method", choices=ESTIMATORS, default="tppca")
    _add_tppca_flags(p)
    _add_common(p)

    p = sub.add_parser("bootstrap", help="residual bootstrap standard errors and CIs")
    _add_data_flags(p)
    p.add_argument("--method", choices=("svd", "ppca", "tppca", "poisson_glm"), default="tppca")
    p.add_argument("--B", type=int, default=1000, help="number of replications")
    p.add_argument("--ci-level", type=float, default=0.95)
    _add_tppca_flags(p)
    _add_common(p)

    p = sub.add_parser(
        "detect",
        help="flag outlying years under a fitted t-PPCA model",
        description="Flag years whose scaled Mahalanobis distance under the fitted t-PPCA "
                    "model exceeds the F(p, nu) quantile. Years are not independent, so the "
                    "flags are a diagnostic; not recommended in practice as a formal test.")
    _add_data_flags(p)
    p.add_argument("--alpha", type=float, default=0.95)
    _add_tppca_flags(p)
    _add_common(p)

    p = sub.add_parser("simulate", help="hypothetical-pandemic experiment grid")
    _add_data_flags(p)
    p.add_argument("--duration", type=int, default=3)
    p.add_argument("--estimators", default="svd,poisson_glm,tppca",
                   help="comma-separated estimator list")
    p.add_argument("--pandemic", help="grouped pandemic deaths CSV (default: bundled table)")
    _add_tppca_flags(p)
    _add_common(p)

    p = sub.add_parser("synthesize", help="write a synthetic Lee-Carter panel as csv_long")
    p.add_argument("--ages", type=_window, default=(0, 100))
    p.add_argument("--years", type=_window, default=(1970, 2019))
    _add_common(p)
    return parser


def read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, val = (t.strip() for t in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            act = actions[key]
            try:
                val = act.type(raw) if act.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if act.choices and val not in act.choices:
                raise UsageError(f"config key {key!r}: invalid choice {val!r}")
            defaults[key] = val
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _resolved(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config",)}


def config_hash(args):
    # output location and worker count do not change results
    cfg = {k: v for k, v in _resolved(args).items() if k not in ("out", "threads")}
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _load(args):
    if not args.input:
        raise UsageError("--input is required")
    if not Path(args.input).exists():
        raise UsageError(f"input not found: {args.input}")
    ds = load_dataset(args.input, args.format, exposures_path=args.exposures)
    if args.ages or args.years:
        ds = ds.subset(ages=args.ages, years=args.years)
    return ds


def _tppca_config(args):
    return TPPCAConfig(tol=args.tol, max_iter=args.max_iter, nu_init=args.nu_init)


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_vector(path, label, index, name, values):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{label},{name}\n")
        for i, v in zip(index, values):
            fh.write(f"{int(i)},{_fmt(v)}\n")


def _manifest(path, args, **extra):
    body = {"command": args.command, "seed": args.seed, "config_hash": config_hash(args),
            "config": _resolved(args), **extra}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _num(x):
    return None if x is None else float(x)


def cmd_fit(args):
    tcfg = _tppca_config(args)
    ds = _load(args)
    out = _outdir(args)
    if args.method == "tppca":
        fit, _, trace = fit_tppca_detailed(ds, tcfg)
        extra = {"converged": trace.converged, "nu_at_bound": bool(trace.nu_at_bound)}
    else:
        fit = estimate(ds, args.method, tppca_config=tcfg)
        extra = {}
    y = log_rates(ds)
    b_svd = fit_svd(y).b
    b_ppca = normalize(fit_ppca_closed_form(y).b_unnormalized, [0.0])[0]
    _write_vector(out / "a.csv", "age", ds.ages, "a", fit.a)
    _write_vector(out / "b.csv", "age", ds.ages, "b", fit.b)
    _write_vector(out / "k.csv", "year", ds.years, "k", fit.k)
    _manifest(out / "manifest.json", args, method=fit.method, iterations=fit.iterations,
              loglik=_num(fit.loglik), nu=_num(fit.nu), sigma2=_num(fit.sigma2),
              cross_check={"svd_vs_ppca_b_max_abs_diff": float(np.abs(b_svd - b_ppca).max())},
              **extra)
    return 0


def cmd_bootstrap(args):
    tcfg = _tppca_config(args)
    method = "deviance" if args.method == "poisson_glm" else "residual_vector"
    cfg = BootstrapConfig(B=args.B, seed=args.seed, method=method, ci_level=args.ci_level,
                          threads=args.threads)
    ds = _load(args)
    out = _outdir(args)
    summary = run_bootstrap(ds, args.method, cfg, tppca_config=tcfg, glm_config=GlmConfig())
    summary.to_csv(out / "bootstrap.csv")
    _manifest(out / "manifest.json", args, method=args.method, scheme=method,
              B=args.B, B_effective=summary.B_effective,
              failures=[f"{i}: {msg}" for i, msg in summary.failures])
    return 0


def cmd_detect(args):
    if not 0 < args.alpha < 1:
        raise UsageError("alpha must be in (0,1)")
    tcfg = _tppca_config(args)
    ds = _load(args)
    out = _outdir(args)
    fit, params, _ = fit_tppca_detailed(ds, tcfg)
    rep = detect_outliers(params, log_rates(ds), args.alpha, years=ds.years)
    with open(out / "outliers.csv", "w", encoding="utf-8") as fh:
        fh.write("year,score,threshold,flagged\n")
        for yr, s, f in zip(rep.years, rep.scores, rep.flags):
            fh.write(f"{int(yr)},{_fmt(s)},{_fmt(rep.threshold)},{int(f)}\n")
    _manifest(out / "manifest.json", args, method="tppca", nu=fit.nu, alpha=args.alpha,
              threshold=rep.threshold, n_flagged=int(rep.flags.sum()))
    return 0


def cmd_simulate(args):
    tcfg = _tppca_config(args)
    estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    ds = _load(args)
    table = load_pandemic_table(args.pandemic)
    base = (int(ds.years[0]), int(ds.years[-1]))
    cfg = ScenarioConfig(base, args.duration, table, estimators=estimators, seed=args.seed,
                         threads=args.threads, tppca_config=tcfg)
    out = _outdir(args)
    results, agg = run_grid(ds, cfg)
    write_results(results, out / "results.csv")
    write_aggregate(agg, args.duration, out / "aggregate.csv")
    _manifest(out / "manifest.json", args, base_years=list(base), n_windows=len(cfg.windows()),
              pandemic_total=table.total, n_failed=sum(r.error is not None for r in results))
    return 0


def cmd_synthesize(args):
    ds, _ = synthetic_panel(seed=args.seed, ages=args.ages, years=args.years)
    out = _outdir(args)
    write_csv_long(ds, out / "synthetic.csv")
    _manifest(out / "manifest.json", args)
    return 0


COMMANDS = {"fit": cmd_fit, "bootstrap": cmd_bootstrap, "detect": cmd_detect,
            "simulate": cmd_simulate, "synthesize": cmd_synthesize}


def main(argv=None):
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
