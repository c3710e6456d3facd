"""Command-line entry point: ``tailadrf {simulate,fit,tail,panel,ingest}``.

Global options (``--seed``, ``--config``, ``--out``, ``--threads``) may be
given before or after the subcommand. ``--config`` is a flat JSON object
whose keys are option names (underscored); values on the command line win.
Exit status is 0 on success, including refused tail fits, and 2 on
operational errors.
"""
import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings

import numpy as np

from . import __version__
from .baselines import qr_avg_shortfall, qr_quantile_curve, residual_pwm_return_level
from .dgp import DGP_NAMES, DGPSpec, generate
from .dml import LOSSES, crossfit_nuisances, default_grid, estimate_adrf
from .errors import TailADRFError
from .functionals import causal_tail_effect, conditional_shortfall, tail_functionals
from .harness import ESTIMATORS, PanelConfig, ingest_csv, run_panel, write_panel
from .pdhte import PDHTEConfig, gps_weights, overlap_grid, pdhte_curve
from .threshold import ThresholdConfig, build_tail_report

log = logging.getLogger("tailadrf")

FUNCTIONAL_COLUMNS = ["t", "theta_w", "ey_recovered", "q_alpha", "mode", "s_alpha", "cte", "refused"]


class OperationalError(Exception):
    pass


def _globals(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d if suppress else 0, help="master seed (default 0)")
    parser.add_argument("--config", default=d, help="flat JSON file of option defaults")
    parser.add_argument("--out", default=d, help="output path (default: stdout)")
    parser.add_argument("--threads", type=int, default=d if suppress else 1,
                        help="worker processes for panel runs (default 1)")


def _alphas(text):
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None
    if not vals or any(not 0 < a < 0.5 for a in vals):
        raise argparse.ArgumentTypeError("alphas must lie in (0, 0.5)")
    return vals


def _csv_list(text, conv=str):
    return [conv(x) for x in str(text).split(",") if x.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="tailadrf", description="Robust dose-response and tail functionals.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)

    s = sub.add_parser("simulate", parents=[common], help="draw a synthetic sample to CSV")
    s.add_argument("--dgp", required=True, choices=DGP_NAMES)
    s.add_argument("--p", type=float, default=0.1, help="contamination probability")
    s.add_argument("--n", type=int, default=1000)

    f = sub.add_parser("fit", parents=[common], help="fit the ADRF (and optionally tail functionals)")
    src = f.add_mutually_exclusive_group()
    src.add_argument("--data", help="CSV with columns t, y and covariates x0, x1, ...")
    src.add_argument("--dgp", choices=DGP_NAMES, help="simulate the input instead")
    f.add_argument("--p", type=float, default=0.1)
    f.add_argument("--n", type=int, default=1000)
    f.add_argument("--loss", default="welsch", choices=("l2",) + LOSSES)
    f.add_argument("--grid-points", type=int, default=25)
    f.add_argument("--folds", type=int, default=3, dest="folds")
    f.add_argument("--tail-functionals", action="store_true")
    f.add_argument("--alpha", type=_alphas, default=[0.01])
    f.add_argument("--baseline", choices=("qr", "rpwm"))
    f.add_argument("--gps", action="store_true", help="stabilized GPS weighting of the tail quantities")

    t = sub.add_parser("tail", parents=[common], help="threshold selection and TailReport on residuals")
    t.add_argument("--residuals", required=True, help="CSV with a single column 'r'")
    t.add_argument("--grid-size", type=int, default=40)
    t.add_argument("--min-exc", type=int, default=30)
    t.add_argument("--ks-min", type=float, default=0.0)
    t.add_argument("--bootstrap-b", type=int, default=200)

    pn = sub.add_parser("panel", parents=[common], help="run the simulation panel")
    pn.add_argument("--dgps", type=_csv_list, default=None)
    pn.add_argument("--levels", type=lambda x: _csv_list(x, float), default=None)
    pn.add_argument("--seeds", type=lambda x: _csv_list(x, int), default=None)
    pn.add_argument("--n", type=int, default=None)
    pn.add_argument("--grid-points", type=int, default=None)
    pn.add_argument("--alphas", type=_alphas, default=None)
    pn.add_argument("--estimators", type=_csv_list, default=None, help=f"subset of {','.join(ESTIMATORS)}")
    pn.add_argument("--n-oracle", type=int, default=None)
    pn.add_argument("--bootstrap-b", type=int, default=2000)
    pn.add_argument("--record-timing", action="store_true", help="fill wall_ms (breaks byte-identical reruns)")

    g = sub.add_parser("ingest", parents=[common], help="load a CSV into the canonical T, Y, X layout")
    g.add_argument("--csv", required=True)
    g.add_argument("--t", required=True, help="treatment column")
    g.add_argument("--y", required=True, help="outcome column")
    g.add_argument("--x", type=_csv_list, default=None, help="comma-separated covariate columns")
    g.add_argument("--log1p", action="store_true")
    return p


def _apply_config(parser, args, argv):
    path = getattr(args, "config", None)
    if not path or args.command == "panel":
        return args
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise OperationalError(f"cannot read config {path}: {err}") from None
    if not isinstance(cfg, dict):
        raise OperationalError("config must be a flat JSON object")
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, val in cfg.items():
        if not hasattr(args, key):
            raise OperationalError(f"unknown config key {key!r} for '{args.command}'")
        if key not in given:
            setattr(args, key, _alphas(val) if key == "alpha" else val)
    return args


def _emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return str(v)


def _csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def sample_to_csv(sample):
    d = sample.X.shape[1]
    cols = [f"x{j}" for j in range(d)] + ["t", "y"]
    rows = [dict(zip(cols, list(sample.X[i]) + [sample.T[i], sample.Y[i]])) for i in range(sample.n)]
    return _csv_text(cols, rows)


def read_sample_csv(path):
    """Read a CSV with columns ``t``, ``y`` and covariates ``x0, x1, ...`` (any case)."""
    import pandas as pd

    cols = list(pd.read_csv(path, nrows=0).columns)
    lower = {c.lower(): c for c in cols}
    if "t" not in lower or "y" not in lower:
        raise OperationalError(f"{path} needs columns 't' and 'y' (found {cols})")
    x_cols = sorted((c for c in cols if c.lower().startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    sample, dropped = ingest_csv(path, {"T": lower["t"], "Y": lower["y"], "X": x_cols})
    if dropped:
        log.warning("dropped %d rows with missing values", dropped)
    return sample


def cmd_simulate(args):
    sample = generate(DGPSpec(args.dgp, args.p, args.n, args.seed))
    _emit(sample_to_csv(sample), args.out)


def _fit_rows(args, sample):
    grid = default_grid(sample.T, args.grid_points)
    nu = crossfit_nuisances(sample, k_folds=args.folds, seed=args.seed)
    sw = None
    if args.gps:
        sw = gps_weights(sample, nu).sw
        grid = overlap_grid(sample.T, args.grid_points)
    if not (args.tail_functionals or args.baseline):
        curve = estimate_adrf(sample, grid, args.loss, nuisance=nu)
        return ["t", "theta_hat"], [{"t": t, "theta_hat": th} for t, th in zip(curve.grid, curve.theta)]

    multi = len(args.alpha) > 1
    cols = (["alpha"] if multi else []) + FUNCTIONAL_COLUMNS
    rows = []
    if args.baseline == "qr":
        med = qr_quantile_curve(sample, grid, 0.5).q_hat
        for a in args.alpha:
            q = qr_quantile_curve(sample, grid, 1.0 - a).q_hat
            s = qr_avg_shortfall(sample, grid, a)
            cte = causal_tail_effect(q, grid)
            for k, t in enumerate(grid):
                rows.append({"alpha": a, "t": t, "theta_w": med[k], "ey_recovered": np.nan, "q_alpha": q[k],
                             "mode": "qr", "s_alpha": s[k], "cte": cte[k], "refused": False})
        return cols, rows

    curve = estimate_adrf(sample, grid, args.loss, nuisance=nu)
    r = sample.Y - curve.at(sample.T)
    report = build_tail_report(r, ThresholdConfig(seed=args.seed))
    if args.baseline == "rpwm":
        for a in args.alpha:
            if report.refused:
                rows += [{"alpha": a, "t": t, "theta_w": th, "ey_recovered": np.nan, "q_alpha": np.nan,
                          "mode": "rpwm", "s_alpha": np.nan, "cte": np.nan, "refused": True}
                         for t, th in zip(grid, curve.theta)]
                continue
            fit = residual_pwm_return_level(curve, r, sample.T, grid, a, report.u_star)
            cte = causal_tail_effect(fit.q_hat, grid)
            for k, t in enumerate(grid):
                s = conditional_shortfall(fit.q_hat[k], fit.xi[k], fit.sigma[k], curve.theta[k] + report.u_star)
                rows.append({"alpha": a, "t": t, "theta_w": curve.theta[k], "ey_recovered": np.nan,
                             "q_alpha": fit.q_hat[k], "mode": "rpwm", "s_alpha": s, "cte": cte[k],
                             "refused": False})
        return cols, rows

    pt = pdhte_curve(sample.Y, sample.T, grid, PDHTEConfig(seed=args.seed), extra_weights=sw)
    for a in args.alpha:
        tf = tail_functionals(curve, r, sample.Y, sample.T, pt, report, a, extra_weights=sw)
        for row in tf.rows():
            row["alpha"] = a
            rows.append(row)
    return cols, rows


def cmd_fit(args):
    if not (args.data or args.dgp):
        raise OperationalError("fit needs --data or --dgp")
    if args.data and args.dgp:
        raise OperationalError("--data and --dgp are mutually exclusive")
    if args.data:
        sample = read_sample_csv(args.data)
    else:
        sample = generate(DGPSpec(args.dgp, args.p, args.n, args.seed))
    cols, rows = _fit_rows(args, sample)
    _emit(_csv_text(cols, rows), args.out)


def cmd_tail(args):
    import pandas as pd

    df = pd.read_csv(args.residuals, float_precision="round_trip")
    if "r" not in df.columns:
        raise OperationalError(f"{args.residuals} has no column 'r' (columns: {list(df.columns)})")
    r = pd.to_numeric(df["r"], errors="coerce")
    if r.isna().any():
        raise OperationalError("column 'r' has missing or non-numeric values")
    cfg = ThresholdConfig(grid_size=args.grid_size, n_min_exc=args.min_exc, p_ks_min=args.ks_min,
                          bootstrap_b=args.bootstrap_b, seed=args.seed)
    report = build_tail_report(r.to_numpy(dtype=np.float64), cfg)
    _emit(json.dumps(report.to_dict(), sort_keys=True) + "\n", args.out)


def cmd_panel(args):
    if args.config:
        try:
            cfg = PanelConfig.from_json(args.config)
        except (OSError, json.JSONDecodeError) as err:
            raise OperationalError(f"cannot read config {args.config}: {err}") from None
    else:
        if not args.dgps:
            raise OperationalError("panel needs --dgps (or --config)")
        cfg = PanelConfig(dgp_names=args.dgps, seeds=args.seeds or [args.seed])
    overrides = {"dgp_names": args.dgps, "contamination_levels": args.levels, "seeds": args.seeds,
                 "n": args.n, "grid_points": args.grid_points, "alphas": args.alphas,
                 "estimators": args.estimators, "n_oracle": args.n_oracle}
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if args.record_timing:
        cfg.record_timing = True
    cfg.__post_init__()
    out = args.out or cfg.output_path
    if not out:
        raise OperationalError("panel needs --out (or output_path in the config)")
    cells = run_panel(cfg, processes=args.threads)
    json_path = write_panel(cells, cfg, out, B=args.bootstrap_b, seed=args.seed)
    n_ref = sum(c.refused for c in cells)
    sys.stderr.write(f"{len(cells)} cells ({n_ref} refused) -> {out}, {json_path}\n")


def cmd_ingest(args):
    sample, dropped = ingest_csv(args.csv, {"T": args.t, "Y": args.y, "X": args.x}, log1p=args.log1p)
    if args.out:
        _emit(sample_to_csv(sample), args.out)
    summary = {"rows": sample.n, "dropped": dropped, "covariates": int(sample.X.shape[1]),
               "log1p": bool(args.log1p)}
    sys.stderr.write(json.dumps(summary) + "\n")
    if not args.out:
        _emit(sample_to_csv(sample), None)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "tail": cmd_tail, "panel": cmd_panel, "ingest": cmd_ingest}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        args = _apply_config(parser, args, argv)
        with warnings.catch_warnings():
            if args.verbose == 0:
                warnings.simplefilter("ignore", RuntimeWarning)
            COMMANDS[args.command](args)
    except (OperationalError, TailADRFError, ValueError, OSError) as err:
        sys.stderr.write(f"tailadrf {args.command}: error: {err}\n")
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
