"""Simulation panel, metrics, paired bootstrap comparisons and CSV ingestion."""
import csv
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._seeding import rng_for
from .baselines import qr_avg_shortfall, qr_quantile_curve, qr_xi_proxy, residual_pwm_return_level
from .dgp import (CONTAMINATION_LEVELS, DGPSpec, Sample, generate, oracle_curves, regime_label,
                  structural_theta, truth_regime)
from .dml import LossSpec, crossfit_nuisances, default_grid, estimate_adrf
from .functionals import conditional_shortfall, tail_functionals
from .pdhte import PDHTEConfig, pdhte_curve
from .threshold import ThresholdConfig, build_tail_report

log = logging.getLogger(__name__)

CORE_ESTIMATORS = ("standard_l2", "huber", "welsch")
ESTIMATORS = CORE_ESTIMATORS + ("qr", "rpwm")
DEFAULT_ALPHAS = (0.01, 0.001)
QR_AVG_M = 6


def alpha_tag(alpha):
    """``0.01 -> '001'``, ``0.001 -> '0001'`` (column-name suffix)."""
    return f"{alpha:.10f}".rstrip("0").replace(".", "")


@dataclass
class PanelConfig:
    dgp_names: list
    seeds: list
    contamination_levels: list = field(default_factory=lambda: list(CONTAMINATION_LEVELS))
    n: int = 1000
    grid_points: int = 25
    alphas: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    n_oracle: int = 100_000
    output_path: str = None
    record_timing: bool = False

    def __post_init__(self):
        for name in ("dgp_names", "contamination_levels", "seeds", "alphas", "estimators"):
            if not list(getattr(self, name)):
                raise ValueError(f"{name} must be non-empty")
        if self.n < 200:
            raise ValueError(f"n must be at least 200, got {self.n}")
        if not all(0 < a < 0.5 for a in self.alphas):
            raise ValueError(f"alphas must lie in (0, 0.5), got {self.alphas}")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; expected a subset of {ESTIMATORS}")
        for name in self.dgp_names:
            DGPSpec(name)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**raw)


@dataclass
class CellResult:
    dgp: str
    p: float
    seed: int
    estimator: str
    core_mae: float
    q_mae: dict
    alloc_err: dict
    s_mae: float
    regime: str
    truth_regime: str
    refused: bool
    wall_ms: int = 0
    error: str = None

    @property
    def key(self):
        return (self.dgp, self.p, self.seed, self.estimator)

    def row(self, alphas):
        out = {"dgp": self.dgp, "p": self.p, "seed": self.seed, "estimator": self.estimator,
               "core_mae": self.core_mae}
        for a in alphas:
            out[f"q_mae_{alpha_tag(a)}"] = self.q_mae.get(a, np.nan)
        for a in alphas:
            out[f"alloc_{alpha_tag(a)}"] = self.alloc_err.get(a, np.nan)
        out.update(s_mae=self.s_mae, regime=self.regime, truth_regime=self.truth_regime,
                   refused=self.refused, wall_ms=self.wall_ms)
        return out


def csv_columns(alphas):
    return (["dgp", "p", "seed", "estimator", "core_mae"]
            + [f"q_mae_{alpha_tag(a)}" for a in alphas]
            + [f"alloc_{alpha_tag(a)}" for a in alphas]
            + ["s_mae", "regime", "truth_regime", "refused", "wall_ms"])


def _mae(est, ref):
    est = np.asarray(est, dtype=np.float64)
    if est.size == 0 or not np.all(np.isfinite(est)):
        return np.nan
    return float(np.mean(np.abs(est - np.asarray(ref))))


def allocation_error(q_hat, q_oracle):
    """Oracle regret of the estimated safest dose, normalized by the oracle range.

    The chosen dose minimizes ``q_hat``; regret is
    ``(Q(t_hat) - min Q) / (max Q - min Q)``.
    """
    q_hat = np.asarray(q_hat, dtype=np.float64)
    q_oracle = np.asarray(q_oracle, dtype=np.float64)
    if not np.all(np.isfinite(q_hat)):
        return np.nan
    span = q_oracle.max() - q_oracle.min()
    if not span > 0:
        return 0.0
    return float((q_oracle[int(np.argmin(q_hat))] - q_oracle.min()) / span)


def compute_metrics(theta_hat, q_hat, s_hat, oracles, theta_ref=None, s_alpha=None):
    """Metric bundle for one estimate against oracle curves.

    Parameters
    ----------
    theta_hat : array
        Core curve on the oracle grid.
    q_hat : dict alpha -> array
    s_hat : array or None
        Shortfall at ``s_alpha`` (default: the first alpha).
    oracles : dict alpha -> OracleCurves
    theta_ref : array, optional
        Core reference; defaults to the oracle mean curve.

    Non-finite estimates give NaN metrics (the caller counts them as refusals).
    """
    alphas = list(oracles)
    first = oracles[alphas[0]]
    ref = first.theta if theta_ref is None else theta_ref
    out = {"core_mae": _mae(theta_hat, ref), "q_mae": {}, "alloc_err": {}}
    for a in alphas:
        qa = q_hat.get(a)
        out["q_mae"][a] = np.nan if qa is None else _mae(qa, oracles[a].q_alpha)
        out["alloc_err"][a] = np.nan if qa is None else allocation_error(qa, oracles[a].q_alpha)
    sa = alphas[0] if s_alpha is None else s_alpha
    out["s_mae"] = np.nan if s_hat is None else _mae(s_hat, oracles[sa].s_alpha)
    return out


def _median_label(xi):
    xi = np.asarray(xi, dtype=np.float64)
    xi = xi[np.isfinite(xi)]
    return regime_label(float(np.median(xi))) if xi.size else "refused"


def _unit(args):
    """All cells of one (dgp, p, seed) unit; shared work is done once."""
    cfg, name, p, seed = args
    spec = DGPSpec(name, p, cfg.n, seed)
    sample = generate(spec)
    grid = default_grid(sample.T, cfg.grid_points)
    alphas = list(cfg.alphas)
    oracles = {a: oracle_curves(spec, grid, a, n_oracle=cfg.n_oracle) for a in alphas}
    theta_ref = structural_theta(grid)
    truth = truth_regime(name, p, grid)
    s_alpha = alphas[0]
    cells = []

    shared = {}

    def nuisance():
        if "nu" not in shared:
            shared["nu"] = crossfit_nuisances(sample, seed=seed)
        return shared["nu"]

    def per_t():
        if "pt" not in shared:
            shared["pt"] = pdhte_curve(sample.Y, sample.T, grid, PDHTEConfig(seed=seed))
        return shared["pt"]

    def core(loss):
        key = ("core", loss)
        if key not in shared:
            curve = estimate_adrf(sample, grid, LossSpec(loss), seed=seed, nuisance=nuisance())
            r = sample.Y - curve.at(sample.T)
            shared[key] = (curve, r, build_tail_report(r, ThresholdConfig(seed=seed)))
        return shared[key]

    for est in cfg.estimators:
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                refused = False
                if est in CORE_ESTIMATORS:
                    curve, r, report = core(est)
                    pt = per_t()
                    tfs = {a: tail_functionals(curve, r, sample.Y, sample.T, pt, report, a) for a in alphas}
                    theta_hat = curve.theta
                    q_hat = {a: tf.q_alpha for a, tf in tfs.items()}
                    s_hat = tfs[s_alpha].s_alpha
                    refused = any(tf.refused for tf in tfs.values())
                    regime = "refused" if pt.globally_refused else _median_label(pt.xi)
                elif est == "qr":
                    theta_hat = qr_quantile_curve(sample, grid, 0.5).q_hat
                    q_hat = {a: qr_quantile_curve(sample, grid, 1.0 - a).q_hat for a in alphas}
                    s_hat = qr_avg_shortfall(sample, grid, s_alpha, QR_AVG_M)
                    regime = _median_label(qr_xi_proxy(sample, grid))
                else:  # rpwm
                    curve, r, report = core("welsch")
                    theta_hat = curve.theta
                    if report.refused:
                        q_hat, s_hat, regime, refused = {}, None, "refused", True
                    else:
                        fits = {a: residual_pwm_return_level(curve, r, sample.T, grid, a, report.u_star)
                                for a in alphas}
                        q_hat = {a: f.q_hat for a, f in fits.items()}
                        f = fits[s_alpha]
                        s_hat = np.array([conditional_shortfall(f.q_hat[k], f.xi[k], f.sigma[k],
                                                                curve.theta[k] + report.u_star)
                                          for k in range(grid.shape[0])])
                        regime = report.regime
            m = compute_metrics(theta_hat, q_hat, s_hat, oracles, theta_ref=theta_ref)
            err = None
        except Exception as exc:  # a failing cell must not abort the panel
            log.warning("cell %s/%s/%s/%s failed: %s", name, p, seed, est, exc)
            m = {"core_mae": np.nan, "q_mae": {}, "alloc_err": {}, "s_mae": np.nan}
            regime, refused, err = "error", True, f"{type(exc).__name__}: {exc}"
        wall = int(round(1000 * (time.perf_counter() - t0))) if cfg.record_timing else 0
        cells.append(CellResult(dgp=name, p=float(p), seed=int(seed), estimator=est,
                                core_mae=m["core_mae"], q_mae=m["q_mae"], alloc_err=m["alloc_err"],
                                s_mae=m["s_mae"], regime=regime, truth_regime=truth,
                                refused=bool(refused), wall_ms=wall, error=err))
    return cells


def run_panel(cfg, processes=1):
    """Run every (dgp, p, seed, estimator) cell; output sorted by cell key."""
    units = [(cfg, name, float(p), int(seed))
             for name in cfg.dgp_names for p in cfg.contamination_levels for seed in cfg.seeds]
    if processes and processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            batches = list(pool.map(_unit, units))
    else:
        batches = [_unit(u) for u in units]
    cells = [c for b in batches for c in b]
    order = {e: i for i, e in enumerate(cfg.estimators)}
    cells.sort(key=lambda c: (c.dgp, c.p, c.seed, order[c.estimator]))
    return cells


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def panel_csv(cells, alphas):
    """CSV text with the fixed column order; NaN metrics are empty fields."""
    buf = io.StringIO()
    cols = csv_columns(alphas)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for c in cells:
        row = c.row(alphas)
        w.writerow([_fmt(row[k]) for k in cols])
    return buf.getvalue()


def _metric(cell, metric):
    if metric.startswith("q_mae_") or metric.startswith("alloc_"):
        return cell.row(list(cell.q_mae) or list(DEFAULT_ALPHAS)).get(metric, np.nan)
    return getattr(cell, metric)


def bootstrap_relative_mae(cells_a, cells_b, B=2000, seed=0, metric="core_mae"):
    """Paired relative difference ``(A - B)/B`` with a 90% percentile bootstrap CI.

    Cells are paired on (dgp, p, seed); pairs where either side is refused
    or non-finite are dropped.

    Returns
    -------
    mean_rel, (lo, hi), n_pairs
    """
    a = {(c.dgp, c.p, c.seed): c for c in cells_a}
    b = {(c.dgp, c.p, c.seed): c for c in cells_b}
    if set(a) != set(b):
        raise ValueError("cells are not paired: the two estimators cover different (dgp, p, seed) keys")
    if B < 10:
        warnings.warn(f"B={B} bootstrap resamples: the interval is degenerate", RuntimeWarning)
    rel = []
    for k in sorted(a):
        va, vb = _metric(a[k], metric), _metric(b[k], metric)
        if a[k].refused or b[k].refused or not (np.isfinite(va) and np.isfinite(vb)) or vb == 0:
            continue
        rel.append((va - vb) / vb)
    rel = np.asarray(rel)
    if rel.size == 0:
        return np.nan, (np.nan, np.nan), 0
    rng = rng_for(seed, "bootstrap-relative", metric)
    boot = rel[rng.integers(0, rel.size, size=(B, rel.size))].mean(axis=1)
    lo, hi = np.percentile(boot, [5, 95])
    return float(rel.mean()), (float(lo), float(hi)), int(rel.size)


def aggregate(cells, alphas, B=2000, seed=0):
    """Per-estimator means (refused cells excluded) plus paired bootstrap comparisons."""
    by_est = {}
    for c in cells:
        by_est.setdefault(c.estimator, []).append(c)
    out = {"estimators": {}, "comparisons": {}}
    metrics = ["core_mae"] + [f"q_mae_{alpha_tag(a)}" for a in alphas] + ["s_mae"]
    for est, cs in by_est.items():
        ok = [c for c in cs if not c.refused]
        summ = {"cells": len(cs), "refused": len(cs) - len(ok)}
        for m in metrics:
            vals = np.array([_metric(c, m) for c in ok], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            summ[m] = float(vals.mean()) if vals.size else None
        labelled = [c for c in cs if c.regime not in ("refused", "error")]
        summ["regime_accuracy"] = (float(np.mean([c.regime == c.truth_regime for c in labelled]))
                                   if labelled else None)
        out["estimators"][est] = summ
    pairs = [("welsch", "standard_l2", "core_mae"), ("huber", "standard_l2", "core_mae")]
    pairs += [("welsch", "qr", f"q_mae_{alpha_tag(a)}") for a in alphas]
    pairs += [("welsch", "qr", "s_mae")]
    for ea, eb, m in pairs:
        if ea in by_est and eb in by_est:
            mean, (lo, hi), k = bootstrap_relative_mae(by_est[ea], by_est[eb], B=B, seed=seed, metric=m)
            out["comparisons"][f"{ea}_vs_{eb}:{m}"] = {
                "mean_rel": None if not np.isfinite(mean) else mean,
                "ci90_lower": None if not np.isfinite(lo) else lo,
                "ci90_upper": None if not np.isfinite(hi) else hi,
                "pairs": k,
            }
    return out


def write_panel(cells, cfg, path, B=2000, seed=0):
    """Write ``path`` (CSV) and ``path`` with a ``.json`` suffix (aggregate)."""
    with open(path, "w", newline="") as fh:
        fh.write(panel_csv(cells, cfg.alphas))
    agg = aggregate(cells, cfg.alphas, B=B, seed=seed)
    agg["config"] = {k: v for k, v in asdict(cfg).items() if k != "output_path"}
    json_path = (path[:-4] if path.endswith(".csv") else path) + ".json"
    with open(json_path, "w") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
    return json_path


def ingest_csv(path, mapping, log1p=False):
    """Load a CSV into a Sample.

    Parameters
    ----------
    mapping : dict
        ``{"T": column, "Y": column, "X": [columns]}``; ``X`` is optional and
        defaults to a single constant column (with a warning).
    log1p : bool
        Replace ``Y`` by ``log(1 + Y)``.

    Returns
    -------
    sample, n_dropped
        Rows with a missing mapped value are dropped and counted.
    """
    import pandas as pd

    df = pd.read_csv(path, float_precision="round_trip")
    t_col, y_col = mapping.get("T"), mapping.get("Y")
    if t_col is None or y_col is None:
        raise ValueError("mapping needs 'T' and 'Y' entries")
    x_cols = list(mapping.get("X") or [])
    cols = [t_col, y_col] + x_cols
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise ValueError(f"columns not found in {path}: {missing}; available: {list(df.columns)}")
    sub = df[cols]
    for c in cols:
        conv = pd.to_numeric(sub[c], errors="coerce")
        bad = conv.isna() & sub[c].notna()
        if bad.any():
            raise ValueError(f"column {c!r} has non-numeric values, e.g. {sub[c][bad].iloc[0]!r}")
    sub = sub.apply(pd.to_numeric)
    keep = sub.notna().all(axis=1)
    n_dropped = int((~keep).sum())
    sub = sub[keep]
    Y = sub[y_col].to_numpy(dtype=np.float64)
    if log1p:
        if np.any(Y <= -1):
            raise ValueError("log1p needs Y > -1")
        Y = np.log1p(Y)
    if x_cols:
        X = sub[x_cols].to_numpy(dtype=np.float64)
    else:
        warnings.warn("no covariate columns mapped; using a single constant column", UserWarning)
        X = np.ones((sub.shape[0], 1))
    return Sample(X=X, T=sub[t_col].to_numpy(dtype=np.float64), Y=Y), n_dropped
