"""Synthetic benchmark: cumulative-sum predictor paths, sparse truth.

Each replicate draws p random walk paths per sample on a 500-point fine grid
over [0, 1] (partial sums of standard normals), forms the response from the
first three predictors through fine-grid Riemann inner products with
beta1(t) = sin(3*pi*t/2), beta2(t) = sin(5*pi*t/2), beta3(t) = t^2 plus
Gaussian noise, then keeps every 5th grid point as the observed design.
Methods are scored on held-out RMSE and on how many of the 3 active /
16 inactive predictors they identify.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import make_bspline_basis, eval_basis
from .dataset import FunctionalDataset
from .errors import ConfigurationError
from .model import FitResult, predict
from .tuning import CvPlan, baselines, cross_validate

__all__ = [
    "SimScenario",
    "SimTruth",
    "SimReport",
    "TRUE_BETAS",
    "ACTIVE_SET",
    "generate",
    "evaluate",
    "run_study",
]

TRUE_BETAS = (
    lambda t: np.sin(1.5 * np.pi * t),
    lambda t: np.sin(2.5 * np.pi * t),
    lambda t: t**2,
)
ACTIVE_SET = (0, 1, 2)

METHODS = ("ols", "ridge", "mfg-lasso", "mfg-en", "oracle")

#: elastic-net mixing values searched when the method is "mfg-en"
EN_ALPHA_GRID = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class SimScenario:
    """One cell of the benchmark: sample size, noise level, and sizes."""

    n: int
    sigma: float
    p: int = 19
    n_fine: int = 500
    n_obs: int = 100
    train_frac: float = 0.8
    num_basis: int = 21
    order: int = 4
    seed: int = 1234

    def __post_init__(self):
        if self.n_fine % self.n_obs != 0:
            raise ConfigurationError("observed grid must subsample the fine grid evenly")
        if self.p < len(ACTIVE_SET):
            raise ConfigurationError(f"need at least {len(ACTIVE_SET)} predictors")


@dataclass(frozen=True)
class SimTruth:
    """What the generator knows: active indices and the coefficient curves."""

    active: tuple[int, ...]
    obs_grid: np.ndarray = field(repr=False)

    def beta(self, j: int, t: np.ndarray) -> np.ndarray:
        return TRUE_BETAS[j](t) if j in self.active else np.zeros_like(t)


_BASIS_CACHE: dict = {}


def _basis_for(scenario: SimScenario):
    key = (scenario.order, scenario.num_basis)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = make_bspline_basis((0.0, 1.0), scenario.order,
                                               scenario.num_basis)
    return _BASIS_CACHE[key]


def generate_raw(scenario: SimScenario, replicate_index: int):
    """Raw observed curves and responses for one replicate.

    Returns ``(x_obs, y, obs_grid, train_idx, test_idx)`` where ``x_obs`` is
    (n, p, n_obs).  The RNG stream is keyed by (seed, replicate), so
    replicates are independent of execution order.
    """
    rng = np.random.default_rng([scenario.seed, replicate_index])
    n, p, n_fine = scenario.n, scenario.p, scenario.n_fine
    fine_grid = np.arange(1, n_fine + 1) / n_fine
    x_fine = rng.standard_normal((n, p, n_fine)).cumsum(axis=2)
    signal = np.zeros(n)
    for j in ACTIVE_SET:
        signal += x_fine[:, j, :] @ TRUE_BETAS[j](fine_grid) / n_fine
    y = signal + scenario.sigma * rng.standard_normal(n)

    step = n_fine // scenario.n_obs
    keep = np.arange(step - 1, n_fine, step)
    x_obs = x_fine[:, :, keep]
    obs_grid = fine_grid[keep]
    n_train = int(round(scenario.train_frac * n))
    return x_obs, y, obs_grid, np.arange(n_train), np.arange(n_train, n)


def generate(scenario: SimScenario, replicate_index: int):
    """Train/test datasets plus the ground truth for one replicate."""
    x_obs, y, obs_grid, train_idx, test_idx = generate_raw(scenario, replicate_index)
    basis = _basis_for(scenario)
    grids = [obs_grid] * scenario.p

    def build(idx):
        panels = [x_obs[idx, j, :] for j in range(scenario.p)]
        return FunctionalDataset.from_grid_curves(panels, grids, y[idx], basis)

    truth = SimTruth(active=ACTIVE_SET, obs_grid=obs_grid)
    return build(train_idx), build(test_idx), truth


@dataclass
class EvalRecord:
    """Per-replicate, per-method outcome."""

    method: str
    rmse: float
    active_correct: int
    inactive_correct: int
    n_selected: int
    l2_dist: tuple[float, ...] = ()
    converged: bool = True


def evaluate(fit: FitResult, test: FunctionalDataset, truth: SimTruth) -> EvalRecord:
    """Held-out RMSE and selection counts against the generating truth."""
    preds = predict(fit, test)
    rmse = float(np.sqrt(np.mean((preds - test.response) ** 2)))
    selected = set(fit.active_set)
    active = set(truth.active)
    inactive = set(range(test.p)) - active
    return EvalRecord(
        method=fit.penalty,
        rmse=rmse,
        active_correct=len(selected & active),
        inactive_correct=len(inactive - selected),
        n_selected=len(selected),
        l2_dist=_l2_distances(fit, truth),
        converged=fit.converged,
    )


def _l2_distances(fit: FitResult, truth: SimTruth) -> tuple[float, ...]:
    """L2 distance of each estimated active-truth curve to its target."""
    t = np.linspace(0.0, 1.0, 2001)
    out = []
    for j in truth.active:
        diff = fit.curve(j, t) - truth.beta(j, t)
        out.append(float(np.sqrt(np.trapezoid(diff**2, t))))
    return tuple(out)


def _default_plan(method: str, plan: CvPlan | None) -> CvPlan:
    if plan is not None and method != "mfg-en":
        return plan
    if plan is not None:
        return CvPlan(k=plan.k, alpha_grid=EN_ALPHA_GRID,
                      lam_der_grid=plan.lam_der_grid,
                      lam_grid_size=plan.lam_grid_size,
                      lam_min_ratio=plan.lam_min_ratio, seed=plan.seed)
    if method == "mfg-en":
        return CvPlan(alpha_grid=EN_ALPHA_GRID)
    return CvPlan()


def _fit_method(method, train, truth, plan, solver):
    if method in ("ols", "ridge", "oracle"):
        base = baselines(train,
                         oracle_active=truth.active if method == "oracle" else None)
        res = base[method]
    elif method in ("mfg-lasso", "mfg-en"):
        res = cross_validate(train, _default_plan(method, plan), solver=solver).fit
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    return res


def _replicate(scenario, rep, methods, plan, solver):
    train, test, truth = generate(scenario, rep)
    records = []
    for method in methods:
        try:
            res = _fit_method(method, train, truth, plan, solver)
            rec = evaluate(res, test, truth)
            rec.method = method
        except Exception as exc:  # recorded, not fatal
            rec = EvalRecord(method=method, rmse=math.nan, active_correct=0,
                             inactive_correct=0, n_selected=0, converged=False)
            warnings.warn(f"replicate {rep} method {method} failed: {exc}")
        records.append(rec)
    return rep, records


@dataclass
class MethodSummary:
    """Aggregated scores for one (scenario, method) cell."""

    method: str
    replications: int
    failures: int
    rmse_mean: float
    rmse_sd: float
    pct_active: float
    pct_inactive: float


@dataclass
class SimReport:
    """Aggregates plus the raw per-replicate records of a study."""

    scenarios: list[dict]
    summaries: list[dict]
    records: list[dict]
    elapsed_seconds: float = 0.0

    def summary(self, n: int, sigma: float, method: str) -> MethodSummary:
        for row in self.summaries:
            if row["n"] == n and row["sigma"] == sigma and row["method"] == method:
                return MethodSummary(**{k: row[k] for k in (
                    "method", "replications", "failures", "rmse_mean", "rmse_sd",
                    "pct_active", "pct_inactive")})
        raise KeyError(f"no summary for n={n}, sigma={sigma}, method={method}")

    def rmses(self, n: int, sigma: float, method: str) -> np.ndarray:
        vals = [r["rmse"] for r in self.records
                if r["n"] == n and r["sigma"] == sigma and r["method"] == method
                and not math.isnan(r["rmse"])]
        return np.array(vals)

    def to_json(self) -> str:
        return json.dumps(
            {"scenarios": self.scenarios, "summaries": self.summaries,
             "records": self.records, "elapsed_seconds": self.elapsed_seconds},
            indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "SimReport":
        doc = json.loads(text)
        return SimReport(scenarios=doc["scenarios"], summaries=doc["summaries"],
                         records=doc["records"],
                         elapsed_seconds=doc["elapsed_seconds"])

    def selection_table(self) -> str:
        return _format_table(self, "selection")

    def rmse_table(self) -> str:
        return _format_table(self, "rmse")


def run_study(
    scenarios,
    methods=("mfg-lasso",),
    replications: int = 30,
    plan: CvPlan | None = None,
    solver: str = "gmd",
    n_jobs: int = 1,
) -> SimReport:
    """Generate -> fit (CV) -> evaluate over scenarios x methods x replicates.

    Deterministic under the scenario seeds regardless of ``n_jobs``;
    individual replicate failures are recorded, not fatal.
    """
    bad = [mth for mth in methods if mth not in METHODS]
    if bad:
        raise ConfigurationError(f"unknown methods {bad}; choose from {METHODS}")
    t0 = time.time()
    records = []
    for scenario in scenarios:
        if n_jobs != 1:
            from joblib import Parallel, delayed

            rep_out = Parallel(n_jobs=n_jobs)(
                delayed(_replicate)(scenario, rep, methods, plan, solver)
                for rep in range(replications)
            )
        else:
            rep_out = [_replicate(scenario, rep, methods, plan, solver)
                       for rep in range(replications)]
        for rep, recs in sorted(rep_out):
            for rec in recs:
                row = asdict(rec)
                row.update(n=scenario.n, sigma=scenario.sigma, replicate=rep,
                           l2_dist=list(rec.l2_dist))
                records.append(row)

    summaries = []
    for scenario in scenarios:
        for method in methods:
            rows = [r for r in records
                    if r["n"] == scenario.n and r["sigma"] == scenario.sigma
                    and r["method"] == method]
            ok = [r for r in rows if not math.isnan(r["rmse"])]
            n_ok = len(ok)
            rmses = np.array([r["rmse"] for r in ok]) if ok else np.array([np.nan])
            summaries.append({
                "n": scenario.n, "sigma": scenario.sigma, "method": method,
                "replications": len(rows), "failures": len(rows) - n_ok,
                "rmse_mean": float(np.mean(rmses)),
                "rmse_sd": float(np.std(rmses, ddof=1)) if n_ok > 1 else 0.0,
                "pct_active": _pct(ok, "active_correct", len(ACTIVE_SET)),
                "pct_inactive": _pct(ok, "inactive_correct",
                                     scenario.p - len(ACTIVE_SET)),
            })
    return SimReport(
        scenarios=[asdict(s) for s in scenarios],
        summaries=summaries,
        records=records,
        elapsed_seconds=time.time() - t0,
    )


def _pct(rows, key, denom) -> float:
    if not rows:
        return math.nan
    return 100.0 * sum(r[key] for r in rows) / (denom * len(rows))


def _format_table(report: SimReport, kind: str) -> str:
    methods = sorted({row["method"] for row in report.summaries},
                     key=lambda mth: METHODS.index(mth))
    lines = []
    header = ["sigma", "n", "row"] if kind == "selection" else ["sigma", "n"]
    lines.append("  ".join(f"{h:>10}" for h in header + list(methods)))
    keys = sorted({(row["sigma"], row["n"]) for row in report.summaries})
    for sigma, n in keys:
        cells = {row["method"]: row for row in report.summaries
                 if row["sigma"] == sigma and row["n"] == n}
        if kind == "selection":
            for label, field_name in (("inactive", "pct_inactive"),
                                      ("active", "pct_active")):
                vals = [f"{cells[mth][field_name]:10.1f}" for mth in methods]
                lines.append("  ".join([f"{sigma:>10g}", f"{n:>10d}",
                                        f"{label:>10}"] + vals))
        else:
            vals = [f"{cells[mth]['rmse_mean']:.2f} ({cells[mth]['rmse_sd']:.2f})"
                    for mth in methods]
            lines.append("  ".join([f"{sigma:>10g}", f"{n:>10d}"]
                                   + [f"{v:>14}" for v in vals]))
    return "\n".join(lines)
