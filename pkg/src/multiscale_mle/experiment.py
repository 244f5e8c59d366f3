"""Monte Carlo harness: replicate simulation + estimation, aggregation, reports."""
from __future__ import annotations

import csv
import importlib
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import _kernels
from .averaging import InvariantAvgOptions, solve_limit_ode
from .errors import ConfigError, MultiscaleError
from .estimate import fisher_information, mle, normal_quantile, quasi_mle
from .likelihood import PathTerms
from .model import EpsilonPair, MultiscaleModel, get_model
from .rng import streams
from .simulate import TimeGrid, euler_maruyama

log = logging.getLogger(__name__)

ESTIMATORS = ("mle", "quasi_mle")
THREADS_ENV = "MULTISCALE_MLE_THREADS"
MAX_FAIL_FRACTION = 0.01
SUMMARY_COLUMNS = ["estimator", "theta0", "eps", "delta", "mean", "emp_sd",
                   "ci68_lo", "ci68_hi", "ci95_lo", "ci95_hi", "theo_sd"]


class MonteCarloAborted(MultiscaleError):
    """More than 1% of replicates failed."""


def resolve_model(ref: str) -> MultiscaleModel:
    """Registry name, or ``package.module:attr`` naming a model or a factory."""
    if ":" in ref:
        mod_name, attr = ref.split(":", 1)
        try:
            obj = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load custom model {ref!r}: {exc}") from exc
        model = obj if isinstance(obj, MultiscaleModel) else obj()
        if not isinstance(model, MultiscaleModel):
            raise ConfigError(f"{ref!r} did not produce a MultiscaleModel")
        return model
    try:
        return get_model(ref)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc


@dataclass
class ExperimentConfig:
    model: str
    theta0: list
    eps: float
    delta: float
    t_end: float = 1.0
    n_steps: int = 1_000_000
    n_replicates: int = 2000
    master_seed: int = 0
    estimators: list = field(default_factory=lambda: ["mle"])
    ci_levels: list = field(default_factory=lambda: [0.68, 0.95])
    histogram_bins: int = 40
    output_dir: Optional[str] = None
    fisher_steps: int = 1000
    invariant_steps: int = 200_000  # ergodic averaging budget when no quadrature rule exists
    chunk_size: int = 25
    track_sup_error: bool = False

    def __post_init__(self):
        self.theta0 = [float(v) for v in np.atleast_1d(self.theta0)]
        self.estimators = [_canonical_estimator(e) for e in self.estimators]
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be at least 1")
        if not all(0 < lv < 1 for lv in self.ci_levels):
            raise ConfigError("ci_levels must lie in (0, 1)")
        if not (self.eps > 0 and self.delta > 0 and self.t_end > 0 and self.n_steps >= 1):
            raise ConfigError("eps, delta, t_end and n_steps must be positive")
        if self.histogram_bins < 1 or self.chunk_size < 1:
            raise ConfigError("histogram_bins and chunk_size must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def identity(self) -> dict:
        """Fields that determine per-replicate results (used for resume)."""
        d = self.to_dict()
        for k in ("output_dir", "chunk_size", "n_replicates", "ci_levels", "histogram_bins"):
            d.pop(k)
        return d


def _canonical_estimator(name: str) -> str:
    name = {"quasi": "quasi_mle", "quasi-mle": "quasi_mle"}.get(name, name)
    if name not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {name!r}; expected mle or quasi")
    return name


@dataclass
class SeriesSummary:
    label: str
    estimator: str
    coord: int
    theta0: float
    values: list  # per replicate, None where the replicate failed
    mean: float
    emp_sd: Optional[float]
    ci: dict  # level -> (lo, hi) or None
    theo_sd: Optional[float]
    hist_edges: list
    hist_counts: list
    hist_density: list
    density_x: list
    density_pdf: list


@dataclass
class McReport:
    config: dict
    series: list
    n_completed: int
    n_failed: int
    failures: list
    fisher: Optional[list]
    runtime_s: float
    backend: str
    sup_errors: Optional[list] = None
    x_final: Optional[list] = None

    def get(self, estimator="mle", coord=0) -> SeriesSummary:
        for s in self.series:
            if s.estimator == estimator and s.coord == coord:
                return s
        raise KeyError((estimator, coord))

    def to_dict(self) -> dict:
        d = asdict(self)
        for s in d["series"]:
            s["ci"] = {str(k): v for k, v in s["ci"].items()}
        return d


# ---------------------------------------------------------------------------
# replicate engines


def _family_chunk(model, cfg, theta0, indices, xbar):
    fam = model.family
    res = _kernels.family_stats(
        fam.params(), theta0, model.x0[0], model.y0[0], cfg.eps, cfg.delta,
        cfg.t_end / cfg.n_steps, cfg.n_steps, streams(cfg.master_seed, indices), xbar)
    k2, cc = fam.kappa_sq, fam.corr_coef
    out = []
    for i, (s_gg, s_gdx, s_corr, sup, x_t, failed) in zip(indices, res):
        rec = {"replicate": int(i), "ok": True, "error": None, "values": {},
               "sup_error": float(sup) if xbar is not None else None, "x_final": float(x_t)}
        if failed:
            rec.update(ok=False, error="NonFiniteState")
        elif not s_gg > 0:
            rec.update(ok=False, error="DegenerateNormalEquations")
        else:
            est = {"mle": (k2 * s_gdx + cc * s_corr) / (k2 * s_gg), "quasi_mle": s_gdx / s_gg}
            for name in cfg.estimators:
                rec["values"][name] = [float(model.project([est[name]])[0])]
        out.append(rec)
    return out


def _generic_chunk(model, cfg, theta0, indices, xbar):
    grid = TimeGrid(cfg.t_end, cfg.n_steps)
    pair = EpsilonPair(cfg.eps, cfg.delta)
    out = []
    for i in indices:
        rec = {"replicate": int(i), "ok": True, "error": None, "values": {},
               "sup_error": None, "x_final": None}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                traj = euler_maruyama(model, theta0, pair, grid, cfg.master_seed,
                                      record_noise=False, stream_index=int(i))
            terms = PathTerms.build(model, traj)
            fns = {"mle": mle, "quasi_mle": quasi_mle}
            for name in cfg.estimators:
                rec["values"][name] = [float(v) for v in fns[name](model, traj, terms=terms).theta_hat]
            rec["x_final"] = float(traj.x_path[-1, 0])
            if xbar is not None:
                rec["sup_error"] = float(np.max(np.abs(traj.x_path - xbar)))
        except MultiscaleError as exc:
            rec.update(ok=False, error=type(exc).__name__, values={})
        out.append(rec)
    return out


def _thread_count(threads):
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(threads))


_PROGRESS = "replicates.jsonl"
_RUN_CONFIG = "run_config.json"


def _load_progress(out_dir: Path, cfg: ExperimentConfig) -> dict:
    cfg_file = out_dir / _RUN_CONFIG
    prog = out_dir / _PROGRESS
    if not prog.exists():
        return {}
    if cfg_file.exists():
        saved = json.loads(cfg_file.read_text())
        # fields added after a run was saved take their defaults
        for f in fields(ExperimentConfig):
            if f.default is not MISSING:
                saved.setdefault(f.name, f.default)
        if {k: saved.get(k) for k in cfg.identity()} != cfg.identity():
            raise ConfigError(f"--resume: {out_dir} holds results for a different configuration")
    done = {}
    with open(prog) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break  # torn final line from an interrupted run
            if set(cfg.estimators) <= set(rec["values"]) or not rec["ok"]:
                done[rec["replicate"]] = rec
    return done


def run_monte_carlo(config: ExperimentConfig, *, resume: bool = False, threads: Optional[int] = None,
                    progress=None) -> McReport:
    """Simulate and estimate ``n_replicates`` paths; aggregate into a report.

    Replicate ``i`` uses random stream ``(master_seed, i)``, so results do
    not depend on thread count or on resumption.  When ``output_dir`` is
    set, finished replicates are appended to ``replicates.jsonl`` there and
    ``resume=True`` skips them on a rerun.
    """
    cfg = config
    model = resolve_model(cfg.model)
    if len(cfg.theta0) != model.dim_param:
        raise ConfigError(f"theta0 has length {len(cfg.theta0)}, model expects {model.dim_param}")
    theta0 = np.array(cfg.theta0)
    grid = TimeGrid(cfg.t_end, cfg.n_steps)
    t_start = time.perf_counter()

    xbar = None
    if cfg.track_sup_error:
        xbar = solve_limit_ode(model, theta0, grid).x_bar
        if model.family is not None:
            xbar = xbar[:, 0]

    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    done = {}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume:
            done = _load_progress(out_dir, cfg)
        else:
            (out_dir / _PROGRESS).unlink(missing_ok=True)
        (out_dir / _RUN_CONFIG).write_text(json.dumps(cfg.identity(), indent=1))

    todo = [i for i in range(cfg.n_replicates) if i not in done]
    chunks = [todo[k:k + cfg.chunk_size] for k in range(0, len(todo), cfg.chunk_size)]
    use_family = model.family is not None and model.dim_param == 1
    if use_family:
        def work(idx):
            return _family_chunk(model, cfg, float(theta0[0]), idx, xbar)
    else:
        def work(idx):
            return _generic_chunk(model, cfg, theta0, idx, xbar)

    results = dict(done)
    prog_fh = open(out_dir / _PROGRESS, "a") if out_dir is not None else None
    try:
        n_threads = _thread_count(threads)
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            for recs in pool.map(work, chunks):
                for rec in recs:
                    results[rec["replicate"]] = rec
                if prog_fh is not None:
                    prog_fh.write("".join(json.dumps(r) + "\n" for r in recs))
                    prog_fh.flush()
                if progress is not None:
                    progress(len(results), cfg.n_replicates)
    finally:
        if prog_fh is not None:
            prog_fh.close()

    ordered = [results[i] for i in range(cfg.n_replicates)]
    failures = [{"replicate": r["replicate"], "error": r["error"]} for r in ordered if not r["ok"]]
    if len(failures) > MAX_FAIL_FRACTION * cfg.n_replicates:
        raise MonteCarloAborted(f"{len(failures)} of {cfg.n_replicates} replicates failed")

    fisher = None
    theo = {}
    if "mle" in cfg.estimators:
        avg = InvariantAvgOptions(n_steps=cfg.invariant_steps)
        lim = solve_limit_ode(model, theta0, TimeGrid(cfg.t_end, cfg.fisher_steps), avg)
        try:
            info = fisher_information(model, theta0, lim, avg)
            fisher = info.matrix.tolist()
            theo = dict(enumerate(info.theoretical_sd(cfg.eps)))
        except MultiscaleError as exc:
            log.warning("theoretical SD unavailable: %s", exc)

    series = []
    for name in cfg.estimators:
        for j in range(model.dim_param):
            vals = [r["values"][name][j] if r["ok"] else None for r in ordered]
            label = name if model.dim_param == 1 else f"{name}[{j}]"
            sd = float(theo[j]) if (name == "mle" and j in theo) else None
            series.append(_summarize(label, name, j, float(theta0[j]), vals, sd, cfg))

    report = McReport(
        config=cfg.to_dict(),
        series=series,
        n_completed=len(ordered) - len(failures),
        n_failed=len(failures),
        failures=failures,
        fisher=fisher,
        runtime_s=time.perf_counter() - t_start,
        backend=_kernels.BACKEND if use_family else "numpy",
        sup_errors=[r["sup_error"] for r in ordered] if cfg.track_sup_error else None,
        x_final=[r["x_final"] for r in ordered],
    )
    if out_dir is not None:
        emit_report(report, out_dir)
    return report


def _summarize(label, estimator, coord, theta0, values, theo_sd, cfg) -> SeriesSummary:
    v = np.array([x for x in values if x is not None], dtype=float)
    mean = float(np.mean(v))
    emp_sd = float(np.std(v, ddof=1)) if v.size > 1 else None
    levels = sorted(set(cfg.ci_levels) | {0.68, 0.95})
    ci = {}
    for lv in levels:
        if emp_sd is None:
            ci[lv] = None
        else:
            z = normal_quantile(lv)
            ci[lv] = (mean - z * emp_sd, mean + z * emp_sd)

    spread = emp_sd if emp_sd else 0.5
    lo = min(mean - 4 * spread, float(v.min()))
    hi = max(mean + 4 * spread, float(v.max()))
    counts, edges = np.histogram(v, bins=cfg.histogram_bins, range=(lo, hi))
    mids = 0.5 * (edges[:-1] + edges[1:])
    if theo_sd:
        dens = stats.norm.pdf(mids, loc=theta0, scale=theo_sd).tolist()
        dx = theta0 + np.linspace(-5.0, 5.0, 401) * theo_sd
        dpdf = stats.norm.pdf(dx, loc=theta0, scale=theo_sd).tolist()
        dx = dx.tolist()
    else:
        dens, dx, dpdf = [None] * len(mids), [], []
    return SeriesSummary(label, estimator, coord, theta0, list(values), mean, emp_sd, ci, theo_sd,
                         edges.tolist(), counts.tolist(), dens, dx, dpdf)


# ---------------------------------------------------------------------------
# report files


def _fmt(v):
    return "" if v is None else repr(float(v))


def emit_report(report: McReport, out_dir) -> list:
    """Write summary.csv, estimates.csv, hist.csv (+ hist_<label>.csv) and report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    written = []

    path = out_dir / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in report.series:
            c68 = s.ci.get(0.68) or (None, None)
            c95 = s.ci.get(0.95) or (None, None)
            w.writerow([s.label, _fmt(s.theta0), _fmt(cfg["eps"]), _fmt(cfg["delta"]), _fmt(s.mean),
                        _fmt(s.emp_sd), _fmt(c68[0]), _fmt(c68[1]), _fmt(c95[0]), _fmt(c95[1]),
                        _fmt(s.theo_sd)])
    written.append(path)

    path = out_dir / "estimates.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "estimator", "value"])
        for i in range(len(report.series[0].values) if report.series else 0):
            for s in report.series:
                w.writerow([i, s.label, _fmt(s.values[i])])
    written.append(path)

    for k, s in enumerate(report.series):
        path = out_dir / ("hist.csv" if k == 0 else f"hist_{s.label}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count", "theo_density_at_midpoint"])
            for b in range(len(s.hist_counts)):
                w.writerow([_fmt(s.hist_edges[b]), _fmt(s.hist_edges[b + 1]), s.hist_counts[b],
                            _fmt(s.hist_density[b])])
        written.append(path)

    path = out_dir / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=1))
    written.append(path)
    return written
