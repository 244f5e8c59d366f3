"""Command-line entry point: simulate, estimate, mc, fisher, validate."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .averaging import solve_limit_ode
from .errors import (ConfigError, DegenerateNormalEquations, MultiscaleError, NonFiniteState,
                     NonPositiveDefinite)
from .estimate import confidence_interval, fisher_information, mle, quasi_mle
from .experiment import ExperimentConfig, resolve_model, run_monte_carlo
from .model import EpsilonPair, validate_model
from .simulate import TimeGrid, Trajectory, euler_maruyama

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

log = logging.getLogger("multiscale_mle")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file (mc) or defaults for the other flags")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads (overrides MULTISCALE_MLE_THREADS)")
    p.add_argument("--resume", action="store_true", help="skip replicates already in --out")
    p.add_argument("--out", help="output file or directory")


def _model_flags(p, theta=True):
    p.add_argument("--model", help="registry name or module:attr")
    if theta:
        p.add_argument("--theta", type=float, nargs="+")
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--T", dest="t_end", type=float)
    p.add_argument("--n", dest="n_steps", type=float, help="number of Euler steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiscale-mle", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one trajectory")
    _model_flags(p)
    _common(p)
    p.add_argument("--csv", help="also write the path as CSV")
    p.add_argument("--no-noise", action="store_true", help="do not store Brownian increments")

    p = sub.add_parser("estimate", help="estimate theta from a trajectory file")
    p.add_argument("trajectory", help=".npz trajectory or .csv")
    _model_flags(p, theta=False)
    _common(p)
    p.add_argument("--estimator", default="mle", choices=["mle", "quasi", "quasi_mle"])
    p.add_argument("--ci-levels", type=float, nargs="+", default=[0.68, 0.95])
    p.add_argument("--fisher-steps", type=int, default=1000)
    p.add_argument("--no-fisher", action="store_true")

    p = sub.add_parser("mc", help="Monte Carlo experiment")
    _model_flags(p)
    _common(p)
    p.add_argument("--reps", dest="n_replicates", type=int)
    p.add_argument("--estimators", nargs="+")

    p = sub.add_parser("fisher", help="Fisher information and theoretical SD at theta")
    _model_flags(p)
    _common(p)

    p = sub.add_parser("validate", help="probe model assumptions")
    p.add_argument("--model", help="registry name or module:attr")
    _common(p)
    return parser


def _load_defaults(args) -> dict:
    if not args.config:
        return {}
    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _pick(args, defaults, name, fallback=None, required=True):
    val = getattr(args, name, None)
    if val is None:
        val = defaults.get(name, fallback)
    if val is None and required:
        raise ConfigError(f"missing required setting --{name}")
    return val


def _write_json(path, obj):
    text = json.dumps(obj, indent=1)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def cmd_simulate(args) -> int:
    d = _load_defaults(args)
    model = resolve_model(_pick(args, d, "model"))
    theta = np.atleast_1d(np.asarray(_pick(args, d, "theta", d.get("theta0")), dtype=float))
    if theta.size != model.dim_param:
        raise ConfigError(f"--theta needs {model.dim_param} values")
    pair = EpsilonPair(float(_pick(args, d, "eps")), float(_pick(args, d, "delta")))
    grid = TimeGrid(float(_pick(args, d, "t_end", 1.0)), int(_pick(args, d, "n_steps", 1_000_000)))
    seed = int(_pick(args, d, "seed", d.get("master_seed", 0)))
    out = Path(_pick(args, d, "out", "trajectory.npz"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        traj = euler_maruyama(model, theta, pair, grid, seed, record_noise=not args.no_noise)
    for w in caught:
        print(f"warning: {w.category.__name__}: {w.message}", file=sys.stderr)
    traj.save(out)
    if args.csv:
        traj.to_csv(args.csv)
    print(f"wrote {out}: x_T={traj.x_path[-1].tolist()} y_T={traj.y_path[-1].tolist()} "
          f"dt/delta={grid.dt / pair.delta:.3g} warnings={len(caught)}")
    return EXIT_OK


def _read_trajectory(path) -> Trajectory:
    path = Path(path)
    if path.suffix == ".csv":
        return Trajectory.from_csv(path)
    return Trajectory.load(path)


def cmd_estimate(args) -> int:
    d = _load_defaults(args)
    traj = _read_trajectory(args.trajectory)
    model = resolve_model(_pick(args, d, "model", traj.model_name or None))
    eps = _pick(args, d, "eps", required=False)
    delta = _pick(args, d, "delta", required=False)
    if eps is not None or delta is not None:
        traj.eps_pair = EpsilonPair(float(eps if eps is not None else traj.eps_pair.eps),
                                    float(delta if delta is not None else traj.eps_pair.delta))
    fn = mle if args.estimator == "mle" else quasi_mle
    res = fn(model, traj)
    if not args.no_fisher:
        lim = solve_limit_ode(model, res.theta_hat, TimeGrid(traj.grid.t_end, args.fisher_steps))
        try:
            res.fisher = fisher_information(model, res.theta_hat, lim)
            res.ci = [(lv, confidence_interval(res, res.fisher, traj.eps_pair.eps, lv))
                      for lv in args.ci_levels]
        except NonPositiveDefinite as exc:
            print(f"warning: no confidence intervals: {exc}", file=sys.stderr)
    out = res.to_dict()
    out["eps"] = traj.eps_pair.eps
    out["delta"] = traj.eps_pair.delta
    _write_json(args.out, out)
    return EXIT_OK


def _mc_config(args) -> ExperimentConfig:
    d = _load_defaults(args)
    for flag, key in (("model", "model"), ("eps", "eps"), ("delta", "delta"), ("t_end", "t_end"),
                      ("n_replicates", "n_replicates"), ("estimators", "estimators"),
                      ("seed", "master_seed"), ("out", "output_dir")):
        val = getattr(args, flag, None)
        if val is not None:
            d[key] = val
    if args.theta is not None:
        d["theta0"] = args.theta
    if args.n_steps is not None:
        d["n_steps"] = int(args.n_steps)
    for key in ("model", "theta0", "eps", "delta"):
        if key not in d:
            raise ConfigError(f"mc: missing {key}")
    return ExperimentConfig.from_dict(d)


def cmd_mc(args) -> int:
    cfg = _mc_config(args)
    if args.resume and not cfg.output_dir:
        raise ConfigError("--resume needs --out")

    def progress(done, total):
        log.info("%d/%d replicates", done, total)

    report = run_monte_carlo(cfg, resume=args.resume, threads=args.threads, progress=progress)
    for s in report.series:
        sd = "null" if s.emp_sd is None else f"{s.emp_sd:.4f}"
        theo = "-" if s.theo_sd is None else f"{s.theo_sd:.4f}"
        print(f"{s.label}: theta0={s.theta0:g} mean={s.mean:.4f} emp_sd={sd} theo_sd={theo}")
    print(f"replicates={cfg.n_replicates} failed={report.n_failed} runtime={report.runtime_s:.1f}s")
    return EXIT_OK


def cmd_fisher(args) -> int:
    d = _load_defaults(args)
    model = resolve_model(_pick(args, d, "model"))
    theta = np.atleast_1d(np.asarray(_pick(args, d, "theta", d.get("theta0")), dtype=float))
    eps = float(_pick(args, d, "eps"))
    grid = TimeGrid(float(_pick(args, d, "t_end", 1.0)), int(_pick(args, d, "n_steps", 1000)))
    info = fisher_information(model, theta, solve_limit_ode(model, theta, grid))
    _write_json(args.out, {
        "model": model.name,
        "theta": theta.tolist(),
        "eps": eps,
        "fisher": info.matrix.tolist(),
        "theoretical_sd": info.theoretical_sd(eps).tolist(),
    })
    return EXIT_OK


def cmd_validate(args) -> int:
    d = _load_defaults(args)
    report = validate_model(resolve_model(_pick(args, d, "model")))
    _write_json(args.out, report.to_dict())
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "mc": cmd_mc,
            "fisher": cmd_fisher, "validate": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteState, DegenerateNormalEquations, NonPositiveDefinite, MultiscaleError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
