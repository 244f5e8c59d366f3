import csv
import json

import numpy as np
import pytest

from multiscale_mle import NonFiniteState, experiment
from multiscale_mle import ConfigError, ExperimentConfig, emit_report, run_monte_carlo
from multiscale_mle.experiment import SUMMARY_COLUMNS, MonteCarloAborted


def cfg(tmp_path=None, **kw):
    base = dict(model="sin-ou-corr", theta0=[1.0], eps=0.1, delta=1e-2, n_steps=2000, n_replicates=40,
                master_seed=3, estimators=["mle", "quasi"])
    base.update(kw)
    if tmp_path is not None:
        base["output_dir"] = str(tmp_path)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(n_replicates=0)
    with pytest.raises(ConfigError):
        cfg(ci_levels=[0.5, 1.0])
    with pytest.raises(ConfigError):
        cfg(estimators=["bayes"])
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"model": "x", "theta0": [1], "eps": 0.1, "delta": 1e-3, "typo": 1})
    assert cfg().estimators == ["mle", "quasi_mle"]


def test_report_invariants(tmp_path):
    rep = run_monte_carlo(cfg(tmp_path))
    m = rep.get("mle")
    vals = np.array(m.values)
    assert m.mean == float(np.mean(vals))
    assert m.emp_sd == float(np.std(vals, ddof=1))
    assert sum(m.hist_counts) == 40
    assert len(m.hist_counts) == 40 and len(m.hist_edges) == 41
    z = 1.959963984540054
    assert m.ci[0.95][0] == pytest.approx(m.mean - z * m.emp_sd)
    assert rep.get("quasi_mle").theo_sd is None and m.theo_sd > 0
    # normal density samples span +/- 5 SD and integrate to about 1
    x, pdf = np.array(m.density_x), np.array(m.density_pdf)
    assert x[0] == pytest.approx(1 - 5 * m.theo_sd) and x[-1] == pytest.approx(1 + 5 * m.theo_sd)
    assert np.trapezoid(pdf, x) == pytest.approx(1.0, abs=0.01)


def test_emitted_files(tmp_path):
    run_monte_carlo(cfg(tmp_path))
    rows = list(csv.reader(open(tmp_path / "summary.csv")))
    assert rows[0] == SUMMARY_COLUMNS
    assert [r[0] for r in rows[1:]] == ["mle", "quasi_mle"]
    assert rows[2][-1] == ""  # no theoretical SD for the quasi estimator
    est = list(csv.reader(open(tmp_path / "estimates.csv")))
    assert est[0] == ["replicate", "estimator", "value"] and len(est) == 1 + 80
    hist = list(csv.reader(open(tmp_path / "hist.csv")))
    assert hist[0] == ["bin_lo", "bin_hi", "count", "theo_density_at_midpoint"]
    assert sum(int(r[2]) for r in hist[1:]) == 40
    assert (tmp_path / "hist_quasi_mle.csv").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["master_seed"] == 3 and report["n_failed"] == 0


def test_histogram_density_normalized(tmp_path):
    rep = run_monte_carlo(cfg(tmp_path, n_replicates=200, estimators=["mle"]))
    m = rep.get("mle")
    edges = np.array(m.hist_edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    dens = np.array(m.hist_density)
    # restrict to +/- 5 theoretical SD
    keep = np.abs(mids - 1.0) <= 5 * m.theo_sd
    total = float(np.sum(dens[keep] * np.diff(edges)[keep]))
    covered = (edges[0] <= 1 - 4 * m.theo_sd) and (edges[-1] >= 1 + 4 * m.theo_sd)
    if covered:
        assert total == pytest.approx(1.0, abs=0.01)


def test_single_replicate(tmp_path):
    rep = run_monte_carlo(cfg(tmp_path, n_replicates=1))
    m = rep.get("mle")
    assert m.mean == m.values[0] and m.emp_sd is None and m.ci[0.95] is None
    row = list(csv.reader(open(tmp_path / "summary.csv")))[1]
    assert row[5] == "" and row[6] == ""
    assert json.loads((tmp_path / "report.json").read_text())["series"][0]["emp_sd"] is None


def test_deterministic_across_threads(tmp_path):
    run_monte_carlo(cfg(tmp_path / "a", chunk_size=3), threads=1)
    run_monte_carlo(cfg(tmp_path / "b", chunk_size=7), threads=3)
    a = (tmp_path / "a" / "estimates.csv").read_bytes()
    assert a == (tmp_path / "b" / "estimates.csv").read_bytes()


def test_generic_path_matches_family_path(tmp_path):
    fast = run_monte_carlo(cfg(n_replicates=5))
    slow = run_monte_carlo(cfg(n_replicates=5, model="custom_models:generic", theta0=[0.5, -0.2],
                                    fisher_steps=2, invariant_steps=5000))
    assert fast.backend != "numpy" and slow.backend == "numpy"
    assert len(slow.series) == 4 and slow.series[0].label == "mle[0]"
    # the family fast path equals per-path estimation on the same streams
    from multiscale_mle import EpsilonPair, TimeGrid, euler_maruyama, get_model, mle
    model = get_model("sin-ou-corr")
    for i in range(5):
        traj = euler_maruyama(model, [1.0], EpsilonPair(0.1, 1e-2), TimeGrid(1.0, 2000), 3, stream_index=i)
        assert mle(model, traj).theta_hat[0] == pytest.approx(fast.get("mle").values[i], rel=1e-12)


def test_resume(tmp_path):
    full = run_monte_carlo(cfg(tmp_path / "full"))
    part_dir = tmp_path / "part"
    run_monte_carlo(cfg(part_dir, n_replicates=15))
    lines_before = (part_dir / "replicates.jsonl").read_text().count("\n")
    resumed = run_monte_carlo(cfg(part_dir), resume=True)
    lines_after = (part_dir / "replicates.jsonl").read_text().count("\n")
    assert lines_before == 15 and lines_after == 40
    assert resumed.get("mle").mean == full.get("mle").mean
    assert resumed.get("quasi_mle").emp_sd == full.get("quasi_mle").emp_sd
    assert (part_dir / "estimates.csv").read_bytes() == (tmp_path / "full" / "estimates.csv").read_bytes()
    with pytest.raises(ConfigError):
        run_monte_carlo(cfg(part_dir, eps=0.05), resume=True)


def test_resume_older_run_config(tmp_path):
    run_monte_carlo(cfg(tmp_path, n_replicates=10))
    saved = json.loads((tmp_path / "run_config.json").read_text())
    saved.pop("invariant_steps")
    (tmp_path / "run_config.json").write_text(json.dumps(saved))
    rep = run_monte_carlo(cfg(tmp_path, n_replicates=12), resume=True)
    assert rep.n_completed == 12
    with pytest.raises(ConfigError):
        run_monte_carlo(cfg(tmp_path, invariant_steps=1000), resume=True)


def test_abort_on_failures():
    with pytest.raises(MonteCarloAborted):
        run_monte_carlo(cfg(model="custom_models:exploding_model", theta0=[5.0, 0.0], n_replicates=4,
                            delta=0.1, n_steps=200, t_end=10.0))


def test_failures_recorded_not_fatal(monkeypatch):
    real = experiment.euler_maruyama

    def flaky(*args, stream_index=None, **kw):
        if stream_index == 7:
            raise NonFiniteState("forced", step=1)
        return real(*args, stream_index=stream_index, **kw)

    monkeypatch.setattr(experiment, "euler_maruyama", flaky)
    rep = run_monte_carlo(cfg(model="custom_models:generic", theta0=[0.5, -0.2], n_replicates=100, n_steps=200,
                              fisher_steps=2, invariant_steps=2000, estimators=["quasi"]))
    assert rep.n_failed == 1 and rep.failures == [{"replicate": 7, "error": "NonFiniteState"}]
    s = rep.series[0]
    assert s.values[7] is None and sum(s.hist_counts) == 99
    assert s.mean == float(np.mean([v for v in s.values if v is not None]))


def test_emit_report_io_error(tmp_path):
    rep = run_monte_carlo(cfg(n_replicates=3))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(rep, blocker / "sub")


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": "sin-ou-indep", "theta0": 2, "eps": 0.1, "delta": 1e-3}))
    c = ExperimentConfig.load(path)
    assert c.theta0 == [2.0] and c.n_steps == 1_000_000 and c.n_replicates == 2000
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)
