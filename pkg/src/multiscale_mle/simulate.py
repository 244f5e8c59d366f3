"""Euler-Maruyama simulation of the coupled slow/fast system."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from ._kernels import _fallback
from .errors import DiscretizationWarning, GridMismatch, NonFiniteState
from .model import EpsilonPair, MultiscaleModel
from .rng import stream

DT_OVER_DELTA_MAX = 0.1


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if int(self.n_steps) < 1 or int(self.n_steps) != self.n_steps:
            raise ValueError("n_steps must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.t_end
        return t


@dataclass
class Trajectory:
    grid: TimeGrid
    x_path: np.ndarray
    y_path: np.ndarray
    eps_pair: EpsilonPair
    seed: Optional[int] = None
    dw: Optional[np.ndarray] = None
    db: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    model_name: str = ""
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.x_path = np.asarray(self.x_path, dtype=float)
        self.y_path = np.asarray(self.y_path, dtype=float)
        if self.x_path.ndim == 1:
            self.x_path = self.x_path[:, None]
        if self.y_path.ndim == 1:
            self.y_path = self.y_path[:, None]
        n1 = self.grid.n_steps + 1
        if self.x_path.shape[0] != n1 or self.y_path.shape[0] != n1:
            raise GridMismatch(
                f"paths have {self.x_path.shape[0]} and {self.y_path.shape[0]} points, grid has {n1}"
            )
        for name in ("dw", "db"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.ndim == 1:
                    v = v[:, None]
                if v.shape[0] != self.grid.n_steps:
                    raise GridMismatch(f"{name} has {v.shape[0]} rows, expected {self.grid.n_steps}")
                setattr(self, name, v)

    @property
    def dim_slow(self) -> int:
        return self.x_path.shape[1]

    @property
    def dim_fast(self) -> int:
        return self.y_path.shape[1]

    # -- serialization -----------------------------------------------------

    def save(self, path) -> Path:
        """Write a compressed ``.npz`` container."""
        path = Path(path)
        arrays = {
            "t_end": np.float64(self.grid.t_end),
            "n_steps": np.int64(self.grid.n_steps),
            "x_path": self.x_path,
            "y_path": self.y_path,
            "eps": np.float64(self.eps_pair.eps),
            "delta": np.float64(self.eps_pair.delta),
            "model_name": np.str_(self.model_name),
        }
        if self.seed is not None:
            arrays["seed"] = np.uint64(self.seed)
        if self.theta is not None:
            arrays["theta"] = np.asarray(self.theta, dtype=float)
        if self.dw is not None:
            arrays["dw"] = self.dw
        if self.db is not None:
            arrays["db"] = self.db
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)
        return path

    @classmethod
    def load(cls, path) -> "Trajectory":
        with np.load(Path(path), allow_pickle=False) as z:
            grid = TimeGrid(float(z["t_end"]), int(z["n_steps"]))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                pair = EpsilonPair(float(z["eps"]), float(z["delta"]))
            return cls(
                grid=grid,
                x_path=z["x_path"],
                y_path=z["y_path"],
                eps_pair=pair,
                seed=int(z["seed"]) if "seed" in z else None,
                dw=z["dw"] if "dw" in z else None,
                db=z["db"] if "db" in z else None,
                theta=z["theta"] if "theta" in z else None,
                model_name=str(z["model_name"]),
            )

    def to_csv(self, path) -> Path:
        """CSV with a ``#`` metadata line, then columns t, x_*, y_*, [dW_*, dB_*].

        Noise columns are empty on the final row (there are n increments
        for n + 1 states).
        """
        path = Path(path)
        ds, df = self.dim_slow, self.dim_fast
        dwn = 0 if self.dw is None else self.dw.shape[1]
        dbn = 0 if self.db is None else self.db.shape[1]
        meta = (f"# dim_slow={ds} dim_fast={df} dim_w={dwn} dim_b={dbn} "
                f"eps={self.eps_pair.eps!r} delta={self.eps_pair.delta!r} "
                f"t_end={self.grid.t_end!r} n_steps={self.grid.n_steps} "
                f"seed={'' if self.seed is None else self.seed}")
        header = (["t"] + [f"x_{i}" for i in range(ds)] + [f"y_{i}" for i in range(df)]
                  + [f"dW_{i}" for i in range(dwn)] + [f"dB_{i}" for i in range(dbn)])
        cols = [self.grid.times[:, None], self.x_path, self.y_path]
        if dwn or dbn:
            noise = np.full((self.grid.n_steps + 1, dwn + dbn), np.nan)
            if dwn:
                noise[:-1, :dwn] = self.dw
            if dbn:
                noise[:-1, dwn:] = self.db
            cols.append(noise)
        data = np.hstack(cols)
        with open(path, "w", newline="") as fh:
            fh.write(meta + "\n")
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")
        # blank rather than "nan" for the missing final increments
        if dwn or dbn:
            text = path.read_text().replace(",nan", ",")
            path.write_text(text)
        return path

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        path = Path(path)
        with open(path, newline="") as fh:
            meta_line = fh.readline().lstrip("#").split()
            meta = dict(item.split("=", 1) for item in meta_line)
            header = next(csv.reader([fh.readline()]))
        raw = np.genfromtxt(path, delimiter=",", skip_header=2)
        raw = np.atleast_2d(raw)
        ds, df = int(meta["dim_slow"]), int(meta["dim_fast"])
        dwn, dbn = int(meta["dim_w"]), int(meta["dim_b"])
        if raw.shape[1] != len(header):
            raise GridMismatch("CSV column count does not match header")
        grid = TimeGrid(float(meta["t_end"]), int(meta["n_steps"]))
        x = raw[:, 1:1 + ds]
        y = raw[:, 1 + ds:1 + ds + df]
        dw = raw[:-1, 1 + ds + df:1 + ds + df + dwn] if dwn else None
        db = raw[:-1, 1 + ds + df + dwn:] if dbn else None
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pair = EpsilonPair(float(meta["eps"]), float(meta["delta"]))
        seed = meta.get("seed") or None
        return cls(grid, x, y, pair, seed=None if seed is None else int(seed), dw=dw, db=db)


def _check_ratio(grid: TimeGrid, eps: EpsilonPair) -> list:
    ratio = grid.dt / eps.delta
    if ratio > DT_OVER_DELTA_MAX:
        msg = f"dt/delta = {ratio:.3g} > {DT_OVER_DELTA_MAX}; Euler error is O(dt/delta)"
        warnings.warn(msg, DiscretizationWarning, stacklevel=3)
        return [msg]
    return []


def _euler_loop(model, theta, eps: EpsilonPair, dt, dw, db):
    """Generic Euler recursion for given increments; returns (x, y, k_fail)."""
    n = dw.shape[0]
    x = np.empty((n + 1, model.dim_slow))
    y = np.empty((n + 1, model.dim_fast))
    x[0] = model.x0
    y[0] = model.y0
    sqeps = math.sqrt(eps.eps)
    sqdelta = math.sqrt(eps.delta)
    delta = eps.delta
    for k in range(n):
        xk, yk = x[k], y[k]
        c = model.drift_slow(theta, xk, yk)
        sig = model.diffusion_slow(xk, yk)
        f = model.drift_fast(xk, yk)
        t1 = model.diffusion_fast_w(xk, yk)
        t2 = model.diffusion_fast_b(xk, yk)
        x[k + 1] = xk + c * dt + sqeps * (sig @ dw[k])
        y[k + 1] = yk + f * dt / delta + (t1 @ dw[k] + t2 @ db[k]) / sqdelta
        if not (np.all(np.isfinite(x[k + 1])) and np.all(np.isfinite(y[k + 1]))):
            return x, y, k + 1
    return x, y, -1


def euler_maruyama(model: MultiscaleModel, theta, eps: EpsilonPair, grid: TimeGrid,
                   seed: int, record_noise: bool = True,
                   stream_index: Optional[int] = None) -> Trajectory:
    """Simulate one path of the fast/slow system.

    Increments are drawn as ``stream(seed).standard_normal((n, dim_w + dim_b))
    * sqrt(dt)``, W columns first; models with a ``family`` spec run on the
    compiled kernel, which consumes the stream in the same order.  With
    ``stream_index`` the path uses replicate stream ``(seed, stream_index)``.

    Raises
    ------
    NonFiniteState
        If the state leaves the floating-point range.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (model.dim_param,):
        raise ValueError(f"theta must have length {model.dim_param}")
    notes = _check_ratio(grid, eps)
    rng = stream(seed, stream_index)
    n, dt = grid.n_steps, grid.dt

    if model.family is not None:
        x, y, dw, db, k_fail = _kernels.simulate_family(
            model.family.params(), float(theta[0]), model.x0[0], model.y0[0],
            eps.eps, eps.delta, dt, n, rng, bool(record_noise))
        x, y = x[:, None], y[:, None]
        dw = dw[:, None] if record_noise else None
        db = db[:, None] if record_noise else None
    else:
        z = rng.standard_normal((n, model.dim_w + model.dim_b))
        z *= math.sqrt(dt)
        dw, db = z[:, :model.dim_w], z[:, model.dim_w:]
        x, y, k_fail = _euler_loop(model, theta, eps, dt, dw, db)
        if not record_noise:
            dw = db = None
    if k_fail >= 0:
        raise NonFiniteState(f"non-finite state at step {k_fail}", step=k_fail)
    return Trajectory(grid, x, y, eps, seed=seed, dw=dw, db=db, theta=theta,
                      model_name=model.name, warnings=notes)


def replay(model: MultiscaleModel, theta, traj: Trajectory):
    """Re-run the Euler recursion on the increments recorded in ``traj``.

    Returns ``(x_path, y_path)``; for the same model and theta these equal
    the recorded paths bitwise.
    """
    if traj.dw is None or traj.db is None:
        raise ValueError("trajectory has no recorded increments")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if model.family is not None:
        x, y, k_fail = _fallback.family_loop(
            model.family.params(), float(theta[0]), model.x0[0], model.y0[0],
            traj.eps_pair.eps, traj.eps_pair.delta, traj.grid.dt,
            traj.dw[:, 0].tolist(), traj.db[:, 0].tolist())
        x, y = x[:, None], y[:, None]
    else:
        x, y, k_fail = _euler_loop(model, theta, traj.eps_pair, traj.grid.dt, traj.dw, traj.db)
    if k_fail >= 0:
        raise NonFiniteState(f"non-finite state at step {k_fail}", step=k_fail)
    return x, y


# ---------------------------------------------------------------------------
# frozen-x fast process (generator L_x, delta = 1)


def frozen_step(model: MultiscaleModel, x, y, dt, dw, db):
    """One Euler step of dY = f(x,Y)dt + tau1(x,Y)dW + tau2(x,Y)dB for a batch of chains."""
    f = model.drift_fast(x, y)
    t1 = model.diffusion_fast_w(x, y)
    t2 = model.diffusion_fast_b(x, y)
    return y + f * dt + (np.einsum("...ij,...j->...i", t1, dw)
                         + np.einsum("...ij,...j->...i", t2, db))


def iter_frozen_chains(model: MultiscaleModel, x_frozen, horizon: float, n_steps: int,
                       seed: int, n_chains: int = 1, block: int = 1024):
    """Yield ``(k, y_k)`` for k = 0..n_steps with y_k of shape (n_chains, dim_fast).

    Increments for a block of steps are drawn as one
    ``standard_normal((block, n_chains, dim_w + dim_b))`` call.
    """
    rng = stream(seed)
    dt = horizon / n_steps
    sq = math.sqrt(dt)
    w = model.dim_w
    x = np.broadcast_to(np.asarray(x_frozen, dtype=float), (n_chains, model.dim_slow))
    y = np.broadcast_to(np.asarray(model.y0, dtype=float), (n_chains, model.dim_fast)).copy()
    yield 0, y
    k = 0
    while k < n_steps:
        m = min(block, n_steps - k)
        z = rng.standard_normal((m, n_chains, w + model.dim_b)) * sq
        for j in range(m):
            y = frozen_step(model, x, y, dt, z[j, :, :w], z[j, :, w:])
            k += 1
            if not np.all(np.isfinite(y)):
                raise NonFiniteState(f"frozen fast process non-finite at step {k}", step=k)
            yield k, y


def simulate_frozen_fast(model: MultiscaleModel, x_frozen, horizon: float, n_steps: int,
                         seed: int) -> np.ndarray:
    """Path of the frozen-x fast process on [0, horizon], shape (n_steps + 1, dim_fast)."""
    out = np.empty((n_steps + 1, model.dim_fast))
    for k, y in iter_frozen_chains(model, x_frozen, horizon, n_steps, seed, 1):
        out[k] = y[0]
    return out
