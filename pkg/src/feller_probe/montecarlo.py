"""Euler simulation of square-root SDEs with an accompanying density process.

Paths follow

    X_{t+h} = X_t + (a X_t + b) h + Sigma (sqrt|v(X_t)| * sqrt(h) Z),

exactly as written with |v| (no reflection or truncation), and carry

    log L_{t+h} = log L_t + phi_t . sqrt(h) Z - |phi_t|^2 h / 2,

with phi_t = sgn(v(X_t)) sqrt|v(X_t)| * lambda, or, for the stopped density,
the same integrand frozen once the first volatility factor has gone negative.
Each increment of L has mean one given the past, so E L_t = 1 holds for the
discrete scheme as well.

Paths are simulated in fixed blocks of ``block_size``; block ``i`` draws from
its own stream seeded by (master_seed, i), so results do not depend on how
many threads process the blocks.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import beta as beta_dist

from .certify import Certificate, Route, to_tilted_model
from .errors import InputError, NumericalError
from .model import SdeModel
from .odeexp import evaluate, solve_expectation

log = logging.getLogger(__name__)

THREADS_ENV = "FELLER_PROBE_THREADS"
OVERFLOW_LEVEL = 1e12
MAX_EXCLUDED_FRACTION = 1e-3
Z_PASS = 4.0


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    dt: float
    n_paths: int
    master_seed: int = 0
    scheme: str = "euler-abs"
    block_size: int = 8192

    def __post_init__(self) -> None:
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise InputError("horizon must be positive")
        if not (0 < self.dt <= self.horizon):
            raise InputError("dt must be in (0, horizon]")
        if self.n_paths < 1:
            raise InputError("n_paths must be >= 1")
        if self.scheme != "euler-abs":
            raise InputError(f"unknown scheme {self.scheme!r}")
        if self.block_size < 1:
            raise InputError("block_size must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def h(self) -> float:
        """Actual step: the horizon split into n_steps equal pieces."""
        return self.horizon / self.n_steps

    def grid_index(self, t: float) -> int:
        idx = int(round(t / self.h))
        if idx < 0 or idx > self.n_steps or abs(idx * self.h - t) > 1e-9 * max(1.0, t):
            raise InputError(f"time {t} is not on the simulation grid (h = {self.h})")
        return idx

    def to_dict(self) -> dict[str, Any]:
        return {
            "horizon": self.horizon,
            "dt": self.dt,
            "n_paths": self.n_paths,
            "master_seed": self.master_seed,
            "scheme": self.scheme,
            "block_size": self.block_size,
        }


@dataclass
class PathRecord:
    times: np.ndarray
    states: np.ndarray
    logL: np.ndarray
    tau_index: int | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "logL": self.logL.tolist(),
            "tau_index": self.tau_index,
        }


@dataclass
class PathSample:
    """Per-path values at the report times (excluded paths removed)."""

    times: np.ndarray
    states: np.ndarray  # (n, R, p)
    logL: np.ndarray  # (n, R)
    vol1: np.ndarray  # (n, R) first volatility factor
    tau_time: np.ndarray  # (n,) grid time of first V_1 < 0, inf if none
    n_excluded: int


def _estimate(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = values.shape[0]
    mean = values.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.inf, dtype=float)
    se = values.std(axis=0, ddof=1) / math.sqrt(n)
    return mean, se


@dataclass
class SimResult:
    times: np.ndarray
    mean_state: np.ndarray
    se_state: np.ndarray
    mean_L: np.ndarray
    se_L: np.ndarray
    frac_tau_before: np.ndarray
    se_tau_before: np.ndarray
    frac_V_negative: np.ndarray
    se_V_negative: np.ndarray
    n_paths: int
    n_excluded: int
    config: SimConfig
    lam: np.ndarray
    stopped: bool
    sample: PathSample = field(repr=False)
    paths: list[PathRecord] = field(default_factory=list, repr=False)

    @classmethod
    def from_sample(cls, sample: PathSample, cfg: SimConfig, lam: np.ndarray, stopped: bool,
                    paths: list[PathRecord]) -> "SimResult":
        mean_state, se_state = _estimate(sample.states)
        mean_L, se_L = _estimate(np.exp(sample.logL))
        tau_ind = (sample.tau_time[:, None] <= sample.times[None, :] + 1e-12).astype(float)
        neg_ind = (sample.vol1 < 0).astype(float)
        ft, st = _estimate(tau_ind)
        fv, sv = _estimate(neg_ind)
        return cls(
            times=sample.times,
            mean_state=mean_state, se_state=se_state,
            mean_L=mean_L, se_L=se_L,
            frac_tau_before=ft, se_tau_before=st,
            frac_V_negative=fv, se_V_negative=sv,
            n_paths=sample.states.shape[0], n_excluded=sample.n_excluded,
            config=cfg, lam=lam, stopped=stopped, sample=sample, paths=paths,
        )

    def at(self, t: float) -> int:
        hits = np.flatnonzero(np.abs(self.times - t) <= 1e-9 * max(1.0, t))
        if not hits.size:
            raise InputError(f"time {t} was not a report time")
        return int(hits[0])

    def count_V_negative(self, t: float) -> int:
        return int(np.sum(self.sample.vol1[:, self.at(t)] < 0))

    def count_tau_before(self, t: float) -> int:
        return int(np.sum(self.sample.tau_time <= self.times[self.at(t)] + 1e-12))

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "lambda": self.lam.tolist(),
            "stopped": self.stopped,
            "n_paths": self.n_paths,
            "n_excluded": self.n_excluded,
            "times": self.times.tolist(),
            "mean_state": self.mean_state.tolist(),
            "se_state": self.se_state.tolist(),
            "mean_L": self.mean_L.tolist(),
            "se_L": self.se_L.tolist(),
            "frac_tau_before": self.frac_tau_before.tolist(),
            "se_tau_before": self.se_tau_before.tolist(),
            "frac_V_negative": self.frac_V_negative.tolist(),
            "se_V_negative": self.se_V_negative.tolist(),
        }

    def csv_rows(self) -> list[tuple[float, float, float, float]]:
        """(t, mean V_1, SE, fraction V_1 < 0) per report time."""
        v_mean, v_se = _estimate(self.sample.vol1)
        return [
            (float(t), float(m), float(s), float(f))
            for t, m, s, f in zip(self.times, v_mean, v_se, self.frac_V_negative)
        ]


def thread_count(threads: int | None = None) -> int:
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "0")
        try:
            threads = int(raw)
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 0:
        raise InputError("thread count must be >= 0")
    return threads or (os.cpu_count() or 1)


def _block_rng(master_seed: int, block: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed) & (2**128 - 1), spawn_key=(block,))
    return np.random.Generator(np.random.PCG64(seq))


def _simulate_block(
    model: SdeModel,
    cfg: SimConfig,
    lam: np.ndarray,
    stopped: bool,
    report_idx: np.ndarray,
    block: int,
    n: int,
    n_record: int,
) -> dict[str, Any]:
    rng = _block_rng(cfg.master_seed, block)
    p = model.p
    h = cfg.h
    sqrt_h = math.sqrt(h)
    # state is kept as (p, n) so that every row operation is contiguous
    a, sigma, beta = model.a, model.sigma, model.beta
    b = model.b[:, None]
    alpha = model.alpha[:, None]
    lam_col = lam[:, None]
    tilt = bool(np.any(lam != 0.0))

    X = np.repeat(model.x0[:, None], n, axis=1)
    logL = np.zeros(n)
    tau = np.full(n, -1, dtype=np.int64)
    excluded = np.zeros(n, dtype=bool)
    frozen = np.zeros((p, n)) if stopped else None
    hit = np.zeros(n, dtype=bool)

    R = report_idx.size
    out_X = np.empty((n, R, p))
    out_L = np.empty((n, R))
    slot = {int(k): r for r, k in enumerate(report_idx)}
    rec_X = np.empty((n_record, cfg.n_steps + 1, p)) if n_record else None
    rec_L = np.empty((n_record, cfg.n_steps + 1)) if n_record else None

    def record(k: int) -> None:
        r = slot.get(k)
        if r is not None:
            out_X[:, r] = X.T
            out_L[:, r] = logL
        if n_record:
            rec_X[:, k] = X[:, :n_record].T
            rec_L[:, k] = logL[:n_record]

    record(0)
    for k in range(cfg.n_steps):
        v = alpha + beta @ X
        sq = np.sqrt(np.abs(v))
        dW = rng.standard_normal((p, n))
        dW *= sqrt_h
        if tilt:
            # sgn(v) sqrt|v| with sgn(0) = +1; the value at v = 0 is 0 either way
            phi = np.copysign(sq, v)
            phi *= lam_col
            if stopped and hit.any():
                phi = np.where(hit, frozen, phi)
            logL += (phi * (dW - 0.5 * h * phi)).sum(axis=0)
        dX = a @ X
        dX += b
        dX *= h
        sq *= dW
        X += dX
        X += sigma @ sq

        if not np.abs(X).max() <= OVERFLOW_LEVEL:  # also catches NaN
            bad = ~np.all(np.abs(X) <= OVERFLOW_LEVEL, axis=0)
            excluded |= bad
            X[:, bad] = model.x0[:, None]
            logL[bad] = 0.0
        v1 = alpha[0, 0] + beta[0] @ X
        new = (v1 < 0.0) & (tau < 0) & ~excluded
        if new.any():
            tau[new] = k + 1
            hit |= new
            if stopped:
                v_new = alpha + beta @ X[:, new]
                frozen[:, new] = np.sqrt(np.maximum(v_new, 0.0)) * lam_col
        record(k + 1)

    out = {
        "states": out_X,
        "logL": out_L,
        "tau": tau,
        "excluded": excluded,
    }
    if n_record:
        out["rec_X"] = rec_X
        out["rec_L"] = rec_L
    return out


def simulate(
    model: SdeModel,
    cfg: SimConfig,
    lam: Sequence[float] | None = None,
    stopped: bool = False,
    report_times: Sequence[float] | None = None,
    record_paths: int = 0,
    threads: int | None = None,
) -> SimResult:
    """Simulate ``cfg.n_paths`` Euler paths and summarize them at report times.

    Report times default to 10 equal intervals of the horizon and are
    snapped to the simulation grid. Paths leaving |x| <= 1e12 are dropped
    and counted; more than 0.1% dropped raises NumericalError.
    """
    lam_arr = np.zeros(model.p) if lam is None else np.asarray(lam, dtype=float)
    if lam_arr.shape != (model.p,):
        raise InputError(f"lambda must have {model.p} entries")
    if not np.all(np.isfinite(lam_arr)):
        raise InputError("lambda must be finite")
    if report_times is None:
        report_times = np.linspace(0.0, cfg.horizon, 11)
    idx = np.unique([cfg.grid_index(float(t)) for t in report_times])
    times = idx * cfg.h
    times[-1:] = np.where(idx[-1:] == cfg.n_steps, cfg.horizon, times[-1:])

    bs = cfg.block_size
    n_blocks = -(-cfg.n_paths // bs)
    sizes = [min(bs, cfg.n_paths - i * bs) for i in range(n_blocks)]
    n_record = min(record_paths, sizes[0])

    def run(i: int) -> dict[str, Any]:
        return _simulate_block(model, cfg, lam_arr, stopped, idx, i, sizes[i], n_record if i == 0 else 0)

    workers = min(thread_count(threads), n_blocks)
    if workers <= 1:
        blocks = [run(i) for i in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, range(n_blocks)))

    excluded = np.concatenate([blk["excluded"] for blk in blocks])
    keep = ~excluded
    n_excl = int(excluded.sum())
    if n_excl > MAX_EXCLUDED_FRACTION * cfg.n_paths:
        raise NumericalError(
            f"{n_excl} of {cfg.n_paths} paths overflowed |x| > {OVERFLOW_LEVEL:g}; results would be biased"
        )
    if n_excl:
        log.warning("excluded %d overflowing paths", n_excl)

    states = np.concatenate([blk["states"] for blk in blocks])[keep]
    logL = np.concatenate([blk["logL"] for blk in blocks])[keep]
    tau = np.concatenate([blk["tau"] for blk in blocks])[keep]
    vol1 = model.alpha[0] + states @ model.beta[0]
    tau_time = np.where(tau >= 0, tau * cfg.h, np.inf)
    sample = PathSample(times=times, states=states, logL=logL, vol1=vol1, tau_time=tau_time, n_excluded=n_excl)

    paths: list[PathRecord] = []
    if n_record:
        grid = np.arange(cfg.n_steps + 1) * cfg.h
        t0 = blocks[0]["tau"][:n_record]
        for j in range(n_record):
            paths.append(
                PathRecord(
                    times=grid,
                    states=blocks[0]["rec_X"][j],
                    logL=blocks[0]["rec_L"][j],
                    tau_index=int(t0[j]) if t0[j] >= 0 else None,
                )
            )
    return SimResult.from_sample(sample, cfg, lam_arr, stopped, paths)


# -- statistics --------------------------------------------------------------


def clopper_pearson_lower(k: int, n: int, confidence: float = 0.99) -> float:
    """One-sided lower confidence bound for a binomial proportion."""
    if k <= 0:
        return 0.0
    return float(beta_dist.ppf(1.0 - confidence, k, n - k + 1))


def _z(diff: float, se: float) -> float:
    if diff == 0.0:
        return 0.0
    return abs(diff) / se if se > 0 else math.inf


def euler_mean(a, b, x0, h: float, n_steps: int) -> np.ndarray:
    """Mean of the Euler scheme: m_{k+1} = m_k + (a m_k + b) h."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.asarray(x0, dtype=float).copy()
    step = np.eye(b.size) + h * a
    for _ in range(n_steps):
        m = step @ m + h * b
    return m


def martingale_check(
    model: SdeModel,
    cfg: SimConfig,
    lam: Sequence[float],
    stopped: bool = False,
    threads: int | None = None,
) -> dict[str, Any]:
    """z-scores of the sample mean of L at T/4, T/2 and T against 1."""
    T = cfg.horizon
    checks = (0.25 * T, 0.5 * T, T)
    res = simulate(model, cfg, lam, stopped=stopped, report_times=checks, threads=threads)
    rows = []
    for t in checks:
        r = res.at(t)
        m, se = float(res.mean_L[r]), float(res.se_L[r])
        z = _z(m - 1.0, se)
        rows.append({"t": float(res.times[r]), "mean_L": m, "se": se, "z": z, "pass": z < Z_PASS})
    return {
        "lambda": list(map(float, res.lam)),
        "stopped": stopped,
        "n_paths": res.n_paths,
        "n_excluded": res.n_excluded,
        "checks": rows,
        "pass": all(r["pass"] for r in rows),
    }


def tilted_model(model: SdeModel, lam: Sequence[float]) -> SdeModel:
    """Drift under the tilted measure: a + Sigma diag(lam) beta, b + Sigma (lam * alpha)."""
    lam = np.asarray(lam, dtype=float)
    return model.replace(
        a=model.a + model.sigma @ np.diag(lam) @ model.beta,
        b=model.b + model.sigma @ (lam * model.alpha),
    )


def default_functionals(p: int) -> dict[str, Callable[[PathSample, int], np.ndarray]]:
    fs: dict[str, Callable[[PathSample, int], np.ndarray]] = {
        "tanh(V_T)": lambda s, r: np.tanh(s.vol1[:, r]),
        "1[V_T<0]": lambda s, r: (s.vol1[:, r] < 0).astype(float),
    }
    if p >= 2:
        fs["tanh(Y_T)"] = lambda s, r: np.tanh(s.states[:, r, 1])
    return fs


def girsanov_consistency(
    model: SdeModel,
    cfg: SimConfig,
    lam: Sequence[float],
    threads: int | None = None,
) -> dict[str, Any]:
    """Compare E_P[f L_T] on the original model with E_Q[f] on the tilted one.

    The two runs use different seeds, so their standard errors combine in
    quadrature.
    """
    T = cfg.horizon
    p_run = simulate(model, cfg, lam, report_times=[T], threads=threads)
    q_cfg = SimConfig(cfg.horizon, cfg.dt, cfg.n_paths, cfg.master_seed + 1, cfg.scheme, cfg.block_size)
    q_run = simulate(tilted_model(model, lam), q_cfg, None, report_times=[T], threads=threads)
    rP, rQ = p_run.at(T), q_run.at(T)
    L = np.exp(p_run.sample.logL[:, rP])
    rows = []
    for name, f in default_functionals(model.p).items():
        mp, sp = _estimate(f(p_run.sample, rP) * L)
        mq, sq = _estimate(f(q_run.sample, rQ))
        comb = math.sqrt(float(sp) ** 2 + float(sq) ** 2)
        diff = float(mp - mq)
        z = _z(diff, comb)
        rows.append({
            "functional": name,
            "weighted_P": float(mp), "se_P": float(sp),
            "tilted_Q": float(mq), "se_Q": float(sq),
            "z": z, "pass": z < Z_PASS,
        })
    return {
        "lambda": list(map(float, np.asarray(lam, dtype=float))),
        "n_paths": p_run.n_paths,
        "functionals": rows,
        "pass": all(r["pass"] for r in rows),
    }


def negativity_experiment(
    model: SdeModel,
    cert: Certificate,
    cfg: SimConfig,
    threads: int | None = None,
    confidence: float = 0.99,
) -> dict[str, Any]:
    """Monte Carlo evidence that the untilted model goes negative by t0.

    For independent volatilities the statistic is P(V_{t0} < 0); for
    proportional ones it is P(tau <= t0) with tau the first grid time at
    which V_1 < 0. The tilted model is simulated too, and its sample mean of
    V_{t0} is set against the closed-form tilted expectation and the exact
    mean of the Euler recursion.
    """
    t0 = cert.t0
    if t0 > cfg.horizon + 1e-12:
        raise InputError("t0 exceeds the simulation horizon")
    base = simulate(model, cfg, None, report_times=[t0], threads=threads)
    if cert.route is Route.INDEPENDENT_VOLS:
        statistic, k = "P(V_t0<0)", base.count_V_negative(t0)
    else:
        statistic, k = "P(tau<=t0)", base.count_tau_before(t0)
    n = base.n_paths
    lcb = clopper_pearson_lower(k, n, confidence)

    tilted = to_tilted_model(model, cert)
    t_cfg = SimConfig(cfg.horizon, cfg.dt, cfg.n_paths, cfg.master_seed + 1, cfg.scheme, cfg.block_size)
    tilt_run = simulate(tilted, t_cfg, None, report_times=[t0], threads=threads)
    r = tilt_run.at(t0)
    v_mean, v_se = _estimate(tilt_run.sample.vol1[:, r])
    ode = float(evaluate(solve_expectation(tilted.a, tilted.b, *tilted.x0), t0))
    euler = float(euler_mean(tilted.a, tilted.b, tilted.x0, t_cfg.h, t_cfg.grid_index(t0))[0])
    return {
        "route": cert.route.value,
        "t0": t0,
        "statistic": statistic,
        "count": k,
        "n_paths": n,
        "estimate": k / n,
        "lower_bound": lcb,
        "confidence": confidence,
        "pass": lcb > 0,
        "tilted": {
            "mean_V_t0": float(v_mean),
            "se": float(v_se),
            "ode_value": ode,
            "euler_mean": euler,
            "z_vs_ode": _z(float(v_mean) - ode, float(v_se)),
            "z_vs_euler": _z(float(v_mean) - euler, float(v_se)),
        },
    }


def control_experiment(model: SdeModel, cfg: SimConfig, t: float, threads: int | None = None) -> dict[str, Any]:
    """Negative-volatility counts for a model expected to stay non-negative."""
    res = simulate(model, cfg, None, report_times=[t], threads=threads)
    kv = res.count_V_negative(t)
    kt = res.count_tau_before(t)
    return {
        "t": t,
        "n_paths": res.n_paths,
        "count_V_negative": kv,
        "count_tau_before": kt,
        "upper_bound_99": float(beta_dist.ppf(0.99, kv + 1, res.n_paths - kv)) if kv < res.n_paths else 1.0,
        "pass": kv == 0,
    }
