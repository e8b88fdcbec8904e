"""Transistor-level match-line discharge: the ground truth behind the sigmoid model.

Every non-wildcard cell side is one NMOS pulling the precharged match line
down. The device follows the square law with channel-length modulation:

    v_ov <= 0          ->  0                                  (subthreshold)
    v_d  >= v_ov  > 0  ->  (KP/2)(W/L) v_ov^2 (1 + lam v_d)   (saturation)
    0 < v_d < v_ov     ->  KP (W/L)(v_ov - v_d/2) v_d (1 + lam v_d)

The line integrates dV/dt = -sum(I)/C_ML with a fixed explicit step. Sampling
V at t_sense and normalizing by the precharge voltage yields the row output
the behavioral model approximates.

Programming compensates the sense dynamics: a condition threshold T is
written as T - delta0, where delta0 is the gate overdrive that discharges the
line to half the precharge at t_sense. That centers the sensed transition on
T, the point the sigmoid model puts it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit

from .softtree import BehaviorParams, Condition


@dataclass(frozen=True)
class CircuitParams:
    kp: float = 1e-4          # A/V^2, transconductance KP
    w_over_l: float = 1.0
    lam: float = 0.1          # 1/V, channel-length modulation
    c_ml: float = 1e-12       # F, lumped match-line capacitance
    v_precharge: float = 1.0  # V
    t_sense: float = 2e-7     # s
    dt: float = 1e-10         # s, integration step
    leak: float = 0.0         # A, optional subthreshold leak per device

    def __post_init__(self):
        for name in ("kp", "w_over_l", "lam", "c_ml", "v_precharge",
                     "t_sense", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.leak < 0:
            raise ValueError("leak must be >= 0")
        if self.dt > self.t_sense / 100:
            raise ValueError("dt must be <= t_sense / 100")

    @property
    def beta(self) -> float:
        return self.kp * self.w_over_l


@dataclass(frozen=True)
class Trace:
    times: np.ndarray
    v_ml: np.ndarray

    def final(self) -> float:
        return float(self.v_ml[-1])


def device_current(v_ov: float, v_d: float, p: CircuitParams) -> float:
    """Drain current of one cell FET at gate overdrive v_ov, drain v_d."""
    if v_ov <= 0.0:
        return p.leak
    mod = 1.0 + p.lam * v_d
    if v_d >= v_ov:
        return 0.5 * p.beta * v_ov * v_ov * mod
    return p.beta * (v_ov - 0.5 * v_d) * v_d * mod


def _currents(v_ov_pos: np.ndarray, i_sat0: np.ndarray,
              v_d: np.ndarray, p: CircuitParams) -> np.ndarray:
    """Vectorized square law; v_ov_pos pre-clipped at 0, v_d column (R, 1)."""
    lin = p.beta * (v_ov_pos - 0.5 * v_d) * v_d
    i = np.where(v_d >= v_ov_pos, i_sat0, lin) * (1.0 + p.lam * v_d)
    if p.leak:
        i = i + p.leak * (v_ov_pos == 0.0)
    return i


def _integrate(v_ov: np.ndarray, p: CircuitParams,
               record: bool = False):
    """Euler integration of the shared-line ODE for a batch of rows.

    v_ov is (rows, devices), constant in time (gates are static during a
    search). Returns the final line voltages, or (times, voltages) history
    when record is set.
    """
    v_ov = np.atleast_2d(v_ov)
    steps = int(round(p.t_sense / p.dt))
    v_ov_pos = np.maximum(v_ov, 0.0)
    i_sat0 = 0.5 * p.beta * v_ov_pos * v_ov_pos
    v = np.full(v_ov.shape[0], p.v_precharge)
    scale = p.dt / p.c_ml
    hist = np.empty((steps + 1, len(v))) if record else None
    if record:
        hist[0] = v
    for s in range(steps):
        i = _currents(v_ov_pos, i_sat0, v[:, None], p)
        v = np.maximum(v - scale * i.sum(axis=1), 0.0)
        if record:
            hist[s + 1] = v
    if record:
        return np.arange(steps + 1) * p.dt, hist
    return v


def discharge_row(vth: np.ndarray, u: np.ndarray, p: CircuitParams) -> Trace:
    """Full transient of one row: device thresholds vth, gate voltages u."""
    vth = np.asarray(vth, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    if vth.shape != u.shape:
        raise ValueError("vth and u must have matching shapes")
    times, hist = _integrate((u - vth)[None, :], p, record=True)
    return Trace(times, hist[:, 0])


def sense(trace: Trace, t_sense: float) -> float:
    """Normalized line voltage at t_sense, linearly interpolated."""
    if not trace.times[0] <= t_sense <= trace.times[-1]:
        raise ValueError(
            f"t_sense {t_sense} outside simulated span "
            f"[{trace.times[0]}, {trace.times[-1]}]")
    v0 = trace.v_ml[0]
    return float(np.interp(t_sense, trace.times, trace.v_ml) / v0)


def sense_rows(vth: np.ndarray, u: np.ndarray, p: CircuitParams) -> np.ndarray:
    """Normalized sensed outputs for a batch of rows, (rows,).

    Rows and columns with no conducting device are skipped: a line with every
    device at or below threshold holds its precharge exactly.
    """
    v_ov = np.atleast_2d(u) - np.atleast_2d(vth)
    out = np.ones(v_ov.shape[0])
    if p.leak == 0.0:
        rows = np.flatnonzero((v_ov > 0.0).any(axis=1))
        if len(rows) == 0:
            return out
        sub = v_ov[rows]
        sub = sub[:, (sub > 0.0).any(axis=0)]
        out[rows] = _integrate(sub, p) / p.v_precharge
        return out
    return _integrate(v_ov, p) / p.v_precharge


def saturation_closed_form(v_ov: float, t, p: CircuitParams,
                           v0: float | None = None):
    """Line voltage under one device pinned in saturation.

    dV/dt = -(k'/C)(1 + lam V) solves to V = (V0 + 1/lam) exp(-lam k' t / C) - 1/lam
    with k' = (KP/2)(W/L) v_ov^2; valid while V >= v_ov.
    """
    if v0 is None:
        v0 = p.v_precharge
    kprime = 0.5 * p.beta * v_ov * v_ov
    return (v0 + 1.0 / p.lam) * np.exp(-p.lam * kprime * np.asarray(t)
                                       / p.c_ml) - 1.0 / p.lam


def t_sense_for_mismatch_level(p: CircuitParams, level: float = 0.1,
                               overdrive: float = 2.0) -> float:
    """Time for a single fully mismatched device to pull the line to level*V0.

    A sizing heuristic for picking t_sense; shorter times give harder
    boundaries, longer times softer ones. A coarse pass over a 50*t_sense
    span brackets the crossing, then a refined pass over just that window
    pins it down.
    """
    target = level * p.v_precharge
    span = p.t_sense * 50
    for _ in range(2):
        sim = CircuitParams(p.kp, p.w_over_l, p.lam, p.c_ml, p.v_precharge,
                            span, span / 20000, p.leak)
        times, hist = _integrate(np.array([[overdrive]]), sim, record=True)
        v = hist[:, 0]
        below = np.flatnonzero(v <= target)
        if len(below) == 0:
            raise ValueError("line never reaches the requested level; "
                             "increase the simulated span")
        j = int(below[0])
        # refined window with two coarse steps of margin: the coarse Euler
        # pass overshoots, so the true crossing sits at or after times[j]
        span = float(times[min(j + 2, len(times) - 1)]) if j > 0 \
            else float(times[1])
    frac = (v[j - 1] - target) / (v[j - 1] - v[j])
    return float(times[j - 1] + frac * (times[j] - times[j - 1]))


# -- write compensation and gain calibration ----------------------------------

@lru_cache(maxsize=16)
def calibrate_write_offset(p: CircuitParams, level: float = 0.5) -> float:
    """Gate overdrive delta0 that discharges the line to level*V0 at t_sense.

    Programming vth = T - delta0 centers the sensed transition of a stored
    condition on its intended threshold T.
    """
    lo, hi = 0.0, 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        sensed = float(sense_rows(np.array([[0.0]]), np.array([[mid]]), p)[0])
        if sensed > level:
            lo = mid           # too little overdrive, discharge too slow
        else:
            hi = mid
    return 0.5 * (lo + hi)


def program_conditions(conditions, p: CircuitParams, compensate: bool = True):
    """Device threshold/sign/feature arrays for one stored row.

    Less-than keeps the input sign (left device); greater-than sees the
    inverted input (right device) and stores the negated threshold. With
    compensation the write offset delta0 is subtracted from every device.
    """
    delta0 = calibrate_write_offset(p) if compensate else 0.0
    feat, sign, vth = [], [], []
    for c in conditions:
        f, op, t = _as_condition(c)
        feat.append(f)
        if op == "lt":
            sign.append(-1.0)
            vth.append(t - delta0)
        elif op == "gt":
            sign.append(1.0)
            vth.append(-t - delta0)
        else:
            raise ValueError(f"unknown condition op {op!r}")
    return (np.asarray(vth), np.asarray(sign),
            np.asarray(feat, dtype=np.int64))


def _as_condition(c):
    if isinstance(c, Condition):
        return c.feature, c.op, c.threshold
    f, op, t = c
    return int(f), op, float(t)


def row_sense_sweep(conditions, X: np.ndarray, p: CircuitParams,
                    compensate: bool = True) -> np.ndarray:
    """Circuit-sensed row output over a grid of input vectors, (grid,)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    vth, sign, feat = program_conditions(conditions, p, compensate)
    u = -sign[None, :] * X[:, feat]      # u_left = x, u_right = -x
    return sense_rows(np.broadcast_to(vth, u.shape), u, p)


# -- behavior fitting ----------------------------------------------------------

@dataclass(frozen=True)
class FitReport:
    r2: float
    rmse: float
    n_points: int
    product_form: bool


def _predict_eq(conditions, X, a, b, k, v0):
    n = len(conditions)
    p = np.empty((len(X), n))
    for i, c in enumerate(conditions):
        f, op, t = _as_condition(c)
        z = (t - X[:, f]) if op == "lt" else (X[:, f] - t)
        p[:, i] = expit(k * z)
    raw = a * p.prod(axis=1) + b * (p.sum(axis=1) - (n - 1) * v0)
    return np.clip(raw, 0.0, 1.0)


def fit_behavior(conditions, X: np.ndarray, sensed: np.ndarray,
                 v_ml_t0: float = 1.0,
                 force_product_form: bool | None = None):
    """Least-squares (a, b, k) of the clamped product/sum blend to sensed data.

    Returns (BehaviorParams, FitReport). Single-condition rows cannot separate
    a from b, so they fit the product form only; force_product_form overrides
    the choice either way.
    """
    conditions = list(conditions)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    sensed = np.asarray(sensed, dtype=np.float64).ravel()
    if len(X) < 50:
        raise ValueError("need at least 50 grid points for a stable fit")
    if np.ptp(sensed) < 1e-12:
        raise ValueError("all sensed outputs identical; fit is singular")
    product_only = (len(conditions) == 1 if force_product_form is None
                    else force_product_form)

    if product_only:
        def resid(theta):
            a, k = theta
            return _predict_eq(conditions, X, a, 0.0, k, v_ml_t0) - sensed
        sol = least_squares(resid, x0=[1.0, 10.0],
                            bounds=([0.0, 0.5], [2.0, 500.0]))
        a, b, k = sol.x[0], 0.0, sol.x[1]
    else:
        def resid(theta):
            a, b, k = theta
            return _predict_eq(conditions, X, a, b, k, v_ml_t0) - sensed
        sol = least_squares(resid, x0=[1.0, 0.5, 10.0],
                            bounds=([0.0, 0.0, 0.5], [2.0, 2.0, 500.0]))
        a, b, k = sol.x
    res = sol.fun
    ss_tot = float(((sensed - sensed.mean()) ** 2).sum())
    r2 = 1.0 - float((res ** 2).sum()) / ss_tot
    report = FitReport(r2, float(np.sqrt(np.mean(res ** 2))), len(sensed),
                       product_only)
    return BehaviorParams(float(a), float(b), float(k), v_ml_t0), report


def fit_row_behavior(conditions, p: CircuitParams,
                     grid_points: int = 12, compensate: bool = True,
                     force_product_form: bool | None = None):
    """Simulate a stored row over a full input grid and fit (a, b, k) to it.

    The grid spans [-1, 1] per distinct feature used by the row. Returns
    (BehaviorParams, FitReport, X, sensed).
    """
    conditions = list(conditions)
    feats = sorted({_as_condition(c)[0] for c in conditions})
    axes = [np.linspace(-1.0, 1.0, grid_points)] * len(feats)
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.zeros((mesh[0].size, max(feats) + 1))
    for f, m in zip(feats, mesh):
        X[:, f] = m.ravel()
    sensed = row_sense_sweep(conditions, X, p, compensate)
    # sensed outputs are normalized, so the model's precharge term is 1
    beh, report = fit_behavior(conditions, X, sensed, 1.0, force_product_form)
    return beh, report, X, sensed


@lru_cache(maxsize=16)
def calibrate_gain(p: CircuitParams) -> float:
    """Effective sigmoid gain k of a single compensated cell at t_sense."""
    X = np.linspace(-0.6, 0.6, 121)[:, None]
    sensed = row_sense_sweep([(0, "lt", 0.0)], X, p)
    beh, _ = fit_behavior([(0, "lt", 0.0)], X, sensed)
    return beh.k


# -- column scaling study ------------------------------------------------------

# deep-match row design for the scaling study: per-cell margins grow with
# log(row length) so phantom sigmoid tails stay bounded while short rows keep
# cells near enough to transition for variation events to register
_STUDY_MU0 = 0.32
_STUDY_GROWTH = 0.050
_STUDY_JITTER = 0.12


def column_scaling_study(n_cols, sigmas, trials: int, p: CircuitParams,
                         seed: int = 0) -> list[dict]:
    """|mean(circuit - model)| across trials for each (row length, sigma).

    Rows are all-matching less-than rows. Per trial, every device threshold
    gets an iid gaussian shift; the circuit senses the perturbed row while the
    model evaluates the product form (a=1, calibrated k) at the same shifted
    thresholds. The signed errors are averaged over trials, then reported in
    absolute value, alongside their spread.
    """
    k_ref = calibrate_gain(p)
    delta0 = calibrate_write_offset(p)
    results = []
    for n in n_cols:
        rng = np.random.default_rng([seed, int(n)])
        margins = (_STUDY_MU0 + _STUDY_GROWTH * math.log(max(n, 1))
                   + rng.uniform(0.0, _STUDY_JITTER, int(n)))
        x = rng.uniform(-1.0, np.minimum(1.0 - margins, 1.0))
        thr = x + margins            # all cells match with their margin
        for sigma in sigmas:
            srng = np.random.default_rng([seed, int(n), _sigma_key(sigma)])
            delta = srng.normal(0.0, sigma, (trials, int(n))) if sigma > 0 \
                else np.zeros((trials, int(n)))
            vth = (thr - delta0) + delta
            sensed = sense_rows(vth, np.broadcast_to(x, vth.shape), p)
            model = np.clip(
                expit(k_ref * ((thr + delta) - x)).prod(axis=1), 0.0, 1.0)
            err = sensed - model
            results.append({
                "n_cols": int(n), "sigma": float(sigma), "trials": trials,
                "mean_error": float(abs(err.mean())),
                "mean_abs_error": float(np.abs(err).mean()),
                "std_error": float(err.std(ddof=1)) if trials > 1 else 0.0,
            })
    return results


def _sigma_key(sigma: float) -> int:
    return int(round(sigma * 1e6))


# -- exports -------------------------------------------------------------------

def trace_to_csv(trace: Trace, path) -> None:
    import csv
    import pathlib
    with pathlib.Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "v_ml_volts"])
        for t, v in zip(trace.times, trace.v_ml):
            w.writerow([repr(float(t)), repr(float(v))])


def study_to_csv(rows: list[dict], path) -> None:
    import csv
    import pathlib
    with pathlib.Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["n_cols", "sigma", "trials", "mean_error",
                "mean_abs_error", "std_error"]
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])
