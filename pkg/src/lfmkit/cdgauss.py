"""Continuous-discrete Gaussian filtering and smoothing.

Prediction integrates the Gaussian moment ODEs

    dm/dt = E[f(x, t)]
    dP/dt = E[(x - m) f^T] + E[f (x - m)^T] + E[L Q L^T]

with classical RK4, taking all expectations with the spherical cubature rule
over N(m, P).  The update is cubature moment matching, and the smoother runs
the backward gain recursion on cross covariances

    dC/dt = C P^{-1} E[f (x - m)^T]^T

accumulated alongside the prediction.  A bootstrap particle filter is included
purely as a sampling-based cross-check of the Gaussian approximation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .quad import CubatureRule, PosdefError, chol_psd, cubature_points, sym_sum

__all__ = [
    "BootstrapResult",
    "DivergenceError",
    "FilterResult",
    "FilterStep",
    "GaussianState",
    "PredictStep",
    "SmootherResult",
    "bootstrap_pf",
    "filter",
    "log_marginal",
    "predict",
    "smooth",
    "update",
]

_LOG_2PI = math.log(2.0 * math.pi)


class DivergenceError(RuntimeError):
    """The Gaussian recursion lost a usable state (covariance or innovation broke down)."""


@dataclass
class GaussianState:
    """Time-stamped Gaussian state estimate."""

    t: float
    m: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.P = 0.5 * (P + P.T)

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    def copy(self) -> "GaussianState":
        return GaussianState(self.t, self.m.copy(), self.P.copy())


@dataclass
class PredictStep:
    """One prediction leg: prior at t_k, predicted at t_{k+1}^- and their cross covariance."""

    prior: GaussianState
    predicted: GaussianState
    C: np.ndarray | None


@dataclass
class FilterStep:
    """Per-grid-point filter record; measurement fields are None on skipped updates."""

    predict: PredictStep
    updated: GaussianState
    y: np.ndarray | None = None
    mu: np.ndarray | None = None
    S: np.ndarray | None = None
    loglik_inc: float | None = None

    @property
    def t(self) -> float:
        return self.updated.t

    @property
    def has_measurement(self) -> bool:
        return self.y is not None


@dataclass
class FilterResult:
    x0: GaussianState
    steps: list[FilterStep]
    loglik: float

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps])

    @property
    def means(self) -> np.ndarray:
        return np.array([s.updated.m for s in self.steps])

    @property
    def covs(self) -> np.ndarray:
        return np.array([s.updated.P for s in self.steps])

    def to_csv(self, path) -> None:
        write_moments_csv(path, self)

    def summary(self, diverged: bool = False) -> dict:
        return {"loglik": self.loglik, "n_steps": len(self.steps), "diverged": diverged}


@dataclass
class SmootherResult:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    gains: list[np.ndarray]

    def to_csv(self, path) -> None:
        write_moments_csv(path, self)


@dataclass
class BootstrapResult:
    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    loglik: float


def _moment_rhs(model, t, m, P, C, rule, gamma_const):
    """Right-hand side of the joint (m, P, C) moment ODEs."""
    L = chol_psd(P)
    X = m + rule.unit_points @ L.T
    fX = np.asarray(model.drift_a(X, t), dtype=float)
    dm = sym_sum(fX, rule.weights)
    dev = X - m
    B = sym_sum(fX[:, :, None] * dev[:, None, :], rule.weights)  # E[f (x-m)^T]
    if gamma_const is None:
        gamma = sym_sum(model.gamma(X, t), rule.weights)
    else:
        gamma = gamma_const
    dP = B + B.T + gamma
    if C is None:
        return dm, dP, None
    if not np.all(np.isfinite(B)):
        raise DivergenceError("prediction divergence: non-finite drift moments")
    dC = C @ scipy.linalg.cho_solve((L, True), B.T, check_finite=False)
    return dm, dP, dC


def _rk4_moments(model, t0, t1, m, P, C, substeps, rule, gamma_const):
    h = (t1 - t0) / substeps
    for i in range(substeps):
        t = t0 + i * h
        k1m, k1p, k1c = _moment_rhs(model, t, m, P, C, rule, gamma_const)
        k2m, k2p, k2c = _moment_rhs(
            model, t + 0.5 * h, m + 0.5 * h * k1m, P + 0.5 * h * k1p,
            None if C is None else C + 0.5 * h * k1c, rule, gamma_const)
        k3m, k3p, k3c = _moment_rhs(
            model, t + 0.5 * h, m + 0.5 * h * k2m, P + 0.5 * h * k2p,
            None if C is None else C + 0.5 * h * k2c, rule, gamma_const)
        k4m, k4p, k4c = _moment_rhs(
            model, t + h, m + h * k3m, P + h * k3p,
            None if C is None else C + h * k3c, rule, gamma_const)
        m = m + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        P = P + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        P = 0.5 * (P + P.T)
        if C is not None:
            C = C + (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(P))):
            raise DivergenceError(f"prediction divergence at t={t + h:.9g}")
    return m, P, C


def predict(
    model,
    state: GaussianState,
    t1: float,
    substeps: int = 10,
    rule: CubatureRule | None = None,
    with_cross_cov: bool = True,
) -> PredictStep:
    """Integrate the moment ODEs from ``state`` to time ``t1``.

    The cross covariance is initialized to P(t_k) at the start of the leg, so
    the result feeds the smoother gain directly.  ``t1 == state.t`` yields a
    trivial leg (needed when the first grid point carries a measurement at the
    prior's own time).
    """
    if t1 < state.t:
        raise ValueError(f"cannot predict backward: t1={t1} < state.t={state.t}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if rule is None:
        rule = cubature_points(state.dim)
    m = state.m.copy()
    P = state.P.copy()
    C = P.copy() if with_cross_cov else None
    if t1 > state.t:
        gamma_const = model.gamma_const
        try:
            with np.errstate(over="ignore", invalid="ignore", under="ignore"):
                m, P, C = _rk4_moments(
                    model, state.t, t1, m, P, C, substeps, rule, gamma_const)
        except PosdefError as exc:
            raise DivergenceError(f"prediction divergence near t={t1:.9g}: {exc}") from exc
    return PredictStep(prior=state, predicted=GaussianState(t1, m, P), C=C)


def update(state: GaussianState, meas, y, rule: CubatureRule | None = None):
    """Cubature moment-matching update; returns (posterior, loglik increment, mu, S).

    The innovation covariance includes the additive measurement noise,
    S = E[(h - mu)(h - mu)^T] + R, and the log-likelihood increment is the
    full Gaussian density log N(y | mu, S) including the 2-pi constant.
    """
    if rule is None:
        rule = cubature_points(state.dim)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    try:
        L = chol_psd(state.P)
    except PosdefError as exc:
        raise DivergenceError(f"update divergence at t={state.t:.9g}: {exc}") from exc
    X = state.m + rule.unit_points @ L.T
    hX = np.asarray(meas.h(X), dtype=float)
    if hX.ndim == 1:
        hX = hX[:, None]
    mu = sym_sum(hX, rule.weights)
    dev_h = hX - mu
    S = sym_sum(dev_h[:, :, None] * dev_h[:, None, :], rule.weights) + meas.R
    dev_x = X - state.m
    D = sym_sum(dev_x[:, :, None] * dev_h[:, None, :], rule.weights)
    try:
        Ls = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise DivergenceError(
            f"update divergence at t={state.t:.9g}: innovation covariance singular"
        ) from exc
    K = scipy.linalg.cho_solve((Ls, True), D.T).T
    z = y - mu
    m_new = state.m + K @ z
    P_new = state.P - K @ S @ K.T
    d = y.shape[0]
    alpha = scipy.linalg.cho_solve((Ls, True), z)
    loglik_inc = -0.5 * (d * _LOG_2PI + 2.0 * np.sum(np.log(np.diag(Ls))) + z @ alpha)
    if not np.isfinite(loglik_inc):
        raise DivergenceError(f"update divergence at t={state.t:.9g}: non-finite likelihood")
    return GaussianState(state.t, m_new, P_new), float(loglik_inc), mu, S


def filter(
    model,
    meas,
    data,
    x0: GaussianState,
    substeps: int = 10,
    rule: CubatureRule | None = None,
    with_cross_cov: bool = True,
) -> FilterResult:
    """Run the continuous-discrete Gaussian filter over ``data``.

    ``data`` is a sequence of (t_k, y_k) pairs with strictly increasing times
    at or after ``x0.t``; ``y_k = None`` marks a measurement-free grid point
    where the update is skipped (used to expose smoothed estimates between
    observations).
    """
    data = list(data)
    if rule is None:
        rule = cubature_points(x0.dim)
    t_prev = x0.t
    for k, (t, _) in enumerate(data):
        bound = x0.t if k == 0 else t_prev
        ok = t >= bound if k == 0 else t > bound
        if not ok:
            raise ValueError(
                f"data times must be strictly increasing and start at or after "
                f"the prior time; offending entry {k} at t={t}"
            )
        t_prev = t
    steps: list[FilterStep] = []
    state = x0
    loglik = 0.0
    for k, (t, y) in enumerate(data):
        try:
            pstep = predict(model, state, t, substeps=substeps, rule=rule,
                            with_cross_cov=with_cross_cov)
            if y is None:
                step = FilterStep(predict=pstep, updated=pstep.predicted)
            else:
                upd, inc, mu, S = update(pstep.predicted, meas, y, rule=rule)
                loglik += inc
                step = FilterStep(predict=pstep, updated=upd, y=np.atleast_1d(
                    np.asarray(y, dtype=float)), mu=mu, S=S, loglik_inc=inc)
        except DivergenceError as exc:
            raise DivergenceError(f"step {k}: {exc}") from exc
        steps.append(step)
        state = step.updated
    return FilterResult(x0=x0, steps=steps, loglik=loglik)


def _smoother_gain(C, P_pred):
    Lp = chol_psd(P_pred)
    return scipy.linalg.cho_solve((Lp, True), C.T).T


def smooth(
    model,
    filter_result: FilterResult,
    substeps: int = 10,
    rule: CubatureRule | None = None,
    times=None,
) -> SmootherResult:
    """Backward smoothing pass over a completed filter result.

    The gain for leg k is G = C_k(t_{k+1}) P^{-1}(t_{k+1}^-).  Optional
    ``times`` requests smoothed moments at additional instants inside the
    filter grid; those legs are re-integrated with ``model``/``substeps``.
    The final entry always equals the final filter entry exactly.
    """
    steps = filter_result.steps
    if not steps:
        raise ValueError("cannot smooth an empty filter result")
    n = len(steps)
    means = [None] * n
    covs = [None] * n
    gains: list[np.ndarray] = []
    means[-1] = steps[-1].updated.m
    covs[-1] = steps[-1].updated.P
    try:
        for k in range(n - 2, -1, -1):
            nxt = steps[k + 1].predict
            if nxt.C is None:
                raise ValueError("filter was run without cross covariances; "
                                 "rerun with with_cross_cov=True to smooth")
            G = _smoother_gain(nxt.C, nxt.predicted.P)
            means[k] = steps[k].updated.m + G @ (means[k + 1] - nxt.predicted.m)
            Pk = steps[k].updated.P + G @ (covs[k + 1] - nxt.predicted.P) @ G.T
            covs[k] = 0.5 * (Pk + Pk.T)
            gains.append(G)
    except PosdefError as exc:
        raise DivergenceError(f"smoother divergence: {exc}") from exc
    gains.reverse()
    out_t = [s.t for s in steps]
    out_m = list(means)
    out_p = list(covs)
    if times is not None:
        grid = np.array(out_t)
        for tau in times:
            idx = int(np.searchsorted(grid, tau))
            if idx < len(grid) and math.isclose(grid[idx], tau, rel_tol=0.0, abs_tol=1e-12):
                continue
            if idx == 0 or idx >= len(grid):
                raise ValueError(f"requested smoothing time {tau} outside the filter grid")
            start = steps[idx - 1].updated
            frac = max((tau - start.t) / (grid[idx] - start.t), 1e-12)
            sub1 = max(1, math.ceil(substeps * frac))
            sub2 = max(1, math.ceil(substeps * (1.0 - frac)))
            leg1 = predict(model, start, tau, substeps=sub1, rule=rule,
                           with_cross_cov=False)
            leg2 = predict(model, leg1.predicted, grid[idx], substeps=sub2, rule=rule,
                           with_cross_cov=True)
            G = _smoother_gain(leg2.C, leg2.predicted.P)
            m_tau = leg1.predicted.m + G @ (means[idx] - leg2.predicted.m)
            P_tau = leg1.predicted.P + G @ (covs[idx] - leg2.predicted.P) @ G.T
            out_t.append(tau)
            out_m.append(m_tau)
            out_p.append(0.5 * (P_tau + P_tau.T))
        order = np.argsort(out_t, kind="stable")
        out_t = [out_t[i] for i in order]
        out_m = [out_m[i] for i in order]
        out_p = [out_p[i] for i in order]
    return SmootherResult(times=np.array(out_t), means=np.array(out_m),
                          covs=np.array(out_p), gains=gains)


def log_marginal(model_builder, data, theta, substeps: int = 10,
                 rule: CubatureRule | None = None) -> float:
    """Log marginal likelihood of ``data`` under parameters ``theta``.

    ``model_builder(theta)`` must return (model, measurement model, prior
    state).  Filter divergence maps to -inf so optimizers and MCMC reject the
    point instead of crashing.
    """
    model, meas, x0 = model_builder(theta)
    try:
        result = filter(model, meas, data, x0, substeps=substeps, rule=rule,
                        with_cross_cov=False)
    except DivergenceError:
        return -math.inf
    return result.loglik


def bootstrap_pf(model, meas, data, x0: GaussianState, n_particles: int,
                 seed, substeps: int = 10) -> BootstrapResult:
    """Bootstrap particle filter used as a sampling-based validation oracle.

    Particles are propagated with the Euler-Maruyama simulator between
    measurements (the dynamic model is the only available importance
    distribution), weighted by the measurement likelihood, and systematically
    resampled at every measurement.  Deterministic given ``seed``.
    """
    from .ssm import em_ensemble

    if n_particles < 100:
        raise ValueError("need at least 100 particles")
    rng = np.random.default_rng(seed)
    L0 = chol_psd(x0.P)
    X = x0.m + rng.standard_normal((n_particles, x0.dim)) @ L0.T
    Lr = np.linalg.cholesky(np.atleast_2d(np.asarray(meas.R, dtype=float)))
    log_norm = meas.R.shape[0] * 0.5 * _LOG_2PI + np.sum(np.log(np.diag(Lr)))
    t_prev = x0.t
    times, means, covs = [], [], []
    loglik = 0.0
    for t, y in data:
        if t > t_prev:
            X = em_ensemble(model, X, t_prev, t, substeps, rng)
        t_prev = t
        if y is None:
            mean = X.mean(axis=0)
            dev = X - mean
            cov = dev.T @ dev / n_particles
        else:
            y = np.atleast_1d(np.asarray(y, dtype=float))
            hX = np.asarray(meas.h(X), dtype=float)
            if hX.ndim == 1:
                hX = hX[:, None]
            resid = y - hX
            z = scipy.linalg.solve_triangular(Lr, resid.T, lower=True)
            logw = -0.5 * np.sum(z * z, axis=0) - log_norm
            top = logw.max()
            if not np.isfinite(top):
                raise DivergenceError(f"particle weight underflow at t={t:.9g}")
            w = np.exp(logw - top)
            total = w.sum()
            if total <= 0.0 or not np.isfinite(total):
                raise DivergenceError(f"particle weight underflow at t={t:.9g}")
            loglik += top + math.log(total / n_particles)
            w /= total
            mean = w @ X
            dev = X - mean
            cov = (w[:, None] * dev).T @ dev
            positions = (rng.random() + np.arange(n_particles)) / n_particles
            idx = np.searchsorted(np.cumsum(w), positions)
            X = X[np.minimum(idx, n_particles - 1)]
        times.append(t)
        means.append(mean)
        covs.append(0.5 * (cov + cov.T))
    return BootstrapResult(times=np.array(times), means=np.array(means),
                           covs=np.array(covs), loglik=loglik)


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_moments_csv(path, result) -> None:
    """Write filter or smoother moments: t, m_*, diagP_* and, for filter
    results with measurements, y_*, mu_*, S_diag_* (blank on skipped steps)."""
    is_filter = isinstance(result, FilterResult)
    times = result.times
    means = result.means
    covs = result.covs
    dim = means.shape[1]
    header = ["t"] + [f"m_{i}" for i in range(dim)] + [f"diagP_{i}" for i in range(dim)]
    meas_dim = 0
    if is_filter:
        for s in result.steps:
            if s.has_measurement:
                meas_dim = s.y.shape[0]
                break
        if meas_dim:
            header += [f"y_{i}" for i in range(meas_dim)]
            header += [f"mu_{i}" for i in range(meas_dim)]
            header += [f"S_diag_{i}" for i in range(meas_dim)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(len(times)):
            row = [_fmt(times[k])]
            row += [_fmt(v) for v in means[k]]
            row += [_fmt(v) for v in np.diag(covs[k])]
            if is_filter and meas_dim:
                s = result.steps[k]
                if s.has_measurement:
                    row += [_fmt(v) for v in s.y]
                    row += [_fmt(v) for v in s.mu]
                    row += [_fmt(v) for v in np.diag(s.S)]
                else:
                    row += [""] * (3 * meas_dim)
            fh.write(",".join(row) + "\n")


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
