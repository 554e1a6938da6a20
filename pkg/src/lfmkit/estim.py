"""Parameter estimation over the filter's marginal likelihood.

Derivative-free maximization (Nelder-Mead on an unconstrained reparametrization)
and random-walk Metropolis sampling with the negative log marginal likelihood
as energy.  Objectives are expected to return -inf on filter divergence so both
methods simply reject those points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

__all__ = [
    "McmcChain",
    "OptResult",
    "ParamSpace",
    "maximize",
    "rw_metropolis",
]


@dataclass(frozen=True)
class ParamSpace:
    """Named parameters with box bounds and per-parameter bijections.

    ``transforms[i]`` is 'log' for positive parameters (optimized as log theta)
    or 'identity'.  Bounds may be infinite on the open side.
    """

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    transforms: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        transforms = tuple(self.transforms)
        k = len(names)
        if not (lower.shape[0] == upper.shape[0] == len(transforms) == k):
            raise ValueError("names, bounds and transforms must have equal length")
        if np.any(lower >= upper):
            raise ValueError("lower bounds must be strictly below upper bounds")
        for nm, lo, tr in zip(names, lower, transforms):
            if tr not in ("log", "identity"):
                raise ValueError(f"unknown transform {tr!r} for parameter {nm}")
            if tr == "log" and lo < 0.0:
                raise ValueError(f"log-transformed parameter {nm} needs lower >= 0")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "transforms", transforms)

    @property
    def size(self) -> int:
        return len(self.names)

    def to_unconstrained(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        phi = theta.copy()
        for i, tr in enumerate(self.transforms):
            if tr == "log":
                phi[i] = math.log(theta[i])
        return phi

    def to_natural(self, phi) -> np.ndarray:
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        theta = phi.copy()
        for i, tr in enumerate(self.transforms):
            if tr == "log":
                theta[i] = math.exp(phi[i])
        return theta

    def contains(self, theta) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.atleast_1d(np.asarray(theta, dtype=float)),
                       self.lower, self.upper)


@dataclass
class OptResult:
    theta: np.ndarray
    value: float
    converged: bool
    on_boundary: bool
    n_evals: int
    best_trace: np.ndarray  # best objective value after each evaluation


def maximize(objective, space: ParamSpace, theta0, budget: int = 300,
             restarts: int = 3, jitter_scale: float = 0.3, seed: int = 0) -> OptResult:
    """Maximize ``objective`` over ``space`` with restarted Nelder-Mead.

    Runs on the unconstrained scale with out-of-bounds points scored -inf.
    Restarts start from ``theta0`` and from jittered copies of it.  When the
    evaluation budget runs out the best point seen so far is returned with
    ``converged=False``.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if not space.contains(theta0):
        raise ValueError("theta0 must lie inside the bounds")
    phi0 = space.to_unconstrained(theta0)
    rng = np.random.default_rng(seed)

    best = {"theta": theta0.copy(), "value": -math.inf}
    trace: list[float] = []
    n_evals = 0

    def negated(phi):
        nonlocal n_evals
        n_evals += 1
        theta = space.to_natural(phi)
        if not space.contains(theta):
            val = -math.inf
        else:
            val = float(objective(theta))
        if val > best["value"]:
            best["value"] = val
            best["theta"] = theta
        trace.append(best["value"])
        return -val

    any_success = False
    for r in range(max(1, restarts)):
        remaining = budget - n_evals
        if remaining <= space.size + 1:
            break
        start = phi0 if r == 0 else phi0 + jitter_scale * rng.standard_normal(space.size)
        res = scipy.optimize.minimize(
            negated, start, method="Nelder-Mead",
            options={"maxfev": remaining, "xatol": 1e-6, "fatol": 1e-9})
        any_success = any_success or bool(res.success)

    theta_star = space.clip(best["theta"])
    finite_lo = np.isfinite(space.lower)
    finite_hi = np.isfinite(space.upper)
    span = np.where(np.isfinite(space.upper - space.lower),
                    space.upper - space.lower, np.abs(theta_star) + 1.0)
    on_boundary = bool(
        np.any(finite_lo & (theta_star - space.lower <= 1e-9 * span))
        or np.any(finite_hi & (space.upper - theta_star <= 1e-9 * span)))
    converged = any_success and n_evals < budget
    return OptResult(theta=theta_star, value=best["value"], converged=converged,
                     on_boundary=on_boundary, n_evals=n_evals,
                     best_trace=np.array(trace))


@dataclass
class McmcChain:
    names: tuple[str, ...]
    samples: np.ndarray          # (n, k) natural scale
    samples_unconstrained: np.ndarray
    logposts: np.ndarray
    acceptance_rate: float
    seed: int
    burn_fraction: float = 0.05

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def post_burn(self) -> np.ndarray:
        return self.samples[int(self.burn_fraction * self.n_samples):]

    def post_burn_unconstrained(self) -> np.ndarray:
        return self.samples_unconstrained[int(self.burn_fraction * self.n_samples):]

    def summary(self) -> dict:
        kept = self.post_burn()
        out = {"acceptance_rate": self.acceptance_rate, "n_samples": self.n_samples,
               "burn_fraction": self.burn_fraction, "params": {}}
        for i, nm in enumerate(self.names):
            out["params"][nm] = {"mean": float(np.mean(kept[:, i])),
                                 "std": float(np.std(kept[:, i]))}
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(["iter", "logpost", *self.names]) + "\n")
            for i in range(self.n_samples):
                row = [str(i), "%.17g" % self.logposts[i]]
                row += ["%.17g" % v for v in self.samples[i]]
                fh.write(",".join(row) + "\n")

    def summary_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def rw_metropolis(logpost, space: ParamSpace, theta0, n_samples: int,
                  step_scales, seed: int) -> McmcChain:
    """Random-walk Metropolis on the unconstrained scale.

    Proposals are Gaussian with per-parameter scales; acceptance is
    min(1, exp(delta log posterior)), and -inf proposals (divergence or
    out-of-bounds) are always rejected.  Deterministic given ``seed``.
    """
    theta = np.atleast_1d(np.asarray(theta0, dtype=float))
    if not space.contains(theta):
        raise ValueError("theta0 must lie inside the bounds")
    lp = float(logpost(theta))
    if not math.isfinite(lp):
        raise ValueError("log posterior must be finite at theta0")
    step = np.broadcast_to(np.asarray(step_scales, dtype=float), (space.size,))
    phi = space.to_unconstrained(theta)
    rng = np.random.default_rng(seed)
    samples = np.empty((n_samples, space.size))
    samples_u = np.empty((n_samples, space.size))
    logposts = np.empty(n_samples)
    n_accept = 0
    for i in range(n_samples):
        phi_prop = phi + step * rng.standard_normal(space.size)
        theta_prop = space.to_natural(phi_prop)
        if space.contains(theta_prop):
            lp_prop = float(logpost(theta_prop))
        else:
            lp_prop = -math.inf
        if math.isfinite(lp_prop) and math.log(rng.random()) < lp_prop - lp:
            phi, theta, lp = phi_prop, theta_prop, lp_prop
            n_accept += 1
        samples[i] = theta
        samples_u[i] = phi
        logposts[i] = lp
    return McmcChain(names=space.names, samples=samples, samples_unconstrained=samples_u,
                     logposts=logposts, acceptance_rate=n_accept / n_samples, seed=seed)
