"""Transcription-factor ODE model: gene expression levels driven by latent
forces through non-linear link functions,

    dx_j/dt = B_j + sum_r S_{j,r} g(u_r(t)) - D_j x_j(t).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..ssm import MeasurementModel, MechanisticModel

__all__ = ["LINKS", "TfParams", "mechanistic", "measurement", "sample_params",
           "tf_drift", "tf_link"]

LINKS = ("saturation", "repression", "exponential")

# exp() argument cap: keeps the moment ODEs finite when the force posterior
# wanders far positive; within the data range of the experiments the clamp
# never binds.
EXP_CLAMP = 30.0


@dataclass(frozen=True)
class TfParams:
    """Per-gene rates and the shared link non-linearity.

    ``init_levels`` are the initial expression levels x_j(0).
    """

    basal: np.ndarray        # B_j, 1/time
    decay: np.ndarray        # D_j, 1/time
    sensitivity: np.ndarray  # S_{j,r}
    init_levels: np.ndarray  # A_j = x_j(0)
    link: str
    gamma: float = 1.0

    def __post_init__(self):
        basal = np.atleast_1d(np.asarray(self.basal, dtype=float))
        decay = np.atleast_1d(np.asarray(self.decay, dtype=float))
        sens = np.atleast_2d(np.asarray(self.sensitivity, dtype=float))
        init = np.atleast_1d(np.asarray(self.init_levels, dtype=float))
        n = basal.shape[0]
        if decay.shape[0] != n or init.shape[0] != n or sens.shape[0] != n:
            raise ValueError("per-gene parameter lengths disagree")
        if np.any(decay <= 0.0):
            raise ValueError("decay rates must be > 0")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}; choose from {LINKS}")
        if self.link in ("saturation", "repression") and self.gamma <= 0.0:
            raise ValueError("gamma must be > 0 for saturation/repression links")
        for a in (basal, decay, sens, init):
            a.setflags(write=False)
        object.__setattr__(self, "basal", basal)
        object.__setattr__(self, "decay", decay)
        object.__setattr__(self, "sensitivity", sens)
        object.__setattr__(self, "init_levels", init)

    @property
    def n_genes(self) -> int:
        return self.basal.shape[0]

    @property
    def n_forces(self) -> int:
        return self.sensitivity.shape[1]


def tf_link(link: str, gamma: float, u):
    """Link non-linearity g(u): saturation e^u/(gamma+e^u), repression
    1/(gamma+e^u), or exponential e^u (clamped at u = 30)."""
    u = np.asarray(u, dtype=float)
    if link == "saturation":
        # 1/(1 + gamma e^-u) for u >= 0, e^u/(gamma + e^u) below: overflow-safe.
        out = np.empty_like(u)
        pos = u >= 0.0
        out[pos] = 1.0 / (1.0 + gamma * np.exp(-u[pos]))
        eu = np.exp(u[~pos])
        out[~pos] = eu / (gamma + eu)
        return out
    if link == "repression":
        out = np.empty_like(u)
        pos = u >= 0.0
        emu = np.exp(-u[pos])
        out[pos] = emu / (gamma * emu + 1.0)
        out[~pos] = 1.0 / (gamma + np.exp(u[~pos]))
        return out
    if link == "exponential":
        if np.any(u > EXP_CLAMP):
            warnings.warn(
                f"exponential link input clamped at {EXP_CLAMP}", RuntimeWarning)
        return np.exp(np.minimum(u, EXP_CLAMP))
    raise ValueError(f"unknown link {link!r}; choose from {LINKS}")


def tf_drift(params: TfParams, x: np.ndarray, u: np.ndarray, t: float) -> np.ndarray:
    """dx_j/dt = B_j + sum_r S_{j,r} g(u_r) - D_j x_j, batched over rows."""
    g = tf_link(params.link, params.gamma, u)
    return params.basal + g @ params.sensitivity.T - params.decay * x


def mechanistic(params: TfParams) -> MechanisticModel:
    return MechanisticModel(
        dim_x=params.n_genes,
        n_forces=params.n_forces,
        drift=lambda x, u, t: tf_drift(params, x, u, t),
    )


def measurement(params: TfParams, noise_std: float) -> MeasurementModel:
    n = params.n_genes
    return MeasurementModel(h=lambda X: X[:, :n], R=noise_std ** 2 * np.eye(n))


def sample_params(rng: np.random.Generator, n_genes: int, link: str,
                  gamma: float, n_forces: int = 1) -> TfParams:
    """Random per-gene parameters: B ~ U(0, 0.1), D ~ U(0, 2), A ~ U(-0.1, 0.1),
    S ~ U(0, 1)."""
    return TfParams(
        basal=rng.uniform(0.0, 0.1, n_genes),
        decay=rng.uniform(0.0, 2.0, n_genes),
        sensitivity=rng.uniform(0.0, 1.0, (n_genes, n_forces)),
        init_levels=rng.uniform(-0.1, 0.1, n_genes),
        link=link,
        gamma=gamma,
    )
