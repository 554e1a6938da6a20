"""Ballistic target on reentry, one-dimensional: altitude r and fall speed v with

    dr = -v dt
    dv = (-alpha exp(-gamma_air r) v^2 + g + u(t)) dt + q_v dbeta_v

observed through the range to a fixed sensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ssm import MeasurementModel, MechanisticModel

__all__ = ["BallisticParams", "ballistic_drift", "drag", "mechanistic",
           "measurement", "range_measurement"]


@dataclass(frozen=True)
class BallisticParams:
    alpha: float = 4.49e-4       # drag coefficient, 1/m
    gamma_air: float = 1.49e-4   # air-density decay, 1/m
    g: float = 9.8               # m/s^2
    q_r: float = 50.0            # position dispersion, m/sqrt(s)
    q_v: float = 10.0            # velocity dispersion, (m/s)/sqrt(s)
    sensor_x: float = 30000.0    # m
    sensor_y: float = 30.0       # m
    sigma_n: float = 30.0        # range noise std, m

    def __post_init__(self):
        if self.alpha < 0.0 or self.gamma_air < 0.0:
            raise ValueError("drag parameters must be >= 0")


def drag(params: BallisticParams, r, v):
    """Drag deceleration -alpha exp(-gamma_air r) v^2."""
    return -params.alpha * np.exp(-params.gamma_air * np.asarray(r)) * np.asarray(v) ** 2


def ballistic_drift(params: BallisticParams, x: np.ndarray, u: np.ndarray,
                    t: float) -> np.ndarray:
    """Rows of (dr/dt, dv/dt) for batched states x = (r, v)."""
    r = x[:, 0]
    v = x[:, 1]
    dv = drag(params, r, v) + params.g + u[:, 0]
    return np.stack([-v, dv], axis=1)


def range_measurement(params: BallisticParams, r):
    """Distance from the sensor to the target at altitude r."""
    return np.sqrt(params.sensor_x ** 2 + (params.sensor_y - np.asarray(r)) ** 2)


def mechanistic(params: BallisticParams) -> MechanisticModel:
    return MechanisticModel(
        dim_x=2,
        n_forces=1,
        drift=lambda x, u, t: ballistic_drift(params, x, u, t),
        dispersion=np.diag([params.q_r, params.q_v]),
        q_diag=np.array([1.0, 1.0]),
        force_dispersion=np.array([[0.0], [1.0]]),
    )


def measurement(params: BallisticParams, kind: str = "range") -> MeasurementModel:
    """Range sensor (default) or a linear altitude stub for sanity configs."""
    if kind == "range":
        return MeasurementModel(
            h=lambda X: range_measurement(params, X[:, 0])[:, None],
            R=np.array([[params.sigma_n ** 2]]),
        )
    if kind == "altitude":
        return MeasurementModel(h=lambda X: X[:, :1],
                                R=np.array([[params.sigma_n ** 2]]))
    raise ValueError(f"unknown measurement kind {kind!r}")
