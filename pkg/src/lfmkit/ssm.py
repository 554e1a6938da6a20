"""Augmented continuous-discrete systems and SDE simulation.

``augment`` stacks a mechanistic drift on top of latent-force SDE blocks into
one block-triangular system: the force blocks evolve linearly on their own,
and the mechanistic drift consumes the emitted force values.  Ground truth for
experiments comes from the Euler-Maruyama simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cdgauss import GaussianState
from .gp_sde import LtiSde, stationary_covariance

__all__ = [
    "AugmentedModel",
    "MeasurementModel",
    "MechanisticModel",
    "SimulationError",
    "Trajectory",
    "augment",
    "em_ensemble",
    "initial_state",
    "read_trajectory_csv",
    "rk4_path",
    "simulate",
]


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MechanisticModel:
    """The mechanistic (output) part of a latent force model.

    ``drift(x, u, t)`` maps batched output states (k, dim_x) and force values
    (k, n_forces) to state derivatives.  ``dispersion`` is an optional
    (dim_x, w) matrix, or a callable ``(x, t) -> (k, dim_x, w)`` when
    state-dependent, with per-channel diffusion densities ``q_diag``.
    ``force_dispersion`` gives the sensitivity columns of the drift to white
    noise riding on the force values; it is only needed when a force block
    carries a q_eps channel.
    """

    dim_x: int
    n_forces: int
    drift: Callable
    dispersion: np.ndarray | Callable | None = None
    q_diag: np.ndarray | None = None
    force_dispersion: np.ndarray | Callable | None = None


@dataclass(frozen=True)
class MeasurementModel:
    """Discrete-time measurement y = h(x_a) + r with r ~ N(0, R).

    ``h`` operates on batched augmented states (k, dim) -> (k, D).
    """

    h: Callable
    R: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise ValueError(f"measurement covariance must be square, got {R.shape}")
        if not np.allclose(R, R.T):
            raise ValueError("measurement covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(R) <= 0.0):
            raise ValueError("measurement covariance must be positive definite")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @property
    def dim(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.shape[0] != states.shape[0]:
            raise ValueError("one state row per time point required")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def to_csv(self, path) -> None:
        dim = self.states.shape[1]
        with open(path, "w") as fh:
            fh.write(",".join(["t"] + [f"x{i}" for i in range(dim)]) + "\n")
            for t, row in zip(self.times, self.states):
                fh.write(",".join("%.17g" % v for v in [t, *row]) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ValueError(f"{path}: line 1: expected header starting with 't'")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    arr = np.array(rows)
    return Trajectory(times=arr[:, 0], states=arr[:, 1:])


class AugmentedModel:
    """Non-linear continuous-discrete system over (output states, force blocks).

    Built by :func:`augment`; exposes the drift, dispersion and diffusion of
    the joint SDE plus the bookkeeping (force slices, emit matrix) needed to
    read force values back out of filtering results.
    """

    def __init__(self, mech, forces, coupling, dim, force_slices, emit, Fz,
                 Q, disp_template, n_mech_channels, eps_cols, state_dependent):
        self.mech = mech
        self.forces = tuple(forces)
        self.coupling = tuple(coupling)
        self.dim = dim
        self.force_slices = tuple(force_slices)
        self.emit = emit
        self.Q = Q
        self._Fz = Fz
        self._disp_template = disp_template
        self._n_mech_channels = n_mech_channels
        self._eps_cols = eps_cols  # list of (channel index, force position in u)
        self._disp_const = None if state_dependent else disp_template
        if state_dependent:
            self.gamma_const = None
        elif Q.shape[0] == 0:
            self.gamma_const = np.zeros((dim, dim))
        else:
            self.gamma_const = disp_template @ np.diag(Q) @ disp_template.T

    @property
    def dim_x(self) -> int:
        return self.mech.dim_x

    @property
    def n_forces(self) -> int:
        return len(self.forces)

    def drift_a(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mx = self.mech.dim_x
        u = x @ self.emit.T
        dz = x[:, mx:] @ self._Fz.T
        dx = np.asarray(self.mech.drift(x[:, :mx], u, t), dtype=float)
        dx = dx.reshape(x.shape[0], mx)
        return np.concatenate([dx, dz], axis=1)

    def dispersion_a(self, x: np.ndarray, t: float) -> np.ndarray:
        """Dispersion matrix per point, shape (k, dim, W)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = x.shape[0]
        if self._disp_const is not None:
            return np.broadcast_to(self._disp_const, (k, self.dim, self.Q.shape[0]))
        D = np.tile(self._disp_template, (k, 1, 1))
        mx = self.mech.dim_x
        if callable(self.mech.dispersion):
            D[:, :mx, :self._n_mech_channels] = np.asarray(
                self.mech.dispersion(x[:, :mx], t), dtype=float)
        if self._eps_cols and callable(self.mech.force_dispersion):
            fd = np.asarray(self.mech.force_dispersion(x[:, :mx], t), dtype=float)
            for col, upos in self._eps_cols:
                D[:, :mx, col] = fd[:, :, upos]
        return D

    def gamma(self, x: np.ndarray, t: float) -> np.ndarray:
        """Per-point diffusion contribution L diag(Q) L^T, shape (k, dim, dim)."""
        D = self.dispersion_a(x, t)
        return np.einsum("kiw,w,kjw->kij", D, self.Q, D)

    def force_values(self, states: np.ndarray) -> np.ndarray:
        """Emitted force values u for a batch of augmented states (or means)."""
        states = np.asarray(states, dtype=float)
        return states @ self.emit.T


def augment(mech: MechanisticModel, forces: Sequence[LtiSde],
            coupling: Sequence[int] | None = None) -> AugmentedModel:
    """Assemble the augmented system from a mechanistic model and force blocks.

    ``coupling[r]`` is the position of force r's output inside the drift's u
    argument (defaults to list order).  Blocks with bias metadata get an extra
    constant state so the offset can be estimated by the filter; q_eps
    metadata adds a white-noise channel through ``mech.force_dispersion``.
    """
    forces = list(forces)
    n_forces = len(forces)
    if coupling is None:
        coupling = tuple(range(n_forces))
    coupling = tuple(int(c) for c in coupling)
    if len(coupling) != n_forces or sorted(coupling) != list(range(mech.n_forces)) \
            or n_forces != mech.n_forces:
        raise ValueError(
            f"coupling must map the {n_forces} force outputs onto the "
            f"{mech.n_forces} drift inputs; got {coupling}"
        )

    mx = mech.dim_x
    sizes = [f.dim + (1 if f.bias is not None else 0) for f in forces]
    dim_z = sum(sizes)
    dim = mx + dim_z

    force_slices = []
    Fz = np.zeros((dim_z, dim_z))
    emit = np.zeros((n_forces, dim))
    off = 0
    for f, size in zip(forces, sizes):
        sl = slice(mx + off, mx + off + size)
        force_slices.append(sl)
        Fz[off:off + f.dim, off:off + f.dim] = f.F
        r = coupling[len(force_slices) - 1]
        emit[r, sl.start:sl.start + f.dim] = f.emit
        if f.bias is not None:
            emit[r, sl.stop - 1] = 1.0
        off += size

    q_parts = []
    if mech.q_diag is not None and len(np.atleast_1d(mech.q_diag)) > 0:
        mech_q = np.atleast_1d(np.asarray(mech.q_diag, dtype=float))
        if mech.dispersion is None:
            raise ValueError("mechanistic q_diag given without a dispersion")
        q_parts.append(mech_q)
        n_mech_channels = mech_q.shape[0]
    else:
        n_mech_channels = 0
    for f in forces:
        q_parts.append(f.q_diag)
    eps_cols = []
    n_force_channels = sum(f.n_channels for f in forces)
    col = n_mech_channels + n_force_channels
    for i, f in enumerate(forces):
        if f.q_eps > 0.0:
            if mech.force_dispersion is None:
                raise ValueError(
                    "a force block has q_eps > 0 but the mechanistic model "
                    "declares no force_dispersion"
                )
            q_parts.append(np.array([f.q_eps]))
            eps_cols.append((col, coupling[i]))
            col += 1
    Q = np.concatenate(q_parts) if q_parts else np.zeros(0)
    n_channels = Q.shape[0]

    # Constant template: force-block channels are always constant; the mech
    # and eps columns are filled per point when state-dependent.
    template = np.zeros((dim, n_channels))
    col = n_mech_channels
    off = 0
    for f, size in zip(forces, sizes):
        template[mx + off:mx + off + f.dim, col:col + f.n_channels] = f.L
        col += f.n_channels
        off += size

    # Constant pieces are baked into the template; state-dependent mech or eps
    # columns are filled per point by dispersion_a.
    state_dependent = bool(callable(mech.dispersion)
                           or (eps_cols and callable(mech.force_dispersion)))
    if n_mech_channels and not callable(mech.dispersion):
        template[:mx, :n_mech_channels] = np.asarray(mech.dispersion, dtype=float)
    if eps_cols and not callable(mech.force_dispersion):
        fd_const = np.asarray(mech.force_dispersion, dtype=float)
        for c, upos in eps_cols:
            template[:mx, c] = fd_const[:, upos]

    return AugmentedModel(mech, forces, coupling, dim, force_slices, emit, Fz,
                          Q, template, n_mech_channels, eps_cols, state_dependent)


def initial_state(model: AugmentedModel, mech_mean, mech_cov, t: float = 0.0,
                  resonator_var=1.0, bias_var: float = 0.0) -> GaussianState:
    """Block-diagonal prior: mechanistic block as given, stable force blocks at
    their stationary distribution, marginally stable blocks at a configured
    diagonal prior.

    ``resonator_var`` is a scalar variance applied to every oscillator state,
    or a sequence with one scalar-or-array entry per non-stationary block.
    ``bias_var`` is the prior variance of bias states (0 = known offset).
    """
    mech_mean = np.atleast_1d(np.asarray(mech_mean, dtype=float))
    mech_cov = np.atleast_2d(np.asarray(mech_cov, dtype=float)) if model.dim_x \
        else np.zeros((0, 0))
    if mech_mean.shape[0] != model.dim_x or mech_cov.shape != (model.dim_x, model.dim_x):
        raise ValueError("mechanistic mean/cov sized inconsistently with the model")
    if model.dim_x and np.any(np.linalg.eigvalsh(0.5 * (mech_cov + mech_cov.T)) < -1e-12):
        raise ValueError("mechanistic covariance is not positive semi-definite")
    m = np.zeros(model.dim)
    P = np.zeros((model.dim, model.dim))
    m[:model.dim_x] = mech_mean
    P[:model.dim_x, :model.dim_x] = mech_cov
    res_idx = 0
    for f, sl in zip(model.forces, model.force_slices):
        if f.is_hurwitz():
            P[sl.start:sl.start + f.dim, sl.start:sl.start + f.dim] = \
                stationary_covariance(f)
        else:
            if np.isscalar(resonator_var):
                var = np.full(f.dim, float(resonator_var))
            else:
                var = np.broadcast_to(np.asarray(resonator_var[res_idx], dtype=float),
                                      (f.dim,)).copy()
            P[sl.start:sl.start + f.dim, sl.start:sl.start + f.dim] = np.diag(var)
            res_idx += 1
        if f.bias is not None:
            m[sl.stop - 1] = f.bias
            P[sl.stop - 1, sl.stop - 1] = bias_var
    return GaussianState(t, m, P)


def em_ensemble(model: AugmentedModel, X: np.ndarray, t0: float, t1: float,
                substeps: int, rng: np.random.Generator) -> np.ndarray:
    """Advance an ensemble of states from t0 to t1 by Euler-Maruyama."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = (t1 - t0) / substeps
    n_channels = model.Q.shape[0]
    scale = np.sqrt(h * model.Q) if n_channels else None
    const = model._disp_const
    for j in range(substeps):
        t = t0 + j * h
        drift = model.drift_a(X, t)
        if n_channels:
            xi = rng.standard_normal((X.shape[0], n_channels)) * scale
            if const is not None:
                noise = xi @ const.T
            else:
                noise = np.einsum("kdw,kw->kd", model.dispersion_a(X, t), xi)
            X = X + h * drift + noise
        else:
            X = X + h * drift
    return X


def simulate(model: AugmentedModel, x0, times, seed, substeps: int = 10) -> Trajectory:
    """Euler-Maruyama sample path recorded at ``times``; deterministic given seed.

    Grid resolution must be fine enough for the dynamics (stiff mechanistic
    models need many substeps; orbital dynamics in particular should be
    sampled through a higher-order scheme, see the orbit experiment helpers).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    times = np.asarray(times, dtype=float)
    if x0.shape[0] != model.dim:
        raise ValueError(f"x0 has dim {x0.shape[0]}, model dim {model.dim}")
    if times.ndim != 1 or times.shape[0] < 1 or np.any(np.diff(times) <= 0.0):
        raise ValueError("times must be a strictly increasing grid")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    rng = np.random.default_rng(seed)
    states = np.empty((times.shape[0], model.dim))
    states[0] = x0
    X = x0[None, :]
    for k in range(1, times.shape[0]):
        X = em_ensemble(model, X, times[k - 1], times[k], substeps, rng)
        if not np.all(np.isfinite(X)):
            raise SimulationError(f"simulation blew up at t={times[k]:.9g}")
        states[k] = X[0]
    return Trajectory(times=times, states=states)


def rk4_path(f: Callable, x0, times, substeps: int = 1) -> np.ndarray:
    """Deterministic RK4 integration of dx/dt = f(x, t), sampled at ``times``."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    times = np.asarray(times, dtype=float)
    out = np.empty((times.shape[0], x.shape[0]))
    out[0] = x
    for k in range(1, times.shape[0]):
        h = (times[k] - times[k - 1]) / substeps
        t = times[k - 1]
        for _ in range(substeps):
            k1 = f(x, t)
            k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"integration blew up at t={times[k]:.9g}")
        out[k] = x
    return out
