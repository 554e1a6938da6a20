"""GP priors as LTI SDE blocks.

Half-integer Matern processes and quasi-periodic resonator banks are converted
to linear time-invariant SDE blocks that the state-space assembler can stack
next to mechanistic dynamics.  The closed-form kernels and stationary
covariances here double as validation oracles for the conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "LtiSde",
    "MaternSpec",
    "ResonatorSpec",
    "matern_kernel",
    "matern_to_sde",
    "output_autocovariance",
    "resonator_to_sde",
    "solve_lyapunov",
    "stationary_covariance",
]

SUPPORTED_NU = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class MaternSpec:
    """Half-integer Matern process: smoothness nu, std sigma_m, length scale ell."""

    nu: float
    sigma_m: float
    ell: float

    def __post_init__(self):
        if self.nu not in SUPPORTED_NU:
            raise ValueError(
                f"unsupported smoothness nu={self.nu}; supported: {SUPPORTED_NU}"
            )
        if self.ell <= 0.0:
            raise ValueError(f"length scale must be > 0, got {self.ell}")
        if self.sigma_m <= 0.0:
            raise ValueError(f"process std must be > 0, got {self.sigma_m}")

    @property
    def state_dim(self) -> int:
        return int(round(self.nu + 0.5))


@dataclass(frozen=True)
class ResonatorSpec:
    """Bank of undamped stochastic oscillators at harmonics of a base frequency.

    The emitted signal is the sum of the oscillator displacements plus a
    constant bias; ``q_eps`` is the spectral density of an extra white-noise
    channel injected where the signal is consumed (see the assembler).
    """

    f0: float
    n_harmonics: int
    q_per_harmonic: tuple[float, ...]
    bias: float = 0.0
    q_eps: float = 0.0

    def __post_init__(self):
        if self.f0 <= 0.0:
            raise ValueError(f"base frequency must be > 0, got {self.f0}")
        if self.n_harmonics < 1:
            raise ValueError(f"need at least one harmonic, got {self.n_harmonics}")
        object.__setattr__(self, "q_per_harmonic", tuple(float(q) for q in self.q_per_harmonic))
        if len(self.q_per_harmonic) != self.n_harmonics:
            raise ValueError(
                f"{self.n_harmonics} harmonics need {self.n_harmonics} spectral "
                f"densities, got {len(self.q_per_harmonic)}"
            )
        if any(q < 0.0 for q in self.q_per_harmonic):
            raise ValueError("harmonic spectral densities must be >= 0")
        if self.q_eps < 0.0:
            raise ValueError("q_eps must be >= 0")


@dataclass(frozen=True)
class LtiSde:
    """Linear time-invariant SDE block dz = F z dt + L dbeta, diffusion diag(q_diag).

    ``emit`` selects the scalar signal value from the block state.  ``bias``
    is None for plain GP blocks; a float (possibly 0.0) marks a block whose
    emitted signal carries a constant offset that the assembler represents as
    an extra constant state.
    """

    F: np.ndarray
    L: np.ndarray
    q_diag: np.ndarray
    emit: np.ndarray
    bias: float | None = None
    q_eps: float = 0.0

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        q = np.atleast_1d(np.asarray(self.q_diag, dtype=float))
        emit = np.atleast_1d(np.asarray(self.emit, dtype=float))
        p = F.shape[0]
        if F.shape != (p, p):
            raise ValueError(f"drift matrix must be square, got {F.shape}")
        if L.shape[0] != p:
            raise ValueError(f"dispersion rows {L.shape[0]} != state dim {p}")
        if q.shape[0] != L.shape[1]:
            raise ValueError(f"{L.shape[1]} noise channels need {L.shape[1]} densities")
        if emit.shape[0] != p:
            raise ValueError(f"emit length {emit.shape[0]} != state dim {p}")
        for a in (F, L, q, emit):
            a.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "emit", emit)

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    @property
    def n_channels(self) -> int:
        return self.L.shape[1]

    def is_hurwitz(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.linalg.eigvals(self.F).real < -tol))


def matern_to_sde(spec: MaternSpec) -> LtiSde:
    """Companion-form SDE whose stationary output is the Matern(nu) process.

    The characteristic polynomial is (lam + s)^p with lam = sqrt(2 nu)/ell and
    p = nu + 1/2; the diffusion constant is fixed so that the stationary
    variance equals sigma_m^2:

        q = sigma_m^2 * 2^(2j+1) * lam^(2j+1) * (j!)^2 / (2j)!,   j = p - 1.
    """
    p = spec.state_dim
    lam = math.sqrt(2.0 * spec.nu) / spec.ell
    F = np.zeros((p, p))
    for i in range(p - 1):
        F[i, i + 1] = 1.0
    for i in range(p):
        F[p - 1, i] = -math.comb(p, i) * lam ** (p - i)
    j = p - 1
    q = (
        spec.sigma_m ** 2
        * 2.0 ** (2 * j + 1)
        * lam ** (2 * j + 1)
        * math.factorial(j) ** 2
        / math.factorial(2 * j)
    )
    L = np.zeros((p, 1))
    L[p - 1, 0] = 1.0
    emit = np.zeros(p)
    emit[0] = 1.0
    return LtiSde(F=F, L=L, q_diag=np.array([q]), emit=emit)


def matern_kernel(spec: MaternSpec, tau) -> np.ndarray:
    """Closed-form Matern covariance k(tau) for non-negative lags."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0.0):
        raise ValueError("lags must be >= 0")
    s2 = spec.sigma_m ** 2
    if spec.nu == 0.5:
        return s2 * np.exp(-tau / spec.ell)
    if spec.nu == 1.5:
        a = math.sqrt(3.0) * tau / spec.ell
        return s2 * (1.0 + a) * np.exp(-a)
    a = math.sqrt(5.0) * tau / spec.ell
    return s2 * (1.0 + a + a * a / 3.0) * np.exp(-a)


def resonator_to_sde(spec: ResonatorSpec, normalized: bool = False) -> LtiSde:
    """Block-diagonal bank of undamped oscillators at frequencies n*f0, n=1..N.

    Each harmonic contributes a 2-state block [[0, 1], [-(2 pi n f0)^2, 0]]
    driven by its own Brownian channel; the emitted signal sums the
    displacement states.  Bias and q_eps ride along as metadata for the
    assembler.

    ``normalized=True`` stores the velocity state divided by the harmonic's
    angular frequency (block [[0, w], [-w, 0]], density q/w^2), which emits the
    identical signal but keeps slow oscillators numerically well conditioned
    inside large-scale state covariances.
    """
    n = spec.n_harmonics
    F = np.zeros((2 * n, 2 * n))
    L = np.zeros((2 * n, n))
    emit = np.zeros(2 * n)
    q = np.asarray(spec.q_per_harmonic, dtype=float).copy()
    for k in range(n):
        w = 2.0 * math.pi * (k + 1) * spec.f0
        if normalized:
            F[2 * k, 2 * k + 1] = w
            F[2 * k + 1, 2 * k] = -w
            q[k] /= w * w
        else:
            F[2 * k, 2 * k + 1] = 1.0
            F[2 * k + 1, 2 * k] = -w * w
        L[2 * k + 1, k] = 1.0
        emit[2 * k] = 1.0
    return LtiSde(
        F=F,
        L=L,
        q_diag=q,
        emit=emit,
        bias=float(spec.bias),
        q_eps=float(spec.q_eps),
    )


def solve_lyapunov(F: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Solve F X + X F^T + W = 0 by Kronecker-sum vectorization.

    Adequate for the small blocks used here (a few states per force, resonator
    banks of a couple dozen states).
    """
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    n = F.shape[0]
    eye = np.eye(n)
    coeff = np.kron(F, eye) + np.kron(eye, F)
    X = np.linalg.solve(coeff, -W.ravel()).reshape(n, n)
    return 0.5 * (X + X.T)


def stationary_covariance(sde: LtiSde) -> np.ndarray:
    """Stationary covariance of a stable block: F P + P F^T + L diag(q) L^T = 0."""
    if not sde.is_hurwitz():
        raise ValueError(
            "drift matrix is not Hurwitz; no stationary covariance exists "
            "(marginally stable blocks need a configured prior instead)"
        )
    W = sde.L @ np.diag(sde.q_diag) @ sde.L.T
    return solve_lyapunov(sde.F, W)


def output_autocovariance(sde: LtiSde, taus) -> np.ndarray:
    """Stationary autocovariance of the emitted signal, k(tau) = H Pinf expm(F^T tau) H^T.

    Validation oracle for the kernel/SDE equivalence; requires a stable block.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    pinf = stationary_covariance(sde)
    h = sde.emit
    hp = h @ pinf
    return np.array([hp @ scipy.linalg.expm(sde.F.T * t) @ h for t in taus])
