"""Noise-driven oscillator reported by a Poisson population code.

The latent state is (position, velocity) of an underdamped second-order
linear system, discretized exactly.  Position is encoded by neurons with
Gaussian tuning curves on the real line (no wrap-around) and Poisson spike
counts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, solve_discrete_lyapunov

from .errors import DomainError, NoSpikesError


@dataclass(frozen=True)
class OscillatorModel:
    omega: float
    zeta: float
    dt: float
    q: float
    A2: np.ndarray
    Q2: np.ndarray

    def stationary_cov(self) -> np.ndarray:
        return solve_discrete_lyapunov(self.A2, self.Q2)


def build_oscillator(omega: float, zeta: float, dt: float, q: float) -> OscillatorModel:
    """Exact discretization of x'' = -omega^2 x - 2 zeta omega x' + noise.

    ``q`` is the continuous-time intensity of white noise driving the
    velocity.  The process-noise covariance comes from Van Loan's block
    matrix exponential.
    """
    if not 0.0 < zeta < 1.0:
        raise DomainError(f"zeta={zeta} is not underdamped (need 0 < zeta < 1)")
    if omega <= 0 or dt <= 0 or q < 0:
        raise DomainError("need omega > 0, dt > 0, q >= 0")
    F = np.array([[0.0, 1.0], [-omega**2, -2.0 * zeta * omega]])
    Qc = np.array([[0.0, 0.0], [0.0, q]])
    M = np.zeros((4, 4))
    M[:2, :2] = -F
    M[:2, 2:] = Qc
    M[2:, 2:] = F.T
    E = expm(M * dt)
    A2 = E[2:, 2:].T
    Q2 = A2 @ E[:2, 2:]
    Q2 = 0.5 * (Q2 + Q2.T)
    if q == 0:
        Q2 = np.zeros((2, 2))
    return OscillatorModel(omega, zeta, dt, q, A2, Q2)


def oscillator_for_std(omega: float, zeta: float, dt: float, pos_std: float) -> OscillatorModel:
    """Oscillator whose stationary position standard deviation is ``pos_std``."""
    unit = build_oscillator(omega, zeta, dt, 1.0)
    q = pos_std**2 / unit.stationary_cov()[0, 0]
    return build_oscillator(omega, zeta, dt, q)


def simulate_latent(model: OscillatorModel, T: int, seed=None, x0=None) -> np.ndarray:
    """Simulate ``T`` steps; returns a (T, 2) array of (position, velocity).

    The first state is drawn from the stationary distribution unless ``x0``
    is given.
    """
    if T < 1:
        raise DomainError("T must be >= 1")
    rng = np.random.default_rng(seed)
    states = np.empty((T, 2))
    if x0 is None:
        x = rng.multivariate_normal(np.zeros(2), model.stationary_cov())
    else:
        x = np.asarray(x0, dtype=np.float64)
    if model.q > 0:
        L = np.linalg.cholesky(model.Q2)
        noise = rng.standard_normal((T, 2)) @ L.T
    else:
        noise = np.zeros((T, 2))
    for t in range(T):
        states[t] = x
        x = model.A2 @ x + noise[t]
    return states


@dataclass(frozen=True)
class PopulationCode:
    preferred: np.ndarray
    sigma_tc: float
    gain: float

    def __post_init__(self):
        pref = np.asarray(self.preferred, dtype=np.float64)
        object.__setattr__(self, "preferred", pref)
        if self.sigma_tc <= 0 or self.gain <= 0:
            raise DomainError("sigma_tc and gain must be positive")
        if pref.size > 1:
            steps = np.diff(pref)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0]):
                raise DomainError("preferred angles must be strictly increasing and uniform")

    @classmethod
    def tiling(cls, n_neurons=15, lo=-2.0, hi=2.0, gain=4.0, sigma_tc=None):
        preferred = np.linspace(lo, hi, n_neurons)
        if sigma_tc is None:
            sigma_tc = preferred[1] - preferred[0]
        return cls(preferred, float(sigma_tc), float(gain))

    @property
    def n_neurons(self) -> int:
        return self.preferred.size


def tuning_rates(code: PopulationCode, position) -> np.ndarray:
    """Expected spike counts; shape ``position.shape + (n_neurons,)``."""
    d = np.asarray(position, dtype=np.float64)[..., None] - code.preferred
    return code.gain * np.exp(-d * d / (2.0 * code.sigma_tc**2))


def emit_spikes(rates, seed=None) -> np.ndarray:
    rates = np.asarray(rates, dtype=np.float64)
    if np.any(rates < 0):
        raise DomainError("Poisson rates must be nonnegative")
    return np.random.default_rng(seed).poisson(rates)


def _weighted_mean(code, values):
    values = np.asarray(values, dtype=np.float64)
    total = values.sum(axis=-1)
    if np.any(total <= 0):
        raise NoSpikesError("cannot decode a population response with no activity")
    # normalize first so integer rescalings give bit-identical weights
    return (values / total[..., None]) @ code.preferred


def com_decode(code: PopulationCode, counts):
    """Center-of-mass position estimate from spike counts (any leading shape)."""
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise DomainError("counts must be nonnegative")
    return _weighted_mean(code, counts)


def com_decode_real(code: PopulationCode, values):
    """Center of mass of nonnegative real activities (e.g. model rates)."""
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise DomainError("values must be nonnegative")
    return _weighted_mean(code, values)


@dataclass(frozen=True)
class PPCWorld:
    """Generator constants for the population-code dataset."""
    omega: float = 2.0 * np.pi * 0.2
    zeta: float = 0.1
    dt: float = 0.1
    pos_std: float = 0.5
    n_neurons: int = 15
    lo: float = -2.0
    hi: float = 2.0
    gain: float = 4.0
    sigma_tc: float | None = None

    def oscillator(self) -> OscillatorModel:
        return oscillator_for_std(self.omega, self.zeta, self.dt, self.pos_std)

    def code(self) -> PopulationCode:
        return PopulationCode.tiling(self.n_neurons, self.lo, self.hi, self.gain, self.sigma_tc)


def make_ppc_dataset(world: PPCWorld, n_trajectories: int, T: int, rng):
    """Returns ``(states, counts)`` of shapes (N, T, 2) and (N, T, n_neurons)."""
    rng = np.random.default_rng(rng)
    model, code = world.oscillator(), world.code()
    states = np.stack([simulate_latent(model, T, rng) for _ in range(n_trajectories)])
    counts = emit_spikes(tuning_rates(code, states[..., 0]), rng)
    return states, counts.astype(np.int64)
