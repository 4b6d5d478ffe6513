"""Kalman filtering, RTS smoothing and EM for the population-code oracle.

Spike counts are first turned into Gaussian pseudo-observations of position
(center of mass, variance ``sigma_tc**2 / total_count``).  The filter then
treats them as scalar observations ``y_t = C x_t + v_t`` with known,
time-varying noise.  Only ``A, Q, mu0, S0`` are learned; ``C`` is fixed.

All filtering routines accept a leading batch axis so that many equal-length
sequences are processed together.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import SingularityError
from .ppc_world import PopulationCode

JITTER = 1e-9


@dataclass(frozen=True)
class PseudoObs:
    value: np.ndarray
    variance: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class LgdsParams:
    A: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    mu0: np.ndarray
    S0: np.ndarray

    @property
    def d(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class Belief:
    mean: np.ndarray
    cov: np.ndarray


def emission_row(d: int) -> np.ndarray:
    C = np.zeros(d)
    C[0] = 1.0
    return C


def to_pseudo_obs(code: PopulationCode, counts) -> PseudoObs:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-1)
    valid = total > 0
    safe = np.where(valid, total, 1.0)
    value = np.where(valid, counts @ code.preferred / safe, 0.0)
    variance = np.where(valid, code.sigma_tc**2 / safe, np.inf)
    return PseudoObs(value, variance, valid)


def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def kf_predict(params: LgdsParams, belief: Belief) -> Belief:
    A = params.A
    mean = belief.mean @ A.T
    cov = _sym(A @ belief.cov @ A.T + params.Q)
    return Belief(mean, cov)


def kf_update(params: LgdsParams, belief: Belief, obs: PseudoObs) -> Belief:
    """Scalar-observation update; invalid observations leave the belief as is."""
    C = params.C
    m, P = belief.mean, belief.cov
    valid = np.asarray(obs.valid, dtype=bool)
    R = np.where(valid, obs.variance, 1.0)
    y = np.where(valid, obs.value, 0.0)
    PC = P @ C
    S = PC @ C + R
    K = PC / S[..., None]
    new_m = m + K * (y - m @ C)[..., None]
    # Joseph form keeps the covariance PSD.
    I_KC = np.eye(C.size) - K[..., :, None] * C
    new_P = I_KC @ P @ np.swapaxes(I_KC, -1, -2) + R[..., None, None] * K[..., :, None] * K[..., None, :]
    new_P = _sym(new_P)
    mean = np.where(valid[..., None], new_m, m)
    cov = np.where(valid[..., None, None], new_P, P)
    return Belief(mean, cov)


@dataclass
class FilterResult:
    filtered: Belief       # (..., T, d), (..., T, d, d)
    predicted: Belief      # prior for each step, same shapes
    loglik: float


def _stack(beliefs, axis):
    return Belief(np.stack([b.mean for b in beliefs], axis=axis),
                  np.stack([b.cov for b in beliefs], axis=axis))


def kalman_filter(params: LgdsParams, obs: PseudoObs) -> FilterResult:
    """Filter observations of shape (..., T)."""
    value = np.asarray(obs.value, dtype=np.float64)
    batch, T = value.shape[:-1], value.shape[-1]
    d = params.d
    belief = Belief(np.broadcast_to(params.mu0, batch + (d,)).copy(),
                    np.broadcast_to(_sym(params.S0), batch + (d, d)).copy())
    preds, filts = [], []
    loglik = 0.0
    for t in range(T):
        if t > 0:
            belief = kf_predict(params, belief)
        preds.append(belief)
        o = PseudoObs(value[..., t], obs.variance[..., t], obs.valid[..., t])
        valid = np.asarray(o.valid, dtype=bool)
        S = belief.cov @ params.C @ params.C + np.where(valid, o.variance, 1.0)
        innov = np.where(valid, o.value, 0.0) - belief.mean @ params.C
        loglik += float(np.sum(np.where(valid, -0.5 * (np.log(2 * np.pi * S) + innov**2 / S), 0.0)))
        belief = kf_update(params, belief, o)
        filts.append(belief)
    axis = len(batch)
    return FilterResult(_stack(filts, axis), _stack(preds, axis), loglik)


def _solve_psd(P, B):
    """Solve P X = B for batched PSD ``P``, adding jitter if needed."""
    try:
        np.linalg.cholesky(P)
        return np.linalg.solve(P, B)
    except np.linalg.LinAlgError:
        pass
    Pj = P + JITTER * np.eye(P.shape[-1])
    try:
        np.linalg.cholesky(Pj)
    except np.linalg.LinAlgError:
        raise SingularityError("predicted covariance is singular even after jitter") from None
    return np.linalg.solve(Pj, B)


@dataclass
class SmoothResult:
    smoothed: Belief
    cross_cov: np.ndarray   # Cov(x_{t+1}, x_t | all data), shape (..., T-1, d, d)


def rts_smooth(params: LgdsParams, filtered: Belief, predicted: Belief) -> SmoothResult:
    """Rauch-Tung-Striebel backward pass over (..., T, ...) beliefs."""
    mf, Pf = filtered.mean, filtered.cov
    mp, Pp = predicted.mean, predicted.cov
    T = mf.shape[-2]
    ms, Ps = mf.copy(), Pf.copy()
    d = params.d
    cross = np.zeros(mf.shape[:-2] + (max(T - 1, 0), d, d))
    A = params.A
    for t in range(T - 2, -1, -1):
        # J = Pf A^T Pp^{-1}  <=>  Pp J^T = A Pf
        J = np.swapaxes(_solve_psd(Pp[..., t + 1, :, :], A @ Pf[..., t, :, :]), -1, -2)
        ms[..., t, :] = mf[..., t, :] + ((ms[..., t + 1, :] - mp[..., t + 1, :])[..., None, :] * J).sum(-1)
        Ps[..., t, :, :] = _sym(Pf[..., t, :, :] + J @ (Ps[..., t + 1, :, :] - Pp[..., t + 1, :, :]) @ np.swapaxes(J, -1, -2))
        cross[..., t, :, :] = Ps[..., t + 1, :, :] @ np.swapaxes(J, -1, -2)
    return SmoothResult(Belief(ms, Ps), cross)


def _psd_repair(M):
    M = _sym(M)
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, JITTER)
    return _sym((V * w) @ V.T)


def init_params(d: int, rng, dt: float = 0.05) -> LgdsParams:
    rng = np.random.default_rng(rng)
    A = 0.99 * np.eye(d) + rng.uniform(0.0, 1e-2, size=(d, d))
    if d == 2:
        A[0, 1] = dt
    return LgdsParams(A, 1e-2 * np.eye(d), emission_row(d), np.zeros(d), np.eye(d))


def m_step(params: LgdsParams, sm: SmoothResult) -> LgdsParams:
    m, P = sm.smoothed.mean, sm.smoothed.cov           # (N, T, d), (N, T, d, d)
    Exx = P + m[..., :, None] * m[..., None, :]
    Exx_lag = sm.cross_cov + m[..., 1:, :, None] * m[..., :-1, None, :]
    S11 = Exx[:, 1:].sum(axis=(0, 1))
    S00 = Exx[:, :-1].sum(axis=(0, 1))
    S10 = Exx_lag.sum(axis=(0, 1))
    n_trans = m.shape[0] * (m.shape[1] - 1)
    A = np.linalg.solve(S00.T, S10.T).T
    Q = _psd_repair((S11 - A @ S10.T) / n_trans)
    m0 = m[:, 0]
    mu0 = m0.mean(axis=0)
    dev = m0 - mu0
    S0 = _psd_repair((P[:, 0] + dev[:, :, None] * dev[:, None, :]).mean(axis=0))
    return replace(params, A=A, Q=Q, mu0=mu0, S0=S0)


@dataclass
class EmFit:
    params: LgdsParams
    loglik: list


def em_fit(obs: PseudoObs, d: int, iters: int = 50, seed=0, init: LgdsParams | None = None,
           tol: float = 0.0) -> EmFit:
    """Fit ``A, Q, mu0, S0`` by EM; ``obs`` fields have shape (N, T).

    ``loglik[i]`` is the marginal log-likelihood of the parameters used in
    E-step ``i``; EM guarantees it never decreases.  Iteration stops early
    once the per-iteration gain drops below ``tol`` (0 disables).
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    obs = PseudoObs(np.atleast_2d(obs.value), np.atleast_2d(obs.variance), np.atleast_2d(obs.valid))
    params = init if init is not None else init_params(d, seed)
    history = []
    for _ in range(iters):
        fr = kalman_filter(params, obs)
        history.append(fr.loglik)
        if tol > 0 and len(history) > 1 and history[-1] - history[-2] < tol:
            break
        sm = rts_smooth(params, fr.filtered, fr.predicted)
        params = m_step(params, sm)
    return EmFit(params, history)


def kf_position_mse(params: LgdsParams, code: PopulationCode, counts, positions) -> float:
    """MSE between filtered position ``C @ mean_t`` and the true positions."""
    fr = kalman_filter(params, to_pseudo_obs(code, counts))
    est = fr.filtered.mean @ params.C
    return float(np.mean((est - np.asarray(positions)) ** 2))


def sample_lgds(params: LgdsParams, T: int, obs_var: float, rng, n: int = 1):
    """Draw states (n, T, d) and observations (n, T) from an LGDS with fixed noise."""
    rng = np.random.default_rng(rng)
    d = params.d
    x = rng.multivariate_normal(params.mu0, params.S0, size=n)
    L = np.linalg.cholesky(params.Q + 0.0 * np.eye(d)) if np.any(params.Q) else np.zeros((d, d))
    states = np.empty((n, T, d))
    for t in range(T):
        states[:, t] = x
        x = x @ params.A.T + rng.standard_normal((n, d)) @ L.T
    y = states @ params.C + np.sqrt(obs_var) * rng.standard_normal((n, T))
    return states, y
