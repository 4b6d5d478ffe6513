"""Exponential-family harmoniums with a partitioned visible layer.

The visible vector at step t is ``[obs_t ; zbar_{t-1}]`` where ``zbar`` is
the hidden-mean vector carried forward from the previous step.  Three
training schemes share the same parameters:

* ``rEFH``  - the carried block is modeled: it is reconstructed in the
  negative phase like any other visible unit.
* ``TRBM``  - the carried block only conditions the hiddens; it is clamped
  in the negative phase.
* ``RTRBM`` - TRBM plus gradients through the hidden recursion (BPTT),
  computed with :mod:`tlrm.diff_engine`.

Hidden units are Bernoulli.  Visible blocks are Poisson (natural parameter
``log rate``) or Bernoulli with real-valued means.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .diff_engine import Tape, gradient, sigmoid
from .errors import ContractError, DomainError, ShapeError

POISSON = "poisson"
BERNOULLI = "bernoulli"
OBSERVATION = "observation"
PREV = "prev"
MAX_NATURAL = 30.0

VARIANTS = ("TRBM", "rEFH", "RTRBM")


@dataclass(frozen=True)
class Block:
    size: int
    kind: str
    role: str


@dataclass
class EfhParams:
    W: np.ndarray          # (H, V)
    b_vis: np.ndarray      # (V,)
    b_hid: np.ndarray      # (H,)
    layout: tuple
    clamp_events: int = 0

    def __post_init__(self):
        V = sum(b.size for b in self.layout)
        if self.W.shape != (self.b_hid.size, V) or self.b_vis.size != V:
            raise ShapeError(f"W{self.W.shape} does not match layout V={V}, H={self.b_hid.size}")
        prev = [b for b in self.layout if b.role == PREV]
        if len(prev) != 1 or prev[0].size != self.H:
            raise ContractError("layout needs exactly one prev block of size H")

    @property
    def H(self) -> int:
        return self.b_hid.size

    @property
    def V(self) -> int:
        return self.b_vis.size

    def block_slices(self):
        out, start = [], 0
        for b in self.layout:
            out.append((b, slice(start, start + b.size)))
            start += b.size
        return out

    def role_mask(self, roles) -> np.ndarray:
        mask = np.zeros(self.V, dtype=bool)
        for b, sl in self.block_slices():
            if b.role in roles:
                mask[sl] = True
        return mask

    def obs_slice(self) -> slice:
        return next(sl for b, sl in self.block_slices() if b.role == OBSERVATION)

    def copy(self) -> "EfhParams":
        return replace(self, W=self.W.copy(), b_vis=self.b_vis.copy(), b_hid=self.b_hid.copy())


def init_params(n_obs: int, n_hidden: int, obs_kind: str, rng, scale: float = 0.01,
                obs_mean=None) -> EfhParams:
    rng = np.random.default_rng(rng)
    layout = (Block(n_obs, obs_kind, OBSERVATION), Block(n_hidden, BERNOULLI, PREV))
    V = n_obs + n_hidden
    W = scale * rng.standard_normal((n_hidden, V))
    b_vis = np.zeros(V)
    if obs_mean is not None:
        m = np.asarray(obs_mean, dtype=np.float64)
        if obs_kind == POISSON:
            b_vis[:n_obs] = np.log(np.maximum(m, 1e-3))
        else:
            m = np.clip(m, 1e-3, 1 - 1e-3)
            b_vis[:n_obs] = np.log(m / (1 - m))
    return EfhParams(W, b_vis, np.zeros(n_hidden), layout)


@dataclass(frozen=True)
class EfhVariant:
    tag: str = "rEFH"
    cd_k: int = 1
    bptt_horizon: int = 0

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ContractError(f"unknown variant {self.tag!r}")
        if self.cd_k < 1:
            raise ContractError("cd_k must be >= 1")

    @property
    def clamp_roles(self):
        return frozenset() if self.tag == "rEFH" else frozenset({PREV})


# --- conditionals --------------------------------------------------------------

def hidden_means(params: EfhParams, visible) -> np.ndarray:
    return sigmoid(np.asarray(visible) @ params.W.T + params.b_hid)


def visible_natural(params: EfhParams, hidden) -> np.ndarray:
    return np.asarray(hidden) @ params.W + params.b_vis


def visible_means(params: EfhParams, hidden) -> np.ndarray:
    eta = visible_natural(params, hidden)
    out = np.empty_like(eta)
    for b, sl in params.block_slices():
        if b.kind == POISSON:
            e = eta[..., sl]
            over = e > MAX_NATURAL
            if np.any(over):
                params.clamp_events += int(over.sum())
                e = np.minimum(e, MAX_NATURAL)
            out[..., sl] = np.exp(e)
        else:
            out[..., sl] = sigmoid(eta[..., sl])
    return out


def sample_hidden(params: EfhParams, visible, rng) -> np.ndarray:
    p = hidden_means(params, visible)
    return (rng.random(p.shape) < p).astype(np.float64)


def sample_visible(params: EfhParams, hidden, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mean = visible_means(params, hidden)
    out = np.empty_like(mean)
    for b, sl in params.block_slices():
        if b.kind == POISSON:
            out[..., sl] = rng.poisson(mean[..., sl])
        else:
            out[..., sl] = (rng.random(mean[..., sl].shape) < mean[..., sl]).astype(np.float64)
    return out


def negative_phase(params: EfhParams, visible, k: int, clamp_mask, rng, sample_kinds=(POISSON,)):
    """Run ``k`` Gibbs alternations from the data, holding ``clamp_mask`` fixed.

    Hiddens are sampled.  Visible blocks whose unit kind is in
    ``sample_kinds`` are sampled too; the others are set to their conditional
    means.  Returns the final visible reconstruction and its hidden means.
    """
    v = np.array(visible, dtype=np.float64)
    clamped = v[..., clamp_mask]
    sampled = [(b.kind, sl) for b, sl in params.block_slices() if b.kind in sample_kinds]
    for _ in range(k):
        h = sample_hidden(params, v, rng)
        v = visible_means(params, h)
        for kind, sl in sampled:
            if kind == POISSON:
                v[..., sl] = rng.poisson(v[..., sl])
            else:
                v[..., sl] = (rng.random(v[..., sl].shape) < v[..., sl]).astype(np.float64)
        v[..., clamp_mask] = clamped
    return v, hidden_means(params, v)


@dataclass
class EfhUpdate:
    dW: np.ndarray
    db_vis: np.ndarray
    db_hid: np.ndarray


def cd_step(params: EfhParams, visible_batch, k: int, lr: float, clamp_roles, rng,
            sample_kinds=(POISSON,)) -> EfhUpdate:
    """Contrastive-divergence update for one batch of static visible vectors.

    Returns ``lr * (<p v^T>_data - <p' v'^T>_recon)`` (and the bias analogues),
    averaged over the batch.  Blocks whose role is in ``clamp_roles`` are held
    at their data values during the negative phase.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    v = np.atleast_2d(np.asarray(visible_batch, dtype=np.float64))
    if v.shape[-1] != params.V:
        raise ShapeError(f"visible length {v.shape[-1]} != V={params.V}")
    p = hidden_means(params, v)
    v_neg, p_neg = negative_phase(params, v, k, params.role_mask(clamp_roles), rng, sample_kinds)
    n = v.shape[0]
    # one matmul for both phases: [p; -p']^T [v; v']
    dW = np.concatenate([p, -p_neg]).T @ np.concatenate([v, v_neg])
    dW *= lr / n
    return EfhUpdate(dW, lr * (v - v_neg).mean(axis=0), lr * (p - p_neg).mean(axis=0))


@dataclass
class Momentum:
    W: np.ndarray
    b_vis: np.ndarray
    b_hid: np.ndarray

    @classmethod
    def zeros(cls, params):
        return cls(np.zeros_like(params.W), np.zeros_like(params.b_vis), np.zeros_like(params.b_hid))


def apply_update(params: EfhParams, upd: EfhUpdate, mom: Momentum, momentum: float,
                 weight_decay: float = 0.0, lr: float = 0.0):
    """In-place momentum step; ``weight_decay`` is scaled by ``lr``."""
    mom.W *= momentum
    mom.W += upd.dW
    if weight_decay:
        mom.W -= (lr * weight_decay) * params.W
    mom.b_vis = momentum * mom.b_vis + upd.db_vis
    mom.b_hid = momentum * mom.b_hid + upd.db_hid
    params.W += mom.W
    params.b_vis += mom.b_vis
    params.b_hid += mom.b_hid


@dataclass
class EfhHyper:
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 1


def initial_state(params: EfhParams, batch_shape=()) -> np.ndarray:
    return np.broadcast_to(sigmoid(params.b_hid), tuple(batch_shape) + (params.H,)).copy()


def train_sequence(params: EfhParams, variant: EfhVariant, observations, hyper: EfhHyper, rng,
                   mom: Momentum | None = None):
    """One pass of step-local training over ``observations``.

    ``observations`` is (T, M) or a batch (N, T, M) of equal-length
    trajectories trained synchronously.  At each step the update sees only
    ``[obs_t ; zbar_{t-1}]``; ``zbar_t`` is the positive-phase hidden mean
    (pre-update parameters).  Returns ``(params, zbar)``, ``zbar`` shaped like
    the observations with M replaced by H.
    """
    if variant.tag == "RTRBM":
        raise ContractError("use train_rtrbm for the RTRBM variant")
    obs = np.asarray(observations, dtype=np.float64)
    single = obs.ndim == 2
    if single:
        obs = obs[None]
    rng = np.random.default_rng(rng)
    mom = mom if mom is not None else Momentum.zeros(params)
    N, T, _ = obs.shape
    zbar = initial_state(params, (N,))
    out = np.empty((N, T, params.H))
    for t in range(T):
        v = np.concatenate([obs[:, t], zbar], axis=1)
        zbar = hidden_means(params, v)
        out[:, t] = zbar
        upd = cd_step(params, v, variant.cd_k, hyper.lr, variant.clamp_roles, rng)
        apply_update(params, upd, mom, hyper.momentum, hyper.weight_decay, hyper.lr)
    return params, (out[0] if single else out)


def _free_energy(tape, v, WT, b_vis, b_hid):
    """Batch sum of  -v.b_vis - sum_j softplus((v W^T + b_hid)_j)."""
    lin = tape.sum(tape.mul(v, b_vis))
    hid = tape.sum(tape.softplus(tape.add(tape.matmul(v, WT), b_hid)))
    return tape.scale(tape.add(lin, hid), -1.0)


def rtrbm_surrogate(params: EfhParams, obs_window, h0, recon_obs, horizon=None):
    """Tape whose negative gradient is the RTRBM update over one window.

    The loss is ``sum_t mean_batch [F(v_t) - F(v'_t)]`` with
    ``v_t = [obs_t ; h_{t-1}]`` and ``v'_t = [recon_t ; h_{t-1}]``, where ``F`` is
    the harmonium free energy.  The recursion ``h_t = sigmoid(W v_t + b_hid)``
    stays on the tape, so the gradient of each step's CD term reaches the
    weights through earlier hidden states.  ``recon_obs`` are fixed
    negative-phase reconstructions.  ``horizon=0`` cuts every recurrent path.

    Returns ``(tape, loss, (WT, b_vis, b_hid))``; the first leaf holds ``W.T``.
    """
    obs_window = np.asarray(obs_window, dtype=np.float64)
    T, N = obs_window.shape[:2]
    tape = Tape()
    WT = tape.leaf(params.W.T)
    b_vis = tape.leaf(params.b_vis)
    b_hid = tape.leaf(params.b_hid)
    h = tape.constant(h0)
    total = None
    for t in range(T):
        h_in = tape.stop_gradient(h) if horizon == 0 else h
        v = tape.concat([tape.constant(obs_window[t]), h_in], axis=1)
        v_neg = tape.concat([tape.constant(recon_obs[t]), h_in], axis=1)
        step = tape.sub(_free_energy(tape, v, WT, b_vis, b_hid),
                        _free_energy(tape, v_neg, WT, b_vis, b_hid))
        total = step if total is None else tape.add(total, step)
        h = tape.sigmoid(tape.add(tape.matmul(v, WT), b_hid))
    return tape, tape.scale(total, 1.0 / N), (WT, b_vis, b_hid)


def train_rtrbm(params: EfhParams, observations, hyper: EfhHyper, rng, bptt_horizon: int = 10,
                cd_k: int = 1, mom: Momentum | None = None):
    """One pass of truncated-BPTT RTRBM training over ``observations``.

    The sequence is cut into windows of ``bptt_horizon + 1`` steps.  Inside a
    window the negative phase is the TRBM one (carried block clamped) and the
    CD gradient is backpropagated through the hidden recursion; one momentum
    update is applied per window.  ``bptt_horizon=0`` reproduces TRBM training.
    """
    if bptt_horizon < 0:
        raise ContractError("bptt_horizon must be >= 0")
    obs = np.asarray(observations, dtype=np.float64)
    single = obs.ndim == 2
    if single:
        obs = obs[None]
    rng = np.random.default_rng(rng)
    mom = mom if mom is not None else Momentum.zeros(params)
    N, T, M = obs.shape
    clamp = params.role_mask({PREV})
    h = initial_state(params, (N,))
    out = np.empty((N, T, params.H))
    L = bptt_horizon + 1
    for start in range(0, T, L):
        window = obs[:, start:start + L].transpose(1, 0, 2)
        h0 = h
        recon = []
        for j, x in enumerate(window):
            v = np.concatenate([x, h], axis=1)
            v_neg, _ = negative_phase(params, v, cd_k, clamp, rng)
            recon.append(v_neg[:, :M])
            h = hidden_means(params, v)
            out[:, start + j] = h
        tape, loss, leaves = rtrbm_surrogate(params, window, h0, np.stack(recon),
                                             horizon=bptt_horizon)
        g = gradient(tape, loss)
        upd = EfhUpdate(-hyper.lr * g[leaves[0]].T, -hyper.lr * g[leaves[1]], -hyper.lr * g[leaves[2]])
        apply_update(params, upd, mom, hyper.momentum, hyper.weight_decay, hyper.lr)
    return params, (out[0] if single else out)


def run_states(params: EfhParams, observations) -> np.ndarray:
    """Carried hidden means for (..., T, M) observations without training."""
    obs = np.asarray(observations, dtype=np.float64)
    zbar = initial_state(params, obs.shape[:-2])
    out = np.empty(obs.shape[:-1] + (params.H,))
    for t in range(obs.shape[-2]):
        zbar = hidden_means(params, np.concatenate([obs[..., t, :], zbar], axis=-1))
        out[..., t, :] = zbar
    return out


def decode_observations(params: EfhParams, observations) -> np.ndarray:
    """Mean-field expected observations given each step's carried hidden means."""
    return visible_means(params, run_states(params, observations))[..., params.obs_slice()]


def predict_next(params: EfhParams, zbar, init_obs, sweeps: int = 25, seed=None) -> np.ndarray:
    """Next-observation prediction by Gibbs sampling with the carried block clamped.

    The prev block is fixed to ``zbar`` and the observation block starts at
    ``init_obs``.  After ``sweeps`` alternations the noiseless visible means of
    the observation block under the last hidden sample are returned.
    """
    if sweeps < 1:
        raise DomainError("sweeps must be >= 1")
    rng = np.random.default_rng(seed)
    v = np.concatenate([np.asarray(init_obs, dtype=np.float64), np.asarray(zbar, dtype=np.float64)], axis=-1)
    clamp = params.role_mask({PREV})
    clamped = v[..., clamp].copy()
    for _ in range(sweeps):
        h = sample_hidden(params, v, rng)
        v = sample_visible(params, h, rng)
        v[..., clamp] = clamped
    return visible_means(params, h)[..., params.obs_slice()]
