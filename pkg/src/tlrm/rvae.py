"""Recurrent VAE trained one time step at a time.

At step t the recognition network sees the current observation ``x_t`` and
the previous sufficient statistics ``s_{t-1} = (mu, var)`` and returns a
diagonal Gaussian over the latent ``z_t``.  The generative network maps
``z_t`` to the emission distribution of ``x_t`` *and* to a reconstruction of
``s_{t-1}`` (the reverse transition).  Each step minimizes a single-sample
free energy; the carried statistics are detached, so no gradient crosses
time steps.

The TVAE variant drops the reverse-transition term.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diff_engine import AdamState, Tape, adam_step, gradient, reparam_sample
from .errors import ContractError, ShapeError, UnsupportedVariantError

VAR_FLOOR = 1e-6
# Carried statistics are bounded at this many prior standard deviations so an
# unstable encoder recurrence cannot run away between parameter updates.
STATS_BOUND = 10.0
GAUSSIAN = "gaussian"
POISSON = "poisson"

# (name, shape-fn) in a fixed order; shapes from (M, d, enc, dec)
_LAYERS = (
    ("enc_obs1", lambda M, d, e, g: (M, e)),
    ("enc_obs2", lambda M, d, e, g: (e, e)),
    ("enc_post", lambda M, d, e, g: (e + 2 * d, e)),
    ("enc_mu", lambda M, d, e, g: (e, d)),
    ("enc_logvar", lambda M, d, e, g: (e, d)),
    ("dec1", lambda M, d, e, g: (d, g)),
    ("dec2", lambda M, d, e, g: (g, g)),
    ("dec_emiss", lambda M, d, e, g: (g, M)),
    ("dec_trans", lambda M, d, e, g: (g, 2 * d)),
)


@dataclass
class RvaeParams:
    """Weights live in ``tensors`` (name -> array), ``W_<layer>``/``b_<layer>``
    plus the log-variance scalars ``log_s2_emiss`` and ``log_s2_trans``."""
    tensors: dict
    n_obs: int
    d: int
    emission_kind: str = POISSON
    variant: str = "rVAE"
    bounded_mean: bool = False
    frozen: tuple = ()

    def __post_init__(self):
        if self.emission_kind not in (GAUSSIAN, POISSON):
            raise ContractError(f"unknown emission kind {self.emission_kind!r}")
        if self.variant not in ("rVAE", "TVAE"):
            raise ContractError(f"unknown variant {self.variant!r}")

    def names(self):
        return list(self.tensors)

    def copy(self):
        return self.with_tensors({k: v.copy() for k, v in self.tensors.items()})

    def with_tensors(self, tensors):
        return RvaeParams(tensors, self.n_obs, self.d, self.emission_kind, self.variant,
                          self.bounded_mean, self.frozen)


def init_params(n_obs: int, d: int, enc: int = 64, dec: int = 64, emission_kind=POISSON,
                variant="rVAE", rng=None, bounded_mean=False, obs_mean=None) -> RvaeParams:
    rng = np.random.default_rng(rng)
    tensors = {}
    for name, shape_fn in _LAYERS:
        fan_in, fan_out = shape_fn(n_obs, d, enc, dec)
        tensors["W_" + name] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        tensors["b_" + name] = np.zeros(fan_out)
    # Heads start small so the initial posterior is close to the prior.
    for head in ("enc_mu", "enc_logvar", "dec_trans"):
        tensors["W_" + head] *= 0.1
    if obs_mean is not None:
        m = np.asarray(obs_mean, dtype=np.float64)
        if emission_kind == POISSON:
            tensors["b_dec_emiss"] = np.log(np.maximum(m, 1e-3))
        elif bounded_mean:
            m = np.clip(m, 1e-3, 1 - 1e-3)
            tensors["b_dec_emiss"] = np.log(m / (1 - m))
        else:
            tensors["b_dec_emiss"] = m.copy()
    # prev statistics start at (0, 1): bias the variance half of the reverse head to 1
    tensors["b_dec_trans"][d:] = 1.0
    tensors["log_s2_emiss"] = np.array(0.0)
    tensors["log_s2_trans"] = np.array(0.0)
    return RvaeParams(tensors, n_obs, d, emission_kind, variant, bounded_mean)


def carried_stats(mu, sigma) -> np.ndarray:
    """``(mu, sigma**2)`` for the next step, clipped to ``STATS_BOUND``."""
    mu = np.clip(mu, -STATS_BOUND, STATS_BOUND)
    var = np.clip(np.asarray(sigma) ** 2, VAR_FLOOR, STATS_BOUND)
    return np.concatenate([mu, var], axis=-1)


def initial_stats(d: int, batch_shape=()) -> np.ndarray:
    """s_0 = (0, 1), the prior's cumulants."""
    s = np.concatenate([np.zeros(d), np.ones(d)])
    return np.broadcast_to(s, tuple(batch_shape) + (2 * d,)).copy()


def _leaves(tape: Tape, params: RvaeParams):
    return {name: tape.leaf(value) for name, value in params.tensors.items()}


def _encode_nodes(tape, P, s_prev, x):
    h = tape.relu(tape.affine(x, P["W_enc_obs1"], P["b_enc_obs1"]))
    h = tape.relu(tape.affine(h, P["W_enc_obs2"], P["b_enc_obs2"]))
    h = tape.relu(tape.affine(tape.concat([h, s_prev], axis=-1), P["W_enc_post"], P["b_enc_post"]))
    mu = tape.affine(h, P["W_enc_mu"], P["b_enc_mu"])
    logvar = tape.affine(h, P["W_enc_logvar"], P["b_enc_logvar"])
    return mu, logvar


def _sigma_from_logvar(tape, logvar):
    """exp(logvar / 2), floored at sqrt(VAR_FLOOR) via a stopped offset."""
    sigma = tape.exp(tape.scale(logvar, 0.5))
    floor = np.sqrt(VAR_FLOOR)
    lift = np.maximum(floor - tape.value(sigma), 0.0)
    if np.any(lift > 0):
        sigma = tape.add(sigma, tape.constant(lift))
    return sigma


def _decode_nodes(tape, P, z, params):
    h = tape.relu(tape.affine(z, P["W_dec1"], P["b_dec1"]))
    h = tape.relu(tape.affine(h, P["W_dec2"], P["b_dec2"]))
    emiss = tape.affine(h, P["W_dec_emiss"], P["b_dec_emiss"])
    if params.emission_kind == GAUSSIAN and params.bounded_mean:
        emiss = tape.sigmoid(emiss)
    trans = tape.affine(h, P["W_dec_trans"], P["b_dec_trans"])
    return emiss, trans


def _check(params, s_prev, x):
    s_prev = np.asarray(s_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if s_prev.shape[-1] != 2 * params.d:
        raise ShapeError(f"s_prev has length {s_prev.shape[-1]}, expected {2 * params.d}")
    if x.shape[-1] != params.n_obs:
        raise ShapeError(f"observation has length {x.shape[-1]}, expected {params.n_obs}")
    if s_prev.shape[:-1] != x.shape[:-1]:
        raise ShapeError("s_prev and x batch shapes differ")
    return s_prev, x


def encode(params: RvaeParams, s_prev, x):
    """Recognition cumulants ``(mu, sigma)`` for ``z_t``."""
    s_prev, x = _check(params, s_prev, x)
    tape = Tape()
    P = {k: tape.constant(v) for k, v in params.tensors.items()}
    mu, logvar = _encode_nodes(tape, P, tape.constant(s_prev), tape.constant(x))
    sigma = _sigma_from_logvar(tape, logvar)
    return tape.value(mu), tape.value(sigma)


def decode(params: RvaeParams, z):
    """Returns ``(emission, mu_trans)``.

    ``emission`` is the Gaussian mean or the Poisson rates ``exp(head)``.
    """
    tape = Tape()
    P = {k: tape.constant(v) for k, v in params.tensors.items()}
    emiss, trans = _decode_nodes(tape, P, tape.constant(np.asarray(z, dtype=np.float64)), params)
    out = tape.value(emiss)
    if params.emission_kind == POISSON:
        out = np.exp(out)
    return out, tape.value(trans)


@dataclass
class FreeEnergyTerms:
    recog_entropy_term: float
    prior_term: float
    trans_term: float
    emiss_term: float

    @property
    def total(self) -> float:
        return self.recog_entropy_term + self.prior_term + self.trans_term + self.emiss_term


@dataclass
class _Graph:
    tape: Tape
    leaves: dict
    total: int
    terms: dict
    mu: int
    sigma: int


def _free_energy_graph(params: RvaeParams, s_prev, x, eps) -> _Graph:
    s_prev, x = _check(params, s_prev, x)
    eps = np.asarray(eps, dtype=np.float64)
    batch = x.shape[:-1]
    n = int(np.prod(batch)) if batch else 1
    tape = Tape()
    P = _leaves(tape, params)
    s_node = tape.stop_gradient(tape.constant(s_prev))
    mu, logvar = _encode_nodes(tape, P, s_node, tape.constant(x))
    sigma = _sigma_from_logvar(tape, logvar)
    z = reparam_sample(tape, mu, sigma, eps)
    emiss, trans = _decode_nodes(tape, P, z, params)
    inv_n = 1.0 / n

    terms = {}
    terms["recog_entropy_term"] = tape.scale(tape.sum(tape.log(sigma)), -inv_n)
    terms["prior_term"] = tape.scale(tape.add(tape.sum(tape.square(mu)), tape.sum(tape.square(sigma))),
                                     0.5 * inv_n)
    if params.variant == "rVAE":
        D = 2 * params.d
        ls2 = P["log_s2_trans"]
        sq = tape.sum(tape.square(tape.sub(s_node, trans)))
        # 1/2 (D log s2 + ||s - mu||^2 / s2), averaged over the batch
        t1 = tape.scale(ls2, 0.5 * D)
        t2 = tape.mul(tape.scale(sq, 0.5 * inv_n), tape.exp(tape.scale(ls2, -1.0)))
        terms["trans_term"] = tape.add(t1, t2)
    else:
        terms["trans_term"] = tape.constant(0.0)
    x_node = tape.constant(x)
    if params.emission_kind == POISSON:
        rate = tape.exp(emiss)
        # sum_m lambda_m - x_m log lambda_m, with log lambda = head output
        terms["emiss_term"] = tape.scale(tape.sub(tape.sum(rate), tape.sum(tape.mul(x_node, emiss))), inv_n)
    else:
        M = params.n_obs
        ls2 = P["log_s2_emiss"]
        sq = tape.sum(tape.square(tape.sub(x_node, emiss)))
        terms["emiss_term"] = tape.add(tape.scale(ls2, 0.5 * M),
                                       tape.mul(tape.scale(sq, 0.5 * inv_n), tape.exp(tape.scale(ls2, -1.0))))
    total = terms["recog_entropy_term"]
    for key in ("prior_term", "trans_term", "emiss_term"):
        total = tape.add(total, terms[key])
    return _Graph(tape, P, total, terms, mu, sigma)


def free_energy(params: RvaeParams, s_prev, x, eps) -> FreeEnergyTerms:
    """Single-sample free energy (additive constants dropped), batch-averaged."""
    g = _free_energy_graph(params, s_prev, x, eps)
    return FreeEnergyTerms(**{k: float(g.tape.value(v)) for k, v in g.terms.items()})


def free_energy_grad(params: RvaeParams, s_prev, x, eps):
    """``(total, {name: gradient})`` for the single-sample free energy."""
    g = _free_energy_graph(params, s_prev, x, eps)
    grads = gradient(g.tape, g.total)
    return float(g.tape.value(g.total)), {k: grads[node] for k, node in g.leaves.items()}


@dataclass
class StepResult:
    params: RvaeParams
    opt_state: AdamState
    stats: np.ndarray
    terms: FreeEnergyTerms


def train_step(params: RvaeParams, opt_state: AdamState, s_prev, x_t, seed, lr=1e-3,
               betas=(0.9, 0.999)) -> StepResult:
    """One Adam step on the free energy of ``(s_prev, x_t)``.

    The returned statistics are the pre-update recognition cumulants
    ``(mu, sigma**2)`` (see :func:`carried_stats`); they carry no gradient
    into the next step.
    """
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(np.shape(x_t)[:-1] + (params.d,))
    g = _free_energy_graph(params, s_prev, x_t, eps)
    grads = gradient(g.tape, g.total)
    names = params.names()
    grad_list = [np.zeros_like(params.tensors[k]) if k in params.frozen else grads[g.leaves[k]]
                 for k in names]
    new_vals, opt_state = adam_step([params.tensors[k] for k in names], grad_list, opt_state, lr, betas)
    new_params = params.with_tensors(dict(zip(names, new_vals)))
    stats = carried_stats(g.tape.value(g.mu), g.tape.value(g.sigma))
    terms = FreeEnergyTerms(**{k: float(g.tape.value(v)) for k, v in g.terms.items()})
    return StepResult(new_params, opt_state, stats, terms)


def new_optimizer(params: RvaeParams) -> AdamState:
    return AdamState.for_params([params.tensors[k] for k in params.names()])


def run_sequence(params: RvaeParams, observations, seed=None, train=False, opt_state=None, lr=1e-3):
    """Carry sufficient statistics through (..., T, M) observations.

    Without training the recognition means are deterministic.  With
    ``train=True`` each step applies :func:`train_step`; returns
    ``(stats, params, opt_state, losses)`` in that case and just ``stats``
    otherwise.
    """
    obs = np.asarray(observations, dtype=np.float64)
    T = obs.shape[-2]
    s = initial_stats(params.d, obs.shape[:-2])
    out = np.empty(obs.shape[:-1] + (2 * params.d,))
    if not train:
        for t in range(T):
            mu, sigma = encode(params, s, obs[..., t, :])
            s = carried_stats(mu, sigma)
            out[..., t, :] = s
        return out
    rng = np.random.default_rng(seed)
    opt_state = opt_state if opt_state is not None else new_optimizer(params)
    losses = np.empty(T)
    for t in range(T):
        res = train_step(params, opt_state, s, obs[..., t, :], rng, lr)
        params, opt_state, s = res.params, res.opt_state, res.stats
        out[..., t, :] = s
        losses[t] = res.terms.total
    return out, params, opt_state, losses


def expected_observations(params: RvaeParams, observations) -> np.ndarray:
    """Emission means at the posterior mean of each step (no sampling)."""
    stats = run_sequence(params, observations)
    emission, _ = decode(params, stats[..., :params.d])
    return emission


def generate_backward(params: RvaeParams, T: int, seed=None) -> np.ndarray:
    """Sample a length-``T`` sequence backwards in time.

    Returns noiseless emissions in forward time order, shape (T, M).
    """
    if params.variant != "rVAE":
        raise UnsupportedVariantError("backward generation needs the reverse transition (rVAE)")
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    d = params.d
    z = rng.standard_normal(d)
    frames = []
    for _ in range(T):
        emission, trans = decode(params, z)
        frames.append(emission)
        mu, var = trans[:d], np.maximum(trans[d:], VAR_FLOOR)
        z = mu + np.sqrt(var) * rng.standard_normal(d)
    return np.stack(frames[::-1])
