"""Experiment orchestration: seeding, data, model fitting and the two tables.

Randomness: every component draws from its own named sub-stream of the run
seed, ``substream(seed, "ppc.train")`` and so on, so adding or reordering
components never perturbs the others.
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import harmonium as hm
from . import kalman_em as kf
from . import rvae
from .balls_world import BallWorld, make_balls_dataset, order0_mse
from .config import ExperimentConfig
from .errors import ContractError, NoSpikesError
from .ppc_world import PPCWorld, com_decode, com_decode_real, make_ppc_dataset
from .storage import Checkpoint

TABLE1_ROWS = ("order 0", "TVAE", "TRBM", "KF-1", "rVAE", "rEFH", "RTRBM", "KF-2")
TABLE2_ROWS = ("order 0", "TRBM", "rEFH", "RTRBM")
TABLE_HEADER = ("model", "mse_mean", "mse_std", "n_seeds", "status")

MODEL_TAGS = {"refh": "rEFH", "trbm": "TRBM", "rtrbm": "RTRBM", "rvae": "rVAE", "tvae": "TVAE",
              "kf1": "KF-1", "kf2": "KF-2"}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for component ``name`` of run ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),)))


# --- data ---------------------------------------------------------------------

def ppc_world(cfg: ExperimentConfig) -> PPCWorld:
    c = cfg.section("ppc")
    return PPCWorld(omega=c["omega"], zeta=c["zeta"], dt=c["dt"], pos_std=c["pos_std"],
                    n_neurons=c["n_neurons"], lo=c["lo"], hi=c["hi"], gain=c["gain"],
                    sigma_tc=c["sigma_tc"] or None)


def ball_world(cfg: ExperimentConfig) -> BallWorld:
    c = cfg.section("balls")
    return BallWorld(n_balls=c["n_balls"], radius=c["radius"], box_size=c["box_size"],
                     speed=c["speed"], dt=c["dt"])


@dataclass
class PPCData:
    train_states: np.ndarray
    train_counts: np.ndarray
    test_states: np.ndarray
    test_counts: np.ndarray


def ppc_data(cfg: ExperimentConfig, seed: int) -> PPCData:
    w, T = ppc_world(cfg), cfg["ppc.T"]
    tr = make_ppc_dataset(w, cfg["ppc.n_train"], T, substream(seed, "ppc.train"))
    te = make_ppc_dataset(w, cfg["ppc.n_test"], T, substream(seed, "ppc.test"))
    return PPCData(*tr, *te)


def balls_data(cfg: ExperimentConfig, seed: int):
    """``(train, test)`` frames, each (N, T, res*res)."""
    w, res, T = ball_world(cfg), cfg["balls.res"], cfg["balls.T"]
    train = make_balls_dataset(w, cfg["balls.n_train"], T, res, substream(seed, "balls.train"))
    test = make_balls_dataset(w, cfg["balls.n_test"], T, res, substream(seed, "balls.test"))
    return train, test


# --- baselines ----------------------------------------------------------------

def order0_ppc(code, counts, positions):
    """Per-frame centre-of-mass decoding error, no temporal model.

    Frames without spikes are left out of the mean; returns ``(mse, n_skipped)``.
    """
    counts = np.asarray(counts)
    positions = np.asarray(positions, dtype=np.float64)
    has = counts.sum(axis=-1) > 0
    if not np.any(has):
        raise NoSpikesError("no frame has spikes")
    est = com_decode(code, counts[has])
    return float(np.mean((est - positions[has]) ** 2)), int((~has).sum())


def fit_kf(cfg: ExperimentConfig, d: int, code, counts, seed: int) -> kf.LgdsParams:
    obs = kf.to_pseudo_obs(code, counts)
    init = kf.init_params(d, substream(seed, f"kf{d}.init"), dt=cfg["ppc.dt"])
    return kf.em_fit(obs, d, iters=cfg["kf.iters"], init=init).params


# --- harmonium family ---------------------------------------------------------

def _efh_hyper(c, tag):
    rt = tag == "RTRBM"
    return hm.EfhHyper(lr=c["rtrbm_lr"] if rt else c["lr"], momentum=c["momentum"],
                       weight_decay=c["weight_decay"])


def fit_efh(cfg: ExperimentConfig, tag: str, observations, seed: int, kind=hm.POISSON,
            section="efh", log=None) -> hm.EfhParams:
    """Train a harmonium variant on (N, T, M) observations.

    ``section`` picks the hyperparameter block (``efh`` or ``efh_balls``);
    trajectories are trained ``batch`` at a time (all at once when the
    section has no batch key).
    """
    c = cfg.section(section)
    obs = np.asarray(observations, dtype=np.float64)
    N, _, M = obs.shape
    rng = substream(seed, f"{section}.{tag}")
    params = hm.init_params(M, c["hidden"], kind, rng, obs_mean=obs.mean(axis=(0, 1)))
    hyper = _efh_hyper(c, tag)
    mom = hm.Momentum.zeros(params)
    batch = c.get("batch", N)
    for epoch in range(c["epochs"]):
        for start in range(0, N, batch):
            chunk = obs[start:start + batch]
            if tag == "RTRBM":
                hm.train_rtrbm(params, chunk, hyper, rng, c["bptt_horizon"], c["rtrbm_cd_k"], mom)
            else:
                hm.train_sequence(params, hm.EfhVariant(tag, c["cd_k"]), chunk, hyper, rng, mom)
        if log is not None:
            log(epoch, params)
    return params


def efh_ppc_mse(params: hm.EfhParams, code, counts, positions) -> float:
    rates = hm.decode_observations(params, counts)
    return float(np.mean((com_decode_real(code, rates) - positions) ** 2))


def efh_predict_frames(params: hm.EfhParams, frames, sweeps: int, seed: int):
    """Predict frame t+1 from the carried state at t, for all t at once."""
    frames = np.asarray(frames, dtype=np.float64)
    zbar = hm.run_states(params, frames)
    return hm.predict_next(params, zbar[:, :-1], frames[:, :-1], sweeps, substream(seed, "predict"))


def efh_balls_mse(params, frames, sweeps, seed) -> float:
    pred = efh_predict_frames(params, frames, sweeps, seed)
    return float(np.mean((pred - np.asarray(frames)[:, 1:]) ** 2))


# --- recurrent VAE ------------------------------------------------------------

def fit_vae(cfg: ExperimentConfig, variant: str, observations, seed: int, balls=False,
            log=None) -> rvae.RvaeParams:
    """Train an rVAE/TVAE on (N, T, M) observations, all trajectories per step.

    The learning rate decays geometrically from ``vae.lr`` to
    ``vae.lr_final`` over the epochs.
    """
    c = cfg.section("vae")
    if balls:
        c.update(cfg.section("vae_balls"))
    obs = np.asarray(observations, dtype=np.float64)
    rng = substream(seed, f"vae.{variant}")
    kind = rvae.GAUSSIAN if balls else rvae.POISSON
    params = rvae.init_params(obs.shape[-1], c["d"], c["enc"], c["dec"], kind, variant, rng,
                              bounded_mean=balls, obs_mean=obs.mean(axis=(0, 1)))
    if variant == "rVAE":
        params.tensors["log_s2_trans"] = np.array(c["log_s2_trans"])
        if not c["learn_s2_trans"]:
            params.frozen = ("log_s2_trans",)
    opt = rvae.new_optimizer(params)
    E = c["epochs"]
    for epoch in range(E):
        lr = c["lr"] * (c["lr_final"] / c["lr"]) ** (epoch / max(E - 1, 1))
        _, params, opt, losses = rvae.run_sequence(params, obs, seed=rng, train=True,
                                                   opt_state=opt, lr=lr)
        if log is not None:
            log(epoch, params, float(np.mean(losses)))
    return params


def vae_ppc_mse(params: rvae.RvaeParams, code, counts, positions) -> float:
    rates = rvae.expected_observations(params, np.asarray(counts, dtype=np.float64))
    return float(np.mean((com_decode_real(code, rates) - positions) ** 2))


# --- checkpoints --------------------------------------------------------------

def to_checkpoint(model, tag: str, cfg: ExperimentConfig, seed: int) -> Checkpoint:
    if isinstance(model, hm.EfhParams):
        meta = {"family": "efh",
                "layout": [[b.size, b.kind, b.role] for b in model.layout],
                "clamp_events": model.clamp_events}
        tensors = {"W": model.W, "b_vis": model.b_vis, "b_hid": model.b_hid}
    elif isinstance(model, rvae.RvaeParams):
        meta = {"family": "rvae", "n_obs": model.n_obs, "d": model.d,
                "emission_kind": model.emission_kind, "variant": model.variant,
                "bounded_mean": model.bounded_mean, "frozen": list(model.frozen)}
        tensors = dict(model.tensors)
    elif isinstance(model, kf.LgdsParams):
        meta = {"family": "lgds"}
        tensors = {"A": model.A, "Q": model.Q, "C": model.C, "mu0": model.mu0, "S0": model.S0}
    else:
        raise ContractError(f"cannot checkpoint {type(model).__name__}")
    return Checkpoint(tag, tensors, cfg.to_text(), seed, meta)


def from_checkpoint(ckpt: Checkpoint):
    fam = ckpt.meta.get("family")
    t = ckpt.tensors
    if fam == "efh":
        layout = tuple(hm.Block(int(s), k, r) for s, k, r in ckpt.meta["layout"])
        return hm.EfhParams(t["W"], t["b_vis"], t["b_hid"], layout, ckpt.meta["clamp_events"])
    if fam == "rvae":
        m = ckpt.meta
        return rvae.RvaeParams(dict(t), m["n_obs"], m["d"], m["emission_kind"], m["variant"],
                               m["bounded_mean"], tuple(m["frozen"]))
    if fam == "lgds":
        return kf.LgdsParams(t["A"], t["Q"], t["C"], t["mu0"], t["S0"])
    raise ContractError(f"unknown model family {fam!r}")


# --- tables -------------------------------------------------------------------

def train_ppc_model(cfg: ExperimentConfig, tag: str, data: PPCData, seed: int):
    code = ppc_world(cfg).code()
    if tag in ("KF-1", "KF-2"):
        return fit_kf(cfg, 1 if tag == "KF-1" else 2, code, data.train_counts, seed)
    if tag in ("rEFH", "TRBM", "RTRBM"):
        return fit_efh(cfg, tag, data.train_counts, seed)
    if tag in ("rVAE", "TVAE"):
        return fit_vae(cfg, tag, data.train_counts, seed)
    raise ContractError(f"no PPC model {tag!r}")


def eval_ppc_model(cfg: ExperimentConfig, model, data: PPCData) -> float:
    code = ppc_world(cfg).code()
    pos = data.test_states[..., 0]
    if isinstance(model, kf.LgdsParams):
        return kf.kf_position_mse(model, code, data.test_counts, pos)
    if isinstance(model, hm.EfhParams):
        return efh_ppc_mse(model, code, data.test_counts, pos)
    return vae_ppc_mse(model, code, data.test_counts, pos)


def _table1_cell(args):
    cfg_text, seed, row = args
    cfg = ExperimentConfig.from_text(cfg_text)
    data = ppc_data(cfg, seed)
    try:
        if row == "order 0":
            return order0_ppc(ppc_world(cfg).code(), data.test_counts, data.test_states[..., 0])[0]
        return eval_ppc_model(cfg, train_ppc_model(cfg, row, data, seed), data)
    except Exception as exc:   # a failed cell is reported, not fatal
        return exc


def _table2_cell(args):
    cfg_text, seed, row = args
    cfg = ExperimentConfig.from_text(cfg_text)
    train, test = balls_data(cfg, seed)
    try:
        if row == "order 0":
            return order0_mse(test, batched=True)
        params = fit_efh(cfg, row, train, seed, kind=hm.BERNOULLI, section="efh_balls")
        return efh_balls_mse(params, test, cfg["efh_balls.sweeps"], seed)
    except Exception as exc:
        return exc


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("TLRM_THREADS", "1")))
    except ValueError:
        return 1


def _run_cells(fn, cells):
    n = _workers()
    if n == 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, cells))


@dataclass
class ResultsTable:
    rows: list          # (model, mean, std, n_ok, status, per-seed values)
    seeds: tuple

    def header(self):
        return list(TABLE_HEADER) + [f"seed_{s}" for s in self.seeds]

    def csv_rows(self):
        out = []
        for model, mean, std, n, status, per in self.rows:
            out.append([model, mean, std, n, status] + [("nan" if v is None else v) for v in per])
        return out

    def per_seed(self, model) -> dict:
        for row in self.rows:
            if row[0] == model:
                return dict(zip(self.seeds, row[5]))
        raise KeyError(model)


def _collect(rows, seeds, results) -> ResultsTable:
    table = []
    for i, model in enumerate(rows):
        per = results[i * len(seeds):(i + 1) * len(seeds)]
        ok = [v for v in per if not isinstance(v, Exception)]
        status = "ok" if len(ok) == len(per) else "failed:" + ";".join(
            type(v).__name__ for v in per if isinstance(v, Exception))
        mean = float(np.mean(ok)) if ok else float("nan")
        std = float(np.std(ok)) if ok else float("nan")
        table.append((model, mean, std, len(ok), status,
                      [None if isinstance(v, Exception) else float(v) for v in per]))
    return ResultsTable(table, tuple(seeds))


def reproduce_table1(cfg: ExperimentConfig, seeds) -> ResultsTable:
    text = cfg.to_text()
    cells = [(text, s, row) for row in TABLE1_ROWS for s in seeds]
    return _collect(TABLE1_ROWS, seeds, _run_cells(_table1_cell, cells))


def reproduce_table2(cfg: ExperimentConfig, seeds) -> ResultsTable:
    text = cfg.to_text()
    cells = [(text, s, row) for row in TABLE2_ROWS for s in seeds]
    return _collect(TABLE2_ROWS, seeds, _run_cells(_table2_cell, cells))
