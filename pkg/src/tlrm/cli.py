"""Command-line entry point: ``tlrm <command> [--config PATH] [--seed N] [--out DIR] [--model M]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness as hx
from . import harmonium as hm
from . import rvae
from .config import ExperimentConfig
from .errors import ContractError, TlrmError
from .storage import (load_checkpoint, save_checkpoint, write_bbl, write_csv, write_pgm,
                      write_ppc, write_ppc_csv)

COMMANDS = ("gen-data", "train", "eval", "predict", "generate", "table1", "table2", "dump-frames")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tlrm", description="Temporally local recurrent models: data, training, tables.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat 'section.key = value' file (defaults if omitted)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--model", choices=sorted(hx.MODEL_TAGS), default=None)
    p.add_argument("--checkpoint", default=None, help="checkpoint path (default OUT/MODEL.tlrm)")
    return p


def _model_key(args, cfg):
    return args.model or cfg["model.variant"]


def _ckpt_path(args, key):
    return Path(args.checkpoint) if args.checkpoint else Path(args.out) / f"{key}.tlrm"


def cmd_gen_data(args, cfg, out):
    if cfg["dataset.kind"] == "ppc":
        data = hx.ppc_data(cfg, args.seed)
        write_ppc(out / "ppc_train.ppc1", data.train_states, data.train_counts)
        write_ppc(out / "ppc_test.ppc1", data.test_states, data.test_counts)
        write_ppc_csv(out / "ppc_test.csv", data.test_states, data.test_counts)
    else:
        train, test = hx.balls_data(cfg, args.seed)
        write_bbl(out / "balls_train.bbl1", train)
        write_bbl(out / "balls_test.bbl1", test)


def _train(args, cfg, key):
    tag = hx.MODEL_TAGS[key]
    log_rows = []
    if cfg["dataset.kind"] == "ppc":
        data = hx.ppc_data(cfg, args.seed)
        code = hx.ppc_world(cfg).code()
        pos = data.test_states[..., 0]
        if tag.startswith("KF"):
            model = hx.fit_kf(cfg, 1 if tag == "KF-1" else 2, code, data.train_counts, args.seed)
        elif tag in ("rEFH", "TRBM", "RTRBM"):
            def log(epoch, params):
                log_rows.append([epoch, hx.efh_ppc_mse(params, code, data.test_counts, pos)])
            model = hx.fit_efh(cfg, tag, data.train_counts, args.seed, log=log)
        else:
            def log(epoch, params, loss):
                log_rows.append([epoch, loss, hx.vae_ppc_mse(params, code, data.test_counts, pos)])
            model = hx.fit_vae(cfg, tag, data.train_counts, args.seed, log=log)
    else:
        train, _ = hx.balls_data(cfg, args.seed)
        if tag in ("rEFH", "TRBM", "RTRBM"):
            model = hx.fit_efh(cfg, tag, train, args.seed, kind=hm.BERNOULLI, section="efh_balls")
        elif tag in ("rVAE", "TVAE"):
            def log(epoch, params, loss):
                log_rows.append([epoch, loss])
            model = hx.fit_vae(cfg, tag, train, args.seed, balls=True, log=log)
        else:
            raise ContractError(f"{tag} is only defined for the population-code dataset")
    return tag, model, log_rows


def cmd_train(args, cfg, out):
    key = _model_key(args, cfg)
    tag, model, log_rows = _train(args, cfg, key)
    save_checkpoint(_ckpt_path(args, key), hx.to_checkpoint(model, tag, cfg, args.seed))
    if log_rows:
        header = ["epoch", "loss", "decode_mse"] if tag in ("rVAE", "TVAE") else ["epoch", "decode_mse"]
        write_csv(out / f"train_{key}.csv", header, log_rows)


def _load_model(args, cfg):
    key = _model_key(args, cfg)
    path = _ckpt_path(args, key)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return key, hx.from_checkpoint(load_checkpoint(path))


def cmd_eval(args, cfg, out):
    key, model = _load_model(args, cfg)
    if cfg["dataset.kind"] == "ppc":
        data = hx.ppc_data(cfg, args.seed)
        mse = hx.eval_ppc_model(cfg, model, data)
    else:
        if not isinstance(model, hm.EfhParams):
            raise ContractError("balls evaluation is next-frame prediction (harmonium models only)")
        _, test = hx.balls_data(cfg, args.seed)
        mse = hx.efh_balls_mse(model, test, cfg["efh_balls.sweeps"], args.seed)
    write_csv(out / f"eval_{key}.csv", ["model", "seed", "mse"], [[hx.MODEL_TAGS[key], args.seed, mse]])


def cmd_predict(args, cfg, out):
    key, model = _load_model(args, cfg)
    if not isinstance(model, hm.EfhParams):
        raise ContractError("prediction uses clamped Gibbs sampling (harmonium models only)")
    _, test = hx.balls_data(cfg, args.seed)
    pred = hx.efh_predict_frames(model, test[:1], cfg["efh_balls.sweeps"], args.seed)[0]
    res = cfg["balls.res"]
    frames_dir = out / f"predict_{key}"
    frames_dir.mkdir(exist_ok=True)
    for t, frame in enumerate(pred):
        write_pgm(frames_dir / f"frame_{t + 1:04d}.pgm", frame.reshape(res, res))
    mse = float(np.mean((pred - test[0, 1:]) ** 2))
    write_csv(out / f"predict_{key}.csv", ["model", "seed", "mse"], [[hx.MODEL_TAGS[key], args.seed, mse]])


def cmd_generate(args, cfg, out):
    key, model = _load_model(args, cfg)
    if not isinstance(model, rvae.RvaeParams):
        raise ContractError("backward generation needs an rVAE checkpoint")
    frames = rvae.generate_backward(model, cfg["eval.gen_T"], hx.substream(args.seed, "generate"))
    M = frames.shape[1]
    write_csv(out / f"generate_{key}.csv", ["t"] + [f"x{m}" for m in range(M)],
              [[t] + list(f) for t, f in enumerate(frames)])
    if model.emission_kind == rvae.GAUSSIAN:
        res = int(round(np.sqrt(M)))
        if res * res == M:
            gdir = out / f"generate_{key}"
            gdir.mkdir(exist_ok=True)
            for t, f in enumerate(frames):
                write_pgm(gdir / f"frame_{t:04d}.pgm", f.reshape(res, res))


def _write_table(path, table):
    write_csv(path, table.header(), table.csv_rows())


def cmd_table1(args, cfg, out):
    seeds = (args.seed,) if args.seed_given else cfg["training.seeds"]
    _write_table(out / "table1.csv", hx.reproduce_table1(cfg, seeds))


def cmd_table2(args, cfg, out):
    seeds = (args.seed,) if args.seed_given else cfg["eval.table2_seeds"]
    _write_table(out / "table2.csv", hx.reproduce_table2(cfg, seeds))


def cmd_dump_frames(args, cfg, out):
    from .balls_world import render, simulate_balls
    world, res = hx.ball_world(cfg), cfg["balls.res"]
    states = simulate_balls(world, cfg["balls.T"], hx.substream(args.seed, "dump"))
    frames_dir = out / "frames"
    frames_dir.mkdir(exist_ok=True)
    for t, frame in enumerate(render(world, states, res)):
        write_pgm(frames_dir / f"frame_{t:04d}.pgm", frame)


HANDLERS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "generate": cmd_generate, "table1": cmd_table1, "table2": cmd_table2,
            "dump-frames": cmd_dump_frames}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(build_parser().format_usage().rstrip(), file=sys.stderr)
        print(f"tlrm: error: {exc}", file=sys.stderr)
        return 1
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    try:
        if args.config is not None:
            if not Path(args.config).is_file():
                raise FileNotFoundError(f"config file not found: {args.config}")
            cfg = ExperimentConfig.load(args.config)
        else:
            cfg = ExperimentConfig()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](args, cfg, out)
    except (TlrmError, OSError, ValueError) as exc:
        print(f"tlrm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
