"""Flat ``section.key = value`` experiment configuration.

Every key has a default (``DEFAULTS``).  A config file may override any
subset; unknown keys are rejected.  Values are parsed according to the type
of their default.  Lines starting with ``#`` and blank lines are ignored.
"""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError

DEFAULTS = {
    # which generator `gen-data`, `train`, `eval` use
    "dataset.kind": "ppc",

    "ppc.omega": 1.2566370614359172,   # 2*pi*0.2
    "ppc.zeta": 0.1,
    "ppc.dt": 0.1,
    "ppc.pos_std": 0.5,
    "ppc.n_neurons": 15,
    "ppc.lo": -2.0,
    "ppc.hi": 2.0,
    "ppc.gain": 4.0,
    "ppc.sigma_tc": 0.0,               # 0 -> spacing between preferred angles
    "ppc.n_train": 40,
    "ppc.n_test": 10,
    "ppc.T": 1000,

    "balls.n_balls": 3,
    "balls.radius": 1.2,
    "balls.box_size": 10.0,
    "balls.speed": 0.5,
    "balls.dt": 1.0,
    "balls.res": 15,
    "balls.n_train": 100,
    "balls.n_test": 5,
    "balls.T": 200,

    # harmonium family on the population code
    "efh.hidden": 60,
    "efh.lr": 1e-3,
    "efh.momentum": 0.9,
    "efh.weight_decay": 0.0,
    "efh.cd_k": 1,
    "efh.epochs": 40,
    "efh.rtrbm_cd_k": 5,
    "efh.rtrbm_lr": 3e-3,
    "efh.bptt_horizon": 10,

    # harmonium family on bouncing balls
    "efh_balls.hidden": 400,
    "efh_balls.lr": 3e-3,
    "efh_balls.momentum": 0.9,
    "efh_balls.weight_decay": 0.0,
    "efh_balls.cd_k": 1,
    "efh_balls.epochs": 10,
    "efh_balls.batch": 10,
    "efh_balls.rtrbm_cd_k": 1,
    "efh_balls.rtrbm_lr": 3e-3,
    "efh_balls.bptt_horizon": 10,
    "efh_balls.sweeps": 25,

    # recurrent VAE
    "vae.d": 10,
    "vae.enc": 64,
    "vae.dec": 64,
    "vae.lr": 1e-3,
    "vae.lr_final": 1e-4,
    "vae.epochs": 30,
    "vae.log_s2_trans": -2.302585092994046,   # log 0.1
    "vae.learn_s2_trans": False,
    "vae_balls.d": 32,
    "vae_balls.enc": 256,
    "vae_balls.dec": 256,
    "vae_balls.epochs": 5,

    "kf.iters": 50,

    "training.seeds": (1, 2, 3, 4, 5),
    "eval.table2_seeds": (1, 2, 3),
    "eval.gen_T": 20,

    "model.variant": "refh",
}


def _parse_value(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


class ExperimentConfig:
    """Mapping of ``section.key`` to typed values, defaults filled in."""

    def __init__(self, overrides=None):
        self._values = dict(DEFAULTS)
        for key, value in (overrides or {}).items():
            self[key] = value

    def __getitem__(self, key):
        return self._values[key]

    def __setitem__(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        default = DEFAULTS[key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse_value(key, value, default)
        self._values[key] = value

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)}

    def to_text(self) -> str:
        lines = []
        for key in DEFAULTS:
            v = self._values[key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            cfg[key] = value
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())
