"""Shared oracles for the test-suite."""
import numpy as np


def central_fd(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# Small but complete configuration: every CLI command finishes in seconds.
TINY_CFG = """\
# tiny smoke-test configuration
ppc.n_train = 2
ppc.n_test = 1
ppc.T = 60
efh.hidden = 12
efh.epochs = 1
efh.bptt_horizon = 3
vae.d = 2
vae.enc = 8
vae.dec = 8
vae.epochs = 1
kf.iters = 3
balls.n_train = 2
balls.n_test = 1
balls.T = 8
efh_balls.hidden = 16
efh_balls.epochs = 1
efh_balls.batch = 2
efh_balls.sweeps = 2
efh_balls.bptt_horizon = 2
vae_balls.d = 2
vae_balls.enc = 8
vae_balls.dec = 8
vae_balls.epochs = 1
training.seeds = 1,2
eval.table2_seeds = 1
eval.gen_T = 4
"""


# One pass/fail line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []
