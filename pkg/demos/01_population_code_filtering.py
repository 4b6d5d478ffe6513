"""Decoding an oscillating angle from Poisson spike counts.

A damped oscillator drives 15 Gaussian-tuned neurons.  We decode the angle
three ways and compare mean squared errors:

  order 0  centre of mass of each frame on its own
  KF-1     Kalman filter with a first-order model fitted by EM
  KF-2     Kalman filter with a second-order model fitted by EM

Only the second-order model can represent the oscillation, so it should
win; the first-order filter still beats frame-by-frame decoding.

Run:  python demos/01_population_code_filtering.py   (about 20 s)
"""
import numpy as np

from tlrm import kalman_em as kf
from tlrm.ppc_world import PPCWorld, make_ppc_dataset
from tlrm.harness import order0_ppc

world = PPCWorld()
code = world.code()
train_states, train_counts = make_ppc_dataset(world, 10, 1000, 1)
test_states, test_counts = make_ppc_dataset(world, 4, 1000, 2)
pos = test_states[..., 0]

print(f"mean spikes per frame: {train_counts.sum(-1).mean():.2f}")
print(f"frames without spikes: {(train_counts.sum(-1) == 0).mean():.1%}")

mse0, skipped = order0_ppc(code, test_counts, pos)
print(f"order 0  MSE {mse0:.2e}  ({skipped} silent frames left out)")

obs = kf.to_pseudo_obs(code, train_counts)
for d in (1, 2):
    fit = kf.em_fit(obs, d, iters=30, init=kf.init_params(d, 0, dt=world.dt))
    mse = kf.kf_position_mse(fit.params, code, test_counts, pos)
    print(f"KF-{d}     MSE {mse:.2e}  (EM log-likelihood {fit.loglik[0]:.0f} -> {fit.loglik[-1]:.0f})")

A2 = kf.em_fit(obs, 2, iters=30, init=kf.init_params(2, 0, dt=world.dt)).params.A
print("fitted second-order transition eigenvalues:", np.round(np.linalg.eigvals(A2), 4))
print("true eigenvalues:                          ", np.round(np.linalg.eigvals(world.oscillator().A2), 4))
