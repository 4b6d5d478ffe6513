"""Bouncing balls: simulate, render, learn and predict the next frame.

Three balls bounce elastically in a box and are rendered at 15x15.  A
recurrent harmonium is trained step by step; next-frame prediction runs
clamped Gibbs sampling with the carried hidden means held fixed.  Frames
are written as PGM images to ``demo_out/``.

A model this small and this briefly trained does not beat simply copying
the previous frame; the printout shows how far it gets.

Run:  python demos/03_bouncing_balls.py   (about 1 min)
"""
from pathlib import Path

import numpy as np

from tlrm import harmonium as hm
from tlrm.balls_world import BallWorld, kinetic_energy, make_balls_dataset, order0_mse, render, simulate_balls
from tlrm.harness import efh_predict_frames
from tlrm.storage import write_pgm

out = Path("demo_out")
out.mkdir(exist_ok=True)
world = BallWorld()

states = simulate_balls(world, 60, seed=0)
energy = [kinetic_energy(s) for s in states]
print(f"kinetic energy drift over 60 steps: {max(energy) / min(energy) - 1:.1e}")
for t, frame in enumerate(render(world, states, 15)[:20]):
    write_pgm(out / f"sim_{t:03d}.pgm", frame)

train = make_balls_dataset(world, 30, 100, 15, 1)
test = make_balls_dataset(world, 2, 100, 15, 2)
print(f"order 0 (copy previous frame) MSE: {order0_mse(test, batched=True):.4f}")

rng = np.random.default_rng(0)
params = hm.init_params(225, 200, hm.BERNOULLI, rng, obs_mean=train.mean(axis=(0, 1)))
mom = hm.Momentum.zeros(params)
hyper = hm.EfhHyper(lr=3e-3, momentum=0.9)
for epoch in range(5):
    for start in range(0, len(train), 10):
        hm.train_sequence(params, hm.EfhVariant("rEFH"), train[start:start + 10], hyper, rng, mom)
    for sweeps in (1, 25):
        pred = efh_predict_frames(params, test, sweeps, 0)
        print(f"epoch {epoch + 1}  {sweeps:2d}-sweep prediction MSE {np.mean((pred - test[:, 1:]) ** 2):.4f}")

pred = efh_predict_frames(params, test[:1], 25, 0)[0]
for t in range(20):
    write_pgm(out / f"pred_{t + 1:03d}.pgm", pred[t].reshape(15, 15))
print(f"wrote frames to {out}/")
