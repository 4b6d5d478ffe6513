"""Step-local training of a recurrent harmonium and a recurrent VAE.

Both models see one time step at a time: the current spike counts plus a
summary of the past (hidden means for the harmonium, posterior mean and
variance for the VAE).  No gradient crosses time steps.  We train each on a
small population-code data set and decode position from the expected
observations.

Run:  python demos/02_step_local_learning.py   (about 30 s)
"""
import numpy as np

from tlrm import harmonium as hm
from tlrm import rvae
from tlrm.config import ExperimentConfig
from tlrm.harness import efh_ppc_mse, fit_vae, order0_ppc, vae_ppc_mse
from tlrm.ppc_world import PPCWorld, make_ppc_dataset

world = PPCWorld()
code = world.code()
_, train = make_ppc_dataset(world, 10, 1000, 1)
test_states, test = make_ppc_dataset(world, 4, 1000, 2)
pos = test_states[..., 0]
print(f"order 0 MSE {order0_ppc(code, test, pos)[0]:.2e}")

# Recurrent harmonium: the previous hidden means are modeled visibles.
rng = np.random.default_rng(0)
params = hm.init_params(15, 60, hm.POISSON, rng, obs_mean=train.mean(axis=(0, 1)))
mom = hm.Momentum.zeros(params)
hyper = hm.EfhHyper(lr=1e-3, momentum=0.9)
for epoch in range(10):
    hm.train_sequence(params, hm.EfhVariant("rEFH"), train, hyper, rng, mom)
    if epoch % 3 == 2:
        print(f"rEFH epoch {epoch + 1:2d}  decode MSE {efh_ppc_mse(params, code, test, pos):.2e}")

# Recurrent VAE: one Adam step per time step on the single-sample free
# energy, with the learning rate decaying geometrically over the epochs.
cfg = ExperimentConfig()
cfg["vae.epochs"] = 10


def report(epoch, params, loss):
    if epoch % 3 == 2 or epoch == cfg["vae.epochs"] - 1:
        print(f"rVAE epoch {epoch + 1:2d}  free energy {loss:7.3f}  "
              f"decode MSE {vae_ppc_mse(params, code, test, pos):.2e}")


vae = fit_vae(cfg, "rVAE", train, seed=1, log=report)

# The reverse transition lets the VAE generate backwards in time.
rates = rvae.generate_backward(vae, 10, seed=3)
print("backward-generated rate peaks (neuron index):", rates.argmax(axis=1))
