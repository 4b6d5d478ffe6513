"""Recurrent latent-variable models trained with temporally local rules.

Modules:

* :mod:`tlrm.diff_engine` - small reverse-mode autodiff tape and Adam.
* :mod:`tlrm.ppc_world` - oscillator observed through a Poisson population code.
* :mod:`tlrm.balls_world` - bouncing-ball videos.
* :mod:`tlrm.kalman_em` - Kalman filter, RTS smoother and EM (the oracle).
* :mod:`tlrm.harmonium` - rEFH / TRBM / RTRBM.
* :mod:`tlrm.rvae` - recurrent VAE and TVAE.
* :mod:`tlrm.harness` and :mod:`tlrm.cli` - experiments and the command line.
"""
__version__ = "0.1.0"
