"""Desk-scale simulator of an analog in-memory diffusion-model solver.

Small score networks and a VAE are trained offline in float, deployed onto
modeled resistive-memory crossbars with write/read noise, and sampled by
continuous-time emulation of the reverse SDE/ODE loop.
"""

__version__ = "0.1.0"
