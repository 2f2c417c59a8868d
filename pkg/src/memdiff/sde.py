"""Variance-preserving diffusion process and reverse-time right-hand sides.

The forward process is dx = -1/2 beta(t) x dt + sqrt(beta(t)) dw with a
linear beta(t); the reverse SDE and the probability-flow ODE share its
marginals. Classifier-free guidance blends conditional and unconditional
score evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

T_MIN = 1e-3  # reverse integration stops here; score scale diverges at t=0


@dataclass(frozen=True)
class VPSchedule:
    beta0: float = 0.001
    beta1: float = 0.5
    T: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.beta0 < self.beta1):
            raise ValueError("require 0 < beta0 < beta1")
        if self.T <= 0.0:
            raise ValueError("require T > 0")


@dataclass(frozen=True)
class GuidanceConfig:
    lam: float = 0.5

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("guidance strength must be >= 0")


def _check_t(sched, t):
    t = np.asarray(t, float)
    if np.any(t < 0.0) or np.any(t > sched.T):
        raise ValueError(f"t outside [0, {sched.T}]")
    return t


def beta(sched, t):
    """Linear noise rate beta0 + (beta1 - beta0) * t / T."""
    t = _check_t(sched, t)
    return sched.beta0 + (sched.beta1 - sched.beta0) * t / sched.T


def drift(sched, x, t):
    """Forward drift f(x, t) = -1/2 beta(t) x."""
    return -0.5 * beta(sched, t) * np.asarray(x, float)


def diffusion(sched, t):
    """Forward diffusion g(t) = sqrt(beta(t))."""
    return np.sqrt(beta(sched, t))


def beta_integral(sched, t):
    """B(t) = integral of beta from 0 to t (closed form for linear beta)."""
    t = _check_t(sched, t)
    return sched.beta0 * t + (sched.beta1 - sched.beta0) * t**2 / (2.0 * sched.T)


def marginal(sched, t):
    """Forward-marginal coefficients (m, sigma): x_t = m * x0 + sigma * eps."""
    B = beta_integral(sched, t)
    m = np.exp(-0.5 * B)
    sigma = np.sqrt(1.0 - np.exp(-B))
    return m, sigma


def score_gain(sched, t, floor=1e-6):
    """Digital post-gain 1/sigma(t) converting network output to a score.

    The network is trained to predict the sigma-scaled score (-eps), which
    keeps its output O(1); the time-varying gain applied after the readout
    restores the true score. `floor` guards the division at t -> 0.
    """
    _, sigma = marginal(sched, t)
    return 1.0 / max(float(sigma), floor)


def cfg_score(fn, x, t, label, guidance):
    """Guided score (1 + lam) * s(x, c, t) - lam * s(x, t)."""
    if label is None:
        raise ValueError("cfg_score requires a non-null label")
    cond = fn(x, t, label)
    if guidance.lam == 0.0:
        return cond
    return (1.0 + guidance.lam) * cond - guidance.lam * fn(x, t, None)


def _score(fn, x, t, label, guidance):
    if label is not None and guidance is not None:
        return cfg_score(fn, x, t, label, guidance)
    return fn(x, t, label)


def f_ode(fn, sched, x, t, label=None, guidance=None):
    """Probability-flow right-hand side f(x,t) - 1/2 g^2(t) s(x,t)."""
    s = _score(fn, x, t, label, guidance)
    return drift(sched, x, t) - 0.5 * beta(sched, t) * s


def f_sde_det(fn, sched, x, t, label=None, guidance=None):
    """Deterministic part of the reverse SDE: f(x,t) - g^2(t) s(x,t).

    The solver adds the g(t) dw term.
    """
    s = _score(fn, x, t, label, guidance)
    return drift(sched, x, t) - beta(sched, t) * s
