"""Resistive-memory cell and crossbar model.

Weights live on crossbars as analog conductances. A single device per cell
encodes a signed weight by subtracting a shared fixed conductance g_fixed
(the 20 kOhm row resistor). Writing is an iterative program-verify loop with
random step sizes; reading adds conductance-dependent Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class DeviceError(Exception):
    """Invalid device configuration or usage."""


class ProgrammingError(DeviceError):
    """Program-verify failed to land inside the tolerance band.

    Attributes:
        best_g: closest conductance achieved before giving up (mS).
        cell: (row, col) index when raised from array programming, else None.
    """

    def __init__(self, msg, best_g, cell=None):
        super().__init__(msg)
        self.best_g = best_g
        self.cell = cell


@dataclass(frozen=True)
class DeviceConfig:
    """Per-cell electrical parameters, all conductances in mS."""

    g_min: float = 0.02
    g_max: float = 0.10
    g_fixed: float = 0.05  # 1 / (20 kOhm)
    write_tol: float = 0.001
    write_step_mean: float = 0.004
    write_step_sigma: float = 0.0015
    max_program_cycles: int = 1000
    read_noise_a: float = 0.0002
    read_noise_b: float = 0.004
    quant_levels: int | None = None

    def __post_init__(self):
        if not (0.0 < self.g_min < self.g_fixed < self.g_max):
            raise DeviceError(
                f"require 0 < g_min < g_fixed < g_max, got "
                f"({self.g_min}, {self.g_fixed}, {self.g_max})"
            )
        if self.write_tol < 0.0:
            raise DeviceError("write_tol must be >= 0")
        if self.max_program_cycles < 1:
            raise DeviceError("max_program_cycles must be >= 1")
        for g in (self.g_min, self.g_max):
            if self.read_sigma(g) < 0.0:
                raise DeviceError(
                    f"read-noise std a + b*g is negative at g={g} mS"
                )
        if self.quant_levels is not None and self.quant_levels < 64:
            raise DeviceError("quant_levels must be >= 64 when set")

    def read_sigma(self, g):
        """Read-noise std at conductance g (mS): a + b*g."""
        return self.read_noise_a + self.read_noise_b * np.asarray(g, float)

    @property
    def weight_headroom(self):
        """One-sided positive conductance headroom g_max - g_fixed (mS)."""
        return self.g_max - self.g_fixed

    def noiseless(self):
        """Copy with read noise switched off (write path unchanged)."""
        return replace(self, read_noise_a=0.0, read_noise_b=0.0)


@dataclass
class Crossbar:
    """A programmed array of conductances. Immutable after programming."""

    g_target: np.ndarray
    g_programmed: np.ndarray
    config: DeviceConfig
    program_cycles: np.ndarray = field(default=None)

    @property
    def rows(self):
        return self.g_programmed.shape[0]

    @property
    def cols(self):
        return self.g_programmed.shape[1]


def weight_to_conductance(w, scale, config):
    """Map a dimensionless weight to a target cell conductance (mS).

    G_target = clip(w * scale + g_fixed, g_min, g_max): the effective weight
    range in conductance is [g_min - g_fixed, g_max - g_fixed].
    """
    if scale <= 0:
        raise DeviceError("scale must be positive")
    w = np.asarray(w, float)
    if not np.all(np.isfinite(w)):
        raise DeviceError("non-finite weight")
    return np.clip(w * scale + config.g_fixed, config.g_min, config.g_max)


def conductance_to_weight(g, scale, config):
    """Inverse of weight_to_conductance on the representable range."""
    if scale <= 0:
        raise DeviceError("scale must be positive")
    return (np.asarray(g, float) - config.g_fixed) / scale


def quantize(g, config):
    """Snap conductance to the nearest of quant_levels uniform levels."""
    if config.quant_levels is None:
        return g
    n = config.quant_levels
    span = config.g_max - config.g_min
    idx = np.rint((g - config.g_min) / span * (n - 1))
    return config.g_min + idx * span / (n - 1)


def program_cell(g_target, rng, config):
    """Program-verify a single cell.

    Starts from a random conductance, then each cycle verifies and, if outside
    the tolerance band, pulses toward the target with a step drawn from
    N(write_step_mean, write_step_sigma^2). Returns (g_achieved, cycles).
    """
    if not (config.g_min <= g_target <= config.g_max):
        raise DeviceError(f"target {g_target} mS outside device range")
    g_target = quantize(g_target, config)
    g = rng.uniform(config.g_min, config.g_max)
    best = g
    for cycle in range(1, config.max_program_cycles + 1):
        if abs(g - g_target) <= config.write_tol:
            return g, cycle
        step = rng.normal(config.write_step_mean, config.write_step_sigma)
        g = g + np.sign(g_target - g) * step
        g = float(np.clip(g, config.g_min, config.g_max))
        if abs(g - g_target) < abs(best - g_target):
            best = g
    raise ProgrammingError(
        f"no convergence to {g_target} mS within "
        f"{config.max_program_cycles} cycles (best {best} mS)",
        best_g=best,
    )


def program_array(g_targets, rng, config):
    """Program a whole conductance matrix cell by cell."""
    g_targets = np.asarray(g_targets, float)
    if np.any(g_targets < config.g_min) or np.any(g_targets > config.g_max):
        raise DeviceError("targets outside device conductance range")
    g_prog = np.empty_like(g_targets)
    cycles = np.empty(g_targets.shape, dtype=int)
    for idx in np.ndindex(g_targets.shape):
        try:
            g_prog[idx], cycles[idx] = program_cell(g_targets[idx], rng, config)
        except ProgrammingError as err:
            raise ProgrammingError(
                f"cell {idx}: {err}", best_g=err.best_g, cell=idx
            ) from err
    return Crossbar(
        g_target=g_targets.copy(),
        g_programmed=g_prog,
        config=config,
        program_cycles=cycles,
    )


def exact_array(g_targets, config):
    """Crossbar with g_programmed == g_target (ideal write, no verify loop).

    Used by the noise-sweep harness, which injects write noise directly as a
    Gaussian perturbation of the programmed conductances.
    """
    g_targets = np.asarray(g_targets, float)
    if np.any(g_targets < config.g_min) or np.any(g_targets > config.g_max):
        raise DeviceError("targets outside device conductance range")
    return Crossbar(
        g_target=g_targets.copy(),
        g_programmed=g_targets.copy(),
        config=config,
        program_cycles=np.zeros(g_targets.shape, dtype=int),
    )


def perturb_weights(xbar, sigma, rng):
    """New crossbar with N(0, sigma^2) added to every programmed conductance.

    Models a prescribed write-noise magnitude independent of the verify loop;
    results are clipped back into [g_min, g_max].
    """
    cfg = xbar.config
    g = xbar.g_programmed + rng.normal(0.0, sigma, xbar.g_programmed.shape)
    return Crossbar(
        g_target=xbar.g_target.copy(),
        g_programmed=np.clip(g, cfg.g_min, cfg.g_max),
        config=cfg,
        program_cycles=xbar.program_cycles.copy(),
    )


def read_matrix(xbar, rng):
    """One noisy read of the whole array as effective weights (mS).

    Returns (g_programmed + eps) - g_fixed with eps ~ N(0, sigma_r(g)^2)
    drawn fresh per call; never mutates the programmed state.
    """
    cfg = xbar.config
    sigma = cfg.read_sigma(xbar.g_programmed)
    eps = rng.normal(0.0, 1.0, xbar.g_programmed.shape) * sigma
    return xbar.g_programmed + eps - cfg.g_fixed


def matvec(xbar, v, rng):
    """Analog matrix-vector product: currents i = G_eff^T v (mS * V = mA).

    Inputs are applied on the rows (BLs) and currents summed down the
    columns (SLs); one fresh read-noise draw covers the whole call.
    """
    v = np.asarray(v, float)
    if v.shape != (xbar.rows,):
        raise DeviceError(
            f"input length {v.shape} does not match {xbar.rows} rows"
        )
    return read_matrix(xbar, rng).T @ v


def save_conductances(xbar, path):
    """Export programmed conductances (mS) as CSV."""
    np.savetxt(path, xbar.g_programmed, delimiter=",")


def load_conductances(path, config):
    """Import a programmed array from CSV; targets set equal to programmed."""
    g = np.atleast_2d(np.loadtxt(path, delimiter=","))
    return Crossbar(
        g_target=g.copy(),
        g_programmed=g,
        config=config,
        program_cycles=np.zeros(g.shape, dtype=int),
    )
