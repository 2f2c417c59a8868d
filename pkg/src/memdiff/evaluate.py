"""Quantitative evaluation: histogram KL, class accuracy, noise sweeps.

The KL estimator bins both sample sets on a shared axis-aligned grid with
pseudocount smoothing; out-of-domain samples are clipped into the edge bins.
The noise sweep redeploys a trained float network per grid cell with write
noise expressed as a fraction of the conductance range and read noise as a
fraction of g_fixed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import analog, device, sde, solver
from .device import DeviceConfig


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class KlConfig:
    bins_per_axis: int = 50
    lo: float = -2.0
    hi: float = 2.0
    pseudocount: float = 1e-6

    def __post_init__(self):
        if self.bins_per_axis < 10:
            raise EvalError("bins_per_axis must be >= 10")
        if self.pseudocount <= 0:
            raise EvalError("pseudocount must be positive")
        if self.hi <= self.lo:
            raise EvalError("empty domain")


def _histogram(samples, cfg):
    samples = np.atleast_2d(np.asarray(samples, float))
    if samples.shape[0] == 0:
        raise EvalError("empty sample set")
    clipped = np.clip(samples, cfg.lo, cfg.hi)
    edges = [np.linspace(cfg.lo, cfg.hi, cfg.bins_per_axis + 1)] * samples.shape[1]
    counts, _ = np.histogramdd(clipped, bins=edges)
    counts += cfg.pseudocount
    return counts / counts.sum()


def histogram_kl(p_samples, q_samples, cfg=None):
    """D_KL(P | Q) in nats from two sample sets, >= 0 by Gibbs."""
    cfg = cfg or KlConfig()
    p = _histogram(p_samples, cfg)
    q = _histogram(q_samples, cfg)
    return float(np.sum(p * np.log(p / q)))


def nearest_center_accuracy(samples, labels, centers):
    """Fraction of samples whose nearest center matches their label."""
    samples = np.atleast_2d(np.asarray(samples, float))
    labels = np.asarray(labels, int)
    if samples.shape[0] != labels.shape[0]:
        raise EvalError("samples/labels length mismatch")
    centers = np.asarray(centers, float)
    d = np.linalg.norm(samples[:, None] - centers[None], axis=-1)
    return float(np.mean(np.argmin(d, axis=1) == labels))


@dataclass
class NoiseSweepGrid:
    write_sigmas: np.ndarray  # conductance std in mS per cell row
    read_sigmas: np.ndarray  # read-noise std in mS per cell column
    mode: str
    repeats: int
    kl_results: np.ndarray  # (|write|, |read|) mean over repeats
    raw: np.ndarray  # (|write|, |read|, repeats); NaN flags a failed cell


def _cell_device(base, read_sigma):
    return dataclasses.replace(base, read_noise_a=read_sigma,
                               read_noise_b=0.0)


def noise_sweep(net, sched, truth_samples, *, write_fracs, read_fracs,
                mode="ode", repeats=3, count=500, base_device=None,
                kl_cfg=None, solver_cfg=None, master_seed=0,
                label=None, guidance=None):
    """KL-vs-noise grid for a trained float score network.

    write_fracs scale the conductance range g_max - g_min into a Gaussian
    perturbation of the programmed weights; read_fracs scale g_fixed into
    the per-read noise std. Failed cells are flagged NaN, the grid is still
    returned.
    """
    base_device = base_device or DeviceConfig()
    kl_cfg = kl_cfg or KlConfig()
    solver_cfg = solver_cfg or solver.SolverConfig()
    if mode == "sde":
        method = "euler_maruyama"
    elif solver_cfg.method == "euler_maruyama":
        method = "euler"
    else:
        method = solver_cfg.method
    write_fracs = np.asarray(write_fracs, float)
    read_fracs = np.asarray(read_fracs, float)
    g_range = base_device.g_max - base_device.g_min
    raw = np.full((len(write_fracs), len(read_fracs), repeats), np.nan)
    for iw, fw in enumerate(write_fracs):
        sigma_w = fw * g_range
        for ir, fr in enumerate(read_fracs):
            cfg_cell = _cell_device(base_device, fr * base_device.g_fixed)
            for rep in range(repeats):
                seed_seq = np.random.SeedSequence(
                    [master_seed, iw, ir, rep])
                rng = np.random.default_rng(seed_seq)
                cell_seed = int(seed_seq.generate_state(1)[0])

                def programmer(g_targets, prng, dcfg):
                    xbar = device.exact_array(g_targets, dcfg)
                    if sigma_w > 0.0:
                        xbar = device.perturb_weights(xbar, sigma_w, prng)
                    return xbar

                try:
                    anet = analog.deploy(
                        net.layer_params(), cfg_cell, rng,
                        time_emb=net.time_emb, cond_emb=net.cond_emb,
                        programmer=programmer)
                    run_cfg = dataclasses.replace(
                        solver_cfg, mode=mode, method=method, seed=cell_seed)
                    def builder(srng):
                        fn = analog.score_fn(anet, srng)
                        return lambda x, t, lbl=None: (
                            fn(x, t, lbl) * sde.score_gain(sched, t))

                    finals = solver.batch_sample(
                        builder, sched, run_cfg, count, label=label,
                        guidance=guidance)
                    raw[iw, ir, rep] = histogram_kl(finals, truth_samples,
                                                    kl_cfg)
                except (solver.SolverError, device.DeviceError):
                    continue  # leave NaN, keep the rest of the grid
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(raw, axis=2)
    return NoiseSweepGrid(
        write_sigmas=write_fracs * g_range,
        read_sigmas=read_fracs * base_device.g_fixed,
        mode=mode, repeats=repeats, kl_results=mean, raw=raw)


def save_sweep_csv(grid, path):
    """Rows: write_sigma, read_sigma, mode, repeat, kl."""
    with open(path, "w") as f:
        f.write("write_sigma,read_sigma,mode,repeat,kl\n")
        for iw, sw in enumerate(grid.write_sigmas):
            for ir, sr in enumerate(grid.read_sigmas):
                for rep in range(grid.repeats):
                    f.write(f"{sw:.9g},{sr:.9g},{grid.mode},{rep},"
                            f"{grid.raw[iw, ir, rep]:.9g}\n")
