"""Lab-time emulation of the closed-loop feedback integrator.

The analog loop runs in lab time tau in [0, lab_duration]; algorithm time
maps as t = T * (1 - tau / lab_duration), truncated at t_min. State starts
from N(0, I) (pre-charged capacitors) and integrates the reverse ODE (Euler
or RK4) or the reverse SDE (Euler-Maruyama) with fixed steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sde


class SolverError(Exception):
    pass


class DivergenceError(SolverError):
    """State became non-finite; carries the failing step index."""

    def __init__(self, msg, step):
        super().__init__(msg)
        self.step = step


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "ode"  # ode | sde
    method: str = "euler"  # euler | rk4 | euler_maruyama
    dt_lab: float = 1e-3
    lab_duration: float = 1.0
    record_stride: int = 10
    seed: int = 0
    t_min: float = sde.T_MIN

    def __post_init__(self):
        if self.dt_lab <= 0.0:
            raise SolverError("dt_lab must be positive")
        n = self.lab_duration / self.dt_lab
        if abs(n - round(n)) > 1e-9:
            raise SolverError("lab_duration must be a multiple of dt_lab")
        if self.mode == "sde":
            if self.method != "euler_maruyama":
                raise SolverError("sde mode requires euler_maruyama")
        elif self.mode == "ode":
            if self.method not in ("euler", "rk4"):
                raise SolverError("ode mode requires euler or rk4")
        else:
            raise SolverError(f"unknown mode {self.mode!r}")
        if self.record_stride < 1:
            raise SolverError("record_stride must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.lab_duration / self.dt_lab))


@dataclass
class Trajectory:
    times: np.ndarray  # lab time (s), strictly increasing from 0
    states: np.ndarray  # (len(times), n) recorded states, software units
    label: int | None = None

    @property
    def final(self):
        return self.states[-1]


def sample_initial(n, rng):
    """Initial state x_T ~ N(0, I_n) in software units."""
    if n < 1:
        raise SolverError("dimension must be >= 1")
    return rng.normal(0.0, 1.0, n)


def integrate(score, sched, config, x_init, rng=None,
              label=None, guidance=None):
    """Run one closed-loop trajectory and record it in lab time.

    `score` maps (x, t_alg, label) -> score vector. For SDE mode `rng`
    supplies the Wiener increments. Raises DivergenceError if the state
    leaves the finite range.
    """
    x = np.array(x_init, float)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite initial state")
    if config.mode == "sde" and rng is None:
        raise SolverError("sde mode needs an rng")

    n_steps = config.n_steps
    scale = sched.T / config.lab_duration  # algorithm time per lab second
    dt = -sched.T * config.dt_lab / config.lab_duration  # negative: T -> t_min

    def t_alg(tau):
        return max(sched.T * (1.0 - tau / config.lab_duration), config.t_min)

    times = [0.0]
    states = [x.copy()]
    for k in range(n_steps):
        tau = k * config.dt_lab
        t = t_alg(tau)
        if config.method == "euler":
            x = x + sde.f_ode(score, sched, x, t, label, guidance) * dt
        elif config.method == "rk4":
            t2 = max(t + 0.5 * dt, config.t_min)
            t3 = max(t + dt, config.t_min)
            k1 = sde.f_ode(score, sched, x, t, label, guidance)
            k2 = sde.f_ode(score, sched, x + 0.5 * dt * k1, t2, label, guidance)
            k3 = sde.f_ode(score, sched, x + 0.5 * dt * k2, t2, label, guidance)
            k4 = sde.f_ode(score, sched, x + dt * k3, t3, label, guidance)
            x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:  # euler_maruyama
            det = sde.f_sde_det(score, sched, x, t, label, guidance)
            eps = rng.normal(0.0, 1.0, x.shape)
            x = x + det * dt + sde.diffusion(sched, t) * np.sqrt(-dt) * eps
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"state diverged at step {k + 1}", step=k + 1)
        if (k + 1) % config.record_stride == 0 or k + 1 == n_steps:
            times.append((k + 1) * config.dt_lab)
            states.append(x.copy())
    return Trajectory(times=np.array(times), states=np.array(states),
                      label=label)


def sample_streams(seed, count):
    """Independent, order-invariant per-sample generators."""
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(count)]


def batch_trajectories(score_builder, sched, config, count, n=2,
                       label=None, guidance=None):
    """Integrate `count` independent trajectories.

    `score_builder(rng)` must return the score function for one sample;
    analog networks bind their read-noise stream here so samples stay
    independent and order-invariant. Raises DivergenceError aggregating the
    failing sample indices if any trajectory leaves the finite range.
    """
    if count < 1:
        raise SolverError("count must be >= 1")
    trajs = []
    failures = []
    for i, rng in enumerate(sample_streams(config.seed, count)):
        x0 = sample_initial(n, rng)
        try:
            trajs.append(integrate(score_builder(rng), sched, config, x0,
                                   rng=rng, label=label, guidance=guidance))
        except DivergenceError as err:
            failures.append((i, err))
    if failures:
        idx = [i for i, _ in failures]
        raise DivergenceError(
            f"{len(failures)} of {count} samples diverged (indices {idx})",
            step=failures[0][1].step,
        )
    return trajs


def batch_sample(score_builder, sched, config, count, n=2,
                 label=None, guidance=None):
    """Final states of `count` independent trajectories, shape (count, n)."""
    trajs = batch_trajectories(score_builder, sched, config, count, n=n,
                               label=label, guidance=guidance)
    return np.array([t.final for t in trajs])


def save_trajectory(traj, path):
    """CSV export: lab_time, x1..xn."""
    data = np.column_stack([traj.times, traj.states])
    n = traj.states.shape[1]
    header = "lab_time," + ",".join(f"x{i + 1}" for i in range(n))
    np.savetxt(path, data, delimiter=",", header=header, comments="")


def save_endpoints(finals, labels, path):
    """CSV export: sample_id, label, x1..xn (label -1 means unconditional)."""
    count, n = finals.shape
    if labels is None:
        labels = -np.ones(count, int)
    rows = np.column_stack([np.arange(count), np.asarray(labels), finals])
    header = "sample_id,label," + ",".join(f"x{i + 1}" for i in range(n))
    np.savetxt(path, rows, delimiter=",", header=header, comments="",
               fmt=["%d", "%d"] + ["%.18e"] * n)
