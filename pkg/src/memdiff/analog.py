"""Crossbar composition into the three-layer analog score network.

Each layer is a crossbar behind an input-voltage clamp (protective circuit),
a transimpedance gain turning summed column currents back into voltages, a
diode-realized ReLU on hidden layers, and a bias-current injection port that
carries both the trained bias and the time/condition embedding.

Deployment maps digital weights to conductances with a per-layer scale such
that max |w| lands on the positive headroom g_max - g_fixed; the gain 1/scale
undoes the mapping so the noiseless analog network reproduces the digital
function exactly (weights beyond the negative headroom clip).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import device
from .device import DeviceConfig


@dataclass(frozen=True)
class ClampConfig:
    v_lo: float = -0.2
    v_hi: float = 0.4

    def __post_init__(self):
        if not (self.v_lo < 0.0 < self.v_hi):
            raise ValueError("require v_lo < 0 < v_hi")


def clamp(v, cfg):
    """Protective input clamp, element-wise min/max."""
    return np.clip(v, cfg.v_lo, cfg.v_hi)


def relu(v):
    return np.maximum(v, 0.0)


@dataclass
class AnalogLayer:
    xbar: device.Crossbar
    gain: float  # V per mA
    activation: str  # relu | identity
    bias_current: np.ndarray  # mA, length = cols
    scale: float  # mS per unit weight, stored digitally

    def __post_init__(self):
        if self.gain <= 0.0:
            raise ValueError("gain must be positive")
        if self.bias_current.shape != (self.xbar.cols,):
            raise ValueError("bias length does not match output width")


@dataclass
class AnalogMLP:
    layers: list[AnalogLayer]
    clamp: ClampConfig = field(default_factory=ClampConfig)
    unit_volt: float = 0.1  # V per software unit
    time_emb: object = None
    cond_emb: object = None
    saturation_count: int = 0
    probe: object = None  # optional hook(layer_index, clamped_volts)


def layer_forward(layer, x_volts, bias_current, clamp_cfg, rng, net=None,
                  layer_index=0):
    """One analog layer: clamp -> crossbar matvec -> TIA gain -> activation."""
    vc = clamp(x_volts, clamp_cfg)
    if net is not None:
        net.saturation_count += int(np.sum(vc != x_volts))
        if net.probe is not None:
            net.probe(layer_index, vc)
    i = device.matvec(layer.xbar, vc, rng) + bias_current
    y = layer.gain * i
    if layer.activation == "relu":
        y = relu(y)
    return y


def mlp_forward(net, x, t_embed, c_embed, rng):
    """Full forward pass in software units.

    `t_embed` and `c_embed` are embedding vectors (length = hidden width);
    their sum is injected as extra bias current at every hidden layer.
    """
    e = np.asarray(t_embed, float)
    if c_embed is not None:
        e = e + np.asarray(c_embed, float)
    v = np.asarray(x, float) * net.unit_volt
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        bias = layer.bias_current
        if k < last:  # hidden layers receive the embedding current
            bias = bias + e * net.unit_volt * layer.scale
        v = layer_forward(layer, v, bias, net.clamp, rng, net=net,
                          layer_index=k)
    return v / net.unit_volt


def deploy(weights, config, rng, *, clamp_cfg=None, unit_volt=0.1,
           time_emb=None, cond_emb=None, programmer=device.program_array):
    """Program digital layers [(W, b), ...] onto crossbars.

    Hidden layers get ReLU, the final layer is identity. `programmer` lets
    the noise-sweep harness swap in ideal writes.
    """
    layers = []
    for k, (W, b) in enumerate(weights):
        W = np.asarray(W, float)
        b = np.asarray(b, float)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError(f"layer {k}: inconsistent weight/bias shapes")
        w_max = np.max(np.abs(W))
        if w_max <= 0.0:
            raise ValueError(f"layer {k}: max |weight| must be positive")
        scale = config.weight_headroom / w_max
        g_targets = device.weight_to_conductance(W.T, scale, config)
        xbar = programmer(g_targets, rng, config)
        layers.append(AnalogLayer(
            xbar=xbar,
            gain=1.0 / scale,
            activation="relu" if k < len(weights) - 1 else "identity",
            bias_current=b * unit_volt * scale,
            scale=scale,
        ))
    return AnalogMLP(layers=layers, clamp=clamp_cfg or ClampConfig(),
                     unit_volt=unit_volt, time_emb=time_emb,
                     cond_emb=cond_emb)


def deployed_weights(net):
    """Implied digital layers [(W, b), ...] read back without noise.

    Equals the source weights wherever no conductance clipping occurred.
    """
    out = []
    for layer in net.layers:
        W = device.conductance_to_weight(
            layer.xbar.g_target, layer.scale, layer.xbar.config).T
        b = layer.bias_current / (net.unit_volt * layer.scale)
        out.append((W, b))
    return out


def score_fn(net, rng):
    """Bind an AnalogMLP and a read-noise stream into a ScoreFn."""
    if net.time_emb is None:
        raise ValueError("network carries no time embedding")

    def fn(x, t, label):
        t_e = net.time_emb(t)
        c_e = net.cond_emb(label) if net.cond_emb is not None else None
        return mlp_forward(net, x, t_e, c_e, rng)

    return fn


def export_network(net, out_dir, prefix="layer"):
    """JSON metadata plus one conductance CSV per layer."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "unit_volt": net.unit_volt,
        "clamp": {"v_lo": net.clamp.v_lo, "v_hi": net.clamp.v_hi},
        "layers": [],
    }
    for k, layer in enumerate(net.layers):
        csv_name = f"{prefix}{k}_conductance.csv"
        device.save_conductances(layer.xbar, out_dir / csv_name)
        cfg = layer.xbar.config
        meta["layers"].append({
            "rows": layer.xbar.rows,
            "cols": layer.xbar.cols,
            "scale": layer.scale,
            "gain": layer.gain,
            "activation": layer.activation,
            "bias_current": layer.bias_current.tolist(),
            "conductance_csv": csv_name,
            "device": {f: getattr(cfg, f) for f in (
                "g_min", "g_max", "g_fixed", "write_tol", "write_step_mean",
                "write_step_sigma", "max_program_cycles", "read_noise_a",
                "read_noise_b", "quant_levels")},
        })
    with open(out_dir / f"{prefix}s.json", "w") as f:
        json.dump(meta, f, indent=2)
    return out_dir / f"{prefix}s.json"


def import_network(meta_path, time_emb=None, cond_emb=None):
    """Rebuild an AnalogMLP from export_network artifacts."""
    meta_path = Path(meta_path)
    with open(meta_path) as f:
        meta = json.load(f)
    layers = []
    for entry in meta["layers"]:
        cfg = DeviceConfig(**entry["device"])
        xbar = device.load_conductances(meta_path.parent / entry["conductance_csv"], cfg)
        layers.append(AnalogLayer(
            xbar=xbar,
            gain=entry["gain"],
            activation=entry["activation"],
            bias_current=np.array(entry["bias_current"]),
            scale=entry["scale"],
        ))
    return AnalogMLP(
        layers=layers,
        clamp=ClampConfig(**meta["clamp"]),
        unit_volt=meta["unit_volt"],
        time_emb=time_emb,
        cond_emb=cond_emb,
    )
