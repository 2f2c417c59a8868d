"""VAE encoder/decoder for the latent-diffusion pipeline.

The decoder (one linear layer, two transposed convolutions) can be lowered
onto crossbars by unrolling each transposed convolution into a matrix, so
decoding also experiences analog write/read noise. Convolution primitives
carry their own backward passes; the transposed convolution is implemented
exactly as the adjoint of the corresponding forward convolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analog, device

CLAMP_LO = -2.0  # software units; ClampConfig defaults over unit_volt 0.1
CLAMP_HI = 4.0

IMG_SHAPE = (12, 12)


@dataclass(frozen=True)
class LatentSpec:
    """2-D latent space with per-class target centers.

    The centers sit on a circle of radius 1 around the origin, separated by
    sqrt(3). Keeping the latent geometry inside the unit ball matters for
    sampling: the reverse integration starts from N(0, I), and the narrow
    beta schedule only transports mass a fraction of a unit, so targets much
    further out are simply never reached.
    """

    dim: int = 2
    class_names: tuple = ("H", "K", "U")
    radius: float = 1.0
    origin: tuple = (0.0, 0.0)
    angles_deg: tuple = (90.0, 210.0, 330.0)

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def centers(self):
        a = np.deg2rad(np.asarray(self.angles_deg))
        c = self.radius * np.column_stack([np.cos(a), np.sin(a)])
        c = c + np.asarray(self.origin)
        d = np.linalg.norm(c[:, None] - c[None, :], axis=-1)
        if np.any(d[~np.eye(len(c), dtype=bool)] <= 1.0):
            raise ValueError("class centers closer than 1.0")
        return c


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def deconv_out_size(n, k, stride, pad):
    return (n - 1) * stride - 2 * pad + k


def conv2d(x, w, stride=1, pad=0):
    """x (B,C,H,W), w (O,C,k,k) -> (B,O,Ho,Wo)."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho = conv_out_size(H, k, stride, pad)
    Wo = conv_out_size(W, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ValueError("convolution output would be empty")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    y = np.zeros((B, O, Ho, Wo))
    for u in range(k):
        for v in range(k):
            xs = xp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride]
            y += np.einsum("bchw,oc->bohw", xs, w[:, :, u, v])
    return y


def conv2d_backward(x, w, dy, stride=1, pad=0):
    """Gradients (dx, dw) of conv2d."""
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    Ho, Wo = dy.shape[2], dy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for u in range(k):
        for v in range(k):
            xs = xp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride]
            dw[:, :, u, v] = np.einsum("bchw,bohw->oc", xs, dy)
            dxp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride] += \
                np.einsum("bohw,oc->bchw", dy, w[:, :, u, v])
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad], dw
    return dxp, dw


def deconv2d(x, w, stride=1, pad=0):
    """Transposed convolution, the exact adjoint of conv2d under w.

    x (B,O,h,w), w (O,C,k,k) -> (B,C,Ho,Wo) with Ho = (h-1)*stride - 2*pad + k,
    so that <conv2d(a, w), x> == <a, deconv2d(x, w)>.
    """
    B, O, h, w_ = x.shape
    _, C, k, _ = w.shape
    Ho = deconv_out_size(h, k, stride, pad)
    Wo = deconv_out_size(w_, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ValueError("transposed-convolution output would be empty")
    yp = np.zeros((B, C, Ho + 2 * pad, Wo + 2 * pad))
    for u in range(k):
        for v in range(k):
            yp[:, :, u:u + stride * h:stride, v:v + stride * w_:stride] += \
                np.einsum("bohw,oc->bchw", x, w[:, :, u, v])
    if pad:
        return yp[:, :, pad:-pad, pad:-pad]
    return yp


def deconv2d_backward(x, w, dy, stride=1, pad=0):
    """Gradients (dx, dw) of deconv2d."""
    B, O, h, w_ = x.shape
    k = w.shape[2]
    dyp = np.pad(dy, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for u in range(k):
        for v in range(k):
            ys = dyp[:, :, u:u + stride * h:stride, v:v + stride * w_:stride]
            dw[:, :, u, v] = np.einsum("bohw,bchw->oc", x, ys)
            dx += np.einsum("bchw,oc->bohw", ys, w[:, :, u, v])
    return dx, dw


def unroll_deconv_matrix(w, stride, pad, in_shape):
    """Matrix M (out_size, in_size) with M @ x.flat == deconv2d(x).flat."""
    O, C, k, _ = w.shape
    h, w_ = in_shape
    in_size = O * h * w_
    cols = []
    basis = np.zeros((1, O, h, w_))
    for i in range(in_size):
        basis.flat[i] = 1.0
        cols.append(deconv2d(basis, w, stride, pad).ravel())
        basis.flat[i] = 0.0
    return np.array(cols).T


def _clip_mask(x):
    c = np.clip(x, CLAMP_LO, CLAMP_HI)
    return c, (x > CLAMP_LO) & (x < CLAMP_HI)


class VaeEncoder:
    """Two strided convolutions plus a linear head to (mu, log sigma^2)."""

    def __init__(self, seed=0, latent_dim=2):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim

        def init(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

        self.params = {
            "c1w": init((4, 1, 4, 4), 16), "c1b": np.zeros(4),
            "c2w": init((8, 4, 3, 3), 36), "c2b": np.zeros(8),
            "lw": init((2 * latent_dim, 72), 72), "lb": np.zeros(2 * latent_dim),
        }

    def forward(self, x):
        """x (B,1,12,12) -> (mu, logvar, cache)."""
        if x.shape[1:] != (1, *IMG_SHAPE):
            raise ValueError(f"expected (B,1,12,12), got {x.shape}")
        p = self.params
        u1 = conv2d(x, p["c1w"], 2, 2) + p["c1b"][None, :, None, None]
        a1 = np.maximum(u1, 0.0)
        u2 = conv2d(a1, p["c2w"], 2, 0) + p["c2b"][None, :, None, None]
        a2 = np.maximum(u2, 0.0)
        f = a2.reshape(x.shape[0], -1)
        o = f @ p["lw"].T + p["lb"]
        mu, logvar = o[:, :self.latent_dim], o[:, self.latent_dim:]
        cache = (x, u1, a1, u2, a2, f)
        return mu, logvar, cache

    def backward(self, cache, dmu, dlogvar):
        x, u1, a1, u2, a2, f = cache
        p = self.params
        do = np.concatenate([dmu, dlogvar], axis=1)
        g = {"lw": do.T @ f, "lb": do.sum(axis=0)}
        df = do @ p["lw"]
        da2 = df.reshape(a2.shape)
        du2 = da2 * (u2 > 0)
        g["c2b"] = du2.sum(axis=(0, 2, 3))
        da1, g["c2w"] = conv2d_backward(a1, p["c2w"], du2, 2, 0)
        du1 = da1 * (u1 > 0)
        g["c1b"] = du1.sum(axis=(0, 2, 3))
        _, g["c1w"] = conv2d_backward(x, p["c1w"], du1, 2, 2)
        return g


class VaeDecoder:
    """linear 2->(8,3,3), deconv 8->4 k3 s2, ReLU, deconv 4->1 k4 s2 p2, tanh.

    Every matrix stage clamps its input to the analog voltage window so the
    digital forward pass is the exact twin of the crossbar deployment.
    """

    SEED_SHAPE = (8, 3, 3)
    D1 = dict(stride=2, pad=0)  # (8,3,3) -> (4,7,7)
    D2 = dict(stride=2, pad=2)  # (4,7,7) -> (1,12,12)

    def __init__(self, seed=1, latent_dim=2):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim

        def init(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

        self.params = {
            "lw": init((72, latent_dim), latent_dim), "lb": np.zeros(72),
            "d1w": init((8, 4, 3, 3), 72), "d1b": np.zeros(4),
            "d2w": init((4, 1, 4, 4), 64), "d2b": np.zeros(1),
        }

    def forward(self, z):
        """z (B,2) -> (img (B,1,12,12), cache)."""
        p = self.params
        zc, mz = _clip_mask(z)
        h = zc @ p["lw"].T + p["lb"]
        hm = h.reshape(-1, *self.SEED_SHAPE)
        hc, mh = _clip_mask(hm)
        u1 = deconv2d(hc, p["d1w"], **self.D1) + p["d1b"][None, :, None, None]
        a1 = np.maximum(u1, 0.0)
        a1c, ma1 = _clip_mask(a1)
        u2 = deconv2d(a1c, p["d2w"], **self.D2) + p["d2b"][None, :, None, None]
        img = np.tanh(u2)
        cache = (z, zc, mz, hc, mh, u1, a1c, ma1, img)
        return img, cache

    def backward(self, cache, dimg):
        z, zc, mz, hc, mh, u1, a1c, ma1, img = cache
        p = self.params
        du2 = dimg * (1.0 - img**2)
        g = {"d2b": du2.sum(axis=(0, 2, 3))}
        da1c, g["d2w"] = deconv2d_backward(a1c, p["d2w"], du2, **self.D2)
        du1 = da1c * ma1 * (u1 > 0)
        g["d1b"] = du1.sum(axis=(0, 2, 3))
        dhc, g["d1w"] = deconv2d_backward(hc, p["d1w"], du1, **self.D1)
        dh = (dhc * mh).reshape(z.shape[0], -1)
        g["lw"] = dh.T @ zc
        g["lb"] = dh.sum(axis=0)
        dz = (dh @ p["lw"]) * mz
        return g, dz


def encode(encoder, image):
    """Posterior parameters (mu, sigma) for one 12x12 image in [-1, 1]."""
    image = np.asarray(image, float)
    if image.shape != IMG_SHAPE:
        raise ValueError(f"expected 12x12 image, got {image.shape}")
    mu, logvar, _ = encoder.forward(image[None, None])
    return mu[0], np.exp(0.5 * logvar[0])


def reparameterize(mu, sigma, rng):
    """z = mu + sigma * eps, eps ~ N(0, I)."""
    mu = np.asarray(mu, float)
    return mu + np.asarray(sigma, float) * rng.normal(0.0, 1.0, mu.shape)


@dataclass
class AnalogDecoder:
    """Decoder lowered to three crossbars (linear + two unrolled deconvs)."""

    net: analog.AnalogMLP
    relu_after: tuple = (1,)  # layer indices followed by ReLU in software

    def forward(self, z, rng):
        v = np.asarray(z, float) * self.net.unit_volt
        for k, layer in enumerate(self.net.layers):
            v = analog.layer_forward(layer, v, layer.bias_current,
                                     self.net.clamp, rng, net=self.net,
                                     layer_index=k)
        return np.tanh(v / self.net.unit_volt).reshape(IMG_SHAPE)


def deploy_decoder(decoder, config, rng, *, unit_volt=0.1,
                   programmer=device.program_array):
    """Program the decoder onto crossbars; deconvs become unrolled matrices."""
    p = decoder.params
    m1 = unroll_deconv_matrix(p["d1w"], **VaeDecoder.D1,
                              in_shape=VaeDecoder.SEED_SHAPE[1:])
    b1 = np.repeat(p["d1b"], 49)  # per-channel bias over the 7x7 maps
    m2 = unroll_deconv_matrix(p["d2w"], **VaeDecoder.D2, in_shape=(7, 7))
    b2 = np.repeat(p["d2b"], 144)
    stages = [(p["lw"], p["lb"]), (m1, b1), (m2, b2)]
    layers = []
    for k, (W, b) in enumerate(stages):
        w_max = np.max(np.abs(W))
        scale = config.weight_headroom / w_max
        xbar = programmer(device.weight_to_conductance(W.T, scale, config),
                          rng, config)
        layers.append(analog.AnalogLayer(
            xbar=xbar, gain=1.0 / scale,
            activation="relu" if k == 1 else "identity",
            bias_current=b * unit_volt * scale, scale=scale,
        ))
    net = analog.AnalogMLP(layers=layers, unit_volt=unit_volt)
    return AnalogDecoder(net=net)


def decode(decoder, z, mode="digital", rng=None, analog_decoder=None):
    """Map a latent point to a 12x12 image in [-1, 1]."""
    z = np.asarray(z, float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite latent point")
    if mode == "digital":
        img, _ = decoder.forward(z[None])
        return img[0, 0]
    if mode == "analog":
        if analog_decoder is None or rng is None:
            raise ValueError("analog mode needs a deployed decoder and rng")
        return analog_decoder.forward(z, rng)
    raise ValueError(f"unknown decode mode {mode!r}")


def save_vae(encoder, decoder, path, spec=None):
    """Versioned JSON with all parameters inline."""
    payload = {
        "format_version": 1,
        "latent_dim": decoder.latent_dim,
        "encoder": {k: v.tolist() for k, v in encoder.params.items()},
        "decoder": {k: v.tolist() for k, v in decoder.params.items()},
    }
    if spec is not None:
        payload["latent_spec"] = {
            "class_names": list(spec.class_names),
            "radius": spec.radius,
            "angles_deg": list(spec.angles_deg),
        }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_vae(path):
    with open(path) as f:
        payload = json.load(f)
    enc = VaeEncoder(latent_dim=payload["latent_dim"])
    dec = VaeDecoder(latent_dim=payload["latent_dim"])
    enc.params = {k: np.array(v) for k, v in payload["encoder"].items()}
    dec.params = {k: np.array(v) for k, v in payload["decoder"].items()}
    spec = None
    if "latent_spec" in payload:
        s = payload["latent_spec"]
        spec = LatentSpec(class_names=tuple(s["class_names"]),
                          radius=s["radius"],
                          angles_deg=tuple(s["angles_deg"]))
    return enc, dec, spec
