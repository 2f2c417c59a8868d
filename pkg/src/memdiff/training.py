"""Offline digital training.

Denoising score matching for the score network (with classifier-free
condition dropout) and VAE training with class-centered latent targets.
All gradients are analytic and verified against central finite differences
in the test suite; the optimizer is plain SGD with momentum.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import latent as latent_mod
from . import sde
from .embedding import ConditionEmbedding, TimeEmbedding

CLAMP_LO = -2.0  # software-unit twin of the analog voltage clamp
CLAMP_HI = 4.0


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_final: float | None = None  # cosine-decay floor; None = constant lr
    momentum: float = 0.9
    batch_size: int = 128
    steps: int = 4000
    p_uncond: float = 0.1
    seed: int = 0
    t_min: float = sde.T_MIN

    def __post_init__(self):
        if not 0.0 <= self.p_uncond < 1.0:
            raise TrainingError("p_uncond must be in [0, 1)")
        if self.lr_final is not None and self.lr_final > self.learning_rate:
            raise TrainingError("lr_final must not exceed learning_rate")

    def lr_at(self, step):
        """Cosine-annealed learning rate for a given step."""
        if self.lr_final is None:
            return self.learning_rate
        frac = step / max(self.steps, 1)
        return self.lr_final + 0.5 * (self.learning_rate - self.lr_final) \
            * (1.0 + np.cos(np.pi * frac))


class DigitalMLP:
    """2-14-14-2 score network, the float twin of the analog deployment.

    Hidden layers are ReLU; the sum of time and condition embeddings is added
    to both hidden pre-activations (mirroring bias-current injection). Every
    layer input passes the same clamp the protective circuit applies.
    """

    def __init__(self, dims=(2, 14, 14, 2), seed=0, n_classes=0,
                 time_emb=None, cond_emb=None):
        self.dims = tuple(dims)
        hidden = dims[1]
        self.time_emb = time_emb or TimeEmbedding(d=hidden)
        self.cond_emb = cond_emb
        if n_classes and self.cond_emb is None:
            self.cond_emb = ConditionEmbedding(n_classes=n_classes, d=hidden)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            self.weights.append(
                rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def layer_params(self):
        """[(W, b), ...] view consumed by analog deployment."""
        return list(zip(self.weights, self.biases))

    def embed(self, t, labels):
        """Per-sample hidden bias: time code plus condition code (-1 = null)."""
        e = self.time_emb.batch(t)
        if self.cond_emb is not None:
            e = e + self.cond_emb.batch(labels)
        return e

    def forward(self, X, t, labels=None):
        """Batched forward pass; returns (Y, cache)."""
        X = np.atleast_2d(np.asarray(X, float))
        t = np.asarray(t, float)
        if labels is None:
            labels = -np.ones(X.shape[0], int)
        E = self.embed(t, labels)
        h = X
        caches = []
        last = self.n_layers - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            c = np.clip(h, CLAMP_LO, CLAMP_HI)
            mask_c = (h > CLAMP_LO) & (h < CLAMP_HI)
            z = c @ W.T + b
            if k < last:
                z = z + E
                h = np.maximum(z, 0.0)
            else:
                h = z
            caches.append((c, mask_c, z))
        return h, caches

    def backward(self, caches, dY):
        """Parameter gradients for a given output gradient."""
        gw = [None] * self.n_layers
        gb = [None] * self.n_layers
        dh = dY
        last = self.n_layers - 1
        for k in range(last, -1, -1):
            c, mask_c, z = caches[k]
            dz = dh if k == last else dh * (z > 0)
            gw[k] = dz.T @ c
            gb[k] = dz.sum(axis=0)
            if k > 0:
                dh = (dz @ self.weights[k]) * mask_c
        return gw, gb

    def score(self, x, t, label=None):
        """Single evaluation of the raw (sigma-scaled) network output."""
        lbl = -1 if label is None else int(label)
        y, _ = self.forward(np.asarray(x, float)[None], np.array([t]),
                            np.array([lbl]))
        return y[0]

    def save(self, path):
        payload = {
            "format_version": 1,
            "dims": list(self.dims),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "time_emb": {"d": self.time_emb.d, "seed": self.time_emb.seed},
        }
        if self.cond_emb is not None:
            payload["cond_emb"] = {"n_classes": self.cond_emb.n_classes,
                                   "d": self.cond_emb.d,
                                   "seed": self.cond_emb.seed}
        with open(path, "w") as f:
            json.dump(payload, f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            payload = json.load(f)
        time_emb = TimeEmbedding(**payload["time_emb"])
        cond_emb = None
        if "cond_emb" in payload:
            cond_emb = ConditionEmbedding(**payload["cond_emb"])
        net = cls(dims=tuple(payload["dims"]), time_emb=time_emb,
                  cond_emb=cond_emb)
        net.weights = [np.array(w) for w in payload["weights"]]
        net.biases = [np.array(b) for b in payload["biases"]]
        return net


def dsm_loss(net, x0, sched, rng, labels=None, p_uncond=0.0,
             t_min=sde.T_MIN):
    """Denoising score-matching loss and exact gradients for one batch.

    Perturbs x0 to x_t = m(t) x0 + sigma(t) eps at t ~ U(t_min, T) and scores
    mean ||net(x_t, t, label) + eps||^2, so the network learns the
    sigma-scaled score -eps; samplers recover the score by dividing the
    output by sigma(t) (see `sde.score_gain`). Keeping the target O(1)
    across the whole time range is what lets a 14-unit network cover the
    1/sigma blow-up near t_min. With probability p_uncond a label is dropped
    to null, which trains the unconditional branch for classifier-free
    guidance.
    """
    x0 = np.atleast_2d(np.asarray(x0, float))
    B, n = x0.shape
    if B == 0:
        raise TrainingError("empty batch")
    t = rng.uniform(t_min, sched.T, B)
    eps = rng.normal(0.0, 1.0, (B, n))
    m, sig = sde.marginal(sched, t)
    x_t = m[:, None] * x0 + sig[:, None] * eps
    if labels is None:
        lbl = -np.ones(B, int)
    else:
        lbl = np.asarray(labels, int).copy()
        lbl[rng.random(B) < p_uncond] = -1
    y, caches = net.forward(x_t, t, lbl)
    r = y + eps
    loss = float(np.sum(r**2) / B)
    gw, gb = net.backward(caches, 2.0 * r / B)
    return loss, (gw, gb)


def project_weights(net, neg_pos_ratio=0.6):
    """Clip each weight matrix into the conductance-representable box.

    The crossbar maps max(W) onto the positive headroom g_max - g_fixed, so
    negatives are only representable down to -neg_pos_ratio * max(W)
    (0.03/0.05 mS at device defaults). Projecting during training keeps the
    deployment clip-free and the analog network an exact twin.
    """
    for W in net.weights:
        s = max(float(W.max()), 1e-6)
        np.clip(W, -neg_pos_ratio * s, None, out=W)


class SGD:
    """Momentum SGD over a flat list of parameter arrays (in place)."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, grads):
        for p, v, g in zip(self.params, self.vel, grads):
            v *= self.momentum
            v -= self.lr * g
            p += v


def train_score(dataset, sched, cfg, labels=None, dims=(2, 14, 14, 2),
                n_classes=0):
    """Train a score network by DSM; returns (net, loss_curve)."""
    dataset = np.asarray(dataset, float)
    rng = np.random.default_rng(cfg.seed)
    net = DigitalMLP(dims=dims, seed=cfg.seed, n_classes=n_classes)
    project_weights(net)
    opt = SGD(net.weights + net.biases, cfg.learning_rate, cfg.momentum)
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        opt.lr = cfg.lr_at(step)
        idx = rng.integers(0, len(dataset), cfg.batch_size)
        batch_labels = None if labels is None else np.asarray(labels)[idx]
        loss, (gw, gb) = dsm_loss(net, dataset[idx], sched, rng,
                                  labels=batch_labels,
                                  p_uncond=cfg.p_uncond, t_min=cfg.t_min)
        if not np.isfinite(loss):
            raise TrainingError(
                f"loss diverged at step {step}; lower the learning rate")
        opt.step(gw + gb)
        project_weights(net)
        losses[step] = loss
    return net, losses


def vae_loss(encoder, decoder, images, labels, gamma, centers, rng):
    """Reconstruction MSE plus gamma-weighted KL to the class target.

    KL(N(mu, sigma^2) || N(mu_hat, 1)) per dimension in closed form:
    (sigma^2 + (mu - mu_hat)^2 - 1 - log sigma^2) / 2.
    Returns (loss, mse, encoder grads, decoder grads).
    """
    B = images.shape[0]
    centers = np.asarray(centers, float)
    mu_hat = centers[np.asarray(labels, int)]
    mu, logvar, enc_cache = encoder.forward(images)
    sig = np.exp(0.5 * logvar)
    eps = rng.normal(0.0, 1.0, mu.shape)
    z = mu + sig * eps
    recon, dec_cache = decoder.forward(z)
    n_pix = recon[0].size
    mse = float(np.sum((recon - images)**2) / (B * n_pix))
    kl = float(np.sum(sig**2 + (mu - mu_hat)**2 - 1.0 - logvar) / (2.0 * B))
    loss = mse + gamma * kl

    drecon = 2.0 * (recon - images) / (B * n_pix)
    dec_grads, dz = decoder.backward(dec_cache, drecon)
    dmu = dz + gamma * (mu - mu_hat) / B
    dlogvar = dz * eps * 0.5 * sig + gamma * 0.5 * (sig**2 - 1.0) / B
    enc_grads = encoder.backward(enc_cache, dmu, dlogvar)
    return loss, mse, enc_grads, dec_grads


def train_vae(images, labels, gamma, centers, cfg):
    """Train encoder/decoder on 12x12 images in [-1, 1].

    Returns (encoder, decoder, loss_curve).
    """
    images = np.asarray(images, float)
    if images.ndim == 3:
        images = images[:, None]
    labels = np.asarray(labels, int)
    rng = np.random.default_rng(cfg.seed)
    encoder = latent_mod.VaeEncoder(seed=cfg.seed)
    decoder = latent_mod.VaeDecoder(seed=cfg.seed + 1)
    enc_keys = sorted(encoder.params)
    dec_keys = sorted(decoder.params)
    params = [encoder.params[k] for k in enc_keys] + \
             [decoder.params[k] for k in dec_keys]
    opt = SGD(params, cfg.learning_rate, cfg.momentum)

    def project_decoder(ratio=0.6):
        # decoder matrix stages end up on crossbars; keep them clip-free
        for key in ("lw", "d1w", "d2w"):
            W = decoder.params[key]
            s = max(float(W.max()), 1e-6)
            np.clip(W, -ratio * s, None, out=W)

    project_decoder()
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        idx = rng.integers(0, len(images), cfg.batch_size)
        loss, _, eg, dg = vae_loss(encoder, decoder, images[idx], labels[idx],
                                   gamma, centers, rng)
        if not np.isfinite(loss):
            raise TrainingError(
                f"loss diverged at step {step}; lower the learning rate")
        opt.step([eg[k] for k in enc_keys] + [dg[k] for k in dec_keys])
        project_decoder()
        losses[step] = loss
    return encoder, decoder, losses


def numeric_grad(f, param, h=1e-5, indices=None, rng=None, n_probe=20):
    """Central finite differences of scalar f() w.r.t. entries of `param`."""
    if indices is None:
        rng = rng or np.random.default_rng(0)
        flat = rng.choice(param.size, size=min(n_probe, param.size),
                          replace=False)
        indices = [np.unravel_index(i, param.shape) for i in flat]
    grads = {}
    for idx in indices:
        orig = param[idx]
        param[idx] = orig + h
        fp = f()
        param[idx] = orig - h
        fm = f()
        param[idx] = orig
        grads[idx] = (fp - fm) / (2.0 * h)
    return grads
