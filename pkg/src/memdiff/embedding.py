"""Time and condition embeddings injected as hidden-layer bias currents."""

from __future__ import annotations

import numpy as np

DEFAULT_DIM = 14  # hidden width of the score network
TIME_SEED = 707
COND_SEED = 909


class TimeEmbedding:
    """Sinusoidal time code: [sin(2 pi W t), cos(2 pi W t)], W fixed."""

    def __init__(self, d=DEFAULT_DIM, seed=TIME_SEED):
        if d % 2 != 0:
            raise ValueError("embedding dim must be even")
        self.d = d
        self.seed = seed
        self.W = np.random.default_rng(seed).normal(0.0, 1.0, d // 2)

    def __call__(self, t):
        if not np.isfinite(t):
            raise ValueError("non-finite time")
        phase = 2.0 * np.pi * self.W * t
        return np.concatenate([np.sin(phase), np.cos(phase)])

    def batch(self, t):
        """Vectorized embed: t shape (B,) -> (B, d)."""
        phase = 2.0 * np.pi * np.asarray(t, float)[:, None] * self.W[None, :]
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


class ConditionEmbedding:
    """One-hot label times a fixed random projection; null maps to zero."""

    def __init__(self, n_classes=3, d=DEFAULT_DIM, seed=COND_SEED):
        self.n_classes = n_classes
        self.d = d
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.P = rng.normal(0.0, 1.0 / np.sqrt(d), (n_classes, d))

    def __call__(self, label):
        if label is None:
            return np.zeros(self.d)
        label = int(label)
        if not 0 <= label < self.n_classes:
            raise ValueError(f"label {label} out of range [0, {self.n_classes})")
        return self.P[label].copy()

    def batch(self, labels):
        """Vectorized embed: labels shape (B,), entries -1 meaning null."""
        labels = np.asarray(labels, int)
        if np.any(labels >= self.n_classes):
            raise ValueError("label out of range")
        out = np.zeros((labels.shape[0], self.d))
        mask = labels >= 0
        out[mask] = self.P[labels[mask]]
        return out
