"""Sensitive-direction estimation, interpolated augmentation, and the direction probe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetError, EmbeddingDataset
from .nn import AdamState, adam_step, classifier_loss_grad, init_classifier, predict


@dataclass(frozen=True)
class SensitiveDirection:
    alpha: np.ndarray
    alpha_norm: float
    n_pos: int
    n_neg: int

    @property
    def p(self) -> int:
        return self.alpha.shape[0]

    @classmethod
    def from_vector(cls, alpha, n_pos=1, n_neg=1) -> SensitiveDirection:
        alpha = np.asarray(alpha, dtype=np.float64)
        return cls(alpha, float(np.linalg.norm(alpha)), n_pos, n_neg)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "alpha_norm": self.alpha_norm, "n_pos": self.n_pos, "n_neg": self.n_neg}

    @classmethod
    def from_dict(cls, obj) -> SensitiveDirection:
        return cls(np.array(obj["alpha"], dtype=np.float64), float(obj["alpha_norm"]), int(obj["n_pos"]), int(obj["n_neg"]))


def compute_direction(ds: EmbeddingDataset, scope="train") -> SensitiveDirection:
    """Mean embedding of the ``s = 1`` group minus mean of the ``s = 0`` group within ``scope``."""
    rows = ds.mask(scope)
    H = ds.embeddings[rows]
    s = ds.sensitive[rows]
    n_pos = int(np.sum(s == 1))
    n_neg = int(np.sum(s == 0))
    if n_pos == 0 or n_neg == 0:
        raise DatasetError("empty group: both sensitive groups need at least one node in scope")
    alpha = H[s == 1].mean(axis=0) - H[s == 0].mean(axis=0)
    return SensitiveDirection(alpha, float(np.linalg.norm(alpha)), n_pos, n_neg)


def sample_offsets(k, eps: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. Uniform(-eps, eps) offsets; ``k`` may be an int or a shape tuple."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0:
        return np.zeros(k)
    return rng.uniform(-eps, eps, size=k)


@dataclass(frozen=True)
class AugmentationSet:
    """``k`` sampled points ``h_i + t_j * alpha`` with ``|t_j| <= eps`` around node ``index``."""

    index: int
    offsets: np.ndarray
    eps: float

    def __post_init__(self):
        if len(self.offsets) < 1:
            raise ValueError("augmentation set needs k >= 1")
        if np.any(np.abs(self.offsets) > self.eps):
            raise ValueError("offset outside [-eps, eps]")

    def materialize(self, h, alpha) -> np.ndarray:
        return np.asarray(h)[None, :] + self.offsets[:, None] * np.asarray(alpha)[None, :]


def rotated_control(alpha, angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Random vector with the norm of ``alpha`` at exactly ``angle_deg`` degrees from it."""
    a = alpha.alpha if isinstance(alpha, SensitiveDirection) else np.asarray(alpha, dtype=np.float64)
    if a.shape[0] < 2:
        raise ValueError("rotated_control needs p >= 2")
    norm = np.linalg.norm(a)
    if norm == 0:
        raise ValueError("cannot rotate a zero vector")
    u = a / norm
    if angle_deg == 0:
        return a.copy()
    while True:
        r = rng.standard_normal(a.shape[0])
        r -= (r @ u) * u
        r -= (r @ u) * u  # second pass tightens orthogonality
        rn = np.linalg.norm(r)
        if rn > 1e-8:
            break
    v = r / rn
    theta = np.deg2rad(angle_deg)
    return norm * (np.cos(theta) * u + np.sin(theta) * v)


def fit_sensitive_probe(X, s, seed: int, epochs: int = 200, lr: float = 0.05):
    """Logistic-regression probe for the sensitive bit, full-batch Adam."""
    rng = np.random.default_rng(seed)
    probe = init_classifier(X.shape[1], 2, rng, hidden=())
    params = probe.arrays()
    state = AdamState.zeros_like(params, lr=lr)
    for _ in range(epochs):
        _, grads = classifier_loss_grad(type(probe).from_arrays(params), X, s)
        params, state = adam_step(params, grads.arrays(), state)
    return type(probe).from_arrays(params)


def probe_sensitive_accuracy(ds: EmbeddingDataset, direction, t_grid, seed: int, probe=None, epochs: int = 200) -> np.ndarray:
    """Sensitive-probe accuracy on test embeddings shifted by ``t * direction`` for each ``t``.

    The probe is trained on the train split (or passed in, to share one probe
    across several directions).
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if t_grid.size == 0:
        raise ValueError("t_grid must be non-empty")
    train, test = ds.mask("train"), ds.mask("test")
    for name, rows in (("train", train), ("test", test)):
        if len(np.unique(ds.sensitive[rows])) < 2:
            raise DatasetError(f"{name} split must contain both sensitive groups")
    if probe is None:
        probe = fit_sensitive_probe(ds.embeddings[train], ds.sensitive[train], seed, epochs)
    H, s = ds.embeddings[test], ds.sensitive[test]
    direction = np.asarray(direction.alpha if isinstance(direction, SensitiveDirection) else direction)
    return np.array([np.mean(predict(probe, H + t * direction) == s) for t in t_grid])


def probe_curves(ds: EmbeddingDataset, alpha: SensitiveDirection, t_grid, angles=(0, 30, 60, 90),
                 n_controls: int = 100, seed: int = 0) -> list[tuple[float, float, float]]:
    """Rows ``(t, angle_deg, accuracy)``; non-zero angles average over ``n_controls`` random vectors."""
    train = ds.mask("train")
    probe = fit_sensitive_probe(ds.embeddings[train], ds.sensitive[train], seed)
    rng = np.random.default_rng(seed)
    rows = []
    for angle in angles:
        if angle == 0:
            acc = probe_sensitive_accuracy(ds, alpha.alpha, t_grid, seed, probe=probe)
        else:
            acc = np.mean([
                probe_sensitive_accuracy(ds, rotated_control(alpha, angle, rng), t_grid, seed, probe=probe)
                for _ in range(n_controls)
            ], axis=0)
        rows.extend((float(t), float(angle), float(a)) for t, a in zip(t_grid, acc))
    return rows
