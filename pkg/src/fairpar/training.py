"""Adapter training schemes (naive, RandAT, MinMax) and Gaussian hardening of the classifier."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augmenter import sample_offsets
from .data import EmbeddingDataset
from .metrics import metric_acc_f1, metric_dp, metric_eo
from .nn import (
    AdamState,
    AdapterParams,
    ClassifierParams,
    CELoss,
    MinMaxLoss,
    RandATLoss,
    adam_step,
    adapter_forward,
    backward,
    classifier_loss_grad,
    init_adapter,
    init_classifier,
    loss_value,
    predict,
)

SCHEMES = ("naive", "randat", "minmax")
CONFIG_VERSION = "fairpar-train-1"


@dataclass(frozen=True)
class TrainConfig:
    scheme: str = "minmax"
    eps: float = 0.5
    k: int = 20
    lam: float = 0.1
    epochs: int = 1000
    lr: float = 0.01
    hardening_rounds: int = 100
    hardening_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.eps < 0 or self.k < 1 or self.lam < 0 or self.epochs < 1:
            raise ValueError("need eps >= 0, k >= 1, lam >= 0, epochs >= 1")
        if not self.hardening_std > 0 or self.hardening_rounds < 0 or not self.lr > 0:
            raise ValueError("need hardening_std > 0, hardening_rounds >= 0, lr > 0")

    def to_dict(self) -> dict:
        return {"version": CONFIG_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, obj: dict) -> TrainConfig:
        obj = dict(obj)
        version = obj.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported train config version {version!r}")
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        return cls(**obj)


@dataclass
class History:
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    val_dp: list = field(default_factory=list)
    val_eo: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        lines = ["epoch,loss,val_acc,val_dp,val_eo"]
        for row in zip(self.epoch, self.loss, self.val_acc, self.val_dp, self.val_eo):
            lines.append(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _direction_vector(direction):
    return np.asarray(getattr(direction, "alpha", direction), dtype=np.float64)


def _batch_offsets(m, eps, k, rng, offsets):
    if offsets is not None:
        return np.asarray(offsets, dtype=np.float64).reshape(m, -1)
    return sample_offsets((m, k), eps, rng)


def randat_loss(g, d, H, y, direction, eps, k, rng=None, offsets=None) -> float:
    """Mean over nodes of the mean cross-entropy over ``k`` sampled augmentations."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] == 0:
        raise ValueError("empty batch")
    t = _batch_offsets(H.shape[0], eps, k, rng, offsets)
    return loss_value(g, d, H, y, RandATLoss(_direction_vector(direction), t))


def minmax_loss(g, d, H, y, direction, eps, k, lam, rng=None, offsets=None) -> float:
    """``lam`` times the mean worst sampled adapter-output shift, plus clean cross-entropy."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] == 0:
        raise ValueError("empty batch")
    t = _batch_offsets(H.shape[0], eps, k, rng, offsets)
    return loss_value(g, d, H, y, MinMaxLoss(_direction_vector(direction), t, lam))


def evaluate(g, d, ds: EmbeddingDataset, scope="test") -> dict:
    """ACC, macro-F1, DP and EO of ``d(g(h))`` on a split; a metric with an empty group is NaN."""
    rows = ds.mask(scope)
    preds = predict(d, adapter_forward(g, ds.embeddings[rows]))
    labels, sens = ds.labels[rows], ds.sensitive[rows]
    acc, f1 = metric_acc_f1(preds, labels, ds.num_classes)
    out = {"acc": acc, "macro_f1": f1, "dp": float("nan"), "eo": float("nan")}
    try:
        out["dp"] = metric_dp(preds, sens)
    except ValueError:
        pass
    try:
        out["eo"] = metric_eo(preds, labels, sens)
    except ValueError:
        pass
    return out


def train(ds: EmbeddingDataset, cfg: TrainConfig, direction=None):
    """Full-batch Adam on the train split; returns ``(adapter, classifier, history)``.

    Adapter and classifier are initialised from ``cfg.seed`` and trained jointly
    by the scheme's loss. Fresh augmentation offsets are drawn every epoch.
    """
    rows = ds.mask("train")
    if not rows.any():
        raise ValueError("no labelled train nodes")
    H, y = ds.embeddings[rows], ds.labels[rows]
    if cfg.scheme != "naive":
        if direction is None:
            raise ValueError(f"scheme {cfg.scheme!r} needs a sensitive direction")
        alpha = _direction_vector(direction)
    rng = np.random.default_rng(cfg.seed)
    g = init_adapter(ds.p, rng)
    d = init_classifier(ds.p, ds.num_classes, rng)
    n_adapter = len(g.arrays())
    params = g.arrays() + d.arrays()
    state = AdamState.zeros_like(params, lr=cfg.lr)
    history = History()
    has_val = ds.mask("val").any()

    for epoch in range(1, cfg.epochs + 1):
        if cfg.scheme == "naive":
            spec = CELoss()
        elif cfg.scheme == "randat":
            spec = RandATLoss(alpha, sample_offsets((len(y), cfg.k), cfg.eps, rng))
        else:
            spec = MinMaxLoss(alpha, sample_offsets((len(y), cfg.k), cfg.eps, rng), cfg.lam)
        grads = backward(g, d, H, y, spec)
        params, state = adam_step(params, grads.arrays(), state)
        g = AdapterParams.from_arrays(params[:n_adapter])
        d = ClassifierParams.from_arrays(params[n_adapter:])

        history.epoch.append(epoch)
        history.loss.append(grads.loss)
        if has_val:
            m = evaluate(g, d, ds, "val")
            history.val_acc.append(m["acc"])
            history.val_dp.append(m["dp"])
            history.val_eo.append(m["eo"])
        else:
            history.val_acc.append(float("nan"))
            history.val_dp.append(float("nan"))
            history.val_eo.append(float("nan"))
    return g, d, history


def harden_classifier(g: AdapterParams, d: ClassifierParams, ds: EmbeddingDataset, rounds: int, std: float,
                      rng: np.random.Generator, lr: float = 0.01) -> ClassifierParams:
    """Fine-tune ``d`` for ``rounds`` full-batch epochs on ``g(h) + N(0, std^2 I)``; ``g`` is only read."""
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if rounds == 0:
        return d.copy()
    rows = ds.mask("train")
    Z = adapter_forward(g, ds.embeddings[rows])
    y = ds.labels[rows]
    params = d.arrays()
    state = AdamState.zeros_like(params, lr=lr)
    for _ in range(rounds):
        noisy = Z + std * rng.standard_normal(Z.shape)
        _, grads = classifier_loss_grad(ClassifierParams.from_arrays(params), noisy, y)
        params, state = adam_step(params, grads.arrays(), state)
    return ClassifierParams.from_arrays(params)


def load_train_config(path) -> TrainConfig:
    return TrainConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
