"""Small feed-forward core: adapter, classifier, cross-entropy, exact gradients, Adam.

Row-vector convention throughout: a batch is an ``(m, p)`` matrix and a layer
computes ``x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = "fairpar-ckpt-1"


def relu(x):
    return np.maximum(x, 0.0)


def _uniform_layer(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return W, b


@dataclass
class AdapterParams:
    """Down projection ``p -> q``, ReLU, up projection ``q -> p``."""

    W_down: np.ndarray
    b_down: np.ndarray
    W_up: np.ndarray
    b_up: np.ndarray

    def __post_init__(self):
        p, q = np.shape(self.W_down)
        if np.shape(self.b_down) != (q,) or np.shape(self.W_up) != (q, p) or np.shape(self.b_up) != (p,):
            raise ValueError("inconsistent adapter shapes")

    @property
    def p(self) -> int:
        return self.W_down.shape[0]

    @property
    def q(self) -> int:
        return self.W_down.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.W_down, self.b_down, self.W_up, self.b_up]

    @classmethod
    def from_arrays(cls, arrays) -> AdapterParams:
        return cls(*arrays)

    def copy(self) -> AdapterParams:
        return AdapterParams.from_arrays([a.copy() for a in self.arrays()])


@dataclass
class ClassifierParams:
    """Stack of ``(W, b)`` layers, ReLU between them, logits out of the last."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("classifier needs at least one layer")
        prev = None
        for W, b in self.layers:
            if W.ndim != 2 or np.shape(b) != (W.shape[1],):
                raise ValueError("layer weight/bias shapes disagree")
            if prev is not None and W.shape[0] != prev:
                raise ValueError("consecutive layer dimensions do not chain")
            prev = W.shape[1]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    @classmethod
    def from_arrays(cls, arrays) -> ClassifierParams:
        arrays = list(arrays)
        return cls([(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])

    def copy(self) -> ClassifierParams:
        return ClassifierParams.from_arrays([a.copy() for a in self.arrays()])


def init_adapter(p: int, rng: np.random.Generator, q: int | None = None) -> AdapterParams:
    q = max(1, p // 2) if q is None else q
    W_down, b_down = _uniform_layer(rng, p, q)
    W_up, b_up = _uniform_layer(rng, q, p)
    return AdapterParams(W_down, b_down, W_up, b_up)


def init_classifier(p: int, num_classes: int, rng: np.random.Generator, hidden=None) -> ClassifierParams:
    """Default: one hidden ReLU layer of width ``p // 2``. ``hidden=()`` gives a linear model."""
    widths = (max(1, p // 2),) if hidden is None else tuple(hidden)
    dims = (p, *widths, num_classes)
    return ClassifierParams([_uniform_layer(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)])


def _check_dim(x, dim, what):
    if x.shape[-1] != dim:
        raise ValueError(f"{what}: expected last dimension {dim}, got {x.shape[-1]}")


def adapter_forward(g: AdapterParams, h) -> np.ndarray:
    """``up(relu(down(h)))`` for a single vector or a row batch."""
    h = np.asarray(h, dtype=np.float64)
    _check_dim(h, g.p, "adapter_forward")
    return relu(h @ g.W_down + g.b_down) @ g.W_up + g.b_up


def classifier_forward(d: ClassifierParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    _check_dim(z, d.in_dim, "classifier_forward")
    x = z
    last = len(d.layers) - 1
    for i, (W, b) in enumerate(d.layers):
        x = x @ W + b
        if i < last:
            x = relu(x)
    return x


def predict(d: ClassifierParams, z) -> np.ndarray:
    """Argmax of the logits; ``np.argmax`` resolves ties to the lowest class."""
    return np.argmax(classifier_forward(d, z), axis=-1)


def log_softmax(logits):
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def cross_entropy(logits, y):
    """``-log softmax(logits)[y]``; vectorises over leading batch dimensions."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    y = np.asarray(y)
    C = logits.shape[-1]
    if np.any(y >= C) or np.any(y < 0):
        raise ValueError(f"class index out of range for {C} classes")
    lsm = log_softmax(logits)
    out = -np.take_along_axis(lsm, y[..., None].astype(np.int64), axis=-1)[..., 0]
    # exact 0 for saturated correct logits instead of a tiny negative
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# losses and reverse-mode gradients


@dataclass(frozen=True)
class CELoss:
    """Mean cross-entropy of ``d(g(h_i))``."""


@dataclass(frozen=True)
class RandATLoss:
    """Mean over nodes and augmentations of ``CE(d(g(h_i + t_ij * direction)), y_i)``."""

    direction: np.ndarray
    offsets: np.ndarray  # (m, k)


@dataclass(frozen=True)
class MinMaxLoss:
    """``lam * mean_i max_j ||g(h_i) - g(h_i + t_ij * direction)|| + mean_i CE(d(g(h_i)), y_i)``."""

    direction: np.ndarray
    offsets: np.ndarray  # (m, k)
    lam: float


@dataclass
class Gradients:
    loss: float
    adapter: AdapterParams
    classifier: ClassifierParams

    def arrays(self) -> list[np.ndarray]:
        return self.adapter.arrays() + self.classifier.arrays()


def augment(H, direction, offsets) -> np.ndarray:
    """Rows ``h_i + t_ij * direction`` flattened node-major to ``(m * k, p)``."""
    H = np.asarray(H, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    return (H[:, None, :] + offsets[:, :, None] * np.asarray(direction)[None, None, :]).reshape(-1, H.shape[1])


def _adapter_fwd_cache(g, H):
    pre = H @ g.W_down + g.b_down
    hid = relu(pre)
    return hid @ g.W_up + g.b_up, (H, pre, hid)


def _adapter_bwd(g, cache, dZ):
    H, pre, hid = cache
    dW_up = hid.T @ dZ
    db_up = dZ.sum(axis=0)
    dpre = (dZ @ g.W_up.T) * (pre > 0)
    return AdapterParams(H.T @ dpre, dpre.sum(axis=0), dW_up, db_up)


def _classifier_fwd_cache(d, Z):
    acts, pres = [Z], []
    x = Z
    last = len(d.layers) - 1
    for i, (W, b) in enumerate(d.layers):
        pre = x @ W + b
        pres.append(pre)
        x = relu(pre) if i < last else pre
        if i < last:
            acts.append(x)
    return x, (acts, pres)


def _classifier_bwd(d, cache, dlogits):
    acts, pres = cache
    grads = [None] * len(d.layers)
    dx = dlogits
    for i in range(len(d.layers) - 1, -1, -1):
        W, _ = d.layers[i]
        if i < len(d.layers) - 1:
            dx = dx * (pres[i] > 0)
        grads[i] = (acts[i].T @ dx, dx.sum(axis=0))
        dx = dx @ W.T
    return ClassifierParams(grads), dx


def _ce_and_grad(logits, y, weight):
    """Weighted sum of CE terms and its gradient w.r.t. the logits."""
    lsm = log_softmax(logits)
    rows = np.arange(len(y))
    loss = -weight * np.sum(lsm[rows, y])
    dlogits = np.exp(lsm)
    dlogits[rows, y] -= 1.0
    return loss, weight * dlogits


def backward(g: AdapterParams, d: ClassifierParams, H, y, spec) -> Gradients:
    """Loss value and exact gradients of ``spec`` w.r.t. every adapter and classifier parameter."""
    H = np.asarray(H, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("backward needs a non-empty (m, p) batch")
    _check_dim(H, g.p, "backward")
    if g.p != d.in_dim:
        raise ValueError("classifier input dimension must equal adapter output dimension")
    m = H.shape[0]

    if isinstance(spec, CELoss):
        Z, acache = _adapter_fwd_cache(g, H)
        logits, ccache = _classifier_fwd_cache(d, Z)
        loss, dlogits = _ce_and_grad(logits, y, 1.0 / m)
        dd, dZ = _classifier_bwd(d, ccache, dlogits)
        return Gradients(float(loss), _adapter_bwd(g, acache, dZ), dd)

    if isinstance(spec, RandATLoss):
        offsets = np.asarray(spec.offsets, dtype=np.float64)
        if offsets.shape[0] != m or offsets.ndim != 2:
            raise ValueError("offsets must have shape (m, k)")
        k = offsets.shape[1]
        Ha = augment(H, spec.direction, offsets)
        Z, acache = _adapter_fwd_cache(g, Ha)
        logits, ccache = _classifier_fwd_cache(d, Z)
        loss, dlogits = _ce_and_grad(logits, np.repeat(y, k), 1.0 / (m * k))
        dd, dZ = _classifier_bwd(d, ccache, dlogits)
        return Gradients(float(loss), _adapter_bwd(g, acache, dZ), dd)

    if isinstance(spec, MinMaxLoss):
        offsets = np.asarray(spec.offsets, dtype=np.float64)
        if offsets.shape[0] != m or offsets.ndim != 2:
            raise ValueError("offsets must have shape (m, k)")
        k = offsets.shape[1]
        Ha = augment(H, spec.direction, offsets)
        Zall, acache = _adapter_fwd_cache(g, np.vstack([H, Ha]))
        Z, Za = Zall[:m], Zall[m:].reshape(m, k, -1)
        diff = Z[:, None, :] - Za
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        worst = np.argmax(dist, axis=1)
        rows = np.arange(m)
        top = dist[rows, worst]
        fair = spec.lam * float(np.mean(top))

        logits, ccache = _classifier_fwd_cache(d, Z)
        ce, dlogits = _ce_and_grad(logits, y, 1.0 / m)
        dd, dZ_cls = _classifier_bwd(d, ccache, dlogits)

        unit = np.zeros((m, Z.shape[1]))
        nz = top > 0
        unit[nz] = diff[rows[nz], worst[nz]] / top[nz, None]
        dZall = np.zeros_like(Zall)
        dZall[:m] = dZ_cls + (spec.lam / m) * unit
        dZall[m + rows * k + worst] = -(spec.lam / m) * unit
        return Gradients(float(ce + fair), _adapter_bwd(g, acache, dZall), dd)

    raise TypeError(f"unknown loss spec {spec!r}")


def classifier_loss_grad(d: ClassifierParams, Z, y) -> tuple[float, ClassifierParams]:
    """Mean cross-entropy of ``d`` on inputs ``Z`` and its gradient w.r.t. the classifier only."""
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    logits, cache = _classifier_fwd_cache(d, Z)
    loss, dlogits = _ce_and_grad(logits, y, 1.0 / len(y))
    grads, _ = _classifier_bwd(d, cache, dlogits)
    return float(loss), grads


def loss_value(g: AdapterParams, d: ClassifierParams, H, y, spec) -> float:
    """Scalar loss by plain forward evaluation (no caches); used as the gradient-check target."""
    H = np.asarray(H, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if isinstance(spec, CELoss):
        return float(np.mean(cross_entropy(classifier_forward(d, adapter_forward(g, H)), y)))
    k = np.shape(spec.offsets)[1]
    Ha = augment(H, spec.direction, spec.offsets)
    if isinstance(spec, RandATLoss):
        return float(np.mean(cross_entropy(classifier_forward(d, adapter_forward(g, Ha)), np.repeat(y, k))))
    if isinstance(spec, MinMaxLoss):
        Z = adapter_forward(g, H)
        Za = adapter_forward(g, Ha).reshape(H.shape[0], k, -1)
        spread = np.max(np.linalg.norm(Z[:, None, :] - Za, axis=-1), axis=1)
        ce = cross_entropy(classifier_forward(d, Z), y)
        return float(spec.lam * np.mean(spread) + np.mean(ce))
    raise TypeError(f"unknown loss spec {spec!r}")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=0.01) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, lr)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are not mutated."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    step = state.step + 1
    new_params, new_m, new_v = [], [], []
    c1 = 1.0 - state.beta1**step
    c2 = 1.0 - state.beta2**step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError("gradient shape does not match parameter shape")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        new_params.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, step, state.lr, state.beta1, state.beta2, state.eps)


# ---------------------------------------------------------------------------
# checkpoints


def _encode(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(x) for x in np.ravel(a)]}


def _decode(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def checkpoint_dict(g: AdapterParams, d: ClassifierParams) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "p": g.p,
        "q": g.q,
        "num_classes": d.num_classes,
        "adapter": {name: _encode(a) for name, a in zip(("W_down", "b_down", "W_up", "b_up"), g.arrays())},
        "classifier": [{"W": _encode(W), "b": _encode(b)} for W, b in d.layers],
    }


def save_checkpoint(path, g: AdapterParams, d: ClassifierParams) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(g, d)) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[AdapterParams, ClassifierParams]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    a = obj["adapter"]
    g = AdapterParams(*(_decode(a[k]) for k in ("W_down", "b_down", "W_up", "b_up")))
    d = ClassifierParams([(_decode(layer["W"]), _decode(layer["b"])) for layer in obj["classifier"]])
    return g, d
