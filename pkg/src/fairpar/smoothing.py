"""Center smoothing of the adapter, randomized smoothing of the classifier, and their composition.

Every stochastic routine takes an explicit ``numpy.random.Generator``; per-node
streams come from :func:`node_rng`, a counter-based Philox stream keyed by
``(master_seed, node_index)``, so results do not depend on scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import special, stats

from .nn import AdapterParams, ClassifierParams, adapter_forward, classifier_forward

CONFIG_VERSION = "fairpar-smooth-1"
# "direction": adapter noise lies on the line through h along the sensitive
# direction; "isotropic": full N(0, sigma_cs^2 I) noise in embedding space.
CS_NOISE = ("direction", "isotropic")


@dataclass(frozen=True)
class SmoothingConfig:
    sigma_cs: float = 0.25
    sigma_rs: float = 1.0
    n_center: int = 10_000
    n_radius: int = 10_000
    n_select: int = 1_000
    n_cert: int = 10_000
    alpha_cs: float = 0.005
    alpha_rs: float = 0.005
    meb_iters: int = 1_000
    cs_noise: str = "direction"

    def __post_init__(self):
        if self.cs_noise not in CS_NOISE:
            raise ValueError(f"cs_noise must be one of {CS_NOISE}")
        if not (self.sigma_cs > 0 and self.sigma_rs > 0):
            raise ValueError("smoothing noise levels must be > 0")
        if min(self.n_center, self.n_radius, self.n_select, self.n_cert, self.meb_iters) < 1:
            raise ValueError("sample counts must be >= 1")
        if not (0 < self.alpha_cs < 1 and 0 < self.alpha_rs < 1 and self.alpha_cs + self.alpha_rs < 1):
            raise ValueError("need 0 < alpha_cs, alpha_rs and alpha_cs + alpha_rs < 1")

    def to_dict(self) -> dict:
        return {"version": CONFIG_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, obj: dict) -> SmoothingConfig:
        obj = dict(obj)
        version = obj.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported smoothing config version {version!r}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> SmoothingConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class CenterCertificate:
    """Smoothed adapter output ``z`` and the output bound ``d_cs`` (``None`` = abstain)."""

    z: np.ndarray
    d_cs: float | None

    @property
    def abstain(self) -> bool:
        return self.d_cs is None


@dataclass(frozen=True)
class RsCertificate:
    y_hat: int | None
    p_a_lower: float
    d_rs: float | None

    @property
    def abstain(self) -> bool:
        return self.y_hat is None


@dataclass(frozen=True)
class NodeCertificate:
    node_id: int
    eps1: float
    d_cs: float | None
    d_rs: float | None
    y_hat: int | None
    provable: bool
    confidence: float

    @property
    def abstain_cs(self) -> bool:
        return self.d_cs is None

    @property
    def abstain_rs(self) -> bool:
        return self.d_rs is None

    def to_record(self) -> dict:
        return {
            "node_id": self.node_id,
            "eps1": self.eps1,
            "d_cs": self.d_cs,
            "d_rs": self.d_rs,
            "y_hat": self.y_hat,
            "abstain_cs": self.abstain_cs,
            "abstain_rs": self.abstain_rs,
            "provable": self.provable,
            "confidence": self.confidence,
        }


def node_rng(master_seed: int, node_index: int) -> np.random.Generator:
    """Independent counter-based stream for one node."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(node_index)])))


def normal_cdf(x):
    return special.ndtr(x)


def normal_quantile(p):
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any((p_arr <= 0) | (p_arr >= 1)):
        raise ValueError("normal_quantile needs 0 < p < 1")
    out = special.ndtri(p_arr)
    return float(out) if out.ndim == 0 else out


def binom_lower(k: int, n: int, alpha: float) -> float:
    """One-sided Clopper-Pearson lower bound: the ``alpha`` quantile of Beta(k, n - k + 1)."""
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    if not 0 < alpha < 1:
        raise ValueError("need 0 < alpha < 1")
    if k == 0:
        return 0.0
    return float(stats.beta.ppf(alpha, k, n - k + 1))


def meb_center(points, iters: int = 1000):
    """Approximate minimum enclosing ball by the Badoiu-Clarkson core-set iteration.

    Each step moves the centre toward the farthest point by ``1 / (i + 1)``.
    After ``iters`` steps the radius is within a factor ``1 + 1/sqrt(iters)`` of optimal.
    Returns ``(center, radius)``.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1:
        raise ValueError("need at least one point")
    sq = np.einsum("ij,ij->i", X, X)
    c = X[0].copy()
    for i in range(1, iters + 1):
        far = int(np.argmax(sq - 2.0 * (X @ c)))
        c += (X[far] - c) / (i + 1)
    radius = float(np.sqrt(np.max(np.sum((X - c) ** 2, axis=1))))
    return c, radius


def eps1_from(direction, eps: float) -> float:
    """Input-space radius covered by offsets ``|t| <= eps`` along ``direction``."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    norm = getattr(direction, "alpha_norm", None)
    if norm is None:
        norm = float(np.linalg.norm(direction))
    return eps * norm


def _noisy_outputs(g, h, sigma, n, rng, basis=None):
    if basis is None:
        noise = sigma * rng.standard_normal((n, h.shape[0]))
    else:
        noise = sigma * rng.standard_normal(n)[:, None] * basis[None, :]
    out = adapter_forward(g, h[None, :] + noise)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite adapter output under noise")
    return out


def noise_basis(direction, cfg: SmoothingConfig):
    """Unit vector carrying the adapter noise, or ``None`` for isotropic noise."""
    if cfg.cs_noise == "isotropic":
        return None
    alpha = np.asarray(getattr(direction, "alpha", direction), dtype=np.float64)
    norm = np.linalg.norm(alpha)
    if norm == 0:
        raise ValueError("sensitive direction is the zero vector")
    return alpha / norm


def smoothed_adapter(g: AdapterParams, h, cfg: SmoothingConfig, rng: np.random.Generator, basis=None) -> np.ndarray:
    """Estimate of the smoothed adapter output at ``h``: ball centre of ``n_center`` noisy outputs.

    ``basis`` restricts the noise to one unit direction; ``None`` means isotropic.
    """
    h = np.asarray(h, dtype=np.float64)
    return meb_center(_noisy_outputs(g, h, cfg.sigma_cs, cfg.n_center, rng, basis), cfg.meb_iters)[0]


def quantile_level(eps1: float, cfg: SmoothingConfig) -> float:
    """Distance quantile that must be bounded, including both sampling slacks."""
    log_term = math.log(2.0 / cfg.alpha_cs)  # one-sided bound per stage, alpha_cs / 2 each
    delta1 = math.sqrt(log_term / (2 * cfg.n_center))
    delta2 = math.sqrt(log_term / (2 * cfg.n_radius))
    return float(normal_cdf(normal_quantile(0.5 + delta1) + eps1 / cfg.sigma_cs)) + delta2


def center_smooth_certify(g: AdapterParams, h, eps1: float, cfg: SmoothingConfig,
                          rng: np.random.Generator, basis=None) -> CenterCertificate:
    """Smoothed output ``z`` at ``h`` and a bound ``d_cs`` on its movement within ``eps1`` of ``h``.

    With a ``basis`` vector the guarantee covers inputs ``h + s * basis``, ``|s| <= eps1``;
    without one it covers the whole ``eps1`` ball. Abstains (``d_cs = None``)
    when the required distance quantile is not below 1.
    """
    if eps1 < 0:
        raise ValueError("eps1 must be >= 0")
    h = np.asarray(h, dtype=np.float64)
    z = smoothed_adapter(g, h, cfg, rng, basis)
    fresh = _noisy_outputs(g, h, cfg.sigma_cs, cfg.n_radius, rng, basis)
    level = quantile_level(eps1, cfg)
    if level >= 1.0:
        return CenterCertificate(z, None)
    index = math.ceil(level * cfg.n_radius)
    if index > cfg.n_radius:
        return CenterCertificate(z, None)
    dist = np.sort(np.linalg.norm(fresh - z, axis=1))
    return CenterCertificate(z, 2.0 * float(dist[index - 1]))


def rs_radius(p_a_lower: float, sigma: float) -> float:
    """Certified radius ``sigma * Phi^-1(p_a_lower)`` under the two-class bound ``p_B <= 1 - p_A``."""
    return sigma * normal_quantile(p_a_lower)


def _votes(d, z, sigma, n, rng):
    logits = classifier_forward(d, z[None, :] + sigma * rng.standard_normal((n, z.shape[0])))
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits under noise")
    return np.bincount(np.argmax(logits, axis=1), minlength=d.num_classes)


def smoothed_predict(d: ClassifierParams, z, cfg: SmoothingConfig, rng: np.random.Generator, n: int | None = None) -> int:
    """Majority vote of ``d`` under ``N(0, sigma_rs^2 I)`` noise; ties go to the lowest class."""
    counts = _votes(d, np.asarray(z, dtype=np.float64), cfg.sigma_rs, n or cfg.n_select, rng)
    return int(np.argmax(counts))


def rs_predict_certify(d: ClassifierParams, z, cfg: SmoothingConfig, rng: np.random.Generator) -> RsCertificate:
    """Select a class from ``n_select`` votes, then bound its probability from ``n_cert`` fresh votes."""
    z = np.asarray(z, dtype=np.float64)
    y_hat = int(np.argmax(_votes(d, z, cfg.sigma_rs, cfg.n_select, rng)))
    k = int(_votes(d, z, cfg.sigma_rs, cfg.n_cert, rng)[y_hat])
    p_lower = binom_lower(k, cfg.n_cert, cfg.alpha_rs)
    if p_lower <= 0.5:
        return RsCertificate(None, p_lower, None)
    return RsCertificate(y_hat, p_lower, rs_radius(p_lower, cfg.sigma_rs))


def compose(node_id: int, eps1: float, cs: CenterCertificate, rs: RsCertificate, cfg: SmoothingConfig) -> NodeCertificate:
    provable = (not cs.abstain) and (not rs.abstain) and cs.d_cs < rs.d_rs
    return NodeCertificate(
        node_id=node_id,
        eps1=eps1,
        d_cs=cs.d_cs,
        d_rs=rs.d_rs,
        y_hat=rs.y_hat,
        provable=bool(provable),
        confidence=1.0 - cfg.alpha_cs - cfg.alpha_rs,
    )


def certify_node(g: AdapterParams, d: ClassifierParams, h, direction, eps: float, cfg: SmoothingConfig,
                 rng: np.random.Generator, node_id: int = 0) -> NodeCertificate:
    """Provable-fairness certificate for one node: ``d_cs < d_rs`` with neither stage abstaining."""
    eps1 = eps1_from(direction, eps)
    cs = center_smooth_certify(g, h, eps1, cfg, rng, noise_basis(direction, cfg))
    rs = rs_predict_certify(d, cs.z, cfg, rng)
    return compose(node_id, eps1, cs, rs, cfg)
