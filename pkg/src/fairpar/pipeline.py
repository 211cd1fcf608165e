"""End-to-end orchestration: data, direction, training, hardening, certification and reporting.

Stages run sequentially; certification fans out over nodes in a thread pool.
Every random stream is derived from the master seed, and per-node streams are
keyed by row index, so reports are byte-identical for any worker count.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augmenter import SensitiveDirection, compute_direction
from .data import EmbeddingDataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .nn import AdapterParams, ClassifierParams, save_checkpoint
from .smoothing import NodeCertificate, SmoothingConfig, certify_node, node_rng
from .training import History, TrainConfig, evaluate, harden_classifier, train

CONFIG_VERSION = "fairpar-run-1"
REPORT_VERSION = "fairpar-report-1"
NODE_SCOPES = ("test", "all")
HARDEN_STREAM = 1


class PipelineError(RuntimeError):
    """A stage of :func:`run` failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def default_synthetic_spec() -> SyntheticSpec:
    """Biased 800-node, 16-dim table used when no dataset is given.

    A fifth of the labels copy the sensitive bit, so an unconstrained model
    leans on the sensitive direction.
    """
    return SyntheticSpec.axis_aligned(n=800, p=16, group_gap=0.8, noise_std=0.3, task_gap=6.0, label_leak=0.2)


@dataclass(frozen=True)
class RunConfig:
    """Everything :func:`run` needs. ``dataset`` (a CSV path) wins over ``synthetic``."""

    train: TrainConfig = field(default_factory=TrainConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    dataset: str | None = None
    synthetic: SyntheticSpec | None = None
    seed: int = 0
    nodes: str = "test"
    max_nodes: int | None = None
    out: str | None = None

    def __post_init__(self):
        if self.nodes not in NODE_SCOPES:
            raise ValueError(f"nodes must be one of {NODE_SCOPES}, got {self.nodes!r}")
        if self.max_nodes is not None and self.max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        if self.dataset is not None and not Path(self.dataset).is_file():
            raise FileNotFoundError(f"dataset not found: {self.dataset}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    def to_dict(self) -> dict:
        """Config echo; the output directory is deliberately left out."""
        spec = None
        if self.dataset is None:
            spec = (self.synthetic or default_synthetic_spec()).to_dict()
        return {
            "version": CONFIG_VERSION,
            "dataset": self.dataset,
            "synthetic": spec,
            "train": self.train.to_dict(),
            "smoothing": self.smoothing.to_dict(),
            "seed": self.seed,
            "nodes": self.nodes,
            "max_nodes": self.max_nodes,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> RunConfig:
        obj = dict(obj)
        version = obj.pop("version", None)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported run config version {version!r}")
        unknown = set(obj) - {"dataset", "synthetic", "train", "smoothing", "seed", "nodes", "max_nodes", "out"}
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        if obj.get("synthetic") is not None:
            obj["synthetic"] = SyntheticSpec.from_dict(obj["synthetic"])
        obj["train"] = TrainConfig.from_dict(obj.get("train") or {})
        obj["smoothing"] = SmoothingConfig.from_dict(obj.get("smoothing") or {})
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class FairnessReport:
    acc: float
    macro_f1: float
    dp: float
    eo: float
    provable_fair_rate: float
    certificates: list[NodeCertificate]
    config: dict
    eps: float
    eps1: float
    wall_seconds: float = 0.0

    @property
    def n_certified(self) -> int:
        return len(self.certificates)

    @property
    def n_provable(self) -> int:
        return sum(c.provable for c in self.certificates)

    def to_dict(self) -> dict:
        """JSON-ready report; wall-clock time is excluded so the file is reproducible."""
        return {
            "version": REPORT_VERSION,
            "scheme": self.config["train"]["scheme"],
            "acc": _finite_or_none(self.acc),
            "macro_f1": _finite_or_none(self.macro_f1),
            "dp": _finite_or_none(self.dp),
            "eo": _finite_or_none(self.eo),
            "provable_fair_rate": self.provable_fair_rate,
            "n_certified": self.n_certified,
            "n_provable": self.n_provable,
            "n_abstain_cs": sum(c.abstain_cs for c in self.certificates),
            "n_abstain_rs": sum(c.abstain_rs for c in self.certificates),
            "eps": self.eps,
            "eps1": self.eps1,
            "confidence": self.certificates[0].confidence if self.certificates else None,
            "config": self.config,
            "certificates": [c.to_record() for c in self.certificates],
        }

    def summary(self) -> str:
        rows = [
            ("scheme", self.config["train"]["scheme"]),
            ("acc", f"{self.acc:.4f}"),
            ("macro_f1", f"{self.macro_f1:.4f}"),
            ("dp", f"{self.dp:.4f}"),
            ("eo", f"{self.eo:.4f}"),
            ("provable_fair_rate", f"{self.provable_fair_rate:.4f}"),
            ("certified nodes", str(self.n_certified)),
            ("provable nodes", str(self.n_provable)),
            ("eps / eps1", f"{self.eps:g} / {self.eps1:.6g}"),
            ("wall seconds", f"{self.wall_seconds:.1f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def provable_rate(certificates) -> float:
    """Provable count over certified count; abstentions stay in the denominator."""
    if not certificates:
        return 0.0
    return sum(c.provable for c in certificates) / len(certificates)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise PipelineError(name, exc) from exc


def load_or_generate(cfg: RunConfig) -> EmbeddingDataset:
    if cfg.dataset is not None:
        return load_dataset(cfg.dataset)
    return generate_synthetic(cfg.synthetic or default_synthetic_spec(), cfg.seed)


def fit(ds: EmbeddingDataset, train_cfg: TrainConfig):
    """Direction, trained adapter and hardened classifier.

    Returns ``(direction, adapter, classifier, history)``.
    """
    direction = _stage("direction", compute_direction, ds, "train")
    g, d, history = _stage("train", train, ds, train_cfg, direction)
    rng = np.random.default_rng([train_cfg.seed, HARDEN_STREAM])
    d = _stage("harden", harden_classifier, g, d, ds, train_cfg.hardening_rounds, train_cfg.hardening_std, rng)
    return direction, g, d, history


def select_nodes(ds: EmbeddingDataset, scope: str = "test", limit: int | None = None) -> np.ndarray:
    if scope not in NODE_SCOPES:
        raise ValueError(f"nodes must be one of {NODE_SCOPES}")
    rows = np.nonzero(ds.mask(scope))[0]
    return rows if limit is None else rows[:limit]


def certify_nodes(g: AdapterParams, d: ClassifierParams, ds: EmbeddingDataset, direction: SensitiveDirection,
                  eps: float, cfg: SmoothingConfig, seed: int, rows, workers: int = 1) -> list[NodeCertificate]:
    """Certify each row in ``rows``; output order follows ``rows`` whatever ``workers`` is."""
    if workers < 1:
        raise ValueError("workers must be >= 1")

    def one(i):
        i = int(i)
        return certify_node(g, d, ds.embeddings[i], direction, eps, cfg, node_rng(seed, i), int(ds.node_ids[i]))

    if workers == 1:
        return [one(i) for i in rows]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, rows))


def make_report(g, d, ds, certificates, cfg_echo: dict, eps: float, eps1: float) -> FairnessReport:
    m = evaluate(g, d, ds, "test")
    return FairnessReport(
        acc=m["acc"], macro_f1=m["macro_f1"], dp=m["dp"], eo=m["eo"],
        provable_fair_rate=provable_rate(certificates),
        certificates=certificates, config=cfg_echo, eps=eps, eps1=eps1,
    )


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def write_certificates(path, certificates) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in certificates:
            fh.write(json.dumps(c.to_record(), sort_keys=True, allow_nan=False) + "\n")


def run(cfg: RunConfig, workers: int = 1) -> FairnessReport:
    """Generate or load data, fit, certify the selected nodes and write outputs under ``cfg.out``.

    The training seed is replaced by the master seed. Outputs: ``report.json``,
    ``certificates.jsonl``, ``checkpoint.json``, ``direction.json``,
    ``history.csv``, ``summary.txt`` and ``timing.json`` (the only file with
    wall-clock data).
    """
    start = time.perf_counter()
    cfg = replace(cfg, train=replace(cfg.train, seed=cfg.seed))
    ds = _stage("data", load_or_generate, cfg)
    direction, g, d, history = fit(ds, cfg.train)
    rows = _stage("select", select_nodes, ds, cfg.nodes, cfg.max_nodes)
    certs = _stage("certify", certify_nodes, g, d, ds, direction, cfg.train.eps, cfg.smoothing, cfg.seed, rows, workers)
    eps1 = cfg.train.eps * direction.alpha_norm
    report = _stage("metrics", make_report, g, d, ds, certs, cfg.to_dict(), cfg.train.eps, eps1)
    report.wall_seconds = time.perf_counter() - start
    if cfg.out is not None:
        _stage("write", write_outputs, Path(cfg.out), report, g, d, direction, history, ds if cfg.dataset is None else None)
    return report


def write_outputs(out: Path, report: FairnessReport, g, d, direction: SensitiveDirection, history: History,
                  ds: EmbeddingDataset | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.to_dict())
    write_certificates(out / "certificates.jsonl", report.certificates)
    save_checkpoint(out / "checkpoint.json", g, d)
    write_json(out / "direction.json", direction.to_dict())
    history.write_csv(out / "history.csv")
    (out / "summary.txt").write_text(report.summary(), encoding="utf-8")
    write_json(out / "timing.json", {"wall_seconds": report.wall_seconds})
    if ds is not None:
        save_dataset(ds, out / "dataset.csv")
