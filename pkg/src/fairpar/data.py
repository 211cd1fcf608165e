"""Node-embedding datasets: in-memory model, CSV format and a synthetic generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")
SYNTHETIC_VERSION = "fairpar-synth-1"


class DatasetError(ValueError):
    """Raised for malformed or invariant-violating datasets."""


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """Frozen node embeddings with a binary sensitive bit, a label and a split tag per node."""

    embeddings: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    num_classes: int
    node_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise DatasetError(f"embeddings must be a 2-d matrix, got shape {emb.shape}")
        n, p = emb.shape
        if n < 1 or p < 1:
            raise DatasetError("dataset needs n >= 1 and p >= 1")
        if self.num_classes < 2:
            raise DatasetError("num_classes must be >= 2")
        if not np.all(np.isfinite(emb)):
            row = int(np.nonzero(~np.all(np.isfinite(emb), axis=1))[0][0])
            raise DatasetError(f"row {row + 1}: non-finite embedding value")
        sens = np.asarray(self.sensitive)
        labels = np.asarray(self.labels)
        split = np.asarray(self.split, dtype=object)
        for name, arr in (("sensitive", sens), ("labels", labels), ("split", split)):
            if arr.shape != (n,):
                raise DatasetError(f"{name} must have length {n}, got shape {arr.shape}")
        bad = np.nonzero((sens != 0) & (sens != 1))[0]
        if bad.size:
            raise DatasetError(f"row {bad[0] + 1}: sensitive value must be 0 or 1")
        bad = np.nonzero((labels < 0) | (labels >= self.num_classes))[0]
        if bad.size:
            raise DatasetError(f"row {bad[0] + 1}: label outside 0..{self.num_classes - 1}")
        bad = [i for i, tag in enumerate(split) if tag not in SPLITS]
        if bad:
            raise DatasetError(f"row {bad[0] + 1}: unknown split tag {split[bad[0]]!r}")
        ids = np.arange(n) if self.node_ids is None else np.asarray(self.node_ids)
        if ids.shape != (n,):
            raise DatasetError("node_ids must have one entry per node")

        emb.setflags(write=False)
        sens = sens.astype(np.int64)
        labels = labels.astype(np.int64)
        ids = ids.astype(np.int64)
        for arr in (sens, labels, split, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "sensitive", sens)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "node_ids", ids)

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]

    @property
    def p(self) -> int:
        return self.embeddings.shape[1]

    def mask(self, scope="train") -> np.ndarray:
        """Boolean row mask for a split name, a tuple of names, or "all"."""
        if scope == "all":
            return np.ones(self.n, dtype=bool)
        names = (scope,) if isinstance(scope, str) else tuple(scope)
        for name in names:
            if name not in SPLITS:
                raise DatasetError(f"unknown split {name!r}")
        return np.isin(self.split.astype(str), names)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.embeddings, other.embeddings)
            and np.array_equal(self.sensitive, other.sensitive)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.split, other.split)
            and np.array_equal(self.node_ids, other.node_ids)
        )

    __hash__ = None


def _parse_int(text: str, row: int, name: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DatasetError(f"row {row}: {name} is not an integer: {text!r}") from None


def load_dataset(path, num_classes: int | None = None) -> EmbeddingDataset:
    """Read a dataset CSV (``node_id,s,y,split,e0,...``).

    ``num_classes`` defaults to ``max(y) + 1`` (at least 2). Errors name the
    1-based data row at fault.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty file: missing header") from None
        p = len(header) - 4
        expected = ["node_id", "s", "y", "split"] + [f"e{j}" for j in range(p)]
        if p < 1 or header != expected:
            raise DatasetError(f"malformed header: {','.join(header)!r}")

        ids, sens, labels, split, rows = [], [], [], [], []
        for row_no, rec in enumerate(reader, start=1):
            if len(rec) != p + 4:
                raise DatasetError(f"row {row_no}: expected {p + 4} fields, got {len(rec)}")
            ids.append(_parse_int(rec[0], row_no, "node_id"))
            s = _parse_int(rec[1], row_no, "s")
            if s not in (0, 1):
                raise DatasetError(f"row {row_no}: sensitive value must be 0 or 1, got {s}")
            sens.append(s)
            y = _parse_int(rec[2], row_no, "y")
            if y < 0 or (num_classes is not None and y >= num_classes):
                raise DatasetError(f"row {row_no}: invalid label {y}")
            labels.append(y)
            if rec[3] not in SPLITS:
                raise DatasetError(f"row {row_no}: unknown split tag {rec[3]!r}")
            split.append(rec[3])
            try:
                values = [float(v) for v in rec[4:]]
            except ValueError:
                raise DatasetError(f"row {row_no}: embedding value is not a number") from None
            if not all(math.isfinite(v) for v in values):
                raise DatasetError(f"row {row_no}: non-finite embedding value")
            rows.append(values)
    if not rows:
        raise DatasetError("dataset has no rows")
    if num_classes is None:
        num_classes = max(2, max(labels) + 1)
    return EmbeddingDataset(
        embeddings=np.array(rows, dtype=np.float64),
        sensitive=np.array(sens),
        labels=np.array(labels),
        split=np.array(split, dtype=object),
        num_classes=num_classes,
        node_ids=np.array(ids),
    )


def save_dataset(ds: EmbeddingDataset, path) -> None:
    """Write ``ds`` as UTF-8 CSV with LF endings; floats at 17 significant digits."""
    header = ["node_id", "s", "y", "split"] + [f"e{j}" for j in range(ds.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n):
            writer.writerow(
                [int(ds.node_ids[i]), int(ds.sensitive[i]), int(ds.labels[i]), ds.split[i]]
                + [format(v, ".17g") for v in ds.embeddings[i]]
            )


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not math.isclose(norm, 1.0, rel_tol=0, abs_tol=1e-9):
        raise DatasetError(f"{name} must have unit L2 norm, got {norm}")
    return v


@dataclass(frozen=True, eq=False)
class SyntheticSpec:
    """Recipe for a biased embedding table with a known sensitive direction.

    Sensitive groups are split half and half, with true classes balanced
    within each group. Group means sit at ``(s - 1/2) * group_gap * planted_direction``; each class
    is shifted by ``task_gap * (y - (C - 1) / 2)`` along ``task_signal``. After
    embeddings are drawn, a ``label_leak`` fraction of labels is overwritten
    with ``s``, so the recorded labels are biased toward the sensitive group.
    """

    n: int
    p: int
    num_classes: int
    planted_direction: np.ndarray
    task_signal: np.ndarray
    group_gap: float = 1.0
    task_gap: float = 2.0
    noise_std: float = 1.0
    label_leak: float = 0.0

    def __post_init__(self):
        if self.p < 1 or self.num_classes < 2:
            raise DatasetError("need p >= 1 and num_classes >= 2")
        planted = _unit(self.planted_direction, "planted_direction")
        task = _unit(self.task_signal, "task_signal")
        if planted.shape != (self.p,) or task.shape != (self.p,):
            raise DatasetError("planted_direction and task_signal must have length p")
        if not self.noise_std > 0:
            raise DatasetError("noise_std must be > 0")
        if self.group_gap < 0 or self.task_gap < 0:
            raise DatasetError("group_gap and task_gap must be >= 0")
        if not 0.0 <= self.label_leak <= 1.0:
            raise DatasetError("label_leak must lie in [0, 1]")
        object.__setattr__(self, "planted_direction", planted)
        object.__setattr__(self, "task_signal", task)

    @classmethod
    def axis_aligned(cls, n=2000, p=16, num_classes=2, **kw) -> SyntheticSpec:
        """Planted direction e0 and task signal e1."""
        if p < 2:
            raise DatasetError("axis_aligned needs p >= 2")
        eye = np.eye(p)
        return cls(n=n, p=p, num_classes=num_classes, planted_direction=eye[0], task_signal=eye[1], **kw)

    def to_dict(self) -> dict:
        return {
            "version": SYNTHETIC_VERSION,
            "n": self.n,
            "p": self.p,
            "num_classes": self.num_classes,
            "planted_direction": self.planted_direction.tolist(),
            "task_signal": self.task_signal.tolist(),
            "group_gap": self.group_gap,
            "task_gap": self.task_gap,
            "noise_std": self.noise_std,
            "label_leak": self.label_leak,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> SyntheticSpec:
        obj = dict(obj)
        version = obj.pop("version", None)
        if version != SYNTHETIC_VERSION:
            raise DatasetError(f"unsupported synthetic spec version {version!r}")
        if "planted_direction" not in obj or "task_signal" not in obj:
            n, p = obj.pop("n"), obj.pop("p")
            return cls.axis_aligned(n=n, p=p, **obj)
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> SyntheticSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_synthetic(spec: SyntheticSpec, seed: int) -> EmbeddingDataset:
    """Draw a dataset from ``spec``; a pure function of ``(spec, seed)``.

    Splits are 50/25/25 (train/val/test) over a seeded shuffle, interleaved
    across (sensitive group, true class) cells so every split sees each cell in
    proportion.
    """
    n = spec.n
    if n < 4:
        raise DatasetError("synthetic datasets need n >= 4 to populate every split")
    rng = np.random.default_rng(seed)
    # balanced groups, and balanced true classes inside each group, so the
    # group-mean difference carries no task signal beyond noise
    sens = np.zeros(n, dtype=np.int64)
    sens[rng.permutation(n)[: n // 2]] = 1
    true_labels = np.empty(n, dtype=np.int64)
    for grp in (0, 1):
        members = rng.permutation(np.nonzero(sens == grp)[0])
        true_labels[members] = np.arange(members.size) % spec.num_classes
    centre = (spec.num_classes - 1) / 2.0
    emb = (
        np.outer(sens - 0.5, spec.group_gap * spec.planted_direction)
        + np.outer(true_labels - centre, spec.task_gap * spec.task_signal)
        + spec.noise_std * rng.standard_normal((n, spec.p))
    )
    leaked = rng.random(n) < spec.label_leak
    labels = np.where(leaked, sens, true_labels)

    # 50/25/25 shuffle stratified by (group, true class); cell remainders are
    # pooled and shuffled so the overall counts are exactly n//2, n//4, rest
    split = np.empty(n, dtype=object)
    order = rng.permutation(n)
    cell = sens[order] * spec.num_classes + true_labels[order]
    rank = np.empty(n, dtype=np.int64)
    for c in np.unique(cell):
        idx = np.nonzero(cell == c)[0]
        rank[idx] = np.arange(idx.size) * n // idx.size
    order = order[np.argsort(rank, kind="stable")]
    n_train, n_val = n // 2, n // 4
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    return EmbeddingDataset(
        embeddings=emb, sensitive=sens, labels=labels, split=split, num_classes=spec.num_classes
    )
