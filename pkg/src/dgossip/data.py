"""Datasets and client partitioning (IID, Dirichlet, pathological).

Datasets are dense feature matrices with integer labels.  Partition plans
assign every dataset row to exactly one client; heterogeneity is driven
either by Dirichlet-distributed per-class client shares or by restricting
each client to a fixed number of classes.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LabeledDataset",
    "PartitionPlan",
    "generate_synthetic",
    "generate_synthetic_holdout",
    "partition_iid",
    "partition_dirichlet",
    "partition_pathological",
    "load_csv",
    "partition_to_json",
]

_PATHOLOGICAL_MAX_RETRIES = 10_000


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64, values in [0, num_classes)
    num_classes: int
    name: str = ""

    def __post_init__(self):
        n = len(self.labels)
        if n < 1:
            raise ValueError("empty dataset")
        if self.features.shape[0] != n:
            raise ValueError("features/labels length mismatch")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Disjoint index lists covering every dataset row exactly once."""

    assignments: tuple[np.ndarray, ...]
    scheme: str  # "iid" | "dirichlet" | "pathological"
    param: float | int | None
    seed: int


def _as_plan(parts: list[np.ndarray], scheme: str, param, seed: int, n: int) -> PartitionPlan:
    flat = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    if len(flat) != n or len(np.unique(flat)) != n:
        raise AssertionError("internal error: assignments are not a partition")
    if any(len(p) == 0 for p in parts):
        raise AssertionError("internal error: empty client shard survived repair")
    return PartitionPlan(
        assignments=tuple(np.asarray(p, dtype=np.int64) for p in parts),
        scheme=scheme,
        param=param,
        seed=seed,
    )


def generate_synthetic(
    num_classes: int, dim: int, per_class: int, cluster_spread: float, seed: int
) -> LabeledDataset:
    """Gaussian class clusters with unit-norm means scaled by 2.0.

    Cluster means come from a sub-stream of ``seed`` that is separate from
    the sample-noise stream, so a held-out set for the same distribution
    can be produced by swapping only the noise stream (see
    :func:`generate_synthetic_holdout`).
    """
    if num_classes < 2 or dim < 1 or per_class < 1:
        raise ValueError("need num_classes >= 2, dim >= 1, per_class >= 1")
    means = _cluster_means(num_classes, dim, seed)
    noise_rng = np.random.default_rng([seed, 1])
    return _sample_clusters(means, per_class, cluster_spread, noise_rng, name="synthetic")


def generate_synthetic_holdout(
    num_classes: int, dim: int, per_class: int, cluster_spread: float, seed: int
) -> LabeledDataset:
    """Same cluster means as :func:`generate_synthetic`, disjoint noise stream."""
    if num_classes < 2 or dim < 1 or per_class < 1:
        raise ValueError("need num_classes >= 2, dim >= 1, per_class >= 1")
    means = _cluster_means(num_classes, dim, seed)
    noise_rng = np.random.default_rng([seed, 2])
    return _sample_clusters(means, per_class, cluster_spread, noise_rng, name="synthetic-holdout")


def _cluster_means(num_classes: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    raw = rng.normal(size=(num_classes, dim))
    return 2.0 * raw / np.linalg.norm(raw, axis=1, keepdims=True)


def _sample_clusters(means, per_class, spread, rng, name) -> LabeledDataset:
    num_classes, dim = means.shape
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    noise = rng.normal(size=(len(labels), dim))
    features = means[labels] + spread * noise
    return LabeledDataset(features=features, labels=labels, num_classes=num_classes, name=name)


def partition_iid(ds: LabeledDataset, m: int, seed: int) -> PartitionPlan:
    """Global shuffle followed by a round-robin split (sizes differ by <= 1)."""
    n = len(ds)
    if n < m:
        raise ValueError(f"cannot give every client a sample: n={n} < m={m}")
    perm = np.random.default_rng([seed]).permutation(n).astype(np.int64)
    parts = [perm[i::m] for i in range(m)]
    return _as_plan(parts, "iid", None, seed, n)


def partition_dirichlet(ds: LabeledDataset, m: int, alpha: float, seed: int) -> PartitionPlan:
    """Per-class client shares drawn from Dir(alpha * 1_m).

    Each class's samples are split by cumulative shares with
    largest-remainder rounding; clients left empty at small alpha are
    repaired by stealing one sample from the currently largest client.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if m < 1:
        raise ValueError("m must be >= 1")
    n = len(ds)
    if n < m:
        raise ValueError(f"cannot give every client a sample: n={n} < m={m}")
    rng = np.random.default_rng([seed])
    parts: list[list[int]] = [[] for _ in range(m)]
    for c in range(ds.num_classes):
        idx = np.nonzero(ds.labels == c)[0].astype(np.int64)
        if len(idx) == 0:
            continue
        rng.shuffle(idx)
        shares = rng.dirichlet(np.full(m, alpha))
        counts = _largest_remainder(shares, len(idx))
        start = 0
        for i, cnt in enumerate(counts):
            parts[i].extend(idx[start : start + cnt].tolist())
            start += cnt
    arrays = [np.asarray(p, dtype=np.int64) for p in parts]
    arrays = _repair_empty(arrays)
    return _as_plan(arrays, "dirichlet", float(alpha), seed, n)


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    quota = shares * total
    counts = np.floor(quota).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # ties broken by client index via stable sort on the negated remainder
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _repair_empty(parts: list[np.ndarray]) -> list[np.ndarray]:
    sizes = np.array([len(p) for p in parts])
    while (sizes == 0).any():
        empty = int(np.argmin(sizes))
        donor = int(np.argmax(sizes))
        if sizes[donor] <= 1:
            raise ValueError("not enough samples to repair empty clients")
        parts[empty] = parts[donor][-1:]
        parts[donor] = parts[donor][:-1]
        sizes[empty] += 1
        sizes[donor] -= 1
    return parts


def partition_pathological(
    ds: LabeledDataset, m: int, classes_per_client: int, seed: int
) -> PartitionPlan:
    """Each client holds samples from exactly ``classes_per_client`` classes.

    Class assignments are drawn uniformly without replacement per client
    and globally re-drawn until every class is held by someone; each
    class's samples are then divided evenly among its holders.
    """
    c_total = ds.num_classes
    if not 1 <= classes_per_client <= c_total:
        raise ValueError(f"classes_per_client must be in [1, {c_total}], got {classes_per_client}")
    if m * classes_per_client < c_total:
        raise ValueError(
            f"infeasible: m*classes_per_client={m * classes_per_client} < num_classes={c_total}"
        )
    rng = np.random.default_rng([seed])
    for _ in range(_PATHOLOGICAL_MAX_RETRIES):
        owned = [rng.choice(c_total, size=classes_per_client, replace=False) for _ in range(m)]
        if len(np.unique(np.concatenate(owned))) == c_total:
            break
    else:
        raise RuntimeError("could not cover all classes; raise m or classes_per_client")

    holders: list[list[int]] = [[] for _ in range(c_total)]
    for i, classes in enumerate(owned):
        for c in classes:
            holders[c].append(i)

    parts: list[list[int]] = [[] for _ in range(m)]
    for c in range(c_total):
        idx = np.nonzero(ds.labels == c)[0].astype(np.int64)
        if len(idx) < len(holders[c]):
            raise ValueError(
                f"class {c} has {len(idx)} samples but {len(holders[c])} holders; "
                "exact per-client class support is impossible"
            )
        rng.shuffle(idx)
        for holder, chunk in zip(holders[c], np.array_split(idx, len(holders[c]))):
            parts[holder].extend(chunk.tolist())
    arrays = [np.asarray(p, dtype=np.int64) for p in parts]
    return _as_plan(arrays, "pathological", int(classes_per_client), seed, len(ds))


def load_csv(path: str) -> LabeledDataset:
    """Read ``f1,...,fd,label`` rows below a one-line header.

    The class count is ``max label + 1``; label gaps are allowed.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    features: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty dataset (no header)") from None
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise ValueError(f"{path}:{rownum}: need at least one feature and a label")
            elif len(row) != width:
                raise ValueError(f"{path}:{rownum}: expected {width} columns, got {len(row)}")
            try:
                features.append([float(v) for v in row[:-1]])
                label = int(row[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{rownum}: parse failure: {exc}") from None
            if label < 0:
                raise ValueError(f"{path}:{rownum}: negative label {label}")
            labels.append(label)
    if not labels:
        raise ValueError(f"{path}: empty dataset")
    labels_arr = np.asarray(labels, dtype=np.int64)
    return LabeledDataset(
        features=np.asarray(features, dtype=float),
        labels=labels_arr,
        num_classes=int(labels_arr.max()) + 1,
        name=os.path.basename(path),
    )


def partition_to_json(plan: PartitionPlan) -> dict:
    """JSON-serializable audit view: client id -> sorted row indices."""
    return {
        "scheme": plan.scheme,
        "param": plan.param,
        "seed": plan.seed,
        "clients": {str(i): sorted(int(v) for v in idx) for i, idx in enumerate(plan.assignments)},
    }
