"""Per-round diagnostics and cross-run analyses.

Quantities tracked per round (all over the post-round state):

* consensus      (1/m) sum_i ||x_i - xbar||^2
* delta_t        (1/m) sum_i ||z_i - x_i'||^2, the distance between each
                 client's pre-mix local output and its freshly mixed
                 model -- the inconsistency measure this simulator exists
                 to study
* v1, v2         local-drift and global-step energies (diagnostic mode)
* grad_norm_sq   ||grad f(xbar)||^2 on the full training objective

The stability probe runs two coupled experiments whose datasets differ in
exactly one sample while sharing every random stream, so the runs are
bitwise identical until the swapped sample is first drawn into a
minibatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .models import ModelSpec, Shard, loss_and_grad, _unpack

if TYPE_CHECKING:  # pragma: no cover
    from .engine import ExperimentConfig

__all__ = [
    "RoundRecord",
    "StabilityTrace",
    "consensus_distance",
    "consistency_delta",
    "update_energies",
    "eval_model",
    "rounds_to_target",
    "stability_probe",
    "write_metrics_csv",
    "METRICS_CSV_COLUMNS",
]

METRICS_CSV_COLUMNS = (
    "t",
    "train_loss",
    "test_acc",
    "grad_norm_sq",
    "consensus",
    "delta_t",
    "v1",
    "v2",
    "lr",
)


@dataclass(frozen=True)
class RoundRecord:
    """Metrics snapshot for the state after one communication round.

    ``delta_t`` is the consistency term measured at this round's mixing
    step; ``v1``/``v2`` are None unless the run collected diagnostics, and
    ``test_acc`` is None for the quadratic family (no held-out accuracy).
    """

    t: int
    train_loss: float
    test_acc: float | None
    grad_norm_sq: float
    consensus: float
    delta_t: float
    v1: float | None
    v2: float | None
    lr: float


def consensus_distance(xs: np.ndarray) -> float:
    """(1/m) sum_i ||x_i - xbar||^2 over an (m, p) stack of client models."""
    xs = np.asarray(xs, dtype=float)
    centered = xs - xs.mean(axis=0)
    return float(np.mean(np.sum(centered**2, axis=1)))


def consistency_delta(z_prev: np.ndarray, x_mixed: np.ndarray) -> float:
    """(1/m) sum_i ||z_i - x_i||^2 between pre-mix outputs and mixed models."""
    z_prev = np.asarray(z_prev, dtype=float)
    x_mixed = np.asarray(x_mixed, dtype=float)
    if z_prev.shape != x_mixed.shape:
        raise ValueError("shape mismatch between local outputs and mixed models")
    return float(np.mean(np.sum((z_prev - x_mixed) ** 2, axis=1)))


def update_energies(
    per_client_drift: np.ndarray, xbar_before: np.ndarray, xbar_after: np.ndarray
) -> tuple[float, float]:
    """(v1, v2) from one round's internals.

    ``per_client_drift`` holds each client's sum_k ||x_{i,k} - x_i||^2 as
    accumulated by local training; v1 averages them across clients and v2
    is the squared displacement of the client average over the round.
    """
    v1 = float(np.mean(per_client_drift))
    v2 = float(np.sum((xbar_after - xbar_before) ** 2))
    return v1, v2


def predict(spec: ModelSpec, x: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Argmax class predictions; ties resolve to the lowest class index."""
    acts = features
    layers = _unpack(spec, x)
    for li, (w, b) in enumerate(layers):
        z = acts @ w + b
        acts = np.tanh(z) if li < len(layers) - 1 else z
    return np.argmax(acts, axis=1)


def eval_model(spec: ModelSpec, x: np.ndarray, test: Shard) -> tuple[float, float]:
    """Full-test-set loss and top-1 accuracy of one parameter vector."""
    if spec.kind == "quadratic":
        raise ValueError("quadratic objectives have no held-out accuracy")
    loss, _ = loss_and_grad(spec, x, test, batch=None)
    pred = predict(spec, x, test.features)
    return loss, float(np.mean(pred == test.labels))


def rounds_to_target(records, targets) -> list[tuple[float, int | None]]:
    """First recorded round whose test accuracy reaches each target."""
    out = []
    for target in targets:
        hit = None
        for rec in records:
            if rec.test_acc is not None and rec.test_acc >= target:
                hit = rec.t
                break
        out.append((float(target), hit))
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_metrics_csv(records, path) -> None:
    """One row per evaluated round; '.' decimals, LF endings, blank for absent."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(METRICS_CSV_COLUMNS) + "\n")
        for rec in records:
            fh.write(",".join(_fmt(getattr(rec, col)) for col in METRICS_CSV_COLUMNS) + "\n")


@dataclass(frozen=True, eq=False)
class StabilityTrace:
    """Coupled-run divergence trace from one swapped training sample."""

    client: int
    sample: int  # shard-local index of the swapped sample
    first_draw: tuple[int, int] | None  # (round, step) of the first divergent batch
    distances: np.ndarray  # (T, m): per-round per-client ||x_i - x~_i||
    mean_distance: np.ndarray  # (T,)
    heldout_gap: np.ndarray  # (T,): |held-out loss difference| between the runs


def stability_probe(
    cfg: "ExperimentConfig",
    swap: tuple[int, int],
    replacement: tuple[np.ndarray, int],
) -> StabilityTrace:
    """Run twin experiments whose datasets differ only at one sample.

    ``swap`` is (client index, shard-local sample index); ``replacement``
    is the (features, label) written at that position in the twin run.
    The partition plan, model init, and every RNG stream are shared, so
    the twin states coincide bitwise until the swapped row first lands in
    a minibatch of the swapped client.
    """
    from .data import LabeledDataset
    from .engine import build_problem, run_experiment

    client, sample = swap
    problem = build_problem(cfg)
    if problem.dataset is None:
        raise ValueError("stability probe requires a dataset-backed model (logistic/mlp)")
    plan = problem.plan
    if not 0 <= client < len(plan.assignments):
        raise ValueError(f"swap client {client} out of range")
    if not 0 <= sample < len(plan.assignments[client]):
        raise ValueError(f"swap sample {sample} out of range for client {client}")

    row = int(plan.assignments[client][sample])
    feats = np.asarray(replacement[0], dtype=float)
    label = int(replacement[1])
    if feats.shape != problem.dataset.features[row].shape:
        raise ValueError("replacement feature shape mismatch")
    if not 0 <= label < problem.dataset.num_classes:
        raise ValueError("replacement label out of range")

    twin_features = problem.dataset.features.copy()
    twin_labels = problem.dataset.labels.copy()
    twin_features[row] = feats
    twin_labels[row] = label
    twin_ds = LabeledDataset(
        features=twin_features,
        labels=twin_labels,
        num_classes=problem.dataset.num_classes,
        name=problem.dataset.name + "-twin",
    )
    twin_problem = problem.with_dataset(twin_ds)

    def collector(snaps, losses):
        def on_round(t, info):
            snaps.append(info.x_mixed.copy())
            loss, _ = eval_model(problem.spec, info.x_mixed.mean(axis=0), problem.test)
            losses.append(loss)

        return on_round

    snaps_a: list[np.ndarray] = []
    snaps_b: list[np.ndarray] = []
    losses_a: list[float] = []
    losses_b: list[float] = []
    result_a = run_experiment(
        cfg, problem=problem, on_round=collector(snaps_a, losses_a), watch=(client, sample)
    )
    run_experiment(cfg, problem=twin_problem, on_round=collector(snaps_b, losses_b))

    dists = np.stack(
        [np.linalg.norm(a - b, axis=1) for a, b in zip(snaps_a, snaps_b)]
    ) if snaps_a else np.zeros((0, cfg.m))
    return StabilityTrace(
        client=client,
        sample=sample,
        first_draw=result_a.first_draw,
        distances=dists,
        mean_distance=dists.mean(axis=1) if len(dists) else np.zeros(0),
        heldout_gap=np.abs(np.asarray(losses_a) - np.asarray(losses_b)),
    )
