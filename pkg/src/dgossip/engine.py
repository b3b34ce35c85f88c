"""Round-synchronous orchestration of decentralized and centralized training.

One decentralized round, for every client in parallel:

1. lookahead init   x_{i,0} = x_i + beta * (x_i - z_i_prev), where z_i_prev
                    is the client's local output from the previous round
                    (both equal the shared x0 at t = 0, so round 0 starts
                    from x0 for any beta);
2. local training   K optimizer steps on the client shard;
3. gossip mixing    x_i' = sum_j w_ij z_j over the round's mixing matrix.

Centralized rounds sample a participation fraction of clients on the
coordinator's own stream, train each from the global model, and replace
it with their unweighted average.

Determinism contract: every client owns a private generator derived from
(seed, client, round), mixing accumulates in ascending client order, and
local training writes into per-client slots, so results are bitwise
independent of the worker count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .data import (
    LabeledDataset,
    PartitionPlan,
    generate_synthetic,
    generate_synthetic_holdout,
    load_csv,
    partition_dirichlet,
    partition_iid,
    partition_pathological,
)
from .localopt import OptimizerConfig, local_train
from .metrics import (
    RoundRecord,
    consensus_distance,
    consistency_delta,
    eval_model,
    rounds_to_target,
    update_energies,
)
from .models import ModelSpec, Shard, full_objective, init_params, quadratic_testbed
from .topology import MixingMatrix, TopologyKind, TopologySpec, build_mixing

__all__ = [
    "AlgorithmKind",
    "ModelConfig",
    "DataConfig",
    "PartitionConfig",
    "ExperimentConfig",
    "ClientState",
    "RoundInfo",
    "Problem",
    "ExperimentResult",
    "ConfigError",
    "DivergenceError",
    "ole_init",
    "gossip_mix",
    "init_states",
    "run_round",
    "build_problem",
    "run_experiment",
    "validated",
]

# domain tags for deriving independent generator streams from one seed
_DOM_CLIENT = 0
_DOM_COORD = 1
_DOM_TOPO = 2
_DOM_DATA = 3
_DOM_PARTITION = 4
_DOM_INIT = 5


class AlgorithmKind(str, Enum):
    OLED_SGD = "oled_sgd"
    OLED_SAM = "oled_sam"
    DFEDAVG = "dfedavg"
    DFEDAVGM = "dfedavgm"
    DFEDSAM = "dfedsam"
    DPSGD = "dpsgd"
    FEDAVG_CENTRAL = "fedavg_central"
    FEDSAM_CENTRAL = "fedsam_central"


CENTRAL_KINDS = frozenset({AlgorithmKind.FEDAVG_CENTRAL, AlgorithmKind.FEDSAM_CENTRAL})
DECENTRALIZED_KINDS = frozenset(set(AlgorithmKind) - CENTRAL_KINDS)
LOOKAHEAD_KINDS = frozenset({AlgorithmKind.OLED_SGD, AlgorithmKind.OLED_SAM})

_METHOD_FOR = {
    AlgorithmKind.OLED_SGD: "sgd",
    AlgorithmKind.OLED_SAM: "sam",
    AlgorithmKind.DFEDAVG: "sgd",
    AlgorithmKind.DFEDAVGM: "sgd_momentum",
    AlgorithmKind.DFEDSAM: "sam",
    AlgorithmKind.DPSGD: "sgd",
    AlgorithmKind.FEDAVG_CENTRAL: "sgd",
    AlgorithmKind.FEDSAM_CENTRAL: "sam",
}


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to CLI exit code 2."""


class DivergenceError(RuntimeError):
    """Non-finite parameters encountered; maps to CLI exit code 3."""

    def __init__(self, round_index: int, client: int):
        self.round_index = round_index
        self.client = client
        super().__init__(f"non-finite parameters at round {round_index}, client {client}")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "logistic"  # "quadratic" | "logistic" | "mlp"
    p: int = 8  # quadratic dimension
    heterogeneity: float = 1.0  # quadratic linear-term spread
    hidden: tuple[int, ...] = ()  # mlp hidden sizes


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # "synthetic" | "csv"
    classes: int = 4
    dim: int = 10
    per_class: int = 100
    spread: float = 0.5
    test_per_class: int = 50
    path: str = ""
    test_path: str = ""


@dataclass(frozen=True)
class PartitionConfig:
    scheme: str = "dirichlet"  # "iid" | "dirichlet" | "pathological"
    alpha: float = 0.3
    classes_per_client: int = 2


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: AlgorithmKind = AlgorithmKind.OLED_SGD
    beta: float = 0.0
    m: int = 16
    rounds: int = 100
    local_steps: int = 5
    participation: float = 0.1  # central kinds only
    seed: int = 0
    eval_every: int = 1
    diagnostics: bool = False
    targets: tuple[float, ...] = (0.5, 0.7, 0.9)
    topology: TopologySpec | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    data: DataConfig = field(default_factory=DataConfig)


def validated(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check invariants and normalize derived fields.

    Forces beta = 0 for non-lookahead kinds, a single local step for
    dpsgd, and the optimizer method implied by the algorithm.
    """
    algo = AlgorithmKind(cfg.algorithm)
    if not 0.0 <= cfg.beta < 1.0:
        raise ConfigError(f"beta must be < 1 (and >= 0), got {cfg.beta}")
    if cfg.m < 1:
        raise ConfigError(f"m must be >= 1, got {cfg.m}")
    if cfg.rounds < 0:
        raise ConfigError("rounds must be >= 0")
    if cfg.local_steps < 1:
        raise ConfigError("local_steps must be >= 1")
    if cfg.eval_every < 1:
        raise ConfigError("eval_every must be >= 1")

    beta = cfg.beta if algo in LOOKAHEAD_KINDS else 0.0
    local_steps = 1 if algo is AlgorithmKind.DPSGD else cfg.local_steps
    topology = cfg.topology
    if algo in DECENTRALIZED_KINDS:
        if topology is None:
            raise ConfigError(f"{algo.value} requires a topology")
        if topology.m != cfg.m:
            raise ConfigError(f"topology.m={topology.m} != m={cfg.m}")
        if cfg.m > 1:
            topology.validate()
    else:
        if not 0.0 < cfg.participation <= 1.0:
            raise ConfigError(f"participation must be in (0, 1], got {cfg.participation}")

    optimizer = replace(cfg.optimizer, method=_METHOD_FOR[algo])
    optimizer.validate()
    if cfg.model.kind not in ("quadratic", "logistic", "mlp"):
        raise ConfigError(f"unknown model kind {cfg.model.kind!r}")
    if cfg.partition.scheme not in ("iid", "dirichlet", "pathological"):
        raise ConfigError(f"unknown partition scheme {cfg.partition.scheme!r}")
    if cfg.data.source not in ("synthetic", "csv"):
        raise ConfigError(f"unknown data source {cfg.data.source!r}")
    return replace(
        cfg,
        algorithm=algo,
        beta=beta,
        local_steps=local_steps,
        optimizer=optimizer,
        model=replace(cfg.model, hidden=tuple(cfg.model.hidden)),
        targets=tuple(cfg.targets),
    )


@dataclass
class ClientState:
    x_mixed: np.ndarray  # model after the latest mixing step
    z_prev: np.ndarray  # this client's local output from the previous round
    shard: Shard | int
    opt_state: np.ndarray | None = None  # momentum buffer; reset every round


@dataclass
class RoundInfo:
    """Internals of one completed round, for metrics and property checks."""

    t: int
    lr: float
    ole_points: np.ndarray | None  # (m, p) local-training start points
    z: np.ndarray  # pre-mix local outputs (participants only for central kinds)
    x_prev: np.ndarray  # (m, p) client models at round start
    x_mixed: np.ndarray  # (m, p) client models after mixing / aggregation
    delta: float  # consistency term at this round's mixing step
    consensus: float  # dispersion of x_mixed (exactly 0 for central kinds)
    v1: float | None
    v2: float | None
    first_draw_step: int | None  # step index if the watched sample was first drawn here


@dataclass
class Problem:
    """Built experiment inputs: objective, shards, held-out data, init point."""

    spec: ModelSpec
    shards: list
    test: Shard | None
    dataset: LabeledDataset | None
    plan: PartitionPlan | None
    x0: np.ndarray

    def with_dataset(self, ds: LabeledDataset) -> "Problem":
        """Same plan/spec/init over a different dataset (coupled-run support)."""
        if self.plan is None:
            raise ValueError("problem has no dataset-backed shards")
        shards = [Shard(ds.features[idx], ds.labels[idx]) for idx in self.plan.assignments]
        return Problem(self.spec, shards, self.test, ds, self.plan, self.x0)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    summary: dict
    final_x: np.ndarray  # (m, p) client models after the last round
    first_draw: tuple[int, int] | None = None


def _subseed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def _client_rng(seed: int, client: int, t: int) -> np.random.Generator:
    return np.random.default_rng([seed, _DOM_CLIENT, client, t])


def ole_init(x_mixed: np.ndarray, z_prev: np.ndarray, beta: float) -> np.ndarray:
    """Opposite-lookahead start point: x + beta * (x - z_prev).

    Steps away from the client's previous local output, which keeps the
    upcoming local phase from drifting far from the mixed model.
    Algebraically this equals (1 + beta) * x - beta * z_prev, i.e. one
    gossip step with the modified matrix (1 + beta) * W - beta * I.
    """
    if x_mixed.shape != z_prev.shape:
        raise ValueError("x_mixed and z_prev must have equal length")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    return x_mixed + beta * (x_mixed - z_prev)


def gossip_mix(local_outputs, w: MixingMatrix) -> np.ndarray:
    """x_i' = sum_j w_ij z_j, accumulated in ascending j for reproducibility."""
    z = np.asarray(local_outputs, dtype=float)
    if z.shape[0] != w.m:
        raise ValueError(f"expected {w.m} rows, got {z.shape[0]}")
    out = np.zeros_like(z)
    for j in range(w.m):
        out += np.multiply.outer(w.w[:, j], z[j])
    return out


def init_states(x0: np.ndarray, shards) -> list[ClientState]:
    """All clients start at the shared x0 with z_prev = x0."""
    return [ClientState(x_mixed=x0.copy(), z_prev=x0.copy(), shard=s) for s in shards]


def _check_finite(z: np.ndarray, t: int, client: int) -> None:
    if not np.all(np.isfinite(z)):
        raise DivergenceError(t, client)


def run_round(
    states: list[ClientState],
    t: int,
    cfg: ExperimentConfig,
    w_t: MixingMatrix | None,
    spec: ModelSpec,
    *,
    map_fn=map,
    watch: tuple[int, int] | None = None,
    diagnostics: bool | None = None,
) -> tuple[list[ClientState], RoundInfo]:
    """Execute one communication round and return the new states."""
    diagnostics = cfg.diagnostics if diagnostics is None else diagnostics
    if cfg.algorithm in CENTRAL_KINDS:
        return _central_round(states, t, cfg, spec, map_fn, watch, diagnostics)
    return _decentralized_round(states, t, cfg, w_t, spec, map_fn, watch, diagnostics)


def _decentralized_round(states, t, cfg, w_t, spec, map_fn, watch, diagnostics):
    m = len(states)
    x_prev = np.stack([s.x_mixed for s in states])
    ole_points = np.stack([ole_init(s.x_mixed, s.z_prev, cfg.beta) for s in states])

    def train_client(i: int):
        watch_index = watch[1] if watch is not None and watch[0] == i else None
        return local_train(
            spec,
            ole_points[i],
            states[i].shard,
            cfg.local_steps,
            cfg.optimizer,
            _client_rng(cfg.seed, i, t),
            round_index=t,
            opt_state=None,  # momentum never survives a mixing step
            ref_point=x_prev[i] if diagnostics else None,
            watch_index=watch_index,
        )

    results = list(map_fn(train_client, range(m)))
    for i, res in enumerate(results):
        _check_finite(res.z, t, i)
    z = np.stack([res.z for res in results])
    x_new = gossip_mix(z, w_t)
    delta = consistency_delta(z, x_new)
    v1 = v2 = None
    if diagnostics:
        v1, v2 = update_energies(
            np.array([res.v1 for res in results]), x_prev.mean(axis=0), x_new.mean(axis=0)
        )
    new_states = [
        ClientState(x_new[i], z[i], states[i].shard, results[i].opt_state) for i in range(m)
    ]
    first_draw = None
    if watch is not None and results[watch[0]].first_draw_step is not None:
        first_draw = results[watch[0]].first_draw_step
    info = RoundInfo(
        t=t,
        lr=cfg.optimizer.eta0 * cfg.optimizer.decay**t,
        ole_points=ole_points,
        z=z,
        x_prev=x_prev,
        x_mixed=x_new,
        delta=delta,
        consensus=consensus_distance(x_new),
        v1=v1,
        v2=v2,
        first_draw_step=first_draw,
    )
    return new_states, info


def _central_round(states, t, cfg, spec, map_fn, watch, diagnostics):
    m = len(states)
    global_x = states[0].x_mixed
    coord = np.random.default_rng([cfg.seed, _DOM_COORD, t])
    n_part = math.ceil(cfg.participation * m)
    participants = np.sort(coord.choice(m, size=n_part, replace=False))

    def train_client(i: int):
        watch_index = watch[1] if watch is not None and watch[0] == i else None
        return local_train(
            spec,
            global_x.copy(),
            states[i].shard,
            cfg.local_steps,
            cfg.optimizer,
            _client_rng(cfg.seed, i, t),
            round_index=t,
            ref_point=global_x if diagnostics else None,
            watch_index=watch_index,
        )

    results = list(map_fn(train_client, [int(i) for i in participants]))
    for i, res in zip(participants, results):
        _check_finite(res.z, t, int(i))
    z = np.stack([res.z for res in results])
    new_global = z.mean(axis=0)
    x_prev = np.stack([s.x_mixed for s in states])
    x_new = np.repeat(new_global[None, :], m, axis=0)
    v1 = v2 = None
    if diagnostics:
        v1, v2 = update_energies(np.array([res.v1 for res in results]), global_x, new_global)
    new_states = [ClientState(x_new[i].copy(), x_new[i].copy(), states[i].shard) for i in range(m)]
    first_draw = None
    if watch is not None and watch[0] in set(int(i) for i in participants):
        res = results[int(np.searchsorted(participants, watch[0]))]
        first_draw = res.first_draw_step
    info = RoundInfo(
        t=t,
        lr=cfg.optimizer.eta0 * cfg.optimizer.decay**t,
        ole_points=None,
        z=z,
        x_prev=x_prev,
        x_mixed=x_new,
        delta=0.0,
        consensus=0.0,
        v1=v1,
        v2=v2,
        first_draw_step=first_draw,
    )
    return new_states, info


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Deterministically construct objective, shards, held-out data, and x0."""
    cfg = validated(cfg)
    data_seed = _subseed(cfg.seed, _DOM_DATA)
    init_seed = _subseed(cfg.seed, _DOM_INIT)
    if cfg.model.kind == "quadratic":
        spec = quadratic_testbed(cfg.m, cfg.model.p, cfg.model.heterogeneity, data_seed)
        return Problem(
            spec=spec,
            shards=list(range(cfg.m)),
            test=None,
            dataset=None,
            plan=None,
            x0=init_params(spec, init_seed),
        )

    d = cfg.data
    if d.source == "synthetic":
        dataset = generate_synthetic(d.classes, d.dim, d.per_class, d.spread, data_seed)
        test_ds = generate_synthetic_holdout(d.classes, d.dim, d.test_per_class, d.spread, data_seed)
        test = Shard(test_ds.features, test_ds.labels)
    else:
        dataset = load_csv(d.path)
        test = None
        if d.test_path:
            test_ds = load_csv(d.test_path)
            test = Shard(test_ds.features, test_ds.labels)

    part_seed = _subseed(cfg.seed, _DOM_PARTITION)
    scheme = cfg.partition.scheme
    if scheme == "iid":
        plan = partition_iid(dataset, cfg.m, part_seed)
    elif scheme == "dirichlet":
        plan = partition_dirichlet(dataset, cfg.m, cfg.partition.alpha, part_seed)
    else:
        plan = partition_pathological(dataset, cfg.m, cfg.partition.classes_per_client, part_seed)

    spec = ModelSpec(
        kind=cfg.model.kind,
        dim=dataset.features.shape[1],
        num_classes=dataset.num_classes,
        hidden=tuple(cfg.model.hidden) if cfg.model.kind == "mlp" else (),
    )
    shards = [Shard(dataset.features[idx], dataset.labels[idx]) for idx in plan.assignments]
    return Problem(
        spec=spec, shards=shards, test=test, dataset=dataset, plan=plan,
        x0=init_params(spec, init_seed),
    )


def _mixing_for_round(cfg: ExperimentConfig, t: int, static: MixingMatrix | None) -> MixingMatrix:
    if static is not None:
        return static
    topo = cfg.topology
    round_seed = _subseed(topo.seed, _DOM_TOPO, t)
    return build_mixing(replace(topo, seed=round_seed))


def _evaluate(problem: Problem, x_stack: np.ndarray, *, t, lr, delta, consensus, v1, v2) -> RoundRecord:
    xbar = x_stack.mean(axis=0)
    train_loss, grad = full_objective(problem.spec, xbar, problem.shards)
    test_acc = None
    if problem.spec.kind != "quadratic" and problem.test is not None:
        _, test_acc = eval_model(problem.spec, xbar, problem.test)
    return RoundRecord(
        t=t,
        train_loss=train_loss,
        test_acc=test_acc,
        grad_norm_sq=float(grad @ grad),
        consensus=consensus,
        delta_t=delta,
        v1=v1,
        v2=v2,
        lr=lr,
    )


def run_experiment(
    cfg: ExperimentConfig,
    *,
    workers: int = 1,
    problem: Problem | None = None,
    on_round=None,
    watch: tuple[int, int] | None = None,
) -> ExperimentResult:
    """Run T communication rounds and collect the metric record series.

    ``workers`` only controls how many threads execute the per-client
    local phase; outputs are bitwise independent of it.  ``on_round``
    receives (t, RoundInfo) after every round.  ``watch`` = (client,
    shard-local index) reports when that sample first enters a minibatch.
    """
    cfg = validated(cfg)
    start = time.perf_counter()
    problem = build_problem(cfg) if problem is None else problem
    states = init_states(problem.x0, problem.shards)

    static_w = None
    if cfg.algorithm in DECENTRALIZED_KINDS:
        if cfg.m == 1:
            static_w = MixingMatrix(m=1, w=np.ones((1, 1)), psi=0.0)
        elif cfg.topology.kind is not TopologyKind.RANDOM_K:
            static_w = build_mixing(cfg.topology)

    records: list[RoundRecord] = []
    first_draw: tuple[int, int] | None = None
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    map_fn = pool.map if pool is not None else map
    try:
        for t in range(cfg.rounds):
            w_t = None
            if cfg.algorithm in DECENTRALIZED_KINDS:
                w_t = _mixing_for_round(cfg, t, static_w)
            states, info = run_round(
                states, t, cfg, w_t, problem.spec,
                map_fn=map_fn,
                watch=watch if first_draw is None else None,
            )
            if first_draw is None and info.first_draw_step is not None:
                first_draw = (t, info.first_draw_step)
            if on_round is not None:
                on_round(t, info)
            if t % cfg.eval_every == 0 or t == cfg.rounds - 1:
                records.append(
                    _evaluate(
                        problem,
                        info.x_mixed,
                        t=t,
                        lr=info.lr,
                        delta=info.delta,
                        consensus=info.consensus,
                        v1=info.v1,
                        v2=info.v2,
                    )
                )
    finally:
        if pool is not None:
            pool.shutdown()

    final_x = np.stack([s.x_mixed for s in states])
    if records:
        last = records[-1]
    else:  # degenerate horizon: report initial metrics only
        last = _evaluate(
            problem, final_x, t=0, lr=cfg.optimizer.eta0, delta=0.0, consensus=0.0,
            v1=None, v2=None,
        )
    accs = [r.test_acc for r in records if r.test_acc is not None]
    summary = {
        "algorithm": cfg.algorithm.value,
        "rounds": cfg.rounds,
        "best_acc": max(accs) if accs else None,
        "rounds_to_targets": {
            repr(target): hit for target, hit in rounds_to_target(records, cfg.targets)
        },
        "final": {
            "t": last.t,
            "train_loss": last.train_loss,
            "test_acc": last.test_acc,
            "grad_norm_sq": last.grad_norm_sq,
            "consensus": last.consensus,
            "delta_t": last.delta_t,
        },
        "wall_time_seconds": time.perf_counter() - start,
    }
    return ExperimentResult(
        config=cfg, records=records, summary=summary, final_x=final_x, first_draw=first_draw
    )
