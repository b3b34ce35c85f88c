"""Per-client local training: SGD, SAM, and heavy-ball momentum.

The SAM step evaluates the gradient twice on the same minibatch: once at
the current point to obtain the ascent direction, then at the point
perturbed by ``lam`` along the normalized gradient.  With ``lam == 0`` (or
a vanishing first gradient) the perturbed point equals the current one, so
the second evaluation is skipped and the step is bitwise identical to
plain SGD.

The learning rate decays per communication round and is constant across
the K steps inside a round.  Momentum buffers are reset at every round
start so that a freshly mixed model never inherits stale velocity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelSpec, Shard, loss_and_grad

__all__ = [
    "OptimizerConfig",
    "LocalResult",
    "lr_at_round",
    "sgd_step",
    "sam_step",
    "momentum_step",
    "local_train",
]

METHODS = ("sgd", "sam", "sgd_momentum")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "sgd"
    eta0: float = 0.1
    decay: float = 0.998
    lam: float = 0.0  # SAM perturbation radius
    mu: float = 0.0  # heavy-ball momentum
    grad_floor: float = 1e-12  # skip SAM perturbation below this gradient norm
    batch_size: int = 32

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown optimizer method {self.method!r}; choose from {METHODS}")
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError(f"mu must be in [0, 1), got {self.mu}")
        if self.grad_floor < 0:
            raise ValueError("grad_floor must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class LocalResult:
    z: np.ndarray  # x_{i,K}: the client's local output for this round
    opt_state: np.ndarray | None  # final momentum buffer (zeroed again next round)
    v1: float | None  # sum_k ||x_{i,k} - ref||^2 when a reference point was given
    first_draw_step: int | None  # first step whose batch hit the watched index


def lr_at_round(cfg: OptimizerConfig, t: int) -> float:
    """eta_t = eta0 * decay^t, constant within a round."""
    if t < 0:
        raise ValueError("round index must be >= 0")
    return cfg.eta0 * cfg.decay**t


def sgd_step(spec: ModelSpec, x, shard, batch, eta: float) -> np.ndarray:
    _, grad = loss_and_grad(spec, x, shard, batch)
    return x - eta * grad


def sam_step(
    spec: ModelSpec, x, shard, batch, eta: float, lam: float, grad_floor: float = 1e-12
) -> np.ndarray:
    _, g1 = loss_and_grad(spec, x, shard, batch)
    norm = float(np.linalg.norm(g1))
    if lam == 0.0 or norm <= grad_floor:
        # perturbed point would coincide with x; the second gradient is g1
        g = g1
    else:
        _, g = loss_and_grad(spec, x + lam * g1 / norm, shard, batch)
    return x - eta * g


def momentum_step(
    spec: ModelSpec, x, velocity, shard, batch, eta: float, mu: float
) -> tuple[np.ndarray, np.ndarray]:
    _, grad = loss_and_grad(spec, x, shard, batch)
    velocity = mu * velocity + grad
    return x - eta * velocity, velocity


def local_train(
    spec: ModelSpec,
    x0: np.ndarray,
    shard: Shard | int,
    k_steps: int,
    cfg: OptimizerConfig,
    rng: np.random.Generator,
    *,
    round_index: int,
    opt_state: np.ndarray | None = None,
    ref_point: np.ndarray | None = None,
    watch_index: int | None = None,
) -> LocalResult:
    """K sequential steps on one client, one minibatch draw per step.

    Minibatches are drawn uniformly with replacement from the client's
    shard off the supplied generator; the quadratic family is noiseless
    and consumes no randomness.  ``ref_point`` switches on accumulation of
    the local-drift energy sum_k ||x_{i,k} - ref||^2 over the pre-step
    iterates, and ``watch_index`` reports the first step whose batch
    contains that shard-local row (used by the stability probe).
    """
    if k_steps < 1:
        raise ValueError("need at least one local step")
    eta = lr_at_round(cfg, round_index)
    noiseless = spec.kind == "quadratic"
    x = x0
    velocity = opt_state
    if cfg.method == "sgd_momentum" and velocity is None:
        velocity = np.zeros_like(x0)
    v1 = 0.0 if ref_point is not None else None
    first_draw = None
    for k in range(k_steps):
        batch = None if noiseless else rng.integers(0, len(shard), size=cfg.batch_size)
        if watch_index is not None and first_draw is None and batch is not None:
            if bool((batch == watch_index).any()):
                first_draw = k
        if ref_point is not None:
            v1 += float(np.sum((x - ref_point) ** 2))
        if cfg.method == "sgd":
            x = sgd_step(spec, x, shard, batch, eta)
        elif cfg.method == "sam":
            x = sam_step(spec, x, shard, batch, eta, cfg.lam, cfg.grad_floor)
        else:
            x, velocity = momentum_step(spec, x, velocity, shard, batch, eta, cfg.mu)
    return LocalResult(z=x, opt_state=velocity, v1=v1, first_draw_step=first_draw)
