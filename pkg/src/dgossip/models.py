"""Differentiable objectives over flat parameter vectors.

Three model families:

* quadratic  -- per-client f_i(x) = 0.5 x^T A_i x - b_i^T x with symmetric
  PSD A_i; gradients are exact and the joint optimum is available in
  closed form, so this family doubles as the oracle testbed.
* logistic   -- multinomial logistic regression (softmax cross-entropy).
* mlp        -- fully-connected net with tanh hidden layers and softmax
  output; tanh keeps the objective smooth everywhere, which the
  trend-level convergence checks rely on.

All parameters live in one flat float64 vector; gradients are computed
analytically (closed form or manual backprop), never by autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Shard",
    "ModelSpec",
    "init_params",
    "loss_and_grad",
    "full_objective",
    "quadratic_testbed",
]


@dataclass(frozen=True, eq=False)
class Shard:
    """A client's slice of a labeled dataset."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    kind: str  # "quadratic" | "logistic" | "mlp"
    dim: int = 0
    num_classes: int = 0
    hidden: tuple[int, ...] = ()
    # quadratic family: stacked per-client curvature/linear terms plus the
    # closed-form joint optimum (mean A)^-1 (mean b)
    quad_a: np.ndarray | None = None  # (m, p, p)
    quad_b: np.ndarray | None = None  # (m, p)
    quad_opt: np.ndarray | None = field(default=None, compare=False)

    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.dim, *self.hidden, self.num_classes]
        return [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]

    def param_count(self) -> int:
        if self.kind == "quadratic":
            return self.quad_a.shape[1]
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """One shared initial parameter vector.

    Weights are Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
    biases zero; the quadratic family starts at the origin.  Every client
    receives a copy of this single draw.
    """
    if spec.kind == "quadratic":
        return np.zeros(spec.param_count())
    rng = np.random.default_rng([seed])
    chunks = []
    for fan_in, fan_out in spec.layer_dims():
        a = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-a, a, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _unpack(spec: ModelSpec, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_dims():
        w = x[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = x[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_backward(spec: ModelSpec, x: np.ndarray, feats: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its exact gradient for logistic/mlp."""
    layers = _unpack(spec, x)
    n = len(labels)
    acts = [feats]
    for li, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        acts.append(np.tanh(z) if li < len(layers) - 1 else z)
    probs = _softmax(acts[-1])
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))

    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    grads: list[np.ndarray] = []
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        grads.append(delta.sum(axis=0))  # bias
        grads.append((acts[li].T @ delta).ravel())  # weight
        if li > 0:
            delta = (delta @ w.T) * (1.0 - acts[li] ** 2)  # through tanh
    return loss, np.concatenate(grads[::-1])


def loss_and_grad(
    spec: ModelSpec,
    x: np.ndarray,
    shard: Shard | int,
    batch: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Batch-mean loss and exact gradient.

    ``shard`` is the client's :class:`Shard` for classification models and
    the client index for the quadratic family (whose objective has no
    sampling noise, so ``batch`` is ignored there).
    """
    if spec.kind == "quadratic":
        a = spec.quad_a[shard]
        b = spec.quad_b[shard]
        grad = a @ x - b
        loss = float(0.5 * x @ a @ x - b @ x)
        return loss, grad
    feats = shard.features if batch is None else shard.features[batch]
    labels = shard.labels if batch is None else shard.labels[batch]
    return _forward_backward(spec, x, feats, labels)


def full_objective(spec: ModelSpec, x: np.ndarray, shards) -> tuple[float, np.ndarray]:
    """Exact global objective: arithmetic mean of full-shard client losses."""
    losses = []
    grad = np.zeros_like(x)
    for shard in shards:
        loss_i, grad_i = loss_and_grad(spec, x, shard, batch=None)
        losses.append(loss_i)
        grad += grad_i
    m = len(losses)
    return float(np.mean(losses)), grad / m


def quadratic_testbed(
    m: int,
    p: int,
    heterogeneity: float,
    seed: int,
    identical_curvature: bool = False,
) -> ModelSpec:
    """Heterogeneous quadratic family with a stored closed-form optimum.

    A_i = Q_i D_i Q_i^T with eigenvalues uniform in [0.5, 2]; b_i = b_bar +
    heterogeneity * delta_i with exactly mean-zero delta_i across clients.
    ``identical_curvature`` shares one A across clients, which together
    with heterogeneity 0 makes all client objectives identical.
    """
    if p < 1 or m < 1:
        raise ValueError("need m >= 1 and p >= 1")
    rng = np.random.default_rng([seed])
    n_mats = 1 if identical_curvature else m
    mats = np.empty((m, p, p))
    for i in range(n_mats):
        q, _ = np.linalg.qr(rng.normal(size=(p, p)))
        eigs = rng.uniform(0.5, 2.0, size=p)
        mats[i] = (q * eigs) @ q.T
        mats[i] = 0.5 * (mats[i] + mats[i].T)  # kill asymmetric rounding
    if identical_curvature:
        mats[1:] = mats[0]
    b_bar = rng.normal(size=p)
    delta = rng.normal(size=(m, p))
    delta -= delta.mean(axis=0)
    b = b_bar + heterogeneity * delta
    opt = np.linalg.solve(mats.mean(axis=0), b.mean(axis=0))
    return ModelSpec(kind="quadratic", quad_a=mats, quad_b=b, quad_opt=opt)
