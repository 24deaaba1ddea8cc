"""Small numpy MLP with hand-written backprop, Adam, and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")


class ShapeError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


class GradCheckError(RuntimeError):
    pass


@dataclass
class MlpParams:
    """Weights are stored (fan_in, fan_out) so a batch forward is ``x @ W + b``."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ShapeError(f"bad layer sizes {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count mismatch")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ShapeError(f"layer {k}: expected {shape}, got {w.shape}/{b.shape}")

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        arrays = list(arrays)
        return MlpParams(self.layer_sizes, arrays[0::2], arrays[1::2], self.activation)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def init_mlp(layer_sizes: Sequence[int], seed: int, activation: str = "relu") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(layer_sizes), weights, biases, activation)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ShapeError(f"input width {x.shape[-1]} != {params.layer_sizes[0]}")
    return x, single


def _dense(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if w.shape[1] == 1:
        # BLAS matrix-vector kernels sum in an order that depends on the row's position in the
        # batch; a per-row reduction keeps each output independent of its neighbours
        return (a * w[:, 0]).sum(axis=1, keepdims=True) + b
    return a @ w + b


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Forward pass for a vector or a (batch, features) matrix."""
    a, single = _as_batch(params, x)
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = _dense(a, w, b)
        if k < last:
            a = _act(a, params.activation)
    return a[0] if single else a


def hidden_forward(params: MlpParams, x) -> np.ndarray:
    """Activations feeding the final linear layer (the penultimate layer)."""
    a, single = _as_batch(params, x)
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        a = _act(_dense(a, w, b), params.activation)
    return a[0] if single else a


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each hidden layer
    output: np.ndarray

    @property
    def hidden(self) -> np.ndarray:
        return self.inputs[-1]


def forward_with_cache(params: MlpParams, x) -> ForwardCache:
    a, _ = _as_batch(params, x)
    inputs, pre = [], []
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = _dense(a, w, b)
        if k < last:
            pre.append(z)
            a = _act(z, params.activation)
        else:
            a = z
    return ForwardCache(inputs, pre, a)


def mlp_backward(params: MlpParams, cache: ForwardCache, grad_out, grad_hidden=None) -> list[np.ndarray]:
    """Parameter gradients in ``params.arrays()`` order.

    ``grad_out`` is dL/d(output); ``grad_hidden`` optionally adds dL/d(penultimate activations).
    """
    g = np.asarray(grad_out, dtype=np.float64).reshape(cache.output.shape)
    grads: list[np.ndarray] = [None] * (2 * params.n_layers)  # type: ignore[list-item]
    for k in range(params.n_layers - 1, -1, -1):
        grads[2 * k] = cache.inputs[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k == 0:
            break
        g = g @ params.weights[k].T
        if k == params.n_layers - 1 and grad_hidden is not None:
            g = g + grad_hidden
        z = cache.pre[k - 1]
        g = g * _act_grad(z, cache.inputs[k], params.activation)
    return grads


# -- losses on plain arrays -------------------------------------------------


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over rows of ``-t . log_softmax(z)`` and its gradient w.r.t. the logits."""
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    ls = log_softmax(logits)
    n = logits.shape[0]
    loss = float(-(targets * ls).sum() / n)
    grad = (np.exp(ls) * targets.sum(axis=1, keepdims=True) - targets) / n
    return loss, grad


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    diff = pred - np.asarray(target, dtype=np.float64).ravel()
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# -- optimisation -----------------------------------------------------------


@dataclass
class Adam:
    """Adam state. Moment buffers are created lazily to mirror the parameter list."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def update(self, arrays: list[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """One in-place step on ``arrays``."""
        if not self.m:
            self.m = [np.zeros_like(a) for a in arrays]
            self.v = [np.zeros_like(a) for a in arrays]
        if len(grads) != len(self.m) or any(g.shape != m.shape for g, m in zip(grads, self.m)):
            raise ShapeError("gradient shapes do not match optimizer state")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def check_finite(step: int, loss: float, grads: Sequence[np.ndarray]) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(step, "loss")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise DivergenceError(step, "gradient")


LossFn = Callable[..., tuple[float, list[np.ndarray]]]


def optimize(params, loss_fn: LossFn, steps: int, state: Adam | None = None, seed: int = 0):
    """Run ``steps`` Adam updates on a copy of ``params``.

    ``params`` is an :class:`MlpParams` or a list of arrays. ``loss_fn(params, rng)`` returns
    ``(loss, grads)`` with grads in array order; ``rng`` is seeded from ``seed`` so callers
    can draw minibatches reproducibly.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    state = state if state is not None else Adam()
    rng = np.random.default_rng(seed)
    if isinstance(params, MlpParams):
        current = params.copy()
        arrays = current.arrays()
    else:
        arrays = [np.array(a, dtype=np.float64) for a in params]
        current = arrays
    for step in range(steps):
        loss, grads = loss_fn(current, rng)
        check_finite(step, loss, grads)
        state.update(arrays, grads)
    return current


def _flat_arrays(params) -> list[np.ndarray]:
    return params.arrays() if isinstance(params, MlpParams) else list(params)


def grad_check(loss_fn: Callable, params, perturbation: float = 1e-5) -> float:
    """Max over scalars of |analytic - central difference| / max(1, |central difference|).

    ``loss_fn(params)`` returns ``(loss, grads)``. Parameters are perturbed in place and restored.
    """
    if perturbation <= 0:
        raise ValueError("perturbation must be positive")
    _, grads = loss_fn(params)
    arrays = _flat_arrays(params)
    worst = 0.0
    for a, g in zip(arrays, grads):
        flat = a.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + perturbation
            up = loss_fn(params)[0]
            flat[i] = orig - perturbation
            down = loss_fn(params)[0]
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradCheckError(f"non-finite loss while perturbing element {i}")
            numeric = (up - down) / (2 * perturbation)
            worst = max(worst, abs(gflat[i] - numeric) / max(1.0, abs(numeric)))
    return worst
