# numeric.py

"""
Deterministic numeric kernel: MLP forward/backward, softmax cross-entropy,
Adam, finite-difference gradient checks and seeded random streams.

All arrays are float64. Functions never mutate their inputs.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .models import ConfigError, DimensionError, NumericError

Params = Dict[str, np.ndarray]


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give identical draw sequences."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def spawn_rngs(seed: int, n: int) -> List[np.random.Generator]:
    """Independent child streams derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class MlpParams:
    """
    Prediction head parameters.

    Attributes:
        weights: Layer weight matrices, shape (out, in)
        biases: Layer bias vectors, shape (out,)
    """
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("MLP needs one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"MLP layer {i} bias", w.shape[0], b.shape)
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"MLP layer {i} input", self.weights[i - 1].shape[0],
                                     w.shape[1])

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def arrays(self) -> Params:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out

    @classmethod
    def from_arrays(cls, arrays: Params) -> "MlpParams":
        n = len([k for k in arrays if k.startswith("W")])
        return cls([arrays[f"W{i}"] for i in range(n)], [arrays[f"b{i}"] for i in range(n)])

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MlpParams":
        return cls([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(o) for o in sizes[1:]])


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights and zero biases for layer sizes such as [256, 64, 3]."""
    if len(sizes) < 2:
        raise ConfigError(f"MLP needs at least an input and an output size, got {list(sizes)}")
    weights = [glorot_uniform(rng, o, i) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    return MlpParams(weights, biases)


def mlp_forward(x: np.ndarray, params: MlpParams) -> Tuple[np.ndarray, list]:
    """
    Forward pass: tanh on hidden layers, identity on the output layer.

    Args:
        x: Input vector, width equal to the first layer's input width
        params: Layer parameters

    Returns:
        (logits, cache) where cache holds every layer input for mlp_backward

    Raises:
        DimensionError: If x has the wrong width
    """
    x = np.asarray(x, dtype=np.float64)
    expected = params.weights[0].shape[1]
    if x.shape != (expected,):
        raise DimensionError("MLP input", expected, x.shape[0] if x.ndim == 1 else x.shape)
    cache = []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.append(a)
        z = w @ a + b
        a = z if i == last else np.tanh(z)
    return a, cache


def mlp_backward(grad_out: np.ndarray, params: MlpParams, cache: list) -> Tuple[MlpParams, np.ndarray]:
    """Reverse pass of mlp_forward; returns (parameter gradients, gradient w.r.t. the input)."""
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    delta = grad_out
    for i in range(len(params.weights) - 1, -1, -1):
        a_in = cache[i]
        grad_w[i] = np.outer(delta, a_in)
        grad_b[i] = delta.copy()
        grad_in = params.weights[i].T @ delta
        if i > 0:
            # a_in = tanh(z_{i-1})
            delta = grad_in * (1.0 - a_in * a_in)
        else:
            delta = grad_in
    return MlpParams(grad_w, grad_b), delta


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / e.sum()


def softmax_cross_entropy(logits: np.ndarray, label: int) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Softmax cross-entropy of three action logits.

    Returns:
        (loss, probs, grad_logits) with loss = -log probs[label] and
        grad_logits = probs - onehot(label)
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (3,):
        raise DimensionError("logits", 3, logits.shape)
    if not 0 <= int(label) < 3:
        raise ConfigError(f"Label {label} out of range [0, 3)")
    label = int(label)
    shifted = logits - np.max(logits)
    log_norm = np.log(np.exp(shifted).sum())
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)
    loss = float(-log_probs[label])
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, probs, grad


@dataclass
class AdamState:
    """
    Adam optimizer state for a set of named parameter arrays.

    Attributes:
        learning_rate: Step size
        beta1: First-moment decay
        beta2: Second-moment decay
        epsilon: Denominator guard
        step: Number of updates applied so far
        m: First-moment accumulators by parameter name
        v: Second-moment accumulators by parameter name
    """
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def create(cls, params: Params, learning_rate: float = 1e-3, beta1: float = 0.9,
               beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        zeros = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(learning_rate, beta1, beta2, epsilon, 0,
                   zeros, {k: z.copy() for k, z in zeros.items()})

    def hyperparameters(self) -> dict:
        return {"learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "epsilon": self.epsilon}


def adam_step(params: Params, grads: Params, state: AdamState) -> Tuple[Params, AdamState]:
    """
    One bias-corrected Adam update.

    Parameters without a gradient entry are returned unchanged (frozen).

    Raises:
        DimensionError: If a gradient's shape differs from its parameter's
        ConfigError: If a gradient names an unknown parameter
    """
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params = dict(params)
    new_m = dict(state.m)
    new_v = dict(state.v)
    for name, g in grads.items():
        if name not in params:
            raise ConfigError(f"Gradient for unknown parameter {name!r}")
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient {name}", p.shape, g.shape)
        m = new_m.get(name)
        v = new_v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(state.learning_rate, b1, b2, state.epsilon, t, new_m, new_v)


def finite_diff_check(loss_fn: Callable[[Params], float], params: Params, analytic: Params,
                      h: float = 1e-5, max_coords: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> float:
    """
    Compare analytic gradients against central differences.

    Args:
        loss_fn: Deterministic loss of a parameter dictionary
        params: Point at which gradients are compared
        analytic: Analytic gradients for the names to check
        h: Difference step
        max_coords: Check at most this many coordinates per array (sampled with rng)
        rng: Generator used when max_coords is set

    Returns:
        max over checked coordinates of |g_a - g_fd| / (1e-8 + |g_a| + |g_fd|)

    Raises:
        NumericError: If the loss is not finite at a sampled point
    """
    if h <= 0:
        raise ConfigError(f"Difference step must be positive, got {h}")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    worst = 0.0
    for name, grad in analytic.items():
        arr = work[name]
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng if rng is not None else make_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        g_flat = np.asarray(grad).reshape(-1)
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + h
            plus = loss_fn(work)
            flat[idx] = original - h
            minus = loss_fn(work)
            flat[idx] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"Non-finite loss while probing {name}[{idx}]")
            g_fd = (plus - minus) / (2.0 * h)
            g_a = g_flat[idx]
            err = abs(g_a - g_fd) / (1e-8 + abs(g_a) + abs(g_fd))
            worst = max(worst, float(err))
    return worst
