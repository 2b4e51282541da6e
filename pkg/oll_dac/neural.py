"""
Small dense ReLU network with hand-written backpropagation and Adam.

Layers are stored as (W, b) with W shaped (fan_in, fan_out); hidden layers use
ReLU, the output layer is affine. Everything is float64.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from oll_dac.errors import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

HIDDEN_UNITS = 50


def default_sizes(n_inputs: int, n_outputs: int, hidden: int = HIDDEN_UNITS) -> list[int]:
    return [n_inputs, hidden, hidden, n_outputs]


@dataclass(frozen=True)
class ForwardTrace:
    """Per-layer inputs and pre-activations of one forward pass, reusable by `Mlp.backward`."""

    activations: list
    pre_activations: list

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


class Mlp:
    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ConfigurationError("An MLP needs one bias vector per weight matrix.")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigurationError(f"Layer shapes do not line up: W{w.shape}, b{b.shape}.")

    @classmethod
    def glorot(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        """Uniform in +-sqrt(6 / (fan_in + fan_out)) per layer, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "Mlp":
        weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.parameters())

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.n_inputs:
            raise UsageError(f"Expected a batch of shape (B, {self.n_inputs}), got {batch.shape}.")
        return batch

    def _forward_trace(self, batch: np.ndarray) -> ForwardTrace:
        activations = [batch]
        pre_activations = []
        h = batch
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_activations.append(z)
            h = np.maximum(z, 0.0) if i < last else z
            activations.append(h)
        return ForwardTrace(activations, pre_activations)

    def forward_trace(self, batch: np.ndarray) -> ForwardTrace:
        return self._forward_trace(self._check_batch(batch))

    def forward(self, batch: np.ndarray) -> np.ndarray:
        return self._forward_trace(self._check_batch(batch)).output

    __call__ = forward

    def backward(self, batch: np.ndarray, upstream: np.ndarray, trace: Optional[ForwardTrace] = None) -> list[np.ndarray]:
        """
        Gradients of sum(upstream * forward(batch)) with respect to every parameter,
        ordered like `parameters()`. A `trace` of the same batch under the current
        parameters skips the forward pass.
        """
        batch = self._check_batch(batch)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (batch.shape[0], self.n_outputs):
            raise UsageError(f"Upstream gradient shape {upstream.shape} does not match output "
                             f"({batch.shape[0]}, {self.n_outputs}).")
        if trace is None:
            trace = self._forward_trace(batch)
        activations, pre_activations = trace.activations, trace.pre_activations
        grads: list[Optional[np.ndarray]] = [None] * (2 * len(self.weights))
        delta = upstream
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                delta = delta * (pre_activations[i] > 0.0)
            grads[2 * i] = activations[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
        return grads

    def to_dict(self) -> dict:
        return {
            "architecture": self.sizes,
            "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        layers = data["layers"]
        net = cls([layer["weight"] for layer in layers], [layer["bias"] for layer in layers])
        if net.sizes != list(data.get("architecture", net.sizes)):
            raise ConfigurationError("Checkpoint architecture does not match its layers.")
        return net


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    timestep: int = field(default=0)

    @classmethod
    def for_parameters(cls, params: Sequence[np.ndarray], learning_rate: float = 0.001) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
        )

    @classmethod
    def for_net(cls, net: Mlp, learning_rate: float = 0.001) -> "AdamState":
        return cls.for_parameters(net.parameters(), learning_rate)


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """In-place Adam step with bias correction on a flat parameter list."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise UsageError("Parameter, gradient and optimizer state lists differ in length.")
    state.timestep += 1
    t = state.timestep
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise UsageError(f"Gradient shape {g.shape} does not match parameter shape {p.shape}.")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return state


def adam_step(net: Mlp, grads: Sequence[np.ndarray], state: AdamState) -> tuple[Mlp, AdamState]:
    adam_update(net.parameters(), grads, state)
    return net, state


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    coef = max_norm / (total + 1e-6)
    if coef < 1.0:
        return [g * coef for g in grads], total
    return list(grads), total


def soft_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    if not 0.0 < tau <= 1.0:
        raise ConfigurationError(f"Soft update rate must be in (0, 1], got tau={tau}.")
    if target.sizes != online.sizes:
        raise UsageError(f"Target architecture {target.sizes} differs from online {online.sizes}.")
    for t, o in zip(target.parameters(), online.parameters()):
        t *= 1.0 - tau
        t += tau * o
    return target


def save_checkpoint(path: str, net: Mlp, metadata: Optional[dict] = None) -> None:
    payload = net.to_dict()
    payload["metadata"] = metadata or {}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)


def load_checkpoint(path: str) -> tuple[Mlp, dict]:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    return Mlp.from_dict(payload), payload.get("metadata", {})
