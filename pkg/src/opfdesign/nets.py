"""Small fully-connected networks with reverse-mode gradients and Adam.

Kept self-contained on numpy: the nets are tiny (two or three hidden layers),
so explicit forward/backward passes are faster here than framework overhead
and make training bit-reproducible from the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Mlp:
    """Fully-connected net, ReLU hidden layers, identity or tanh output."""

    def __init__(self, sizes, output_activation="identity", dtype=np.float64, rng=None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output_activation not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.output_activation = output_activation
        self.dtype = dtype
        rng = rng or np.random.default_rng(0)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append((rng.standard_normal((fan_in, fan_out)) * scale).astype(dtype))
            self.biases.append(np.zeros(fan_out, dtype=dtype))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def set_parameters(self, params) -> None:
        if len(params) != 2 * self.n_layers:
            raise ValueError("parameter count mismatch")
        for i in range(self.n_layers):
            self.weights[i] = np.asarray(params[2 * i], dtype=self.dtype).reshape(self.weights[i].shape)
            self.biases[i] = np.asarray(params[2 * i + 1], dtype=self.dtype).reshape(self.biases[i].shape)

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = self.sizes
        clone.output_activation = self.output_activation
        clone.dtype = self.dtype
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x: np.ndarray):
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        activations = [x]
        h = x
        for i in range(self.n_layers - 1):
            h = np.maximum(h @ self.weights[i] + self.biases[i], 0.0)
            activations.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        if self.output_activation == "tanh":
            out = np.tanh(out)
        activations.append(out)
        y = out[0] if squeeze else out
        return y, activations

    def backward(self, cache, upstream: np.ndarray):
        """Gradients of sum(upstream * output) w.r.t. parameters and input.

        Returns (grads, input_grad) where grads interleaves weight and bias
        gradients in ``parameters()`` order.
        """
        activations = cache
        upstream = np.asarray(upstream, dtype=self.dtype)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        out = activations[-1]
        if self.output_activation == "tanh":
            delta = upstream * (1.0 - out**2)
        else:
            delta = upstream.copy()
        grads = [None] * (2 * self.n_layers)
        for i in range(self.n_layers - 1, -1, -1):
            grads[2 * i] = activations[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (activations[i] > 0.0)
            else:
                delta = delta @ self.weights[i].T
        return grads, delta


def gradient(mlp: Mlp, x: np.ndarray, upstream: np.ndarray):
    """Reverse-mode parameter gradients of sum(upstream * mlp(x))."""
    _, cache = mlp.forward_cache(x)
    grads, _ = mlp.backward(cache, upstream)
    return grads


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
