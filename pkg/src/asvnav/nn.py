"""Small dense network toolkit with hand-written backpropagation (float64)."""
from __future__ import annotations

import math

import numpy as np

N_COS = 64


class LinearLayer:
    """Fully connected layer ``y = x W^T + b`` on row batches."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        self.n_in, self.n_out = n_in, n_out
        bound = 1.0 / math.sqrt(n_in)
        if rng is None:
            self.weight = np.zeros((n_out, n_in))
        else:
            self.weight = rng.uniform(-bound, bound, size=(n_out, n_in))
        self.bias = np.zeros(n_out)

    @property
    def params(self):
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {x.shape[-1]}")
        return x @ self.weight.T + self.bias

    def backward(self, x: np.ndarray, grad_out: np.ndarray):
        """Returns ``([dW, db], dx)``."""
        if grad_out.shape != x.shape[:-1] + (self.n_out,):
            raise ValueError("upstream gradient shape mismatch")
        x2 = x.reshape(-1, self.n_in)
        g2 = grad_out.reshape(-1, self.n_out)
        return [g2.T @ x2, g2.sum(axis=0)], grad_out @ self.weight


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return grad_out * (x > 0)


def cosine_embedding(taus, phi=1.0) -> np.ndarray:
    """Rows ``cos(pi * i * phi * tau)`` for i = 0..63.

    ``phi`` may be a scalar or one value per tau (per-robot risk levels).
    """
    taus = np.asarray(taus, dtype=float).reshape(-1)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), taus.shape)
    if np.any(phi <= 0) or np.any(phi > 1):
        raise ValueError("CVaR threshold must lie in (0, 1]")
    if np.any(taus < 0) or np.any(taus > 1):
        raise ValueError("quantile fractions must lie in [0, 1]")
    return np.cos(math.pi * np.outer(phi * taus, np.arange(N_COS)))


def quantile_huber(delta, tau, kappa: float = 1.0):
    """Quantile Huber loss and its derivative w.r.t. ``delta`` (elementwise)."""
    delta = np.asarray(delta, dtype=float)
    abs_d = np.abs(delta)
    quad = abs_d <= kappa
    huber = np.where(quad, 0.5 * delta**2, kappa * (abs_d - 0.5 * kappa))
    dhuber = np.where(quad, delta, kappa * np.sign(delta))
    weight = np.abs(tau - (delta < 0))
    return weight * huber / kappa, weight * dhuber / kappa


def iqn_loss(deltas: np.ndarray, taus: np.ndarray, kappa: float = 1.0):
    """``(1/N') sum_ij rho_{tau_i}(delta_ij)`` for an N x N' TD matrix.

    Batched input of shape (B, N, N') with taus (B, N) returns the batch mean
    and a gradient already divided by B.
    """
    deltas = np.asarray(deltas, dtype=float)
    taus = np.asarray(taus, dtype=float)
    if deltas.shape[:-1] != taus.shape:
        raise ValueError(f"deltas {deltas.shape} do not match taus {taus.shape}")
    n_prime = deltas.shape[-1]
    rho, drho = quantile_huber(deltas, taus[..., None], kappa)
    if deltas.ndim == 2:
        return float(rho.sum() / n_prime), drho / n_prime
    batch = deltas.shape[0]
    return float(rho.sum() / n_prime / batch), drho / (n_prime * batch)


def dqn_loss(q: np.ndarray, targets: np.ndarray):
    """Mean squared TD error over the batch and its gradient w.r.t. ``q``."""
    q = np.asarray(q, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if q.shape != targets.shape:
        raise ValueError(f"shape mismatch {q.shape} vs {targets.shape}")
    err = q - targets
    return float(np.mean(err**2)), 2.0 * err / err.size


class Adam:
    """Bias-corrected adaptive moment estimation over a fixed list of arrays."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class MLP:
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, sizes, rng=None):
        self.layers = [LinearLayer(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def forward(self, x):
        cache = []
        for k, layer in enumerate(self.layers):
            cache.append(x)
            x = layer.forward(x)
            if k < len(self.layers) - 1:
                cache.append(x)
                x = relu(x)
        return x, cache

    def backward(self, cache, grad):
        grads = []
        idx = len(cache) - 1
        for k in range(len(self.layers) - 1, -1, -1):
            if k < len(self.layers) - 1:
                grad = relu_backward(cache[idx], grad)
                idx -= 1
            g, grad = self.layers[k].backward(cache[idx], grad)
            idx -= 1
            grads = g + grads
        return grads, grad


def gradient_check(params, loss_fn, analytic, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between ``analytic`` gradients and central differences.

    ``params`` are the arrays ``loss_fn()`` reads in place; each is perturbed
    one coordinate at a time and restored.
    """
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            numeric = (up - down) / (2 * h)
            err = abs(numeric - gflat[k]) / max(abs(numeric), abs(gflat[k]), floor)
            worst = max(worst, err)
    return worst


def finite_difference_check(network, inputs, loss_head, h: float = 1e-5) -> float:
    """Central-difference check of ``network.backward`` under a loss head.

    ``network`` exposes ``params``, ``forward(*inputs) -> (out, cache)`` and
    ``backward(cache, grad_out)``; ``loss_head(out) -> (loss, grad_out)``.
    """
    if not isinstance(inputs, tuple):
        inputs = (inputs,)
    out, cache = network.forward(*inputs)
    _, grad_out = loss_head(out)
    grads = network.backward(cache, grad_out)
    if isinstance(grads, tuple):
        grads = grads[0]
    grads = [g.copy() for g in grads]

    def loss_fn():
        return loss_head(network.forward(*inputs)[0])[0]

    return gradient_check(network.params, loss_fn, grads, h)
