"""Small dense networks with hand-written backprop, plus input featurization."""

from __future__ import annotations

import numpy as np

SIGMA_FLOOR = 1e-3
N_FREQ = 8


def silu(z):
    return z / (1.0 + np.exp(-z))


def silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def sigma_embedding(sigma, n_freq: int = N_FREQ) -> np.ndarray:
    """[n, 2 * n_freq + 2]: scaled ln sigma, its sinusoids, and a sigma == 0 flag."""
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    c = np.log(np.maximum(sigma, SIGMA_FLOOR))
    freqs = 0.25 * 2.0 ** (np.arange(n_freq) / 2.0)
    ang = c[:, None] * freqs[None, :]
    return np.concatenate([c[:, None] / 4.0, np.sin(ang), np.cos(ang), (sigma == 0)[:, None].astype(float)], axis=1)


def step_embedding(step, horizon: int, n_freq: int = 4) -> np.ndarray:
    u = np.asarray(step, dtype=float).reshape(-1) / max(horizon, 1)
    freqs = np.pi * 2.0 ** np.arange(n_freq)
    ang = u[:, None] * freqs[None, :]
    return np.concatenate([u[:, None], np.sin(ang), np.cos(ang)], axis=1)


def state_features(x, sigma, data_std: float, step=None, horizon: int | None = None) -> np.ndarray:
    """x scaled by 1 / sqrt(sigma^2 + data_std^2) next to the noise-level embedding."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    c_in = 1.0 / np.sqrt(sigma**2 + data_std**2)
    parts = [x * c_in[:, None], sigma_embedding(sigma)]
    if step is not None:
        parts.append(step_embedding(step, horizon))
    return np.concatenate(parts, axis=1)


def n_state_features(dim: int, with_step: bool = False) -> int:
    return dim + 2 * N_FREQ + 2 + (9 if with_step else 0)


class MLP:
    """Dense network with SiLU hidden layers and a linear output layer."""

    def __init__(self, sizes: list[int], rng: np.random.Generator | None = None, zero_last: bool = True):
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_last:
                W = np.zeros((fan_in, fan_out))
            else:
                if rng is None:
                    raise ValueError("an rng is required for random initialization")
                W = rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)
            self.weights.append(W)
            self.biases.append(np.zeros(fan_out))

    @property
    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for i in range(len(self.weights)):
            W, b = self.weights[i], self.biases[i]
            self.weights[i] = flat[pos : pos + W.size].reshape(W.shape).copy()
            pos += W.size
            self.biases[i] = flat[pos : pos + b.size].copy()
            pos += b.size

    def copy(self) -> MLP:
        new = MLP.__new__(MLP)
        new.sizes = list(self.sizes)
        new.weights = [W.copy() for W in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def forward(self, X: np.ndarray, keep: bool = False):
        h = X
        cache = [X]
        L = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i < L - 1:
                cache.append(z)
                h = silu(z)
                cache.append(h)
            else:
                h = z
        return (h, cache) if keep else h

    def backward(self, cache: list[np.ndarray], dout: np.ndarray) -> np.ndarray:
        """Flat gradient of sum(dout * output) with respect to all parameters."""
        L = len(self.weights)
        grads: list[np.ndarray] = [None] * (2 * L)
        delta = dout
        for i in range(L - 1, -1, -1):
            h_in = cache[0] if i == 0 else cache[2 * i]
            grads[2 * i] = h_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * silu_grad(cache[2 * i - 1])
        return np.concatenate([g.ravel() for g in grads])


class Adam:
    def __init__(self, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        """Returns the parameter increment for a minimization step."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return -self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, n: int, lr: float):
        self.lr = lr

    def step(self, grad: np.ndarray) -> np.ndarray:
        return -self.lr * grad


def make_optimizer(name: str, n: int, lr: float):
    if name == "adam":
        return Adam(n, lr)
    if name == "sgd":
        return SGD(n, lr)
    raise ValueError(f"unknown optimizer {name!r}")
