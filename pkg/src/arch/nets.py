"""Minimal dense networks with manual backprop and Adam.

Everything is float64 numpy: gradients are finite-difference-checkable,
training is bitwise deterministic per seed, and checkpoints serialize as
plain tensors.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream


class NaNGradient(FloatingPointError):
    """A gradient became non-finite; the update is aborted."""


def _act(name):
    if name == "tanh":
        return np.tanh, lambda y: 1.0 - y * y
    if name == "relu":
        return (lambda x: np.maximum(x, 0.0)), (lambda y: (y > 0.0).astype(float))
    raise ValueError(f"unknown activation {name!r}")


class MLP:
    """Fully connected network; hidden activations on all but the last layer."""

    def __init__(self, sizes, seed: int = 0, activation: str = "tanh", name: str = "mlp"):
        self.sizes = list(sizes)
        self.activation = activation
        self._f, self._df = _act(activation)
        g = RngStream(seed).draw(f"init_{name}")
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            self.weights.append(g.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- forward / backward ------------------------------------------------

    def forward(self, x: np.ndarray):
        """Returns (output, cache); x is (batch, in) or (in,)."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=float))
        cache = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i != last:
                h = self._f(h)
            cache.append(h)
        return (h[0] if squeeze else h), cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns (grads, dx) where grads matches parameters() layout.
        """
        delta = np.atleast_2d(np.asarray(dout, dtype=float))
        dW = [None] * len(self.weights)
        db = [None] * len(self.weights)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                delta = delta * self._df(cache[i + 1])
            dW[i] = cache[i].T @ delta
            db[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        grads = []
        for w, b in zip(dW, db):
            grads.extend([w, b])
        return grads, delta

    # -- parameter plumbing ------------------------------------------------

    def parameters(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        i = 0
        for p in self.parameters():
            p[...] = flat[i : i + p.size].reshape(p.shape)
            i += p.size
        if i != flat.size:
            raise ValueError("flat vector size mismatch")

    def copy(self) -> "MLP":
        other = MLP(self.sizes, seed=0, activation=self.activation)
        other.set_flat(self.get_flat())
        return other


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


class Adam:
    """Adam over a flat parameter vector."""

    def __init__(self, n_params: int, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """One descent step; returns the updated flat parameter vector."""
        if not np.all(np.isfinite(grad)):
            raise NaNGradient(
                f"non-finite gradient: {np.count_nonzero(~np.isfinite(grad))} bad entries"
            )
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class RunningNorm:
    """Running mean/variance for observation normalization (Welford batched).

    Freeze at deployment: ``normalize`` never mutates.
    """

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        b_count = batch.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_count
        self.mean = self.mean + delta * b_count / tot
        m_a = self.var * self.count
        m_b = b_var * b_count
        self.var = (m_a + m_b + delta ** 2 * self.count * b_count / tot) / tot
        self.count = tot

    def normalize(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def state(self):
        return {"mean": self.mean.copy(), "var": self.var.copy(), "count": self.count}

    @classmethod
    def from_state(cls, d) -> "RunningNorm":
        rn = cls(len(d["mean"]))
        rn.mean = np.asarray(d["mean"], dtype=float).copy()
        rn.var = np.asarray(d["var"], dtype=float).copy()
        rn.count = float(d["count"])
        return rn
