"""Small dense networks with hand-written backpropagation and an Adam optimizer."""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


class DenseNet:
    """Fully connected net; ``forward`` caches what ``backward`` needs.

    Hidden layers use fan-in uniform init; the output layer starts small
    (``out_scale``) so initial outputs sit near zero.
    """

    def __init__(self, sizes: list[int], activations: list[str], rng: np.random.Generator,
                 out_scale: float = 3e-3):
        if len(activations) != len(sizes) - 1:
            raise ValueError("one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            bound = out_scale if i == len(sizes) - 2 else 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        cache = []
        a = x
        for w, b, name in zip(self.weights, self.biases, self.activations):
            z = a @ w + b
            out = _act(name, z)
            cache.append((a, z, out))
            a = out
        return a, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients w.r.t. params (same order as ``params``) and the input."""
        grads: list[np.ndarray] = []
        g = grad_out
        for (a_in, z, out), w, name in zip(reversed(cache), reversed(self.weights),
                                           reversed(self.activations)):
            gz = g * _act_grad(name, z, out)
            grads = [a_in.T @ gz, gz.sum(axis=0)] + grads
            g = gz @ w.T
        return grads, g

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size
        if i != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, net has {i}")

    def copy(self) -> DenseNet:
        new = object.__new__(DenseNet)
        new.sizes = list(self.sizes)
        new.activations = list(self.activations)
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new


def soft_update(online: DenseNet, target: DenseNet, rate: float) -> DenseNet:
    """target <- rate * online + (1 - rate) * target, in place."""
    if online.sizes != target.sizes:
        raise ValueError(f"shape mismatch {online.sizes} vs {target.sizes}")
    for po, pt in zip(online.params, target.params):
        pt *= 1.0 - rate
        pt += rate * po
    return target


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        for i in range(len(self.m)):
            self.m[i][...] = state[f"m{i}"]
            self.v[i][...] = state[f"v{i}"]
