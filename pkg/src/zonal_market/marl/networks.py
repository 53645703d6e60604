"""Small fully connected networks with hand-written backprop and Adam."""

from __future__ import annotations

import numpy as np


class MLP:
    """``tanh`` hidden layers with a ``tanh`` or linear head.

    Parameters live in ``self.params`` as ``W0, b0, W1, b1, ...`` so they can
    be copied, saved and updated by name.
    """

    def __init__(self, sizes: list[int], head: str = "linear",
                 rng: np.random.Generator | None = None, final_scale: float = 3e-3):
        if head not in ("linear", "tanh"):
            raise ValueError(f"unknown head {head!r}")
        self.sizes = list(sizes)
        self.head = head
        self.params: dict[str, np.ndarray] = {}
        n_layers = len(sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            if rng is None:
                W = np.zeros((fan_in, fan_out))
            elif i == n_layers - 1:
                W = rng.uniform(-final_scale, final_scale, (fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                W = rng.uniform(-limit, limit, (fan_in, fan_out))
            self.params[f"W{i}"] = W
            self.params[f"b{i}"] = np.zeros(fan_out)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> MLP:
        out = MLP.__new__(MLP)
        out.sizes = list(self.sizes)
        out.head = self.head
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Returns the output and the activations needed by :meth:`backward`."""
        acts = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1 or self.head == "tanh":
                h = np.tanh(z)
            else:
                h = z
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list, dout: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of ``sum(dout * output)`` w.r.t. parameters and input."""
        grads = {}
        g = dout
        for i in reversed(range(self.n_layers)):
            out = acts[i + 1]
            if i < self.n_layers - 1 or self.head == "tanh":
                g = g * (1.0 - out * out)
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads, g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def soft_update_params(target: MLP, online: MLP, tau: float) -> None:
    """``target <- tau * online + (1 - tau) * target``, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    for k, v in online.params.items():
        target.params[k] *= 1.0 - tau
        target.params[k] += tau * v
