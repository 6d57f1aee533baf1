"""Small feedforward networks with exact reverse-mode gradients.

``Tensor`` records a computation graph over numpy arrays; ``backward`` walks it in
reverse topological order. Only the handful of operations the actor, the critics
and the PPO losses need are implemented.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
ACTION_EPS = 1e-6


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self) -> str:
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _make(self, data, parents: tuple, backward) -> Tensor:
        needs = any(p.requires_grad for p in parents)
        return Tensor(data, needs, parents if needs else (), backward if needs else None)

    # arithmetic -------------------------------------------------------------

    def __add__(self, other) -> Tensor:
        other = as_tensor(other)
        out = self.data + other.data

        def back(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)
        return self._make(out, (self, other), back)

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return self._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)
        return self._make(a * b, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g / b, self.shape), _unbroadcast(-g * a / (b * b), other.shape)
        return self._make(a / b, (self, other), back)

    def __rtruediv__(self, other) -> Tensor:
        return as_tensor(other) / self

    def __pow__(self, k: float) -> Tensor:
        a = self.data
        return self._make(a ** k, (self,), lambda g: (g * k * a ** (k - 1),))

    def __matmul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            return _unbroadcast(g @ b.T, self.shape), _unbroadcast(a.T @ g, other.shape)
        return self._make(a @ b, (self, other), back)

    # elementwise ------------------------------------------------------------

    def relu(self) -> Tensor:
        mask = self.data > 0
        return self._make(self.data * mask, (self,), lambda g: (g * mask,))

    def sigmoid(self) -> Tensor:
        s = _sigmoid(self.data)
        return self._make(s, (self,), lambda g: (g * s * (1.0 - s),))

    def exp(self) -> Tensor:
        e = np.exp(self.data)
        return self._make(e, (self,), lambda g: (g * e,))

    def log(self) -> Tensor:
        a = self.data
        return self._make(np.log(a), (self,), lambda g: (g / a,))

    def clip(self, lo: float, hi: float) -> Tensor:
        mask = (self.data >= lo) & (self.data <= hi)
        return self._make(np.clip(self.data, lo, hi), (self,), lambda g: (g * mask,))

    def minimum(self, other) -> Tensor:
        other = as_tensor(other)
        pick = self.data <= other.data

        def back(g):
            return _unbroadcast(g * pick, self.shape), _unbroadcast(g * ~pick, other.shape)
        return self._make(np.minimum(self.data, other.data), (self, other), back)

    # reductions -------------------------------------------------------------

    def sum(self, axis: int | None = None) -> Tensor:
        shape = self.shape

        def back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return self._make(self.data.sum(axis=axis), (self,), back)

    def mean(self, axis: int | None = None) -> Tensor:
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis) * (1.0 / n)

    # backprop ---------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring gradients."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data) if grad is None else np.asarray(grad, float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# --- multilayer perceptron ---------------------------------------------------


class Mlp:
    """Rectifier hidden layers; sigmoid or identity output."""

    def __init__(self, sizes: Sequence[int], output: str = "identity", *, rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        if output not in ("sigmoid", "identity"):
            raise ValueError("output activation must be 'sigmoid' or 'identity'")
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ValueError("need at least input and output sizes, all positive")
        self.sizes = [int(s) for s in sizes]
        self.output = output
        rng = rng or np.random.default_rng(0)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for k, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = math.sqrt(6.0 / n_in)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            if k == len(self.sizes) - 2:
                w *= out_scale / math.sqrt(2.0)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(n_out), requires_grad=True))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = h.relu()
        return h.sigmoid() if self.output == "sigmoid" else h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Graph-free forward pass."""
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if k < last:
                h = np.maximum(h, 0.0)
        return _sigmoid(h) if self.output == "sigmoid" else h

    def to_dict(self) -> dict:
        return {"sizes": self.sizes, "output": self.output,
                "weights": [w.data.tolist() for w in self.weights],
                "biases": [b.data.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> Mlp:
        net = cls(d["sizes"], d["output"])
        for t, v in zip(net.weights, d["weights"]):
            t.data = np.asarray(v, dtype=float).reshape(t.shape)
        for t, v in zip(net.biases, d["biases"]):
            t.data = np.asarray(v, dtype=float).reshape(t.shape)
        return net

    def copy(self) -> Mlp:
        return Mlp.from_dict(self.to_dict())


# --- Gaussian policy -------------------------------------------------------------


class PolicySample(NamedTuple):
    action: np.ndarray  # clipped into (0, 1)
    log_prob: float  # density at the pre-clip point
    pre_clip: np.ndarray


class GaussianPolicy:
    """Diagonal Gaussian with a sigmoid-squashed mean network and a free log-std vector."""

    def __init__(self, mean_net: Mlp, log_std: np.ndarray | float = math.log(0.05)):
        if mean_net.output != "sigmoid":
            raise ValueError("policy mean network must use a sigmoid output")
        self.mean_net = mean_net
        self.action_dim = mean_net.sizes[-1]
        self.log_std = Tensor(np.broadcast_to(np.asarray(log_std, float), (self.action_dim,)).copy(),
                              requires_grad=True)

    @classmethod
    def build(cls, state_dim: int, action_dim: int, hidden: Sequence[int], rng: np.random.Generator,
              log_std: float = math.log(0.05)) -> GaussianPolicy:
        return cls(Mlp([state_dim, *hidden, action_dim], "sigmoid", rng=rng, out_scale=0.1), log_std)

    @property
    def params(self) -> list[Tensor]:
        return self.mean_net.params + [self.log_std]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std.data)

    def mean(self, states: np.ndarray) -> np.ndarray:
        return self.mean_net.predict(states)

    def sample(self, state: np.ndarray, rng: np.random.Generator) -> PolicySample:
        mu = self.mean_net.predict(state)
        z = rng.standard_normal(mu.shape)
        x = mu + self.std * z
        logp = float(np.sum(gaussian_log_prob(x, mu, self.log_std.data)))
        return PolicySample(np.clip(x, ACTION_EPS, 1.0 - ACTION_EPS), logp, x)

    def log_prob(self, states, actions: np.ndarray) -> Tensor:
        """Per-sample log density of pre-clip ``actions``; differentiable in the parameters."""
        mu = self.mean_net(states)
        ls = self.log_std
        z = (as_tensor(actions) - mu) / ls.exp()
        per_dim = z * z * (-0.5) - ls - 0.5 * LOG_2PI
        return per_dim.sum(axis=-1) if per_dim.data.ndim > 1 else per_dim.sum()

    def to_dict(self) -> dict:
        return {"mean_net": self.mean_net.to_dict(), "log_std": self.log_std.data.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> GaussianPolicy:
        return cls(Mlp.from_dict(d["mean_net"]), np.asarray(d["log_std"], float))


def gaussian_log_prob(x: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (x - mu) / np.exp(log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def gaussian_kl(mu_p: np.ndarray, log_std_p: np.ndarray, mu_q: np.ndarray, log_std_q: np.ndarray) -> np.ndarray:
    """KL(p || q) per sample for diagonal Gaussians (summed over the last axis)."""
    var_p, var_q = np.exp(2 * log_std_p), np.exp(2 * log_std_q)
    per = log_std_q - log_std_p + (var_p + (mu_p - mu_q) ** 2) / (2 * var_q) - 0.5
    return np.sum(per, axis=-1)


# --- optimizer -------------------------------------------------------------------


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    def load_state_dict(self, d: dict) -> None:
        self.t = int(d["t"])
        self.lr = float(d["lr"])
        self.m = [np.asarray(a, float).reshape(p.shape) for a, p in zip(d["m"], self.params)]
        self.v = [np.asarray(a, float).reshape(p.shape) for a, p in zip(d["v"], self.params)]


# --- helpers -----------------------------------------------------------------------


def numeric_gradient(f: Callable[[], float], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        grad.reshape(-1)[i] = (fp - fm) / (2 * h)
    return grad


def save_json(doc: dict, path: str | Path) -> None:
    """Atomic write; Python's float repr round-trips every double exactly."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True))
    tmp.replace(path)


def load_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
