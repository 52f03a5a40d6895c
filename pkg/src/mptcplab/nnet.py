"""Minimal dense/LSTM toolkit with exact reverse-mode gradients and Adam.

Everything is float64 numpy: the networks here are tiny (hidden size 128)
and reproducibility matters more than speed.  Layers accumulate parameter
gradients across backward calls until `zero_grads`, and `backward` always
returns the gradient with respect to the layer input so gradients can be
chained across separately-owned networks (critic -> actor -> encoder).
"""

from __future__ import annotations

import numpy as np

try:
    # The matrices here are tiny (<= 512x134); threaded BLAS kernels are an
    # order of magnitude slower than single-threaded ones at these shapes.
    import threadpoolctl
    threadpoolctl.threadpool_limits(1, "blas")
except ImportError:  # pragma: no cover
    pass


class DivergenceError(Exception):
    """A parameter tensor became non-finite during training."""


def _init_uniform(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x saturates to exactly 0, which is the
    # correct limit; silence the spurious warning instead of branching
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


class Dense:
    """Fully-connected layer y = act(W x + b), weights shaped [out, in]."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "linear",
                 rng: np.random.Generator | None = None) -> None:
        if activation not in ("relu", "tanh", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.W = _init_uniform(rng, in_dim, (out_dim, in_dim))
        self.b = np.zeros(out_dim)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x: np.ndarray | None = None
        self._z: np.ndarray | None = None
        self._h: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input (batch, {self.in_dim}), got {x.shape}")
        z = x @ self.W.T + self.b
        if self.activation == "relu":
            h = np.maximum(z, 0.0)
        elif self.activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
        self._x, self._z, self._h = x, z, h
        return h

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        if self.activation == "relu":
            dz = dy * (self._z > 0.0)
        elif self.activation == "tanh":
            dz = dy * (1.0 - self._h * self._h)
        else:
            dz = dy
        self.gW += dz.T @ self._x
        self.gb += dz.sum(axis=0)
        return dz @ self.W

    def parameters(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def gradients(self) -> list[np.ndarray]:
        return [self.gW, self.gb]

    def zero_grads(self) -> None:
        self.gW[:] = 0.0
        self.gb[:] = 0.0


class Mlp:
    """Plain stack of Dense layers."""

    def __init__(self, dims: list[int], activations: list[str],
                 rng: np.random.Generator | None = None) -> None:
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        self.layers = [Dense(dims[i], dims[i + 1], activations[i], rng)
                       for i in range(len(activations))]

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def parameters(self) -> list[np.ndarray]:
        return [p for l in self.layers for p in l.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for l in self.layers for g in l.gradients()]

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()


class LstmCell:
    """Standard LSTM cell; gate order in the stacked weight matrix is
    input, forget, output, candidate (the three sigmoid gates are adjacent
    so one call covers them).  The forget-gate bias starts at +1.
    """

    def __init__(self, in_dim: int, hidden_size: int,
                 rng: np.random.Generator | None = None) -> None:
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden_size = hidden_size
        fan_in = in_dim + hidden_size
        self.W = _init_uniform(rng, fan_in, (4 * hidden_size, fan_in))
        self.b = np.zeros(4 * hidden_size)
        self.b[hidden_size:2 * hidden_size] = 1.0
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)

    def init_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return (np.zeros((batch, self.hidden_size)),
                np.zeros((batch, self.hidden_size)))

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        """One recurrence step; returns (h', c', cache)."""
        if x.shape[1] != self.in_dim:
            raise ValueError(f"expected input (batch, {self.in_dim}), got {x.shape}")
        hs = self.hidden_size
        xh = np.concatenate([x, h], axis=1)
        z = xh @ self.W.T + self.b
        gates = _sigmoid(z[:, :3 * hs])
        i = gates[:, :hs]
        f = gates[:, hs:2 * hs]
        o = gates[:, 2 * hs:]
        g = np.tanh(z[:, 3 * hs:])
        c2 = f * c + i * g
        tc = np.tanh(c2)
        h2 = o * tc
        cache = (xh, c, i, f, g, o, tc)
        return h2, c2, cache

    def step_back(self, dh: np.ndarray, dc: np.ndarray, cache):
        """Backward of one step; returns (dx, dh_prev, dc_prev)."""
        hs = self.hidden_size
        xh, c_prev, i, f, g, o, tc = cache
        do = dh * tc
        dc_total = dc + dh * o * (1.0 - tc * tc)
        di = dc_total * g
        df = dc_total * c_prev
        dg = dc_total * i
        dc_prev = dc_total * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            do * o * (1.0 - o),
            dg * (1.0 - g * g),
        ], axis=1)
        self.gW += dz.T @ xh
        self.gb += dz.sum(axis=0)
        dxh = dz @ self.W
        return dxh[:, :self.in_dim], dxh[:, self.in_dim:], dc_prev

    def forward_sequence(self, xs: np.ndarray):
        """Run a (T, batch, in_dim) sequence from zero state.

        Returns the final hidden state (batch, hidden) and the caches
        needed for `backward_sequence`.
        """
        if xs.ndim != 3:
            raise ValueError(f"expected (time, batch, features), got {xs.shape}")
        if xs.shape[0] == 0:
            raise ValueError("empty sequence")
        h, c = self.init_state(xs.shape[1])
        caches = []
        for t in range(xs.shape[0]):
            h, c, cache = self.step(xs[t], h, c)
            caches.append(cache)
        return h, caches

    def backward_sequence(self, dh_last: np.ndarray, caches) -> np.ndarray:
        """Backpropagate through time from a gradient at the final hidden
        state; accumulates parameter gradients and returns the input
        gradients (T, batch, in_dim)."""
        dh = dh_last
        dc = np.zeros_like(dh_last)
        dxs = []
        for cache in reversed(caches):
            dx, dh, dc = self.step_back(dh, dc, cache)
            dxs.append(dx)
        return np.stack(dxs[::-1], axis=0)

    def parameters(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def gradients(self) -> list[np.ndarray]:
        return [self.gW, self.gb]

    def zero_grads(self) -> None:
        self.gW[:] = 0.0
        self.gb[:] = 0.0


class Adam:
    """Adam with bias correction, bound to a fixed list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self._scratch = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        # fold the bias corrections into two scalars per step
        scale = self.lr / (1.0 - b1 ** self.step_count)
        vnorm = 1.0 / np.sqrt(1.0 - b2 ** self.step_count)
        for p, g, m, v, s in zip(self.params, grads, self.m, self.v, self._scratch):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            np.multiply(g, g, out=s)
            s *= 1.0 - b2
            v += s
            np.sqrt(v, out=s)
            s *= vnorm
            s += self.eps
            np.divide(m, s, out=s)
            s *= scale
            p -= s
            if not np.isfinite(np.sum(p)):
                raise DivergenceError("non-finite parameter after Adam step")


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, tensors: dict[str, np.ndarray],
                    meta: dict[str, float] | None = None) -> None:
    """Write named float64 tensors (plus scalar metadata) to an .npz file."""
    payload = {f"t/{k}": np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
    for k, v in (meta or {}).items():
        payload[f"m/{k}"] = np.asarray(v, dtype=np.float64)
    payload["version"] = np.asarray(CHECKPOINT_VERSION)
    np.savez(path, **payload)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        tensors = {k[2:]: data[k] for k in data.files if k.startswith("t/")}
        meta = {k[2:]: float(data[k]) for k in data.files if k.startswith("m/")}
    return tensors, meta
