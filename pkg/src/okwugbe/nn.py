"""Layers and recurrent cells built on :mod:`okwugbe.autograd`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Module:
    """Minimal container: Tensor attributes are state, nested Modules are walked."""

    training: bool = True

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_tensors(name + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    yield from sub.named_tensors(f"{name}.{i}.")

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self.named_tensors() if t.requires_grad)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, t in own.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def modules(self) -> Iterator["Module"]:
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for sub in value:
                    yield from sub.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        self.weight = uniform_init(rng, (n_in, n_out), n_in, dtype)
        self.bias = uniform_init(rng, (n_out,), n_in, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: tuple[int, int], rng: np.random.Generator,
                 stride: int | tuple[int, int] = 1, dtype=np.float64):
        kf, kt = kernel
        fan_in = c_in * kf * kt
        self.weight = uniform_init(rng, (c_out, c_in, kf, kt), fan_in, dtype)
        self.bias = uniform_init(rng, (c_out,), fan_in, dtype)
        self._stride = (stride, stride) if isinstance(stride, int) else tuple(stride)

    @property
    def stride(self) -> tuple[int, int]:
        return self._stride

    def same_padding(self, f: int, t: int):
        """Fixed leading pad of ``k // 2``; trailing pad chosen so the extent is ``ceil(n / stride)``."""
        pads = []
        for n, k, s in ((f, self.weight.shape[2], self._stride[0]), (t, self.weight.shape[3], self._stride[1])):
            lo = k // 2
            out = -(-n // s)
            pads.append((lo, max((out - 1) * s + k - n - lo, 0)))
        return tuple(pads)

    def __call__(self, x: Tensor) -> Tensor:
        pad = self.same_padding(x.shape[2], x.shape[3])
        return ag.conv2d(x, self.weight, self.bias, stride=self._stride, padding=pad)


class LayerNorm(Module):
    def __init__(self, n: int, axis: int = -1, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(n, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        self._axis = axis
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self._axis, self.gamma, self.beta, self._eps)


class BatchNorm2d(Module):
    """Per-channel batch normalisation over (batch, freq, time)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, dtype=dtype))
        self.running_var = Tensor(np.ones(channels, dtype=dtype))
        self._momentum = momentum
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        g = self.gamma.reshape(1, c, 1, 1)
        b = self.beta.reshape(1, c, 1, 1)
        if self.training:
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
            n = x.size // c
            m = self._momentum
            self.running_mean.data = ((1 - m) * self.running_mean.data + m * mu.data.reshape(c)).astype(x.dtype)
            unbiased = var.data.reshape(c) * n / max(n - 1, 1)
            self.running_var.data = ((1 - m) * self.running_var.data + m * unbiased).astype(x.dtype)
            return xc * ag.power(var + self._eps, -0.5) * g + b
        mu = self.running_mean.data.reshape(1, c, 1, 1)
        inv = 1.0 / np.sqrt(self.running_var.data.reshape(1, c, 1, 1) + self._eps)
        return (x - mu) * inv * g + b


# -- recurrent cells ---------------------------------------------------------
class LSTMCell(Module):
    """Gate order i, f, g, o; one bias vector."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.hidden = hidden
        self.w_ih = uniform_init(rng, (n_in, 4 * hidden), hidden, dtype)
        self.w_hh = uniform_init(rng, (hidden, 4 * hidden), hidden, dtype)
        self.bias = uniform_init(rng, (4 * hidden,), hidden, dtype)

    def initial_state(self, batch: int, dtype) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.hidden), dtype=dtype)
        return Tensor(z), Tensor(z.copy())

    def project(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.w_ih, self.bias)

    def step(self, xp: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, tuple[Tensor, Tensor]]:
        h, c = state
        H = self.hidden
        gates = xp + h @ self.w_hh
        i = ag.sigmoid(gates[:, :H])
        f = ag.sigmoid(gates[:, H : 2 * H])
        g = ag.tanh(gates[:, 2 * H : 3 * H])
        o = ag.sigmoid(gates[:, 3 * H :])
        c_new = f * c + i * g
        h_new = o * ag.tanh(c_new)
        return h_new, (h_new, c_new)

    def __call__(self, x_t: Tensor, state):
        return self.step(self.project(x_t), state)


class GRUCell(Module):
    """Gate order r, z, n with separate input and hidden biases."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.hidden = hidden
        self.w_ih = uniform_init(rng, (n_in, 3 * hidden), hidden, dtype)
        self.w_hh = uniform_init(rng, (hidden, 3 * hidden), hidden, dtype)
        self.b_ih = uniform_init(rng, (3 * hidden,), hidden, dtype)
        self.b_hh = uniform_init(rng, (3 * hidden,), hidden, dtype)

    def initial_state(self, batch: int, dtype) -> tuple[Tensor]:
        return (Tensor(np.zeros((batch, self.hidden), dtype=dtype)),)

    def project(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.w_ih, self.b_ih)

    def step(self, xp: Tensor, state: tuple[Tensor]) -> tuple[Tensor, tuple[Tensor]]:
        (h,) = state
        H = self.hidden
        hp = ag.linear(h, self.w_hh, self.b_hh)
        r = ag.sigmoid(xp[:, :H] + hp[:, :H])
        z = ag.sigmoid(xp[:, H : 2 * H] + hp[:, H : 2 * H])
        n = ag.tanh(xp[:, 2 * H :] + r * hp[:, 2 * H :])
        h_new = (1.0 - z) * n + z * h
        return h_new, (h_new,)

    def __call__(self, x_t: Tensor, state):
        return self.step(self.project(x_t), state)


def _run(cell, xs: Tensor, lengths: np.ndarray | None):
    B, T, _ = xs.shape
    xp = cell.project(xs)
    state = cell.initial_state(B, xs.dtype)
    outs, states = [], []
    for t in range(T):
        h, state = cell.step(xp[:, t], state)
        outs.append(h)
        states.append(state)
    out = ag.stack(outs, axis=1)
    if lengths is None:
        return out, state
    idx = (np.arange(B), np.asarray(lengths) - 1)
    final = tuple(ag.stack([s[k] for s in states], axis=1)[idx] for k in range(len(state)))
    return out, final


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def bidirectional_rnn(xs: Tensor, fwd_cell, bwd_cell, lengths=None):
    """Run ``fwd_cell`` over time and ``bwd_cell`` over each sequence reversed.

    ``xs`` is (B, T, F).  With ``lengths``, only the first ``lengths[b]`` steps
    of sequence ``b`` are reversed, so padding never leaks into valid frames of
    the backward direction.  Returns ``(outputs, (fwd_final, bwd_final))`` with
    outputs of shape (B, T, 2H) (forward half first).
    """
    if xs.ndim != 3:
        raise ag.ShapeError(f"bidirectional_rnn expects (B, T, F), got {xs.shape}")
    B, T, _ = xs.shape
    if lengths is not None:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (B,) or lengths.min() < 1 or lengths.max() > T:
            raise ValueError(f"lengths {lengths.tolist()} invalid for shape {xs.shape}")
        if (lengths == T).all():
            lengths = None
    fwd_out, fwd_final = _run(fwd_cell, xs, lengths)
    if lengths is None:
        rev = slice(None, None, -1)
        bwd_rev, bwd_final = _run(bwd_cell, xs[:, rev], None)
        bwd_out = bwd_rev[:, rev]
    else:
        ridx = (np.arange(B)[:, None], _reverse_index(lengths, T))
        bwd_rev, bwd_final = _run(bwd_cell, xs[ridx], lengths)
        bwd_out = bwd_rev[ridx]
    return ag.concat([fwd_out, bwd_out], axis=-1), (fwd_final, bwd_final)


class BiRNN(Module):
    def __init__(self, kind: str, n_in: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        cls = {"lstm": LSTMCell, "gru": GRUCell}[kind]
        self.fwd = cls(n_in, hidden, rng, dtype)
        self.bwd = cls(n_in, hidden, rng, dtype)

    def __call__(self, xs: Tensor, lengths=None):
        return bidirectional_rnn(xs, self.fwd, self.bwd, lengths)
