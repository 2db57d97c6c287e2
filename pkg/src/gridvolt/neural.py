"""Small numpy MLPs with exact reverse-mode gradients, Adam and soft updates."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionMismatch

ACTIVATIONS = ("tanh", "identity", "relu")


class Mlp:
    """Feed-forward net ``y = f_L(... f_1(x))`` with ReLU hidden layers.

    Weights are stored as ``(out, in)`` matrices so a layer computes
    ``g(W @ o + b)``.  Inputs may be a single vector or a ``(batch, in)``
    array.
    """

    def __init__(self, sizes, output_activation="tanh", rng=None, params=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {output_activation!r}")
        self.sizes = sizes
        self.output_activation = output_activation
        if params is not None:
            self.params = [np.array(p, dtype=float) for p in params]
            self._check_shapes()
            return
        rng = np.random.default_rng() if rng is None else rng
        self.params = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    def _check_shapes(self):
        if len(self.params) != 2 * (len(self.sizes) - 1):
            raise DimensionMismatch("parameter count does not match layer sizes")
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.params[2 * k].shape != (fan_out, fan_in) or self.params[2 * k + 1].shape != (fan_out,):
                raise DimensionMismatch(f"layer {k} has shape inconsistent with sizes {self.sizes}")

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.output_activation, params=[p.copy() for p in self.params])

    def zero_(self) -> "Mlp":
        for p in self.params:
            p[...] = 0.0
        return self

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.in_dim:
            raise DimensionMismatch(f"expected input dim {self.in_dim}, got shape {x.shape}")
        return x2, single

    def _activate(self, z, last):
        if not last:
            return np.maximum(z, 0.0)
        if self.output_activation == "tanh":
            return np.tanh(z)
        if self.output_activation == "relu":
            return np.maximum(z, 0.0)
        return z

    def _forward_all(self, x2):
        outs = [x2]
        o = x2
        for k in range(self.n_layers):
            w, b = self.params[2 * k], self.params[2 * k + 1]
            o = self._activate(o @ w.T + b, last=k == self.n_layers - 1)
            outs.append(o)
        return outs

    def forward(self, x):
        x2, single = self._prepare(x)
        y = self._forward_all(x2)[-1]
        return y[0] if single else y

    __call__ = forward

    def backward(self, x, upstream):
        """Gradients of ``sum(upstream * forward(x))``.

        Returns ``(grads, input_grad)`` where ``grads`` matches ``params``.
        Batched inputs accumulate (sum) parameter gradients over the batch.
        """
        x2, single = self._prepare(x)
        g = np.asarray(upstream, dtype=float)
        g = g[None, :] if g.ndim == 1 else g
        if g.shape != (x2.shape[0], self.out_dim):
            raise DimensionMismatch(f"upstream gradient shape {g.shape} does not match output")
        outs = self._forward_all(x2)
        grads = [None] * len(self.params)
        for k in reversed(range(self.n_layers)):
            out = outs[k + 1]
            if k == self.n_layers - 1:
                if self.output_activation == "tanh":
                    g = g * (1.0 - out * out)
                elif self.output_activation == "relu":
                    g = g * (out > 0)
            else:
                g = g * (out > 0)
            grads[2 * k] = g.T @ outs[k]
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k]
        return grads, (g[0] if single else g)

    def state_dict(self, prefix=""):
        out = {}
        for k in range(self.n_layers):
            out[f"{prefix}layer{k}.weight"] = self.params[2 * k]
            out[f"{prefix}layer{k}.bias"] = self.params[2 * k + 1]
        return out

    def load_state_dict(self, state, prefix=""):
        params = []
        for k in range(self.n_layers):
            params.append(np.array(state[f"{prefix}layer{k}.weight"], dtype=float))
            params.append(np.array(state[f"{prefix}layer{k}.bias"], dtype=float))
        old = self.params
        self.params = params
        try:
            self._check_shapes()
        except DimensionMismatch:
            self.params = old
            raise
        return self


def forward(net: Mlp, x):
    return net.forward(x)


def backward(net: Mlp, x, upstream_grad):
    return net.backward(x, upstream_grad)


class AdamState:
    """First/second moment estimates for one network."""

    def __init__(self, net: Mlp, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]

    def state_dict(self, prefix=""):
        out = {f"{prefix}step": np.array(self.step)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}m{i}"] = m
            out[f"{prefix}v{i}"] = v
        return out

    def load_state_dict(self, state, prefix=""):
        self.step = int(state[f"{prefix}step"])
        self.m = [np.array(state[f"{prefix}m{i}"], dtype=float) for i in range(len(self.m))]
        self.v = [np.array(state[f"{prefix}v{i}"], dtype=float) for i in range(len(self.v))]
        return self


def adam_step(net: Mlp, grads, state: AdamState, lr: float, maximize=False):
    """In-place Adam update; ``maximize`` ascends instead of descending."""
    if len(grads) != len(net.params):
        raise DimensionMismatch("gradient set does not match network")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    sign = 1.0 if maximize else -1.0
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise DimensionMismatch("gradient shape does not match parameter")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p += sign * lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def sgd_step(net: Mlp, grads, lr: float, maximize=False):
    sign = 1.0 if maximize else -1.0
    for p, g in zip(net.params, grads):
        p += sign * lr * g
    return net


def soft_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """``target <- tau * online + (1 - tau) * target`` for every parameter."""
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if target.sizes != online.sizes:
        raise DimensionMismatch("target and online networks differ in shape")
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o
    return target
