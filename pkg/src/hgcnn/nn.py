"""
Trainable layers with hand-written backward passes, cross-entropy, Xavier
initialization and Adam.

Layers keep their learnable arrays in ``params`` and the matching gradients in
``grads`` (same keys).  ``forward`` caches what ``backward`` needs; calling
``backward`` without a preceding ``forward`` is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import chebyshev_basis, chebyshev_filter, SpectralFilter


class NumericalBlowUp(FloatingPointError):
    pass


def xavier_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform on ``+-sqrt(6 / (fan_in + fan_out))``."""
    fan_in, fan_out = shape[0], shape[-1]
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"invalid shape {shape}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalBlowUp(f"numerical blow-up in layer {name}")


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _pop_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        return cache


class BatchNorm(Layer):
    """Per-feature normalization over every axis but the last.

    Training mode normalizes with batch statistics and updates the running
    averages (``running = momentum * running + (1 - momentum) * batch``, the
    first batch initializes them outright); inference mode is the fixed affine
    map given by the running statistics.
    """

    def __init__(self, n_features, momentum=0.9, eps=1e-5, name="bn"):
        super().__init__()
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(n_features), "beta": np.zeros(n_features)}
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.tracked = 0
        self.zero_grad()

    def forward(self, a, training=True):
        axes = tuple(range(a.ndim - 1))
        if training:
            mu = a.mean(axis=axes)
            var = a.var(axis=axes)
            m = self.momentum if self.tracked else 0.0
            self.tracked += 1
            self.running_mean = m * self.running_mean + (1 - m) * mu
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (a - mu) * inv_std
        self._cache = (xhat, inv_std, training)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, g):
        xhat, inv_std, training = self._pop_cache()
        axes = tuple(range(g.ndim - 1))
        self.grads["gamma"] = self.grads["gamma"] + np.sum(g * xhat, axis=axes)
        self.grads["beta"] = self.grads["beta"] + np.sum(g, axis=axes)
        gxhat = g * self.params["gamma"]
        if not training:
            return gxhat * inv_std
        N = np.prod([g.shape[a] for a in axes])
        return (inv_std / N) * (N * gxhat - gxhat.sum(axis=axes)
                                - xhat * np.sum(gxhat * xhat, axis=axes))


class Dense(Layer):
    """``y = act(x W + b)`` on the last axis; ``activation`` is ``"relu"`` or None."""

    def __init__(self, f_in, f_out, rng, activation="relu", name="dense"):
        super().__init__()
        self.name = name
        self.activation = activation
        self.params = {"W": xavier_init((f_in, f_out), rng), "b": np.zeros(f_out)}
        self.zero_grad()

    def forward(self, x, training=True):
        a = x @ self.params["W"] + self.params["b"]
        y = np.maximum(a, 0.0) if self.activation == "relu" else a
        _check_finite(self.name, y)
        self._cache = (x, a)
        return y

    def backward(self, g):
        x, a = self._pop_cache()
        if self.activation == "relu":
            g = g * (a > 0)
        f_in, f_out = self.params["W"].shape
        self.grads["W"] = self.grads["W"] + x.reshape(-1, f_in).T @ g.reshape(-1, f_out)
        self.grads["b"] = self.grads["b"] + g.reshape(-1, f_out).sum(axis=0)
        return g @ self.params["W"].T


class HyperConv(Layer):
    """Hypergraph convolution ``ReLU(BN(sum_k theta_k T_k(L) x W + b))``.

    One coefficient vector ``theta`` of length ``K`` is shared by all input
    channels.  ``x`` is ``(B, n, f_in)`` and ``L`` either ``(n, n)`` or
    ``(B, n, n)``.
    """

    def __init__(self, f_in, f_out, rng, K=2, use_batchnorm=True,
                 rescale_spectrum=False, lmax=None, name="hconv"):
        super().__init__()
        self.name = name
        self.K = K
        self.rescale_spectrum = rescale_spectrum
        self.lmax = lmax
        theta = np.zeros(K)
        theta[0] = 1.0
        self.params = {"theta": theta, "W": xavier_init((f_in, f_out), rng),
                       "b": np.zeros(f_out)}
        self.bn = BatchNorm(f_out, name=f"{name}.bn") if use_batchnorm else None
        self.zero_grad()

    @property
    def filter(self) -> SpectralFilter:
        return SpectralFilter(self.params["theta"], self.rescale_spectrum, self.lmax)

    def zero_grad(self):
        super().zero_grad()
        if getattr(self, "bn", None) is not None:
            self.bn.zero_grad()

    def forward(self, x, L, training=True):
        terms = chebyshev_basis(L, x, self.K, self.rescale_spectrum, self.lmax)
        theta = self.params["theta"]
        z = theta[0] * terms[0]
        for th, t in zip(theta[1:], terms[1:]):
            z = z + th * t
        a = z @ self.params["W"] + self.params["b"]
        h = self.bn.forward(a, training) if self.bn is not None else a
        y = np.maximum(h, 0.0)
        _check_finite(self.name, y)
        self._cache = (L, terms, z, h)
        return y

    def backward(self, g):
        L, terms, z, h = self._pop_cache()
        g = g * (h > 0)
        if self.bn is not None:
            g = self.bn.backward(g)
        f_in, f_out = self.params["W"].shape
        self.grads["W"] = self.grads["W"] + z.reshape(-1, f_in).T @ g.reshape(-1, f_out)
        self.grads["b"] = self.grads["b"] + g.reshape(-1, f_out).sum(axis=0)
        gz = g @ self.params["W"].T
        self.grads["theta"] = self.grads["theta"] + np.array([np.sum(gz * t) for t in terms])
        # T_k(L) is symmetric, so the input gradient is the same filter applied to gz
        return chebyshev_filter(L, gz, self.filter)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    B = logits.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(B), labels]))
    grad = softmax(logits)
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} ({name})")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total
