"""Dense GELU multilayer perceptron with hand-written backprop and Adam.

Layout is batch-major: an input batch has shape ``(batch, in_dim)`` and each
layer computes ``h @ W + b`` with ``W`` of shape ``(in_dim, out_dim)``.
Parameters and activations are float32 by default; passing float64 params
(e.g. for finite-difference checks) keeps everything in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Default denoiser shape: 4 weight matrices (3 hidden GELU layers + linear output).
DEFAULT_HIDDEN = (256, 256, 256)


def gelu(x):
    """Exact-erf GELU, ``0.5 * x * (1 + erf(x / sqrt(2)))``.

    Works on python floats and numpy arrays alike.
    """
    if isinstance(x, (float, int)):
        return 0.5 * x * (1.0 + math.erf(x * INV_SQRT2))
    x = np.asarray(x)
    return 0.5 * x * (1.0 + erf(x * x.dtype.type(INV_SQRT2)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx gelu(x) = Phi(x) + x * phi(x)."""
    c = x.dtype.type
    cdf = 0.5 * (1.0 + erf(x * c(INV_SQRT2)))
    pdf = c(INV_SQRT_2PI) * np.exp(-0.5 * x * x)
    return cdf + x * pdf


@dataclass
class Layer:
    weight: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpParams:
    """Ordered affine layers; GELU between them, identity after the last."""

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("MLP needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ValueError(f"layer {i}: bias shape {layer.bias.shape} does not match weight {layer.weight.shape}")
            if i and layer.in_dim != self.layers[i - 1].out_dim:
                raise ValueError(
                    f"layer {i} expects width {layer.in_dim}, previous layer emits {self.layers[i - 1].out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def arrays(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] sharing memory with the params."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "MlpParams":
        return cls([Layer(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])

    def astype(self, dtype) -> "MlpParams":
        return MlpParams.from_arrays([a.astype(dtype) for a in self.arrays()])

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self, dtype=None) -> "MlpParams":
        return MlpParams.from_arrays([np.zeros_like(a, dtype=dtype) for a in self.arrays()])


def init_mlp(widths, seed: int, dtype=np.float32) -> MlpParams:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    widths = list(widths)
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        layers.append(Layer(w, np.zeros(fan_out, dtype=dtype)))
    return MlpParams(layers)


def _as_batch(x: np.ndarray, width: int, dtype) -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"expected input of width {width}, got shape {x.shape}")
    return x


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Returns ``(output, cache)``; ``cache`` holds each layer's input and pre-activation."""
    dtype = params.layers[0].weight.dtype
    h = _as_batch(x, params.in_dim, dtype)
    inputs, pre = [], []
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        inputs.append(h)
        a = h @ layer.weight + layer.bias
        pre.append(a)
        h = a if i == last else gelu(a)
    return h, (inputs, pre)


def mlp_predict(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass without keeping a cache."""
    dtype = params.layers[0].weight.dtype
    h = _as_batch(x, params.in_dim, dtype)
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        h = h @ layer.weight + layer.bias
        if i != last:
            h = gelu(h)
    return h


def mlp_backward(params: MlpParams, cache, output_grad: np.ndarray):
    """Backprop ``output_grad`` (dL/d output) through the cached forward pass.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` is an
    ``MlpParams`` holding dL/dW and dL/db for every layer.
    """
    inputs, pre = cache
    if len(inputs) != len(params.layers):
        raise ValueError("cache does not belong to these params")
    g = np.asarray(output_grad, dtype=pre[-1].dtype)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != pre[-1].shape:
        raise ValueError(f"output_grad shape {g.shape} does not match forward output {pre[-1].shape}")
    grads: list[Layer] = [None] * len(params.layers)  # type: ignore[list-item]
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * gelu_grad(pre[i])
        layer = params.layers[i]
        grads[i] = Layer(inputs[i].T @ g, g.sum(axis=0))
        g = g @ layer.weight.T
    return MlpParams(grads), g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, **kw) -> "AdamState":
        # moments accumulate in float64
        m = [np.zeros(a.shape, dtype=np.float64) for a in params.arrays()]
        v = [np.zeros(a.shape, dtype=np.float64) for a in params.arrays()]
        return cls(m, v, lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(
            [a.copy() for a in self.m],
            [a.copy() for a in self.v],
            self.step,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )


def adam_step(state: AdamState, params: MlpParams, grads: MlpParams):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are untouched."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree on layer count")
    new = state.copy()
    new.step += 1
    bc1 = 1.0 - new.beta1**new.step
    bc2 = 1.0 - new.beta2**new.step
    out = []
    for p, g, m, v in zip(p_arrays, g_arrays, new.m, new.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        g64 = g.astype(np.float64)
        m *= new.beta1
        m += (1.0 - new.beta1) * g64
        v *= new.beta2
        v += (1.0 - new.beta2) * g64 * g64
        update = new.lr * (m / bc1) / (np.sqrt(v / bc2) + new.eps)
        out.append((p.astype(np.float64) - update).astype(p.dtype))
    return MlpParams.from_arrays(out), new

