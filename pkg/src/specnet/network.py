"""Layer graph for spectral and spatial-baseline networks.

A :class:`ModelSpec` is an ordered list of layer descriptors. The same
spec and parameters can be run in two modes:

``spectral``
    Convolution blocks run in the spectral domain and keep their outputs
    as thresholded sparse maps; the graph crosses back to the spatial
    domain exactly once, at :class:`ToSpatial`.

``spatial``
    Baseline. Every feature map is a dense real array. Convolutions are
    direct sums (full for the first block, circular at the incoming size
    for later blocks, mirroring the spectral geometry) and nothing is
    thresholded. At ``beta = 0`` both modes compute the same function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .block import (
    SpecConvLayer,
    activate_backward,
    activate_values,
    spec_conv_backward,
    spec_conv_forward,
    spectral_downsample,
    spectral_downsample_backward,
)
from .errors import DimensionError, NumericIntegrityError, UsageError
from .fft import fft2d, ifft2d
from .memory import MemLedger
from .sparse import SparseSpectral, check_hermitian, densify, threshold_to_sparse

__all__ = [
    "spatial_conv_reference",
    "to_spatial",
    "DenseLayer",
    "dense_forward",
    "dense_backward",
    "softmax_xent",
    "SpecConv",
    "SpectralPool",
    "ToSpatial",
    "Flatten",
    "Dense",
    "SpatialActivation",
    "ModelSpec",
    "Model",
    "spec_lenet_mini",
    "calibrate_spectral_gain",
    "block_magnitudes",
    "model_forward",
    "model_backward",
    "SPECTRAL",
    "SPATIAL",
]

SPECTRAL = "spectral"
SPATIAL = "spatial"
MODES = (SPECTRAL, SPATIAL)

SYMMETRY_TOL = 1e-6


def spatial_conv_reference(x, k) -> np.ndarray:
    """Full 2D convolution by direct summation.

    ``y(i, j) = sum_m sum_n x(m, n) k(i - m, j - n)``, output size
    ``(M + N_k - 1, N + N_k - 1)``.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    M, N = x.shape
    kr, kc = k.shape
    y = np.zeros((M + kr - 1, N + kc - 1))
    for u in range(kr):
        for v in range(kc):
            y[u:u + M, v:v + N] += k[u, v] * x
    return y


def _mix(x, w):
    """Channel mixing ``out[b, o] = sum_i w[o, i] x[b, i]``."""
    return np.moveaxis(np.tensordot(x, w, axes=([1], [1])), -1, 1)


def _full_conv(x, k):
    B, _, M, N = x.shape
    O, _, kk, _ = k.shape
    y = np.zeros((B, O, M + kk - 1, N + kk - 1))
    for u in range(kk):
        for v in range(kk):
            y[:, :, u:u + M, v:v + N] += _mix(x, k[:, :, u, v])
    return y


def _full_conv_backward(gy, x, k):
    M, N = x.shape[-2:]
    kk = k.shape[-1]
    gx = np.zeros_like(x)
    gk = np.zeros_like(k)
    for u in range(kk):
        for v in range(kk):
            window = gy[:, :, u:u + M, v:v + N]
            gx += _mix(window, k[:, :, u, v].T)
            gk[:, :, u, v] = np.tensordot(window, x, axes=([0, 2, 3], [0, 2, 3]))
    return gx, gk


def _circular_conv(x, k):
    kk = k.shape[-1]
    y = np.zeros((x.shape[0], k.shape[0]) + x.shape[-2:])
    for u in range(kk):
        for v in range(kk):
            shifted = np.roll(x, (u, v), axis=(-2, -1))
            y += _mix(shifted, k[:, :, u, v])
    return y


def _circular_conv_backward(gy, x, k):
    kk = k.shape[-1]
    gx = np.zeros_like(x)
    gk = np.zeros_like(k)
    for u in range(kk):
        for v in range(kk):
            shifted = np.roll(x, (u, v), axis=(-2, -1))
            gk[:, :, u, v] = np.tensordot(gy, shifted, axes=([0, 2, 3], [0, 2, 3]))
            gx += np.roll(_mix(gy, k[:, :, u, v].T), (-u, -v), axis=(-2, -1))
    return gx, gk


def to_spatial(Z: SparseSpectral, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Real part of the inverse transform of a conjugate-symmetric sparse map.

    Raises :class:`NumericIntegrityError` if the map is not Hermitian to
    within ``tol`` or the inverse carries an imaginary residue above it.
    """
    dense = densify(Z)
    if not check_hermitian(dense, tol):
        raise NumericIntegrityError("spectral map lost conjugate symmetry")
    z = ifft2d(dense)
    residue = float(np.max(np.abs(z.imag), initial=0.0))
    if residue > tol:
        raise NumericIntegrityError(f"imaginary residue {residue:.3e} exceeds {tol:.1e}")
    return np.ascontiguousarray(z.real)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError("dense layer needs weights (out, in) and bias (out,)")


def dense_forward(x, layer: DenseLayer) -> np.ndarray:
    """``W x + b``; ``x`` may be a vector or a ``(batch, in)`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.weights.shape[1]:
        raise DimensionError(
            f"input length {x.shape[-1]} != layer input size {layer.weights.shape[1]}")
    return x @ layer.weights.T + layer.bias


def dense_backward(grad_out, x, layer: DenseLayer):
    """Returns ``(grad_x, grad_W, grad_b)``."""
    g = np.atleast_2d(grad_out)
    xx = np.atleast_2d(x)
    grad_x = (g @ layer.weights).reshape(np.shape(x))
    return grad_x, g.T @ xx, g.sum(axis=0)


def softmax_xent(logits, label):
    """Cross-entropy of softmax(logits) against ``label``.

    Works on a single vector (``label`` an int) or a batch (``label`` an
    int array); for a batch the loss and gradient are averaged.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if np.any(labels < 0) or np.any(labels >= z2.shape[1]):
        raise ValueError("label out of range")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    idx = np.arange(z2.shape[0])
    losses = log_norm - shifted[idx, labels]
    grad = np.exp(shifted - log_norm[:, None])
    grad[idx, labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / z2.shape[0]


# -- layer descriptors ----------------------------------------------------


@dataclass
class _Ctx:
    index: int
    mode: str
    beta: float
    ledger: Optional[MemLedger]

    def sparse(self, S):
        if self.ledger is not None:
            self.ledger.sparse(self.index, self.mode, S)

    def dense(self, a):
        if self.ledger is not None:
            self.ledger.dense(self.index, self.mode, a)

    def nothing(self):
        if self.ledger is not None:
            self.ledger.record(self.index, self.mode, 0)


@dataclass
class SpecConv:
    """Spectral convolution block (convolution, threshold, activation)."""

    out_channels: int
    kernel_size: int = 3
    beta: Optional[float] = None
    kind = "spec-conv"

    def out_shape(self, shape, spatial_input):
        c, m, n = shape
        k = self.kernel_size
        if spatial_input:
            return (self.out_channels, m + k - 1, n + k - 1)
        if m < k or n < k:
            raise DimensionError(f"{m}x{n} spectral map is smaller than the {k}x{k} kernel")
        return (self.out_channels, m, n)

    def param_shapes(self, shape):
        k = self.kernel_size
        return {"kernels": (self.out_channels, shape[0], k, k)}

    def fans(self, shape):
        k2 = self.kernel_size ** 2
        return shape[0] * k2, self.out_channels * k2

    def forward(self, params, x, ctx, spatial_input):
        beta = ctx.beta if self.beta is None else self.beta
        if ctx.mode == SPECTRAL:
            Z, cache = spec_conv_forward(x, SpecConvLayer(params["kernels"], beta))
            ctx.sparse(Z)
            return Z, cache
        k = params["kernels"]
        y = _full_conv(x, k) if spatial_input else _circular_conv(x, k)
        # the pre-activation map is what the backward pass must keep
        ctx.dense(y)
        Y = fft2d(y)
        z = ifft2d(activate_values(Y)).real
        return z, (x, Y, spatial_input)

    def backward(self, params, grad, cache, mode):
        if mode == SPECTRAL:
            gx, gk = spec_conv_backward(grad, cache)
            return gx, {"kernels": gk}
        x, Y, spatial_input = cache
        rc = Y.shape[-1] * Y.shape[-2]
        gY = activate_backward(fft2d(grad) / rc, Y)
        gy = rc * ifft2d(gY).real
        back = _full_conv_backward if spatial_input else _circular_conv_backward
        gx, gk = back(gy, x, params["kernels"])
        return gx, {"kernels": gk}


@dataclass
class SpectralPool:
    """Spectral pooling to ``max(1, floor(size * factor))`` per axis."""

    factor: float = 0.5
    kind = "spectral-pool"

    def target(self, m, n):
        return max(1, int(m * self.factor)), max(1, int(n * self.factor))

    def out_shape(self, shape, spatial_input):
        if spatial_input:
            raise UsageError("spectral pooling must follow a convolution block")
        return (shape[0],) + self.target(*shape[1:])

    def forward(self, params, x, ctx, spatial_input):
        if ctx.mode == SPECTRAL:
            R, C = x.shape[-2:]
            pooled = spectral_downsample(densify(x), *self.target(R, C))
            out = threshold_to_sparse(pooled, 0.0)
            ctx.sparse(out)
            return out, x
        R, C = x.shape[-2:]
        z = ifft2d(spectral_downsample(fft2d(x), *self.target(R, C))).real
        ctx.dense(z)
        return z, (R, C)

    def backward(self, params, grad, cache, mode):
        if mode == SPECTRAL:
            support = cache
            g = densify(grad) if isinstance(grad, SparseSpectral) else grad
            gX = spectral_downsample_backward(g, *support.shape[-2:])
            return support.with_values(support.gather(gX)), {}
        R, C = cache
        r, c = grad.shape[-2:]
        gX = spectral_downsample_backward(fft2d(grad) / (r * c), R, C)
        return (R * C) * ifft2d(gX).real, {}


@dataclass
class ToSpatial:
    """The single spectral-to-spatial transition."""

    kind = "to-spatial"

    def out_shape(self, shape, spatial_input):
        if spatial_input:
            raise UsageError("to-spatial needs a spectral input")
        return shape

    def forward(self, params, x, ctx, spatial_input):
        if ctx.mode == SPECTRAL:
            z = to_spatial(x)
            ctx.dense(z)
            return z, x
        # no copy, but the head retains this map on top of the block's own
        ctx.dense(x)
        return x, None

    def backward(self, params, grad, cache, mode):
        if mode == SPECTRAL:
            support = cache
            rc = support.shape[-1] * support.shape[-2]
            return support.with_values(support.gather(fft2d(grad)) / rc), {}
        return grad, {}


@dataclass
class Flatten:
    kind = "flatten"

    def out_shape(self, shape, spatial_input):
        return (int(np.prod(shape)),)

    def forward(self, params, x, ctx, spatial_input):
        ctx.nothing()
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, grad, cache, mode):
        return grad.reshape(cache), {}


@dataclass
class Dense:
    out_features: int
    kind = "dense"

    def out_shape(self, shape, spatial_input):
        if len(shape) != 1:
            raise UsageError("dense layer needs a flattened input")
        return (self.out_features,)

    def param_shapes(self, shape):
        return {"weight": (self.out_features, shape[0]), "bias": (self.out_features,)}

    def fans(self, shape):
        return shape[0], self.out_features

    def forward(self, params, x, ctx, spatial_input):
        y = dense_forward(x, DenseLayer(params["weight"], params["bias"]))
        ctx.dense(y)
        return y, x

    def backward(self, params, grad, cache, mode):
        gx, gw, gb = dense_backward(grad, cache, DenseLayer(params["weight"], params["bias"]))
        return gx, {"weight": gw, "bias": gb}


@dataclass
class SpatialActivation:
    """Pointwise ``tanh`` or ``relu`` on spatial features."""

    fn: str = "tanh"
    kind = "activation-spatial"

    def __post_init__(self):
        if self.fn not in ("tanh", "relu"):
            raise UsageError(f"unknown activation {self.fn!r}")

    def out_shape(self, shape, spatial_input):
        return shape

    def forward(self, params, x, ctx, spatial_input):
        y = np.tanh(x) if self.fn == "tanh" else np.maximum(x, 0.0)
        ctx.dense(y)
        return y, y

    def backward(self, params, grad, cache, mode):
        y = cache
        if self.fn == "tanh":
            return grad * (1.0 - y * y), {}
        return grad * (y > 0), {}


LAYER_KINDS = {cls.kind: cls for cls in
               (SpecConv, SpectralPool, ToSpatial, Flatten, Dense, SpatialActivation)}


@dataclass
class ModelSpec:
    """Ordered layer descriptors plus input geometry, mode and global beta."""

    input_shape: tuple
    layers: list
    num_classes: int
    mode: str = SPECTRAL
    beta: float = 0.0
    shapes: List[tuple] = field(init=False, repr=False)
    spatial_inputs: List[bool] = field(init=False, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}")
        if self.beta < 0:
            raise UsageError("beta must be non-negative")
        self._check_chain()

    def _check_chain(self):
        kinds = [layer.kind for layer in self.layers]
        if kinds.count("to-spatial") != 1:
            raise UsageError("exactly one to-spatial transition is required")
        cut = kinds.index("to-spatial")
        if not kinds or kinds[0] != "spec-conv":
            raise UsageError("the first layer must be a spec-conv block")
        for i, kind in enumerate(kinds):
            if i < cut and kind not in ("spec-conv", "spectral-pool"):
                raise UsageError(f"{kind} cannot appear before to-spatial")
            if i > cut and kind in ("spec-conv", "spectral-pool", "to-spatial"):
                raise UsageError(f"{kind} cannot appear after to-spatial")
        shape = self.input_shape
        spatial = True
        self.shapes, self.spatial_inputs = [], []
        for layer in self.layers:
            self.spatial_inputs.append(spatial)
            shape = layer.out_shape(shape, spatial)
            self.shapes.append(shape)
            if layer.kind == "spec-conv":
                spatial = False
            elif layer.kind == "to-spatial":
                spatial = True
        if self.shapes[-1] != (self.num_classes,):
            raise UsageError(
                f"network ends in shape {self.shapes[-1]}, expected ({self.num_classes},)")

    def in_shape(self, i):
        return self.input_shape if i == 0 else self.shapes[i - 1]

    def param_shapes(self):
        out = {}
        for i, layer in enumerate(self.layers):
            if hasattr(layer, "param_shapes"):
                for name, shp in layer.param_shapes(self.in_shape(i)).items():
                    out[f"{i}.{name}"] = shp
        return out

    def describe(self):
        return [dict(kind=layer.kind, **{k: v for k, v in vars(layer).items()})
                for layer in self.layers]

    @classmethod
    def from_description(cls, input_shape, layers, num_classes, mode, beta):
        built = []
        for d in layers:
            d = dict(d)
            built.append(LAYER_KINDS[d.pop("kind")](**d))
        return cls(tuple(input_shape), built, num_classes, mode, beta)

    def with_mode(self, mode=None, beta=None) -> "ModelSpec":
        return ModelSpec(self.input_shape, list(self.layers), self.num_classes,
                         self.mode if mode is None else mode,
                         self.beta if beta is None else beta)


@dataclass
class Model:
    spec: ModelSpec
    params: dict

    @classmethod
    def init(cls, spec: ModelSpec, seed=0, rng=None) -> "Model":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed) if rng is None else rng
        params = {}
        for i, layer in enumerate(spec.layers):
            if not hasattr(layer, "param_shapes"):
                continue
            fan_in, fan_out = layer.fans(spec.in_shape(i))
            s = np.sqrt(6.0 / (fan_in + fan_out))
            for name, shp in layer.param_shapes(spec.in_shape(i)).items():
                key = f"{i}.{name}"
                params[key] = np.zeros(shp) if name == "bias" else rng.uniform(-s, s, size=shp)
        return cls(spec, params)

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "Model":
        return cls(spec, {k: np.zeros(s) for k, s in spec.param_shapes().items()})

    def layer_params(self, i):
        prefix = f"{i}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def with_mode(self, mode=None, beta=None) -> "Model":
        """Same parameters (shared, not copied) under another mode or beta."""
        return Model(self.spec.with_mode(mode, beta), self.params)

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})


def calibrate_spectral_gain(model: Model, batch, quantile: float = 0.9,
                            target: float = 2.0) -> dict:
    """Rescale each spec-conv kernel bank so ``quantile(|Y|) == target``.

    ``Y`` is the block's pre-threshold spectral output on ``batch`` with
    every earlier layer already rescaled. This puts spectral magnitudes on
    the scale of the threshold at every depth, whatever the transform
    normalization and the activation's saturation do to them. Works in
    place and returns the applied gains keyed by parameter name.
    """
    spec = model.spec.with_mode(SPECTRAL, 0.0)
    x = np.asarray(batch, dtype=np.float64)
    gains = {}
    for i, layer in enumerate(spec.layers):
        params = model.layer_params(i)
        if layer.kind == "spec-conv":
            _, cache = spec_conv_forward(x, SpecConvLayer(params["kernels"], 0.0))
            level = np.quantile(np.abs(cache.Yhat.values), quantile) if cache.Yhat.nnz else 0.0
            if level > 0:
                gain = target / level
                model.params[f"{i}.kernels"] *= gain
                gains[f"{i}.kernels"] = gain
                params = model.layer_params(i)
        x, _ = layer.forward(params, x, _Ctx(i, SPECTRAL, 0.0, None), spec.spatial_inputs[i])
        if layer.kind == "to-spatial":
            break
    return gains


def block_magnitudes(model: Model, batch):
    """``(layer index, beta, |Y|)`` for every spec-conv block on ``batch``.

    ``Y`` is the pre-threshold product, computed along a spectral-mode
    forward pass at the model's own beta.
    """
    spec = model.spec.with_mode(SPECTRAL)
    x = np.asarray(batch, dtype=np.float64)
    out = []
    for i, layer in enumerate(spec.layers):
        params = model.layer_params(i)
        if layer.kind == "spec-conv":
            beta = spec.beta if layer.beta is None else layer.beta
            _, cache = spec_conv_forward(x, SpecConvLayer(params["kernels"], 0.0))
            out.append((i, beta, np.abs(densify(cache.Yhat))))
        x, _ = layer.forward(params, x, _Ctx(i, SPECTRAL, spec.beta, None), spec.spatial_inputs[i])
        if layer.kind == "to-spatial":
            break
    return out


def spec_lenet_mini(input_shape=(1, 12, 12), num_classes=2, beta=0.0, mode=SPECTRAL,
                    channels=(8, 16), kernel_size=3) -> ModelSpec:
    """conv(8) -> spectral pool (half) -> conv(16) -> to-spatial -> flatten -> dense."""
    layers = [
        SpecConv(channels[0], kernel_size),
        SpectralPool(0.5),
        SpecConv(channels[1], kernel_size),
        ToSpatial(),
        Flatten(),
        Dense(num_classes),
    ]
    return ModelSpec(input_shape, layers, num_classes, mode, beta)


def model_forward(model: Model, batch, ledger: Optional[MemLedger] = None):
    """Run every layer in order.

    ``batch`` is ``(batch, channels, H, W)`` (a single ``(C, H, W)`` sample
    is promoted). Returns ``(logits, caches, ledger)``.
    """
    spec = model.spec
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == len(spec.input_shape):
        x = x[None]
    if x.shape[1:] != spec.input_shape:
        raise DimensionError(f"batch shape {x.shape[1:]} != model input {spec.input_shape}")
    caches = []
    for i, layer in enumerate(spec.layers):
        ctx = _Ctx(i, spec.mode, spec.beta, ledger)
        x, cache = layer.forward(model.layer_params(i), x, ctx, spec.spatial_inputs[i])
        caches.append(cache)
    return x, caches, ledger


def model_backward(model: Model, caches, grad_logits, grad_input: bool = False):
    """Parameter gradients for ``grad_logits``; keys match ``model.params``."""
    spec = model.spec
    grads = {}
    g = grad_logits
    for i in reversed(range(len(spec.layers))):
        g, pg = spec.layers[i].backward(model.layer_params(i), g, caches[i], spec.mode)
        for name, value in pg.items():
            grads[f"{i}.{name}"] = value
    if grad_input:
        return grads, g
    return grads
