"""Oracle suites run by ``specnet selftest``.

Each suite compares a fast path against an independent reference on
seeded random inputs and returns ``(name, passed, detail)``.
"""

from __future__ import annotations

import numpy as np

from .block import SpecConvLayer, spec_conv_forward
from .fft import dft2d_reference, fft2d, ifft2d
from .network import (
    SPECTRAL,
    Dense,
    Flatten,
    Model,
    ModelSpec,
    SpecConv,
    ToSpatial,
    block_magnitudes,
    model_backward,
    model_forward,
    softmax_xent,
    spatial_conv_reference,
    spec_lenet_mini,
    to_spatial,
)
from .sparse import check_hermitian, densify

__all__ = ["SUITES", "run_all", "tiny_model", "max_relative_error"]


def max_relative_error(a, b) -> float:
    scale = max(float(np.max(np.abs(b), initial=0.0)), 1e-300)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0)) / scale


def fft_suite(seed=0, cases=100):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        r, c = rng.integers(1, 17, size=2)
        x = rng.standard_normal((r, c))
        X = fft2d(x)
        worst = max(worst, max_relative_error(X, dft2d_reference(x)),
                    max_relative_error(ifft2d(X), x))
    return "fft", worst <= 1e-10, f"max relative error {worst:.2e}"


def conv_suite(seed=0, cases=50):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        m, n = rng.integers(1, 17, size=2)
        k = int(rng.integers(1, 6))
        x = rng.standard_normal((m, n))
        kern = rng.standard_normal((k, k))
        _, cache = spec_conv_forward(x, SpecConvLayer(kern, 0.0))
        y = ifft2d(densify(cache.Yhat))[0, 0].real
        worst = max(worst, float(np.max(np.abs(y - spatial_conv_reference(x, kern)))))
    return "conv", worst <= 1e-8, f"max abs error {worst:.2e}"


def symmetry_suite(seed=0, cases=50):
    rng = np.random.default_rng(seed)
    ok, worst = True, 0.0
    for i in range(cases):
        beta = (0.0, 0.5, 1.0, 1.5)[i % 4]
        m, n = rng.integers(2, 13, size=2)
        x = rng.standard_normal((2, m, n))
        kern = rng.standard_normal((3, 2, 3, 3)) * 0.3
        Z, _ = spec_conv_forward(x, SpecConvLayer(kern, beta))
        ok &= check_hermitian(Z, 1e-9)
        worst = max(worst, float(np.max(np.abs(ifft2d(densify(Z)).imag), initial=0.0)))
        to_spatial(Z)
    return "symmetry", bool(ok and worst <= 1e-6), f"max imaginary residue {worst:.2e}"


def tiny_model(seed=0, beta=0.0):
    """6x6 input, one 3x3 spectral block, dense head; used for gradient checks."""
    spec = ModelSpec((1, 6, 6), [SpecConv(2, 3), ToSpatial(), Flatten(), Dense(3)],
                     3, SPECTRAL, beta)
    return Model.init(spec, seed=seed)


def gradient_check(model, x, labels, h=1e-5):
    """Worst relative error of analytic vs central-difference gradients over
    every parameter entry."""
    def loss():
        return softmax_xent(model_forward(model, x)[0], labels)[0]

    logits, caches, _ = model_forward(model, x)
    _, g = softmax_xent(logits, labels)
    grads = model_backward(model, caches, g)
    worst = 0.0
    for name, p in model.params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            fd = (up - down) / (2 * h)
            an = grads[name][idx]
            denom = max(abs(fd), abs(an), 1e-6)
            worst = max(worst, abs(fd - an) / denom)
    return worst


def threshold_margin(model, x) -> float:
    """Smallest distance between any spectral magnitude and its threshold."""
    return min(float(np.min(np.abs(mags - beta))) for _, beta, mags in block_magnitudes(model, x))


def gradient_suite(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for beta in (0.0, 0.5):
        model = tiny_model(seed, beta)
        for _ in range(20):
            x = rng.standard_normal((2, 1, 6, 6))
            if threshold_margin(model, x) > 1e-4:
                break
        labels = rng.integers(0, 3, size=2)
        worst = max(worst, gradient_check(model, x, labels))
    return "gradient", bool(worst <= 1e-4), f"max relative error {worst:.2e}"


def model_suite(seed=0):
    rng = np.random.default_rng(seed)
    model = Model.init(spec_lenet_mini(beta=0.0), seed=seed)
    x = rng.standard_normal((4, 1, 12, 12))
    a = model_forward(model, x)[0]
    b = model_forward(model.with_mode("spatial"), x)[0]
    dev = float(np.max(np.abs(a - b)))
    return "cross-mode", dev <= 1e-6, f"max logit deviation {dev:.2e}"


SUITES = (fft_suite, conv_suite, symmetry_suite, gradient_suite, model_suite)


def run_all(seed=0):
    return [suite(seed=seed) for suite in SUITES]
