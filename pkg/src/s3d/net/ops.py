"""Dense 3-D network primitives on channels-last fp64 arrays.

Tensors are plain ``np.ndarray`` of shape (L, H, W, C). Convolution is
sliding-window cross-correlation; every op has an exact adjoint so the
whole network is differentiable. Forward passes are vectorized through a
patch view + BLAS contraction; backward passes accumulate through strided
slice writes, which keeps them exact and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError

Triple = tuple[int, int, int]


@dataclass(frozen=True)
class LayerSpec:
    """Shape contract of one layer.

    ``kind`` is one of conv3d / maxpool3d / relu / sigmoid. Kernel, stride
    and padding are (t, h, w) triples; elementwise kinds ignore them.
    ``is_feature_layer`` marks outputs that feed a span predictor.
    """

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: Triple = (1, 1, 1)
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)
    is_feature_layer: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("conv3d", "maxpool3d", "relu", "sigmoid"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if any(k < 1 for k in self.kernel) or any(s < 1 for s in self.stride):
            raise ConfigError(f"kernel and stride must be >= 1, got {self.kernel}, {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.kind == "conv3d" and (self.in_channels < 1 or self.out_channels < 1):
            raise ConfigError("conv3d needs positive in/out channel counts")

    def output_shape(self, in_shape: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
        """Shape algebra: out = floor((in + 2*pad - kernel) / stride) + 1 per axis."""
        l, h, w, c = in_shape
        if self.kind in ("relu", "sigmoid"):
            return in_shape
        dims = []
        for size, k, s, p in zip((l, h, w), self.kernel, self.stride, self.padding):
            padded = size + 2 * p
            if padded < k:
                raise ConfigError(
                    f"{self.kind} kernel {self.kernel} does not fit input {in_shape} "
                    f"with padding {self.padding}"
                )
            dims.append((padded - k) // s + 1)
        if self.kind == "conv3d":
            if c != self.in_channels:
                raise ConfigError(f"conv3d expects {self.in_channels} channels, input has {c}")
            return (dims[0], dims[1], dims[2], self.out_channels)
        return (dims[0], dims[1], dims[2], c)


def _pad(x: np.ndarray, padding: Triple) -> np.ndarray:
    pt, ph, pw = padding
    if pt == ph == pw == 0:
        return x
    return np.pad(x, ((pt, pt), (ph, ph), (pw, pw), (0, 0)))


def _patches(x_padded: np.ndarray, kernel: Triple, stride: Triple) -> np.ndarray:
    """Strided view of shape (L', H', W', C, kt, kh, kw)."""
    view = sliding_window_view(x_padded, kernel, axis=(0, 1, 2))
    return view[:: stride[0], :: stride[1], :: stride[2]]


def conv3d_forward(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray, spec: LayerSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-correlate ``x`` (L,H,W,Cin) with ``weights`` (kt,kh,kw,Cin,Cout).

    Returns (output, padded input); the padded input is the backward cache.
    """
    expect = (*spec.kernel, spec.in_channels, spec.out_channels)
    if weights.shape != expect:
        raise ConfigError(f"weights shape {weights.shape} != spec shape {expect}")
    if bias.shape != (spec.out_channels,):
        raise ConfigError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    spec.output_shape(x.shape)  # validates channel count and kernel fit
    xp = _pad(x, spec.padding)
    patches = _patches(xp, spec.kernel, spec.stride)
    # contract (C, kt, kh, kw) against weights (kt, kh, kw, Cin, Cout)
    out = np.tensordot(patches, weights, axes=([4, 5, 6, 3], [0, 1, 2, 3]))
    out += bias
    return out, xp


def conv3d_backward(
    grad_out: np.ndarray, x_padded: np.ndarray, weights: np.ndarray, spec: LayerSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of conv3d_forward w.r.t. input, weights, and bias."""
    st, sh, sw = spec.stride
    kt, kh, kw = spec.kernel
    lo, ho, wo = grad_out.shape[:3]

    grad_bias = grad_out.sum(axis=(0, 1, 2))

    patches = _patches(x_padded, spec.kernel, spec.stride)
    # (C, kt, kh, kw, Cout) -> (kt, kh, kw, Cin, Cout)
    gw = np.tensordot(patches, grad_out, axes=([0, 1, 2], [0, 1, 2]))
    grad_weights = np.ascontiguousarray(np.transpose(gw, (1, 2, 3, 0, 4)))

    grad_padded = np.zeros_like(x_padded)
    flat_gout = grad_out.reshape(-1, grad_out.shape[3])
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                # every output cell consumed x_padded[a + t*st, b + h*sh, c + w*sw]
                contrib = flat_gout @ weights[a, b, c].T
                grad_padded[
                    a : a + st * lo : st, b : b + sh * ho : sh, c : c + sw * wo : sw, :
                ] += contrib.reshape(lo, ho, wo, -1)

    pt, ph, pw = spec.padding
    grad_input = grad_padded[
        pt : grad_padded.shape[0] - pt or None,
        ph : grad_padded.shape[1] - ph or None,
        pw : grad_padded.shape[2] - pw or None,
        :,
    ]
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


def maxpool3d_forward(x: np.ndarray, spec: LayerSpec) -> tuple[np.ndarray, np.ndarray]:
    """Max pooling; returns (output, argmax) where argmax holds the flat
    in-window index of each winner (first index wins ties, (t,h,w) raster
    order)."""
    spec.output_shape(x.shape)
    if any(p != 0 for p in spec.padding):
        raise ConfigError("maxpool3d does not support padding")
    patches = _patches(x, spec.kernel, spec.stride)
    lo, ho, wo, c = patches.shape[:4]
    flat = patches.reshape(lo, ho, wo, c, -1)
    argmax = np.argmax(flat, axis=4)
    out = np.take_along_axis(flat, argmax[..., None], axis=4)[..., 0]
    return out, argmax


def maxpool3d_backward(
    grad_out: np.ndarray, argmax: np.ndarray, in_shape: tuple[int, int, int, int], spec: LayerSpec
) -> np.ndarray:
    """Route each output gradient to the input cell that won its window."""
    kt, kh, kw = spec.kernel
    st, sh, sw = spec.stride
    lo, ho, wo, c = grad_out.shape
    li, hi, wi = np.ix_(np.arange(lo) * st, np.arange(ho) * sh, np.arange(wo) * sw)
    dt = argmax // (kh * kw)
    rem = argmax % (kh * kw)
    dh = rem // kw
    dw = rem % kw
    ch = np.broadcast_to(np.arange(c), grad_out.shape)
    grad_in = np.zeros(in_shape, dtype=grad_out.dtype)
    np.add.at(
        grad_in,
        (li[..., None] + dt, hi[..., None] + dh, wi[..., None] + dw, ch),
        grad_out,
    )
    return grad_in


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0.0
    return np.where(mask, x, 0.0), mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, grad_out, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out: np.ndarray, out: np.ndarray) -> np.ndarray:
    return grad_out * out * (1.0 - out)
