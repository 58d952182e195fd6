"""Reference segmentation network and optimizer, implemented on numpy alone.

Encoder-decoder with additive skip connections:

    input [N, 3, H, W]
      enc1: 3x3 stride-2 conv + ReLU      -> [N, w1, H/2, W/2]
      enc2: 3x3 stride-2 conv + ReLU      -> [N, w2, H/4, W/4]
      enc3: 3x3 stride-2 conv + ReLU      -> [N, w3, H/8, W/8]
      up x2, dec1: 3x3 conv, + enc2, ReLU -> [N, w2, H/4, W/4]
      up x2, dec2: 3x3 conv, + enc1, ReLU -> [N, w1, H/2, W/2]
      up x2, dec3: 3x3 conv, ReLU         -> [N, w1, H, W]
      head: 1x1 conv                      -> [N, K, H, W]

Convolutions run as 9 strided slices gathered into a column tensor followed by
one tensordot (a single GEMM); their backward is the exact adjoint (col2im as
9 strided slice-adds). Kernels are applied in cross-correlation orientation,
without flipping. Bilinear x2 upsampling multiplies by dense per-axis
interpolation matrices, so its backward is multiplication by the transposes,
exact to the last bit. H and W must be divisible by 8.

Everything here is deterministic given fixed inputs and weights: no dropout,
no batch statistics, no threading dependence.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np


class SegmentationModel(Protocol):
    """Anything trainable by the pipeline: forward with cache, backward to grads."""

    num_classes: int

    def forward(self, x: np.ndarray, want_cache: bool = False): ...

    def backward(self, cache: dict, grad_logits: np.ndarray) -> dict[str, np.ndarray]: ...

    @property
    def params(self) -> dict[str, np.ndarray]: ...


def conv2d_forward(x, w, b, stride=1):
    """3x3 (pad 1) or 1x1 (pad 0) convolution, cross-correlation orientation.

    x [N, Cin, H, W], w [Cout, Cin, kh, kw], b [Cout]. Returns (y, cols);
    cols is the gathered column tensor, kept for the backward pass.
    """
    n, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input {cin}, kernel {cin_w}")
    pad = kh // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wdt + 2 * pad - kw) // stride + 1
    cols = np.empty((n, cin, kh * kw, ho, wo), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, di * kw + dj] = xp[
                :, :,
                di : di + stride * (ho - 1) + 1 : stride,
                dj : dj + stride * (wo - 1) + 1 : stride,
            ]
    w9 = w.reshape(cout, cin, kh * kw)
    y = np.tensordot(cols, w9, axes=([1, 2], [1, 2]))  # [N, Ho, Wo, Cout]
    y += b
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), cols


def conv2d_backward(grad_y, cols, w, x_shape, stride=1):
    """Adjoint of conv2d_forward. Returns (grad_x, grad_w, grad_b)."""
    n, cin, h, wdt = x_shape
    cout, _, kh, kw = w.shape
    pad = kh // 2
    ho, wo = grad_y.shape[2], grad_y.shape[3]
    grad_b = grad_y.sum(axis=(0, 2, 3))
    grad_w = np.tensordot(grad_y, cols, axes=([0, 2, 3], [0, 3, 4])).reshape(cout, cin, kh, kw)
    w9 = w.reshape(cout, cin, kh * kw)
    gcols = np.tensordot(grad_y, w9, axes=([1], [0]))  # [N, Ho, Wo, Cin, k*k]
    gcols = gcols.transpose(0, 3, 4, 1, 2)  # [N, Cin, k*k, Ho, Wo]
    gxp = np.zeros((n, cin, h + 2 * pad, wdt + 2 * pad), dtype=grad_y.dtype)
    for di in range(kh):
        for dj in range(kw):
            gxp[
                :, :,
                di : di + stride * (ho - 1) + 1 : stride,
                dj : dj + stride * (wo - 1) + 1 : stride,
            ] += gcols[:, :, di * kw + dj]
    if pad:
        return gxp[:, :, pad:-pad, pad:-pad], grad_w, grad_b
    return gxp, grad_w, grad_b


_INTERP_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _interp_matrix(h_in: int, dtype) -> np.ndarray:
    """Dense [2*h_in, h_in] bilinear x2 interpolation matrix.

    Output coordinate o samples source position (o + 0.5)/2 - 0.5, clamped to
    the valid range (half-pixel-center convention).
    """
    key = (h_in, np.dtype(dtype).str)
    if key not in _INTERP_CACHE:
        h_out = 2 * h_in
        m = np.zeros((h_out, h_in), dtype=np.float64)
        for o in range(h_out):
            src = min(max((o + 0.5) / 2.0 - 0.5, 0.0), h_in - 1.0)
            i0 = int(np.floor(src))
            i1 = min(i0 + 1, h_in - 1)
            f = src - i0
            m[o, i0] += 1.0 - f
            m[o, i1] += f
        _INTERP_CACHE[key] = m.astype(dtype)
    return _INTERP_CACHE[key]


def upsample2x_forward(x):
    """Bilinear x2 upsampling of [N, C, H, W] -> [N, C, 2H, 2W]."""
    mh = _interp_matrix(x.shape[2], x.dtype)
    mw = _interp_matrix(x.shape[3], x.dtype)
    y = np.tensordot(x, mh, axes=([2], [1]))  # [N, C, W, 2H]
    y = np.tensordot(y, mw, axes=([2], [1]))  # [N, C, 2H, 2W]
    return np.ascontiguousarray(y)


def upsample2x_backward(grad_y):
    """Exact adjoint of upsample2x_forward (input dims are half the output's)."""
    mh = _interp_matrix(grad_y.shape[2] // 2, grad_y.dtype)
    mw = _interp_matrix(grad_y.shape[3] // 2, grad_y.dtype)
    g = np.tensordot(grad_y, mh, axes=([2], [0]))  # [N, C, 2W, H]
    g = np.tensordot(g, mw, axes=([2], [0]))  # [N, C, H, W]
    return np.ascontiguousarray(g)


class ReferenceModel:
    """Small encoder-decoder; about 28k parameters at default widths."""

    LAYERS = ("enc1", "enc2", "enc3", "dec1", "dec2", "dec3", "head")

    def __init__(self, num_classes: int, in_channels: int = 3,
                 widths: tuple[int, int, int] = (12, 24, 48),
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        widths = tuple(widths)
        if len(widths) != 3 or any(w < 1 for w in widths):
            raise ValueError(f"widths must be 3 positive ints, got {widths}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.widths = widths
        self.dtype = np.dtype(dtype)
        w1, w2, w3 = widths
        shapes = {
            "enc1": (w1, in_channels, 3, 3),
            "enc2": (w2, w1, 3, 3),
            "enc3": (w3, w2, 3, 3),
            "dec1": (w2, w3, 3, 3),
            "dec2": (w1, w2, 3, 3),
            "dec3": (w1, w1, 3, 3),
            "head": (num_classes, w1, 1, 1),
        }
        self._params: dict[str, np.ndarray] = {}
        for name in self.LAYERS:  # fixed order keeps init reproducible
            shape = shapes[name]
            fan_in = shape[1] * shape[2] * shape[3]
            std = np.sqrt(2.0 / fan_in)
            self._params[f"{name}.w"] = (std * rng.standard_normal(shape)).astype(self.dtype)
            self._params[f"{name}.b"] = np.zeros(shape[0], dtype=self.dtype)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self._params

    def num_parameters(self) -> int:
        return sum(int(p.size) for p in self._params.values())

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected [N, {self.in_channels}, H, W], got {x.shape}")
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ValueError(f"H and W must be divisible by 8, got {x.shape[2:]}")

    def forward(self, x, want_cache: bool = False):
        """Logits [N, K, H, W]; with want_cache also the backward cache."""
        self._check_input(x)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        p = self._params
        cache: dict = {}

        def conv(name, inp, stride):
            y, cols = conv2d_forward(inp, p[f"{name}.w"], p[f"{name}.b"], stride)
            if want_cache:
                cache[f"{name}.cols"] = cols
                cache[f"{name}.in_shape"] = inp.shape
            return y

        def relu(name, pre):
            if want_cache:
                cache[f"{name}.mask"] = pre > 0
            return np.maximum(pre, 0)

        e1 = relu("e1", conv("enc1", x, 2))
        e2 = relu("e2", conv("enc2", e1, 2))
        e3 = relu("e3", conv("enc3", e2, 2))
        d1 = relu("d1", conv("dec1", upsample2x_forward(e3), 1) + e2)
        d2 = relu("d2", conv("dec2", upsample2x_forward(d1), 1) + e1)
        d3 = relu("d3", conv("dec3", upsample2x_forward(d2), 1))
        logits = conv("head", d3, 1)
        return (logits, cache) if want_cache else logits

    def backward(self, cache: dict, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for the forward pass that produced `cache`."""
        p = self._params
        grads: dict[str, np.ndarray] = {}

        def conv_bwd(name, gy, stride):
            gx, gw, gb = conv2d_backward(
                gy, cache[f"{name}.cols"], p[f"{name}.w"], cache[f"{name}.in_shape"], stride
            )
            grads[f"{name}.w"] = gw
            grads[f"{name}.b"] = gb
            return gx

        g = np.ascontiguousarray(grad_logits, dtype=self.dtype)
        g = conv_bwd("head", g, 1)
        g = g * cache["d3.mask"]
        g = upsample2x_backward(conv_bwd("dec3", g, 1))
        g = g * cache["d2.mask"]  # grad at d2 relu input, feeds conv and skip
        g_e1_skip = g
        g = upsample2x_backward(conv_bwd("dec2", g, 1))
        g = g * cache["d1.mask"]
        g_e2_skip = g
        g = upsample2x_backward(conv_bwd("dec1", g, 1))
        g = g * cache["e3.mask"]
        g = conv_bwd("enc3", g, 2) + g_e2_skip
        g = g * cache["e2.mask"]
        g = conv_bwd("enc2", g, 2) + g_e1_skip
        g = g * cache["e1.mask"]
        conv_bwd("enc1", g, 2)  # input gradient discarded
        return grads

    def predict(self, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """Chunked inference without caches; returns logits [N, K, H, W]."""
        outs = [
            self.forward(images[i : i + batch_size])
            for i in range(0, images.shape[0], batch_size)
        ]
        return np.concatenate(outs, axis=0)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = set(self._params) ^ set(state)
            raise ValueError(f"state dict key mismatch: {sorted(missing)}")
        for k, v in state.items():
            if v.shape != self._params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self._params[k].shape}")
            self._params[k] = np.asarray(v, dtype=self.dtype).copy()

    def copy_weights_from(self, other: "ReferenceModel") -> None:
        """Direct weight copy (used for the periodic teacher update)."""
        self.load_state_dict(other.state_dict())

    def clone(self) -> "ReferenceModel":
        twin = ReferenceModel(
            self.num_classes, self.in_channels, self.widths, np.random.default_rng(0), self.dtype
        )
        twin.load_state_dict(self.state_dict())
        return twin


class SGD:
    """SGD with classical momentum and decoupled-from-biases weight decay.

    v <- momentum * v + grad (+ weight_decay * p for kernel weights);
    p <- p - lr * v. Bias vectors (names ending in ".b") are never decayed.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 1e-4):
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        for name in sorted(params):
            g = grads[name].astype(params[name].dtype)
            if self.weight_decay and name.endswith(".w"):
                g = g + self.weight_decay * params[name]
            v = self.velocity.get(name)
            v = g if v is None else self.momentum * v + g
            self.velocity[name] = v
            params[name] -= lr * v

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.velocity.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.velocity = {k: v.copy() for k, v in state.items()}
