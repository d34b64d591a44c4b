"""Layer kernels with cached forward state and exact backward passes.

Tensors are channels-first: images ``(batch, channels, height, width)``,
sequences ``(batch, channels, length)``, features ``(batch, features)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class StateError(RuntimeError):
    pass


def conv_out(n: int, kernel: int, stride: int, pad: int = 0) -> int:
    return (n + 2 * pad - kernel) // stride + 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    KINDS = ("conv2d", "conv1d_grouped", "relu", "tanh", "maxpool", "dense", "flatten", "concat")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for k, v in self.params.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0 and k != "pad":
                raise ValueError(f"{self.kind}: {k} must be positive, got {v}")
            if k == "pad" and v < 0:
                raise ValueError(f"{self.kind}: pad must be >= 0")

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("kind"), d)


class Layer:
    """Base class: subclasses fill ``params``/``grads`` and implement the passes."""

    kind = ""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


def _uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel, stride=1, pad=0, rng=None, dtype=np.float64):
        super().__init__()
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = in_channels * kernel * kernel
        rng = rng or np.random.default_rng(0)
        self.params["W"] = _uniform(rng, (filters, in_channels, kernel, kernel), fan_in, dtype)
        self.params["b"] = np.zeros(filters, dtype=dtype)
        self.zero_grad()

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv2d expects {self.in_channels} channels, got {c}")
        ho = conv_out(h, self.kernel, self.stride, self.pad)
        wo = conv_out(w, self.kernel, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d input {h}x{w} too small for kernel {self.kernel}")
        return (self.filters, ho, wo)

    def _wmat(self):
        # (F, C, k, k) -> (F, k*k*C), matching the column layout below
        return self.params["W"].transpose(0, 2, 3, 1).reshape(self.filters, -1)

    def forward(self, x):
        p, k, s = self.pad, self.kernel, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        b, c = x.shape[:2]
        ho = (xp.shape[2] - k) // s + 1
        wo = (xp.shape[3] - k) // s + 1
        # columns laid out (ky, kx, C, B, Ho, Wo): one block copy per kernel offset
        # split into stride phases first so every offset reads contiguous rows
        xt = xp.transpose(1, 0, 2, 3)
        phase = {(a, e): np.ascontiguousarray(xt[:, :, a::s, e::s])
                 for a in range(min(s, k)) for e in range(min(s, k))}
        cols = np.empty((k, k, c, b, ho, wo), dtype=xp.dtype)
        for i in range(k):
            for j in range(k):
                src = phase[i % s, j % s]
                cols[i, j] = src[:, :, i // s:i // s + ho, j // s:j // s + wo]
        cols = cols.reshape(k * k * c, b * ho * wo)
        out = (self._wmat() @ cols).reshape(self.filters, b, ho, wo)
        self._cache = (x.shape, xp.shape, cols)
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3)) + self.params["b"][:, None, None]

    def backward(self, dout):
        x_shape, xp_shape, cols = self._take_cache()
        k, s, p = self.kernel, self.stride, self.pad
        b, f, ho, wo = dout.shape
        c = self.in_channels
        d = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(f, -1)
        self.grads["W"] = (d @ cols.T).reshape(f, k, k, c).transpose(0, 3, 1, 2).copy()
        self.grads["b"] = dout.sum(axis=(0, 2, 3))
        dcols = (self._wmat().T @ d).reshape(k, k, c, b, ho, wo)
        hp, wp = xp_shape[2:]
        dxt = np.zeros((c, b, hp, wp), dtype=dout.dtype)
        for a in range(min(s, k)):
            for e in range(min(s, k)):
                # accumulate each stride phase densely, then write it back once
                acc = np.zeros((c, b, len(range(a, hp, s)), len(range(e, wp, s))), dtype=dout.dtype)
                for i in range(a, k, s):
                    for j in range(e, k, s):
                        acc[:, :, i // s:i // s + ho, j // s:j // s + wo] += dcols[i, j]
                dxt[:, :, a::s, e::s] = acc
        dxp = dxt.transpose(1, 0, 2, 3)
        if p:
            dxp = dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]
        return np.ascontiguousarray(dxp)


class Conv1DGrouped(Layer):
    """1-D convolution where each channel group is convolved independently.

    With ``groups`` equal to the number of input channels every accelerometer
    axis gets its own filter bank.
    """

    kind = "conv1d_grouped"

    def __init__(self, in_channels, filters, kernel, stride=1, groups=1, rng=None, dtype=np.float64):
        super().__init__()
        if in_channels % groups or filters % groups:
            raise ShapeError("channels and filters must be divisible by groups")
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride, self.groups = kernel, stride, groups
        cg = in_channels // groups
        rng = rng or np.random.default_rng(0)
        self.params["W"] = _uniform(rng, (filters, cg, kernel), cg * kernel, dtype)
        self.params["b"] = np.zeros(filters, dtype=dtype)
        self.zero_grad()

    def out_shape(self, in_shape):
        c, n = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv1d_grouped expects {self.in_channels} channels, got {c}")
        lo = conv_out(n, self.kernel, self.stride)
        if lo < 1:
            raise ShapeError(f"conv1d_grouped input length {n} too short for kernel {self.kernel}")
        return (self.filters, lo)

    def forward(self, x):
        g, k, s = self.groups, self.kernel, self.stride
        b = x.shape[0]
        cg, og = self.in_channels // g, self.filters // g
        patches = sliding_window_view(x, k, axis=2)[:, :, ::s]  # (B,C,Lo,k)
        lo = patches.shape[2]
        cols = patches.reshape(b, g, cg, lo, k).transpose(0, 1, 3, 2, 4).reshape(b, g, lo, cg * k)
        W = self.params["W"].reshape(g, og, cg * k)
        out = np.matmul(cols, W.transpose(0, 2, 1))  # (B,g,Lo,og)
        self._cache = (x.shape, cols)
        return out.transpose(0, 1, 3, 2).reshape(b, self.filters, lo) + self.params["b"][:, None]

    def backward(self, dout):
        x_shape, cols = self._take_cache()
        g, k, s = self.groups, self.kernel, self.stride
        b, _, lo = dout.shape
        cg, og = self.in_channels // g, self.filters // g
        W = self.params["W"].reshape(g, og, cg * k)
        d = dout.reshape(b, g, og, lo)
        dW = np.matmul(d, cols).sum(axis=0)  # (g, og, cg*k)
        dcols = np.matmul(d.transpose(0, 1, 3, 2), W)  # (B,g,Lo,cg*k)
        dp = dcols.reshape(b, g, lo, cg, k).transpose(0, 1, 3, 2, 4).reshape(b, self.in_channels, lo, k)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for j in range(k):
            dx[:, :, j:j + s * (lo - 1) + 1:s] += dp[..., j]
        self.grads["W"] = dW.reshape(self.params["W"].shape)
        self.grads["b"] = dout.sum(axis=(0, 2))
        return dx


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return dout * self._take_cache()


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._take_cache()
        return dout * (1.0 - y * y)


class MaxPool(Layer):
    """Max pooling over the trailing 1 or 2 axes; ties go to the first maximum."""

    kind = "maxpool"

    def __init__(self, size=2, stride=2, dims=2):
        super().__init__()
        self.size, self.stride, self.dims = size, stride, dims

    def out_shape(self, in_shape):
        if len(in_shape) != self.dims + 1:
            raise ShapeError(f"maxpool{self.dims}d got input shape {in_shape}")
        spatial = tuple(conv_out(n, self.size, self.stride) for n in in_shape[1:])
        if min(spatial) < 1:
            raise ShapeError(f"maxpool input {in_shape} smaller than pool size {self.size}")
        return (in_shape[0],) + spatial

    def forward(self, x):
        p, s = self.size, self.stride
        axes = tuple(range(2, 2 + self.dims))
        win = sliding_window_view(x, (p,) * self.dims, axis=axes)
        win = win[(slice(None), slice(None)) + (slice(None, None, s),) * self.dims]
        out_spatial = win.shape[2:2 + self.dims]
        flat = win.reshape(win.shape[:2 + self.dims] + (p ** self.dims,))
        arg = flat.argmax(axis=-1)
        out = flat.max(axis=-1)
        self._cache = (x.shape, arg, out_spatial)
        return out

    def backward(self, dout):
        x_shape, arg, out_spatial = self._take_cache()
        p, s = self.size, self.stride
        dx = np.zeros(x_shape, dtype=dout.dtype)
        for idx in range(p ** self.dims):
            offs = np.unravel_index(idx, (p,) * self.dims)
            sl = tuple(slice(o, o + s * (n - 1) + 1, s) for o, n in zip(offs, out_spatial))
            dx[(slice(None), slice(None)) + sl] += dout * (arg == idx)
        return dx


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._take_cache())


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, units, rng=None, dtype=np.float64):
        super().__init__()
        self.in_features, self.units = in_features, units
        rng = rng or np.random.default_rng(0)
        self.params["W"] = _uniform(rng, (in_features, units), in_features, dtype)
        self.params["b"] = np.zeros(units, dtype=dtype)
        self.zero_grad()

    def out_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ShapeError(f"dense expects ({self.in_features},), got {in_shape}")
        return (self.units,)

    def forward(self, x):
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._take_cache()
        self.grads["W"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class Concat(Layer):
    """Joins flattened feature blocks along the feature axis."""

    kind = "concat"

    def forward(self, xs):
        self._cache = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, dout):
        widths = self._take_cache()
        return np.split(dout, np.cumsum(widths)[:-1], axis=1)


def build_layer(spec: LayerSpec, in_shape, rng, dtype):
    """Instantiate ``spec`` for inputs of ``in_shape`` (without batch axis)."""
    p = spec.params
    if spec.kind == "conv2d":
        layer = Conv2D(in_shape[0], p["filters"], p["kernel"], p.get("stride", 1),
                       p.get("pad", 0), rng=rng, dtype=dtype)
    elif spec.kind == "conv1d_grouped":
        groups = p.get("groups", in_shape[0])
        layer = Conv1DGrouped(in_shape[0], p["filters_per_group"] * groups, p["kernel"],
                              p.get("stride", 1), groups, rng=rng, dtype=dtype)
    elif spec.kind == "relu":
        layer = ReLU()
    elif spec.kind == "tanh":
        layer = Tanh()
    elif spec.kind == "maxpool":
        layer = MaxPool(p.get("size", 2), p.get("stride", 2), dims=len(in_shape) - 1)
    elif spec.kind == "flatten":
        layer = Flatten()
    elif spec.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense needs flat input, got {in_shape}")
        layer = Dense(in_shape[0], p["units"], rng=rng, dtype=dtype)
    else:
        raise ValueError(f"{spec.kind} cannot be built inside a sequential stack")
    return layer, layer.out_shape(tuple(in_shape))
