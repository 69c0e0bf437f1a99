"""Forward/backward kernels for the 1D CNN.

Every layer keeps its parameters in ``self.params`` and, after a backward
pass, the matching gradients in ``self.grads``. ``forward(x, train=True)``
caches whatever the backward pass needs. Convolutions are computed as one
matmul per kernel tap over a strided slice of the padded input, which keeps
both directions as plain BLAS calls with a fixed reduction order.
"""

from __future__ import annotations

import numpy as np


class Layer:
    """Minimal layer interface; parameter-free layers leave the dicts empty."""

    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv1D(Layer):
    """Dilated 1D convolution over (batch, channels, length) input.

    Causal mode pads on the left only, so output position t never sees input
    positions beyond t. Plain mode pads symmetrically (same-size output for
    odd kernels at stride 1).
    """

    def __init__(self, name: str, in_ch: int, out_ch: int, kernel: int = 3,
                 dilation: int = 1, stride: int = 1, causal: bool = True,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if min(in_ch, out_ch, kernel, dilation, stride) < 1:
            raise ValueError("conv dimensions must be >= 1")
        self.name = name
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.dilation, self.stride = kernel, dilation, stride
        self.causal = causal
        reach = (kernel - 1) * dilation
        self.pad_l = reach if causal else reach // 2
        self.pad_r = 0 if causal else reach - self.pad_l
        rng = rng or np.random.default_rng(0)
        scale = 1.0 / np.sqrt(in_ch * kernel)
        self.params["w"] = rng.uniform(-scale, scale, (out_ch, in_ch, kernel))
        self.params["b"] = np.zeros(out_ch)
        self._cache = None

    def out_len(self, length: int) -> int:
        span = (self.kernel - 1) * self.dilation + 1
        return (length + self.pad_l + self.pad_r - span) // self.stride + 1

    def _tap(self, t: int, l_out: int) -> slice:
        start = t * self.dilation
        return slice(start, start + self.stride * (l_out - 1) + 1, self.stride)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ValueError(f"{self.name}: expected (B, {self.in_ch}, L) input,"
                             f" got {x.shape}")
        l_out = self.out_len(x.shape[2])
        if l_out < 1:
            raise ValueError(f"{self.name}: input shorter than kernel span")
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad_l, self.pad_r)))
        w = self.params["w"]
        y = np.zeros((x.shape[0], self.out_ch, l_out))
        for t in range(self.kernel):
            y += np.matmul(w[:, :, t], xp[:, :, self._tap(t, l_out)])
        y += self.params["b"][None, :, None]
        if train:
            self._cache = (xp, l_out)
        return y

    def backward(self, dy):
        xp, l_out = self._cache
        w = self.params["w"]
        dw = np.empty_like(w)
        dxp = np.zeros_like(xp)
        for t in range(self.kernel):
            tap = self._tap(t, l_out)
            dw[:, :, t] = np.tensordot(dy, xp[:, :, tap], axes=([0, 2], [0, 2]))
            dxp[:, :, tap] += np.matmul(w[:, :, t].T, dy)
        self.grads["w"] = dw
        self.grads["b"] = dy.sum(axis=(0, 2))
        return dxp[:, :, self.pad_l: xp.shape[2] - self.pad_r]


class ReLU(Layer):
    name = "relu"

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dy):
        return dy * self._mask


class MaxPool2(Layer):
    """Non-overlapping width-2 max pooling; an odd trailing element is dropped."""

    name = "maxpool2"

    def forward(self, x, train=False):
        b, c, length = x.shape
        keep = 2 * (length // 2)
        pairs = x[:, :, :keep].reshape(b, c, length // 2, 2)
        idx = pairs.argmax(axis=3)
        if train:
            self._idx, self._len = idx, length
        return np.take_along_axis(pairs, idx[..., None], axis=3)[..., 0]

    def backward(self, dy):
        b, c, half = dy.shape
        pairs = np.zeros((b, c, half, 2))
        np.put_along_axis(pairs, self._idx[..., None], dy[..., None], axis=3)
        dx = np.zeros((b, c, self._len))
        dx[:, :, :2 * half] = pairs.reshape(b, c, 2 * half)
        return dx


class GlobalAvgPool(Layer):
    name = "gap"

    def forward(self, x, train=False):
        self._len = x.shape[2]
        return x.mean(axis=2)

    def backward(self, dy):
        return np.broadcast_to((dy / self._len)[:, :, None],
                               dy.shape + (self._len,))


class Dense(Layer):
    def __init__(self, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if min(in_dim, out_dim) < 1:
            raise ValueError("dense dimensions must be >= 1")
        self.name = name
        rng = rng or np.random.default_rng(0)
        scale = 1.0 / np.sqrt(in_dim)
        self.params["w"] = rng.uniform(-scale, scale, (in_dim, out_dim))
        self.params["b"] = np.zeros(out_dim)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.params["w"].shape[0]:
            raise ValueError(f"{self.name}: expected (B, {self.params['w'].shape[0]})"
                             f" input, got {x.shape}")
        if train:
            self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        self.grads["w"] = self._x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["w"].T
