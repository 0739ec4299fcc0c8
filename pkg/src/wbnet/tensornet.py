"""Small differentiable layer kit with hand-written reverse passes.

Tensors are batched: Morton tensors are ``[batch, cells, channels]`` and
images ``[batch, height, width, channels]``. Every ``*_forward`` returns
``(output, cache)`` and the matching ``*_backward(dy, cache)`` returns the
input gradient followed by parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def glorot_init(shape, rng: np.random.Generator, fans=None, dtype=np.float64) -> np.ndarray:
    """Glorot-uniform sample on ``+-sqrt(6 / (fan_in + fan_out))``.

    Fans default from the layout: ``[out, in]``, ``[groups, out, in]``
    (per-patch fans) or a conv kernel ``[kh, kw, c_in, c_out]``.
    """
    shape = tuple(int(v) for v in shape)
    if fans is None:
        if len(shape) in (2, 3):
            fans = (shape[-1], shape[-2])
        elif len(shape) == 4:
            rf = shape[0] * shape[1]
            fans = (rf * shape[2], rf * shape[3])
        else:
            raise ValueError(f"cannot derive fans from shape {shape}")
    fan_in, fan_out = fans
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# --- patchwise affine -----------------------------------------------------


def patch_affine_forward(W, b, x, k: int = 1):
    """Independent affine map per group of ``k`` consecutive Morton cells.

    ``W``: ``[g, out, k*c_in]``, ``b``: ``[g, out]``, ``x``: ``[B, g*k, c_in]``.
    Returns ``[B, g, out]``.
    """
    B, P, C = x.shape
    g, out, fan = W.shape
    if P % k or P // k != g or fan != k * C or b.shape != (g, out):
        raise ValueError(f"patch_affine: input {x.shape}, k={k} does not match weights {W.shape}")
    xg = x.reshape(B, g, fan)
    # batched over groups so each group is one BLAS matmul
    y = np.matmul(xg.transpose(1, 0, 2), W.transpose(0, 2, 1)).transpose(1, 0, 2) + b
    return y, (xg, W, x.shape)


def patch_affine_backward(dy, cache):
    xg, W, xshape = cache
    dyg = dy.transpose(1, 0, 2)
    dW = np.matmul(dyg.transpose(0, 2, 1), xg.transpose(1, 0, 2))
    db = dy.sum(axis=0)
    dx = np.matmul(dyg, W).transpose(1, 0, 2).reshape(xshape)
    return dx, dW, db


# --- activation / residual unit -------------------------------------------


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def resnet_unit_forward(W, b, x):
    """``x + relu(patch_affine_{k=1}(x))``; the affine preserves channels."""
    if W.shape[1] != W.shape[2]:
        raise ValueError("residual unit needs a channel-preserving affine map")
    z, c_aff = patch_affine_forward(W, b, x, 1)
    a, mask = relu_forward(z)
    return x + a, (c_aff, mask)


def resnet_unit_backward(dy, cache):
    c_aff, mask = cache
    dx, dW, db = patch_affine_backward(relu_backward(dy, mask), c_aff)
    return dy + dx, dW, db


# --- 2D convolution -------------------------------------------------------


def conv2d_forward(K, b, x):
    """Same-padded cross-correlation. ``K``: ``[kh, kw, c_in, c_out]``, ``x``: ``[B, H, W, c_in]``."""
    kh, kw, cin, cout = K.shape
    if x.ndim != 4 or x.shape[-1] != cin or b.shape != (cout,):
        raise ValueError(f"conv2d: input {x.shape} does not match kernel {K.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d kernel sides must be odd")
    B, H, W_, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    y = np.zeros((B, H, W_, cout), dtype=np.result_type(x, K))
    for i in range(kh):
        for j in range(kw):
            y += xp[:, i : i + H, j : j + W_, :] @ K[i, j]
    return y + b, (xp, K, x.shape)


def conv2d_backward(dy, cache):
    xp, K, xshape = cache
    kh, kw, cin, cout = K.shape
    B, H, W_, _ = xshape
    ph, pw = kh // 2, kw // 2
    dK = np.zeros_like(K)
    dxp = np.zeros_like(xp, dtype=np.result_type(xp, dy))
    dy2 = dy.reshape(-1, cout)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, i : i + H, j : j + W_, :]
            dK[i, j] = win.reshape(-1, cin).T @ dy2
            dxp[:, i : i + H, j : j + W_, :] += dy @ K[i, j].T
    db = dy2.sum(axis=0)
    return dxp[:, ph : ph + H, pw : pw + W_, :], dK, db


# --- bookkeeping ----------------------------------------------------------


@dataclass
class Tape:
    """Ordered layer caches recorded by a forward pass, consumed in reverse."""

    entries: list = field(default_factory=list)

    def push(self, kind: str, name, cache) -> None:
        self.entries.append((kind, name, cache))

    def __len__(self):
        return len(self.entries)
