"""Forward ops and their adjoints for the tensor engine.

All ops accept and return :class:`~hsimvt.tensor.Tensor`. Convolutions and
pooling take patches laid out as (H, W, C) or batched (N, H, W, C),
channels last. While a :class:`~hsimvt.tensor.GradGraph` is active and any
input requires a gradient, each op records one adjoint closure on the tape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError
from .tensor import Tensor, active_graph


def _recording(*tensors):
    g = active_graph()
    if g is None:
        return None, False
    return g, any(t.requires_grad for t in tensors)


def conv3d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Correlation with 3-D kernels sliding over rows, columns and channels.

    Each of the K kernels emits a full C-channel map (channel axis is
    zero-padded like the spatial axes), and the K maps are concatenated
    kernel-major along the channel axis: output (..., H, W, K*C).
    """
    xd = x.data
    single = xd.ndim == 3
    if single:
        xd = xd[None]
    if xd.ndim != 4:
        raise DimensionError(f"conv3d input must be (H,W,C) or (N,H,W,C), got {x.data.shape}")
    kd = kernels.data
    if kd.ndim != 4:
        raise DimensionError(f"conv3d kernels must be (K,k1,k2,k3), got {kd.shape}")
    nk, k1, k2, k3 = kd.shape
    if k1 % 2 == 0 or k2 % 2 == 0 or k3 % 2 == 0:
        raise ConfigError(f"conv3d kernel extents must be odd, got {(k1, k2, k3)}")
    if bias.data.shape != (nk,):
        raise DimensionError(f"conv3d bias must be ({nk},), got {bias.data.shape}")
    n, h, w, c = xd.shape

    p1, p2, p3 = k1 // 2, k2 // 2, k3 // 2
    xp = np.pad(xd, ((0, 0), (p1, p1), (p2, p2), (p3, p3)))
    win = sliding_window_view(xp, (k1, k2, k3), axis=(1, 2, 3))
    cols = np.ascontiguousarray(win).reshape(n * h * w * c, k1 * k2 * k3)
    wmat = kd.reshape(nk, -1)
    prod = cols @ wmat.T  # (n*h*w*c, nk)
    out = prod.reshape(n, h, w, c, nk).transpose(0, 1, 2, 4, 3).reshape(n, h, w, nk * c)
    out = out + np.repeat(bias.data, c)
    if single:
        out = out[0]

    result = Tensor(out)
    g, track = _recording(x, kernels, bias)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            god = go[None] if single else go
            gom = god.reshape(n, h, w, nk, c).transpose(0, 1, 2, 4, 3).reshape(-1, nk)
            if kernels.requires_grad:
                kernels.accumulate_grad((gom.T @ cols).reshape(kd.shape))
            if bias.requires_grad:
                bias.accumulate_grad(gom.sum(axis=0))
            if x.requires_grad:
                gwin = (gom @ wmat).reshape(n, h, w, c, k1, k2, k3)
                gxp = np.zeros_like(xp)
                for i in range(k1):
                    for j in range(k2):
                        for l in range(k3):
                            gxp[:, i:i + h, j:j + w, l:l + c] += gwin[:, :, :, :, i, j, l]
                gx = gxp[:, p1:p1 + h, p2:p2 + w, p3:p3 + c]
                x.accumulate_grad(gx[0] if single else gx)

        g.record(bwd)
    return result


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Spatial correlation over all input channels; output (..., H, W, K)."""
    xd = x.data
    single = xd.ndim == 3
    if single:
        xd = xd[None]
    if xd.ndim != 4:
        raise DimensionError(f"conv2d input must be (H,W,C) or (N,H,W,C), got {x.data.shape}")
    kd = kernels.data
    if kd.ndim != 4:
        raise DimensionError(f"conv2d kernels must be (K,kh,kw,C), got {kd.shape}")
    nk, kh, kw, cin = kd.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel extents must be odd, got {(kh, kw)}")
    if xd.shape[3] != cin:
        raise DimensionError(f"conv2d input has {xd.shape[3]} channels, kernels expect {cin}")
    if bias.data.shape != (nk,):
        raise DimensionError(f"conv2d bias must be ({nk},), got {bias.data.shape}")
    n, h, w, _ = xd.shape

    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (n,h,w,cin,kh,kw)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, kh * kw * cin)
    wmat = kd.reshape(nk, -1)  # rows in (kh,kw,cin) order, matching cols
    out = (cols @ wmat.T + bias.data).reshape(n, h, w, nk)
    if single:
        out = out[0]

    result = Tensor(out)
    g, track = _recording(x, kernels, bias)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            god = go[None] if single else go
            gom = god.reshape(-1, nk)
            if kernels.requires_grad:
                kernels.accumulate_grad((gom.T @ cols).reshape(kd.shape))
            if bias.requires_grad:
                bias.accumulate_grad(gom.sum(axis=0))
            if x.requires_grad:
                gwin = (gom @ wmat).reshape(n, h, w, kh, kw, cin)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i:i + h, j:j + w, :] += gwin[:, :, :, i, j, :]
                gx = gxp[:, ph:ph + h, pw:pw + w, :]
                x.accumulate_grad(gx[0] if single else gx)

        g.record(bwd)
    return result


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """out[i, j] = sum_k x[i, k] * weight[k, j] + bias[j]."""
    xd, wd, bd = x.data, weight.data, bias.data
    if xd.ndim != 2 or wd.ndim != 2:
        raise DimensionError(f"affine expects 2-D input and weight, got {xd.shape} and {wd.shape}")
    if xd.shape[1] != wd.shape[0] or bd.shape != (wd.shape[1],):
        raise DimensionError(f"affine shapes disagree: {xd.shape} @ {wd.shape} + {bd.shape}")
    result = Tensor(xd @ wd + bd)
    g, track = _recording(x, weight, bias)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            if x.requires_grad:
                x.accumulate_grad(go @ wd.T)
            if weight.requires_grad:
                weight.accumulate_grad(xd.T @ go)
            if bias.requires_grad:
                bias.accumulate_grad(go.sum(axis=0))

        g.record(bwd)
    return result


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix product over the last two axes; ``b`` may be unbatched (2-D).

    Leading batch axes of ``a`` and ``b`` must match exactly when both are
    batched; a 2-D ``b`` broadcasts over ``a``'s batch.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul operands must have ndim >= 2")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"matmul batch shapes disagree: {ad.shape} vs {bd.shape}")
    bm = np.swapaxes(bd, -1, -2) if transpose_b else bd
    if ad.shape[-1] != bm.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {ad.shape} vs {bd.shape}")
    result = Tensor(ad @ bm)
    g, track = _recording(a, b)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            if a.requires_grad:
                a.accumulate_grad(go @ np.swapaxes(bm, -1, -2))
            if b.requires_grad:
                if transpose_b:
                    gb = np.swapaxes(go, -1, -2) @ ad
                else:
                    gb = np.swapaxes(ad, -1, -2) @ go
                if bd.ndim == 2 and gb.ndim > 2:
                    gb = gb.reshape(-1, *bd.shape).sum(axis=0)
                b.accumulate_grad(gb)

        g.record(bwd)
    return result


def softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis (row-max subtracted)."""
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    result = Tensor(y)
    g, track = _recording(x)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            x.accumulate_grad(y * (go - (go * y).sum(axis=-1, keepdims=True)))

        g.record(bwd)
    return result


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x)."""
    xd = x.data
    result = Tensor(np.maximum(xd, 0))
    g, track = _recording(x)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            x.accumulate_grad(go * (xd > 0))

        g.record(bwd)
    return result


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shapes disagree: {a.data.shape} vs {b.data.shape}")
    result = Tensor(a.data + b.data)
    g, track = _recording(a, b)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            if a.requires_grad:
                a.accumulate_grad(go)
            if b.requires_grad:
                b.accumulate_grad(go)

        g.record(bwd)
    return result


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mul shapes disagree: {a.data.shape} vs {b.data.shape}")
    result = Tensor(a.data * b.data)
    g, track = _recording(a, b)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            if a.requires_grad:
                a.accumulate_grad(go * b.data)
            if b.requires_grad:
                b.accumulate_grad(go * a.data)

        g.record(bwd)
    return result


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar (dtype preserved)."""
    s = float(s)
    result = Tensor(x.data * s)
    g, track = _recording(x)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            x.accumulate_grad(go * s)

        g.record(bwd)
    return result


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    result = Tensor(x.data.reshape(shape))
    g, track = _recording(x)
    if track:
        result.requires_grad = True
        orig = x.data.shape

        def bwd():
            go = result.grad
            if go is None:
                return
            x.accumulate_grad(go.reshape(orig))

        g.record(bwd)
    return result


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along an existing axis."""
    tensors = list(tensors)
    result = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    g, track = _recording(*tensors)
    if track:
        result.requires_grad = True
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def bwd():
            go = result.grad
            if go is None:
                return
            moved = np.moveaxis(go, axis, 0)
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t.accumulate_grad(np.moveaxis(moved[lo:hi], 0, axis))

        g.record(bwd)
    return result


def box_mean(x: Tensor, rows, cols) -> Tensor:
    """Per-channel mean over the spatial window rows[0]:rows[1] x cols[0]:cols[1].

    Input (N, H, W, C) -> output (N, C). The window is summed with a fold
    (element i paired with element n-1-i of the row-major flattening) so the
    result is bit-identical when the window content is reversed on both
    spatial axes; plain sequential summation would not be.
    """
    xd = x.data
    if xd.ndim != 4:
        raise DimensionError(f"box_mean input must be (N,H,W,C), got {xd.shape}")
    r0, r1 = rows
    c0, c1 = cols
    n_batch, h, w, c = xd.shape
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise DimensionError(f"box ({rows}, {cols}) outside spatial extent {(h, w)}")
    block = xd[:, r0:r1, c0:c1, :]
    count = (r1 - r0) * (c1 - c0)
    flat = block.reshape(n_batch, count, c)
    half = count // 2
    if half:
        total = (flat[:, :half] + flat[:, count - 1:count - 1 - half:-1]).sum(axis=1)
        if count % 2:
            total = total + flat[:, half]
    else:
        total = flat[:, 0].copy()
    result = Tensor(total / count)
    g, track = _recording(x)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            gx = np.zeros_like(xd)
            gx[:, r0:r1, c0:c1, :] = (go / count)[:, None, None, :]
            x.accumulate_grad(gx)

        g.record(bwd)
    return result


def tile_vector(v: Tensor, n: int) -> Tensor:
    """Repeat a length-C vector into an (n, 1, C) block."""
    vd = v.data
    if vd.ndim != 1:
        raise DimensionError(f"tile_vector expects a vector, got shape {vd.shape}")
    result = Tensor(np.ascontiguousarray(np.broadcast_to(vd, (n, 1, vd.shape[0]))))
    g, track = _recording(v)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            v.accumulate_grad(go.sum(axis=(0, 1)))

        g.record(bwd)
    return result


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    result = Tensor(x.data.sum())
    g, track = _recording(x)
    if track:
        result.requires_grad = True

        def bwd():
            go = result.grad
            if go is None:
                return
            x.accumulate_grad(np.full_like(x.data, go))

        g.record(bwd)
    return result
