"""Minimal reverse-mode tensor engine.

Real-valued N-d tensors backed by float64 numpy arrays, with exactly the
layer set the denoising network needs: dense and partial 3x3 convolutions,
2x2 max pooling, nearest-neighbour upsampling, channel concatenation, ReLU,
inverted dropout and a masked squared-error reduction.  Convolutions are
evaluated as one BLAS matmul over a channel-major patch matrix, which is
what makes desk-scale training affordable in pure numpy.

Gradient tapes are single use: call ``backward()`` once per forward pass.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "conv2d",
    "pconv2d",
    "maxpool2",
    "upsample_nearest2",
    "concat_channels",
    "relu",
    "dropout",
    "masked_sq_error",
    "weighted_sum",
]


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # first arrival adopts the buffer (backward closures hand over fresh
        # arrays or disjoint views); later arrivals add in place
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g if self.grad.base is not None else np.add(
                self.grad, g, out=self.grad)

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph (once)."""
        if self.data.size != 1:
            raise ValueError(f"backward() expects a scalar loss, got shape {self.data.shape}")
        if self._backward_done:
            raise RuntimeError("backward() already ran on this tape; re-run the forward pass")
        self._backward_done = True

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def _check_4d(t: Tensor, name: str) -> None:
    if t.data.ndim != 4:
        raise ValueError(f"{name} must be 4-d (N,C,H,W), got shape {t.data.shape}")


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """Channel-major patch matrix: (C*k*k, N*H_out*W_out)."""
    n, c, h, w = x.shape
    if pad:
        x = _pad2d(x, pad)
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    # (N,C,Ho,Wo,k,k) -> (C,k,k,N,Ho,Wo); the reshape copies in streaming order
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, pad: int,
            ho: int, wo: int) -> np.ndarray:
    """Scatter-add the patch-matrix gradient back onto the input grid."""
    n, c, h, w = shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    d = cols.reshape(c, k, k, n, ho, wo)
    for u in range(k):
        for v in range(k):
            dxp[:, :, u:u + ho, v:v + wo] += d[:, u, v].transpose(1, 0, 2, 3)
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + w]
    return dxp


_INBOUNDS_CACHE: dict[tuple[int, int, int, int, int], np.ndarray] = {}


def _inbounds_counts(n: int, h: int, w: int, k: int, pad: int) -> np.ndarray:
    """Per-window count of positions inside the unpadded image (cached)."""
    key = (n, h, w, k, pad)
    hit = _INBOUNDS_CACHE.get(key)
    if hit is None:
        hit = _im2col(np.ones((n, 1, h, w)), k, pad).sum(axis=0)
        _INBOUNDS_CACHE[key] = hit
    return hit


def _conv_geometry(x: Tensor, kernel: Tensor, bias: Tensor, padding: int):
    _check_4d(x, "input")
    _check_4d(kernel, "kernel")
    n, c_in, h, w = x.data.shape
    c_out, kc, kh, kw = kernel.data.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {kh}x{kw}")
    if kc != c_in:
        raise ValueError(f"kernel expects {kc} input channels, input has {c_in}")
    if bias.data.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.data.shape}")
    if padding < 0:
        raise ValueError("padding must be non-negative")
    ho = h + 2 * padding - kh + 1
    wo = w + 2 * padding - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"output spatial size {ho}x{wo} is empty")
    return n, c_in, h, w, c_out, kh, ho, wo


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int = 1) -> Tensor:
    """Cross-correlate ``x`` (N,C_in,H,W) with ``kernel`` (C_out,C_in,k,k) plus bias."""
    n, c_in, h, w, c_out, k, ho, wo = _conv_geometry(x, kernel, bias, padding)
    cols = _im2col(x.data, k, padding)
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    out = wmat @ cols + bias.data[:, None]
    out = out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g: np.ndarray) -> None:
        gm = g.transpose(1, 0, 2, 3).reshape(c_out, n * ho * wo)
        if bias.requires_grad:
            bias._accumulate(gm.sum(axis=1))
        if kernel.requires_grad:
            kernel._accumulate((gm @ cols.T).reshape(kernel.data.shape))
        if x.requires_grad:
            x._accumulate(_col2im(wmat.T @ gm, x.data.shape, k, padding, ho, wo))

    return _result(out, (x, kernel, bias), backward)


def pconv2d(x: Tensor, mask: Tensor, kernel: Tensor, bias: Tensor,
            padding: int = 1) -> tuple[Tensor, Tensor]:
    """Partial convolution over a binary single-channel mask.

    Each window sums only unmasked inputs and rescales by
    (in-bounds window positions) / (unmasked window positions), so a full
    mask reproduces ``conv2d`` exactly, padding included.  Windows with no
    unmasked entry output zero.  Returns the output and the propagated mask
    (1 where the window saw any valid entry).  The mask is a constant:
    gradients flow to input, kernel and bias only.
    """
    n, c_in, h, w, c_out, k, ho, wo = _conv_geometry(x, kernel, bias, padding)
    md = mask.data
    if md.shape != (n, 1, h, w):
        raise ValueError(f"mask must have shape ({n},1,{h},{w}), got {md.shape}")
    if not np.all((md == 0.0) | (md == 1.0)):
        raise ValueError("mask entries must be 0 or 1")

    masked = x.data * md
    cols = _im2col(masked, k, padding)
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    raw = wmat @ cols

    mask_cols = _im2col(md, k, padding)
    msum = mask_cols.sum(axis=0)
    inbounds = _inbounds_counts(n, h, w, k, padding)
    pos = msum > 0.0
    ratio = np.where(pos, inbounds / np.where(pos, msum, 1.0), 0.0)

    out = raw * ratio[None, :] + bias.data[:, None] * pos[None, :]
    out = out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)
    new_mask = pos.astype(np.float64).reshape(1, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(g: np.ndarray) -> None:
        gm = g.transpose(1, 0, 2, 3).reshape(c_out, n * ho * wo)
        if bias.requires_grad:
            bias._accumulate((gm * pos[None, :]).sum(axis=1))
        graw = gm * ratio[None, :]
        if kernel.requires_grad:
            kernel._accumulate((graw @ cols.T).reshape(kernel.data.shape))
        if x.requires_grad:
            dmasked = _col2im(wmat.T @ graw, x.data.shape, k, padding, ho, wo)
            x._accumulate(dmasked * md)

    return _result(out, (x, kernel, bias), backward), Tensor(new_mask)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient goes to the first max per window."""
    _check_4d(x, "input")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    # windows flattened in row-major order so argmax picks the first maximum
    win = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            onehot = idx[..., None] == np.arange(4)
            gw = g[..., None] * onehot
            gx = gw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            x._accumulate(gx)

    return _result(out, (x,), backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Replicate every element into a 2x2 block."""
    _check_4d(x, "input")
    n, c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _result(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis, ``a`` first."""
    _check_4d(a, "first operand")
    _check_4d(b, "second operand")
    na, ca, ha, wa = a.data.shape
    nb, cb, hb, wb = b.data.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ValueError(f"operands disagree outside the channel axis: {a.data.shape} vs {b.data.shape}")
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return _result(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    out = np.maximum(x.data, 0.0)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    return _result(out, (x,), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = x.data * keep

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * keep)

    return _result(out, (x,), backward)


def masked_sq_error(pred: Tensor, target: Tensor, weight: Tensor) -> Tensor:
    """Scalar sum of weight * (pred - target)**2; differentiates w.r.t. pred.

    ``target`` and ``weight`` are treated as constants.
    """
    if pred.data.shape != target.data.shape or pred.data.shape != weight.data.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.data.shape}, target {target.data.shape}, "
            f"weight {weight.data.shape}"
        )
    wd = weight.data
    if not np.all((wd == 0.0) | (wd == 1.0)):
        raise ValueError("weight entries must be 0 or 1")
    diff = pred.data - target.data
    out = np.sum(wd * diff * diff)

    def backward(g: np.ndarray) -> None:
        if pred.requires_grad:
            pred._accumulate(2.0 * g * wd * diff)

    return _result(np.asarray(out), (pred,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum(weights * x) for a constant weight array (linear functional)."""
    wd = np.asarray(weights, dtype=np.float64)
    if wd.shape != x.data.shape:
        raise ValueError(f"weights shape {wd.shape} does not match tensor shape {x.data.shape}")
    out = np.sum(wd * x.data)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * wd)

    return _result(np.asarray(out), (x,), backward)
