"""Minimal dense tensor engine: the kernels behind the extractor and the scoring head.

Tensors are immutable, row-major float32 buffers with a precision tag. F16 is
emulated: values are stored widened to float32 but rounded through IEEE binary16
on construction and after every op, so precision lowering has deterministic,
hardware-independent semantics. All ops are pure functions returning new tensors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

F32 = "f32"
F16 = "f16"

Triple = Union[int, Sequence[int]]


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent; message names the offending axis."""


def round_f16(a: np.ndarray) -> np.ndarray:
    """Round a float array to the nearest binary16 value (ties to even), widened back."""
    return a.astype(np.float16).astype(np.float32)


@dataclass(frozen=True)
class Tensor:
    """Immutable n-dimensional array with an element precision tag."""

    data: np.ndarray
    precision: str = F32

    def __post_init__(self) -> None:
        if self.precision not in (F32, F16):
            raise ValueError(f"unknown precision {self.precision!r}")
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        if self.precision == F16:
            arr = round_f16(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, precision: str) -> "Tensor":
        return Tensor(self.data, precision)


def tensor(data, precision: str = F32) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float32), precision)


def zeros(shape, precision: str = F32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), precision)


def _out_precision(*ts: Tensor) -> str:
    return F16 if any(t.precision == F16 for t in ts) else F32


def _triple(v: Triple, name: str) -> tuple:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"{name} must be an int or a 3-tuple, got {v!r}")
    return t


# ---------------------------------------------------------------------------
# raw ndarray kernels (shared with the graph executor; accumulate in float32)
# ---------------------------------------------------------------------------

def conv3d_workspace_elems(in_shape: tuple, out_shape: tuple, c: int, kernel: tuple, pad: tuple) -> int:
    """Scratch floats conv3d_raw wants: padded-input buffer + one im2col buffer."""
    n, _, d, h, w = in_shape
    _, o, od, oh, ow = out_shape
    pd, ph, pw = pad
    padded = n * c * (d + 2 * pd) * (h + 2 * ph) * (w + 2 * pw) if any(pad) else 0
    return padded + od * oh * ow * c * int(np.prod(kernel))


def conv3d_raw(
    x: np.ndarray,
    w: np.ndarray,
    b: Optional[np.ndarray],
    stride: tuple,
    pad: tuple,
    dilation: tuple,
    relu: bool = False,
    out: Optional[np.ndarray] = None,
    workspace: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Direct 3-D cross-correlation with zero padding on [N,C,D,H,W] input.

    `workspace` (flat float32, sized per conv3d_workspace_elems) makes the
    im2col buffer and matmul output reusable across calls instead of allocating
    fresh arrays; values are bitwise identical either way.
    """
    if x.ndim != 5:
        raise ShapeError(f"conv3d input must be 5-D [N,C,D,H,W], got {x.ndim}-D")
    if w.ndim != 5:
        raise ShapeError(f"conv3d weight must be 5-D [O,C,kd,kh,kw], got {w.ndim}-D")
    n, c, d, h, wid = x.shape
    o, cw, kd, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"channel axis mismatch: input C={c} vs weight C={cw}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"bias axis mismatch: expected ({o},), got {b.shape}")
    sd, sh, sw = stride
    pd, ph, pw = pad
    dd, dh, dw = dilation
    ed, eh, ew = (kd - 1) * dd + 1, (kh - 1) * dh + 1, (kw - 1) * dw + 1
    od = (d + 2 * pd - ed) // sd + 1
    oh = (h + 2 * ph - eh) // sh + 1
    ow = (wid + 2 * pw - ew) // sw + 1
    for axis, extent in (("depth", od), ("height", oh), ("width", ow)):
        if extent < 1:
            raise ShapeError(f"conv3d output {axis} axis collapses to {extent} (< 1)")
    rows, cols = od * oh * ow, c * kd * kh * kw
    pad_shape = (n, c, d + 2 * pd, h + 2 * ph, wid + 2 * pw)
    pad_elems = int(np.prod(pad_shape)) if (pd or ph or pw) else 0
    ws_ok = workspace is not None and workspace.size >= pad_elems + rows * cols
    if not (pd or ph or pw):
        xp = x  # zero padding is a no-op; skip the copy entirely
    elif ws_ok:
        xp = workspace[:pad_elems].reshape(pad_shape)
        # zero only the border slabs, then paste the interior
        if pd:
            xp[:, :, :pd] = 0.0
            xp[:, :, d + pd:] = 0.0
        if ph:
            xp[:, :, :, :ph] = 0.0
            xp[:, :, :, h + ph:] = 0.0
        if pw:
            xp[:, :, :, :, :pw] = 0.0
            xp[:, :, :, :, wid + pw:] = 0.0
        xp[:, :, pd:pd + d, ph:ph + h, pw:pw + wid] = x
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (ed, eh, ew), axis=(2, 3, 4))
    win = win[:, :, ::sd, ::sh, ::sw, ::dd, ::dh, ::dw]  # [n,c,od,oh,ow,kd,kh,kw]
    wmat = w.reshape(o, -1).T.copy()  # [c*kd*kh*kw, o]
    if out is None:
        out = np.empty((n, o, od, oh, ow), dtype=np.float32)
    col_buf = None
    if ws_ok:
        col_buf = workspace[pad_elems:pad_elems + rows * cols].reshape(od, oh, ow, c, kd, kh, kw)
    for i in range(n):  # bound im2col temp memory to one batch item
        if col_buf is not None:
            np.copyto(col_buf, win[i].transpose(1, 2, 3, 0, 4, 5, 6))
            col = col_buf.reshape(rows, cols)
        else:
            # ascontiguousarray keeps the matmul on the contiguous-sgemm path even
            # when reshape could alias (degenerate kernels), so results do not
            # depend on whether the im2col buffer is pooled
            col = np.ascontiguousarray(win[i].transpose(1, 2, 3, 0, 4, 5, 6)).reshape(rows, cols)
        y = col @ wmat
        if b is not None:
            y += b
        if relu:
            np.maximum(y, 0.0, out=y)
        out[i] = y.T.reshape(o, od, oh, ow)
    return out


def conv1d_raw(
    x: np.ndarray,
    w: np.ndarray,
    dilation: int,
    b: Optional[np.ndarray] = None,
    relu: bool = False,
    out: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Same-length dilated cross-correlation on [C,T] input, weight [O,C,k], k odd."""
    if x.ndim != 2:
        raise ShapeError(f"conv1d input must be 2-D [C,T], got {x.ndim}-D")
    if w.ndim != 3:
        raise ShapeError(f"conv1d weight must be 3-D [O,C,k], got {w.ndim}-D")
    c, t = x.shape
    o, cw, k = w.shape
    if c != cw:
        raise ShapeError(f"channel axis mismatch: input C={c} vs weight C={cw}")
    if k % 2 == 0:
        raise ShapeError(f"even kernel size k={k}: symmetric same-padding undefined")
    if t < 1:
        raise ShapeError("temporal axis must have extent >= 1")
    half = (k - 1) * dilation // 2
    xp = np.pad(x, ((0, 0), (half, half)))
    eff = (k - 1) * dilation + 1
    win = sliding_window_view(xp, eff, axis=1)[:, :, ::dilation]  # [c,t,k]
    col = win.transpose(1, 0, 2).reshape(t, c * k)
    y = col @ w.reshape(o, -1).T  # [t,o]
    if b is not None:
        y += b
    if relu:
        np.maximum(y, 0.0, out=y)
    res = y.T
    if out is not None:
        out[...] = res
        return out
    return np.ascontiguousarray(res)


def linear_raw(
    x: np.ndarray,
    w: np.ndarray,
    b: Optional[np.ndarray] = None,
    relu: bool = False,
    out: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Affine map on the trailing axis: x[...,I] @ w[O,I]^T (+ b)."""
    if w.ndim != 2:
        raise ShapeError(f"linear weight must be 2-D [O,I], got {w.ndim}-D")
    o, i = w.shape
    if x.shape[-1] != i:
        raise ShapeError(f"trailing axis mismatch: input I={x.shape[-1]} vs weight I={i}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"bias axis mismatch: expected ({o},), got {b.shape}")
    y = x @ w.T
    if b is not None:
        y += b
    if relu:
        np.maximum(y, 0.0, out=y)
    if out is not None:
        out[...] = y
        return out
    return y


def softmax_raw(x: np.ndarray, axis: int) -> np.ndarray:
    if np.isnan(x).any():
        warnings.warn("softmax input contains NaN; propagating", RuntimeWarning)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def maxpool3d_raw(x: np.ndarray, kernel: tuple, stride: tuple) -> np.ndarray:
    if x.ndim != 5:
        raise ShapeError(f"max_pool3d input must be 5-D, got {x.ndim}-D")
    kd, kh, kw = kernel
    sd, sh, sw = stride
    n, c, d, h, w = x.shape
    od, oh, ow = (d - kd) // sd + 1, (h - kh) // sh + 1, (w - kw) // sw + 1
    for axis, extent in (("depth", od), ("height", oh), ("width", ow)):
        if extent < 1:
            raise ShapeError(f"max_pool3d output {axis} axis collapses to {extent} (< 1)")
    win = sliding_window_view(x, (kd, kh, kw), axis=(2, 3, 4))
    win = win[:, :, ::sd, ::sh, ::sw]
    return np.ascontiguousarray(win.max(axis=(5, 6, 7)))


def nonlocal_raw(
    x: np.ndarray,
    w_theta: np.ndarray,
    w_phi: np.ndarray,
    w_g: np.ndarray,
    w_out: np.ndarray,
) -> np.ndarray:
    """Residual softmax self-attention over all positions of [N,C,*spatial] input.

    Projections are pointwise (1x1) maps C->Ci given as [C,Ci] matrices; the
    output projection w_out is [Ci,C]. Attention logits are scaled by 1/sqrt(Ci).
    """
    n, c = x.shape[0], x.shape[1]
    if w_theta.shape[0] != c:
        raise ShapeError(f"channel axis mismatch: input C={c} vs projection C={w_theta.shape[0]}")
    ci = w_theta.shape[1]
    spatial = x.shape[2:]
    flat = x.reshape(n, c, -1).transpose(0, 2, 1)  # [n, P, c]
    theta = flat @ w_theta  # [n,P,ci]
    phi = flat @ w_phi
    g = flat @ w_g
    logits = (theta @ phi.transpose(0, 2, 1)) / np.sqrt(np.float32(ci))
    attn = softmax_raw(logits, axis=-1)
    y = (attn @ g) @ w_out  # [n,P,c]
    return np.ascontiguousarray(x + y.transpose(0, 2, 1).reshape(x.shape))


# ---------------------------------------------------------------------------
# public Tensor ops
# ---------------------------------------------------------------------------

def _wrap(raw: np.ndarray, precision: str) -> Tensor:
    return Tensor(raw, precision)


def conv3d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: Triple = 1,
    pad: Triple = 0,
    dilation: Triple = 1,
) -> Tensor:
    prec = _out_precision(*(t for t in (x, w, bias) if t is not None))
    raw = conv3d_raw(
        x.data, w.data, None if bias is None else bias.data,
        _triple(stride, "stride"), _triple(pad, "pad"), _triple(dilation, "dilation"),
    )
    return _wrap(raw, prec)


def conv1d_dilated(x: Tensor, w: Tensor, dilation: int = 1) -> Tensor:
    return _wrap(conv1d_raw(x.data, w.data, dilation), _out_precision(x, w))


def linear(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    prec = _out_precision(*(t for t in (x, w, bias) if t is not None))
    return _wrap(linear_raw(x.data, w.data, None if bias is None else bias.data), prec)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for {x.data.ndim}-D input")
    return _wrap(softmax_raw(x.data, axis), x.precision)


def l2_magnitude(f: Tensor) -> Tensor:
    """Row magnitudes of a [T,D] matrix: sqrt of the per-row sum of squares."""
    if f.data.ndim != 2:
        raise ShapeError(f"l2_magnitude expects a 2-D [T,D] input, got {f.data.ndim}-D")
    return _wrap(np.sqrt(np.sum(f.data.astype(np.float32) ** 2, axis=1)), f.precision)


def topk(values: Tensor, k: int) -> tuple:
    """The k largest entries, descending; ties broken by lowest index first."""
    v = values.data.reshape(-1)
    t = v.shape[0]
    if not 1 <= k <= t:
        raise ValueError(f"k={k} out of range [1, {t}]")
    order = np.argsort(-v, kind="stable")[:k]
    return [int(i) for i in order], [float(v[i]) for i in order]


def relu(x: Tensor) -> Tensor:
    return _wrap(np.maximum(x.data, 0.0), x.precision)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"add requires equal shapes or a scalar, got {a.shape} vs {b.shape}")
    return _wrap(a.data + b.data, _out_precision(a, b))


def mul_scalar(x: Tensor, s: float) -> Tensor:
    return _wrap(x.data * np.float32(s), x.precision)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return _wrap(np.mean(x.data, axis=axis, dtype=np.float32), x.precision)


def max_pool3d(x: Tensor, kernel: Triple, stride: Optional[Triple] = None) -> Tensor:
    k = _triple(kernel, "kernel")
    s = k if stride is None else _triple(stride, "stride")
    return _wrap(maxpool3d_raw(x.data, k, s), x.precision)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N,C,D,H,W] -> [N,C] average over all spatiotemporal positions."""
    if x.data.ndim != 5:
        raise ShapeError(f"global_avg_pool expects 5-D input, got {x.data.ndim}-D")
    return _wrap(np.mean(x.data, axis=(2, 3, 4), dtype=np.float32), x.precision)
