"""Dense-tensor numeric core: every layer the networks need, with hand-derived
backward passes.

Tensors are plain numpy arrays (row-major, float32 or float64; ops preserve the
input dtype). Convolutions accept either a single instance ``(C, T)`` or a
batch ``(B, C, T)``. All functions are pure; training callers get explicit
``(output, cache)`` pairs from the ``*_fwd`` variants and feed caches to the
matching ``*_bwd``.

Only "same-zero" padding is supported: a symmetric zero pad of
``(K - 1) * dilation / 2`` per side, so stride-1 convolutions preserve length
exactly and stride-s ones produce ``ceil(T / s)`` frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvSpec",
    "ShapeError",
    "DomainError",
    "GradCheckError",
    "conv1d",
    "conv1d_fwd",
    "conv1d_bwd",
    "depthwise_conv1d",
    "depthwise_conv1d_fwd",
    "depthwise_conv1d_bwd",
    "pointwise_conv",
    "pointwise_conv_fwd",
    "pointwise_conv_bwd",
    "separable_conv1d",
    "batchnorm1d",
    "batchnorm1d_train_fwd",
    "batchnorm1d_train_bwd",
    "relu",
    "relu_fwd",
    "relu_bwd",
    "linear",
    "linear_fwd",
    "linear_bwd",
    "lstm_forward",
    "lstm_fwd",
    "lstm_bwd",
    "l2_normalize",
    "l2_normalize_fwd",
    "l2_normalize_bwd",
    "grad_check",
]


class ShapeError(ValueError):
    """Raised when an operand's dimensions do not match the layer contract."""


class DomainError(ValueError):
    """Raised when a value is outside its mathematical domain (e.g. var < 0)."""


class GradCheckError(RuntimeError):
    """Raised when grad_check hits a non-finite intermediate."""


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 1D convolution with same-zero padding."""

    in_channels: int
    out_channels: int
    kernel_width: int
    stride: int = 1
    dilation: int = 1
    padding_mode: str = "same-zero"

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_width", "stride", "dilation"):
            if getattr(self, name) < 1:
                raise ShapeError(f"ConvSpec.{name} must be positive, got {getattr(self, name)}")
        if self.padding_mode != "same-zero":
            raise ShapeError(f"unsupported padding_mode {self.padding_mode!r}")
        # odd kernels keep the symmetric pad integral for every stride
        if self.kernel_width % 2 == 0:
            raise ShapeError(
                f"kernel_width must be odd under same-zero padding, got {self.kernel_width}"
            )

    @property
    def pad(self) -> int:
        return (self.kernel_width - 1) * self.dilation // 2

    def out_frames(self, t: int) -> int:
        return -(-t // self.stride)  # ceil(T / stride)


def _promote(x):
    """Return (x3d, was_2d) with x3d shaped (B, C, T)."""
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected (C, T) or (B, C, T) input, got ndim={x.ndim}")


def _windows(xp, k, t_out, stride, dilation):
    """Strided view (B, C, K, T_out) over the padded input (B, C, Tp)."""
    b, c, _ = xp.shape
    sb, sc, st = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, k, t_out),
        strides=(sb, sc, st * dilation, st * stride),
        writeable=False,
    )


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------

def conv1d_fwd(x, w, spec: ConvSpec, bias=None):
    x3, squeeze = _promote(x)
    w = np.asarray(w)
    if w.ndim != 3:
        raise ShapeError(f"conv1d weight must be (C_out, C_in, K), got shape {w.shape}")
    co, ci, k = w.shape
    if x3.shape[1] != spec.in_channels or ci != spec.in_channels:
        raise ShapeError(
            f"channel axis mismatch: input has {x3.shape[1]}, weight has {ci}, "
            f"spec expects {spec.in_channels}"
        )
    if co != spec.out_channels:
        raise ShapeError(f"output-channel axis mismatch: weight {co} vs spec {spec.out_channels}")
    if k != spec.kernel_width:
        raise ShapeError(f"kernel axis mismatch: weight K={k} vs spec {spec.kernel_width}")

    b, _, t = x3.shape
    t_out = spec.out_frames(t)
    xp = np.pad(x3, ((0, 0), (0, 0), (spec.pad, spec.pad)))
    win = _windows(xp, k, t_out, spec.stride, spec.dilation)
    # one GEMM over all batch elements: (Co, Ci*K) @ (Ci*K, B*T_out)
    cols = win.transpose(1, 2, 0, 3).reshape(ci * k, b * t_out)
    y = (w.reshape(co, ci * k) @ cols).reshape(co, b, t_out).transpose(1, 0, 2)
    if bias is not None:
        y = y + np.asarray(bias)[:, None]
    cache = (cols, w, spec, x3.shape, bias is not None)
    return (y[0] if squeeze else y), cache


def conv1d(x, w, spec: ConvSpec, bias=None):
    """Direct 1D convolution, same-zero padding; returns (C_out, ceil(T/stride))."""
    y, _ = conv1d_fwd(x, w, spec, bias)
    return y


def conv1d_bwd(dy, cache):
    cols, w, spec, x_shape, has_bias = cache
    dy3, _ = _promote(dy)
    b, ci, t = x_shape
    co, _, k = w.shape
    t_out = dy3.shape[2]
    dy_cols = dy3.transpose(1, 0, 2).reshape(co, b * t_out)
    dw = (dy_cols @ cols.T).reshape(co, ci, k)
    db = dy3.sum(axis=(0, 2)) if has_bias else None
    dcols = w.reshape(co, ci * k).T @ dy_cols
    dwin = dcols.reshape(ci, k, b, t_out).transpose(2, 0, 1, 3)
    dxp = np.zeros((b, ci, t + 2 * spec.pad), dtype=dy3.dtype)
    for j in range(k):
        lo = j * spec.dilation
        dxp[:, :, lo : lo + spec.stride * t_out : spec.stride] += dwin[:, :, j, :]
    dx = dxp[:, :, spec.pad : spec.pad + t]
    return dx, dw, db


# ---------------------------------------------------------------------------
# depthwise / pointwise / separable
# ---------------------------------------------------------------------------

def depthwise_conv1d_fwd(x, w, spec: ConvSpec):
    x3, squeeze = _promote(x)
    w = np.asarray(w)
    if w.ndim != 2:
        raise ShapeError(f"depthwise weight must be (C, K), got shape {w.shape}")
    c, k = w.shape
    if x3.shape[1] != c or c != spec.in_channels:
        raise ShapeError(
            f"channel axis mismatch: input has {x3.shape[1]}, depthwise weight has {c}"
        )
    if k != spec.kernel_width:
        raise ShapeError(f"kernel axis mismatch: weight K={k} vs spec {spec.kernel_width}")
    b, _, t = x3.shape
    t_out = spec.out_frames(t)
    xp = np.pad(x3, ((0, 0), (0, 0), (spec.pad, spec.pad)))
    win = _windows(xp, k, t_out, spec.stride, spec.dilation)
    y = np.einsum("bckt,ck->bct", win, w)
    cache = (win, w, spec, x3.shape)
    return (y[0] if squeeze else y), cache


def depthwise_conv1d(x, w, spec: ConvSpec):
    y, _ = depthwise_conv1d_fwd(x, w, spec)
    return y


def depthwise_conv1d_bwd(dy, cache):
    win, w, spec, x_shape = cache
    dy3, _ = _promote(dy)
    b, c, t = x_shape
    k = w.shape[1]
    t_out = dy3.shape[2]
    dw = np.einsum("bct,bckt->ck", dy3, win)
    dxp = np.zeros((b, c, t + 2 * spec.pad), dtype=dy3.dtype)
    for j in range(k):
        lo = j * spec.dilation
        dxp[:, :, lo : lo + spec.stride * t_out : spec.stride] += dy3 * w[:, j][None, :, None]
    dx = dxp[:, :, spec.pad : spec.pad + t]
    return dx, dw


def pointwise_conv_fwd(x, w, bias=None):
    x3, squeeze = _promote(x)
    w = np.asarray(w)
    if w.ndim != 2:
        raise ShapeError(f"pointwise weight must be (C_out, C_in), got shape {w.shape}")
    co, ci = w.shape
    if x3.shape[1] != ci:
        raise ShapeError(f"channel axis mismatch: input has {x3.shape[1]}, pointwise weight has {ci}")
    b, _, t = x3.shape
    cols = x3.transpose(1, 0, 2).reshape(ci, b * t)
    y = (w @ cols).reshape(co, b, t).transpose(1, 0, 2)
    if bias is not None:
        y = y + np.asarray(bias)[:, None]
    cache = (cols, w, x3.shape, bias is not None)
    return (y[0] if squeeze else y), cache


def pointwise_conv(x, w, bias=None):
    y, _ = pointwise_conv_fwd(x, w, bias)
    return y


def pointwise_conv_bwd(dy, cache):
    cols, w, x_shape, has_bias = cache
    dy3, _ = _promote(dy)
    b, ci, t = x_shape
    co = w.shape[0]
    dy_cols = dy3.transpose(1, 0, 2).reshape(co, b * t)
    dw = dy_cols @ cols.T
    db = dy3.sum(axis=(0, 2)) if has_bias else None
    dx = (w.T @ dy_cols).reshape(ci, b, t).transpose(1, 0, 2)
    return dx, dw, db


def separable_conv1d(x, depthwise, pointwise, spec: ConvSpec, bias=None):
    """Time-channel separable conv: per-channel K-tap conv then 1x1 channel mix."""
    h = depthwise_conv1d(x, depthwise, spec)
    return pointwise_conv(h, pointwise, bias)


# ---------------------------------------------------------------------------
# batchnorm
# ---------------------------------------------------------------------------

def batchnorm1d(x, gamma, beta, running_mean, running_var, eps=1e-5):
    """Inference-mode batchnorm over the channel axis of (B, C, T) / (C, T)."""
    x3, squeeze = _promote(x)
    c = x3.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean),
                    ("running_var", running_var)):
        v = np.asarray(v)
        if v.shape != (c,):
            raise ShapeError(f"{name} must have shape ({c},), got {v.shape}")
    running_var = np.asarray(running_var)
    if np.any(running_var < 0):
        raise DomainError("running_var has negative entries")
    inv = 1.0 / np.sqrt(running_var + eps)
    y = (x3 - np.asarray(running_mean)[:, None]) * (np.asarray(gamma) * inv)[:, None] \
        + np.asarray(beta)[:, None]
    return y[0] if squeeze else y


def batchnorm1d_train_fwd(x, gamma, beta, eps=1e-5):
    """Training-mode batchnorm: normalizes with batch statistics over (B, T).

    Returns (y, batch_mean, batch_var, cache); variance is the biased estimator.
    """
    x3, squeeze = _promote(x)
    mean = x3.mean(axis=(0, 2))
    var = x3.var(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x3 - mean[:, None]) * inv[:, None]
    y = np.asarray(gamma)[:, None] * xhat + np.asarray(beta)[:, None]
    cache = (xhat, inv, np.asarray(gamma), squeeze)
    return (y[0] if squeeze else y), mean, var, cache


def batchnorm1d_train_bwd(dy, cache):
    xhat, inv, gamma, _ = cache
    dy3, squeeze = _promote(dy)
    n = dy3.shape[0] * dy3.shape[2]
    dgamma = np.einsum("bct,bct->c", dy3, xhat)
    dbeta = dy3.sum(axis=(0, 2))
    dx = (gamma * inv)[:, None] / n * (
        n * dy3 - dbeta[:, None] - xhat * dgamma[:, None]
    )
    return (dx[0] if squeeze else dx), dgamma, dbeta


# ---------------------------------------------------------------------------
# relu / linear
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(np.asarray(x), 0)


def relu_fwd(x):
    x = np.asarray(x)
    return np.maximum(x, 0), (x > 0)


def relu_bwd(dy, mask):
    return dy * mask


def linear(x, w, bias=None):
    """Affine map along the trailing axis: x @ w.T + bias."""
    y, _ = linear_fwd(x, w, bias)
    return y


def linear_fwd(x, w, bias=None):
    x = np.asarray(x)
    w = np.asarray(w)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"trailing axis mismatch: input {x.shape[-1]} vs weight {w.shape[1]}")
    y = x @ w.T
    if bias is not None:
        y = y + np.asarray(bias)
    return y, (x, w, bias is not None)


def linear_bwd(dy, cache):
    x, w, has_bias = cache
    dy = np.asarray(dy)
    dx = dy @ w
    dw = dy.reshape(-1, dy.shape[-1]).T @ x.reshape(-1, x.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0) if has_bias else None
    return dx, dw, db


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _check_lstm_weights(layers, d_in, hidden):
    for li, layer in enumerate(layers):
        expect_in = d_in if li == 0 else hidden
        wx, wh, b = layer["w_x"], layer["w_h"], layer["b"]
        if wx.shape != (4 * hidden, expect_in):
            raise ShapeError(
                f"lstm layer {li + 1}: w_x shape {wx.shape} != {(4 * hidden, expect_in)}"
            )
        if wh.shape != (4 * hidden, hidden):
            raise ShapeError(f"lstm layer {li + 1}: w_h shape {wh.shape} != {(4 * hidden, hidden)}")
        if b.shape != (4 * hidden,):
            raise ShapeError(f"lstm layer {li + 1}: bias shape {b.shape} != {(4 * hidden,)}")


def lstm_fwd(x, layers, hidden):
    """Multi-layer LSTM over (B, T, D) or (T, D) input.

    Gate layout in the concatenated weights is (input, forget, candidate,
    output). Returns (outputs, (h_n, c_n), cache) where outputs holds the
    top-layer hidden state at every step.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"lstm input must be (T, D) or (B, T, D), got ndim={x.ndim}")
    b, t, d_in = x.shape
    _check_lstm_weights(layers, d_in, hidden)

    h_n = np.zeros((len(layers), b, hidden), dtype=x.dtype)
    c_n = np.zeros_like(h_n)
    caches = []
    inp = x
    for li, layer in enumerate(layers):
        wx, wh, bias = layer["w_x"], layer["w_h"], layer["b"]
        h = np.zeros((b, hidden), dtype=x.dtype)
        c = np.zeros((b, hidden), dtype=x.dtype)
        outs = np.empty((b, t, hidden), dtype=x.dtype)
        steps = []
        for ti in range(t):
            xt = inp[:, ti]
            z = xt @ wx.T + h @ wh.T + bias
            i = _sigmoid(z[:, :hidden])
            f = _sigmoid(z[:, hidden : 2 * hidden])
            g = np.tanh(z[:, 2 * hidden : 3 * hidden])
            o = _sigmoid(z[:, 3 * hidden :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            steps.append((xt, h, c, i, f, g, o, tc))
            h, c = h_new, c_new
            outs[:, ti] = h
        h_n[li], c_n[li] = h, c
        caches.append((steps, inp, layer))
        inp = outs
    cache = (caches, hidden, squeeze)
    return (inp[0] if squeeze else inp), (h_n, c_n), cache


def lstm_forward(x, layers, hidden):
    """Forward-only LSTM; see lstm_fwd."""
    out, state, _ = lstm_fwd(x, layers, hidden)
    return out, state


def lstm_bwd(d_out, cache, d_hn=None, d_cn=None):
    """BPTT through the stacked LSTM.

    d_out is the gradient on the top-layer output sequence; d_hn/d_cn
    optionally add gradients on the final states per layer. Returns
    (dx, grads) where grads is a list of {w_x, w_h, b} dicts per layer.
    """
    caches, hidden, squeeze = cache
    d_out = np.asarray(d_out)
    if squeeze and d_out.ndim == 2:
        d_out = d_out[None]
    grads = [None] * len(caches)
    d_seq = d_out
    for li in range(len(caches) - 1, -1, -1):
        steps, inp, layer = caches[li]
        wx, wh = layer["w_x"], layer["w_h"]
        b, t, _ = inp.shape
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros_like(layer["b"])
        dx_seq = np.empty_like(inp)
        dh_next = np.zeros((b, hidden), dtype=inp.dtype)
        dc_next = np.zeros((b, hidden), dtype=inp.dtype)
        if d_hn is not None:
            dh_next = dh_next + d_hn[li]
        if d_cn is not None:
            dc_next = dc_next + d_cn[li]
        for ti in range(t - 1, -1, -1):
            xt, h_prev, c_prev, i, f, g, o, tc = steps[ti]
            dh = d_seq[:, ti] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1 - tc * tc)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [
                    di * i * (1 - i),
                    df * f * (1 - f),
                    dg * (1 - g * g),
                    do * o * (1 - o),
                ],
                axis=1,
            )
            dwx += dz.T @ xt
            dwh += dz.T @ h_prev
            db += dz.sum(axis=0)
            dx_seq[:, ti] = dz @ wx
            dh_next = dz @ wh
            dc_next = dc * f
        grads[li] = {"w_x": dwx, "w_h": dwh, "b": db}
        d_seq = dx_seq
    dx = d_seq[0] if squeeze else d_seq
    return dx, grads


# ---------------------------------------------------------------------------
# L2 normalization (used by the speaker head)
# ---------------------------------------------------------------------------

def l2_normalize(x, axis=-1, eps=0.0):
    y, _ = l2_normalize_fwd(x, axis=axis, eps=eps)
    return y


def l2_normalize_fwd(x, axis=-1, eps=0.0):
    x = np.asarray(x)
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True)) + eps
    y = x / norm
    return y, (y, norm, axis)


def l2_normalize_bwd(dy, cache):
    y, norm, axis = cache
    dot = (dy * y).sum(axis=axis, keepdims=True)
    return (dy - y * dot) / norm


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn, params, eps=1e-6):
    """Central-finite-difference check of an analytic gradient.

    ``fn(params) -> (loss, grads)`` where grads matches params element-wise.
    Returns the max over all coordinates of
    ``|analytic - central_difference| / max(1, |central_difference|)``.
    Evaluate in float64; float32 differences are too noisy for tight bounds.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    loss, grads = fn(params)
    if not np.isfinite(loss):
        raise GradCheckError("non-finite loss at the expansion point")
    max_err = 0.0
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        gflat = np.asarray(grads[pi]).reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = fn(params)[0]
            flat[j] = orig - eps
            lm = fn(params)[0]
            flat[j] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise GradCheckError(f"non-finite evaluation at param {pi}, coordinate {j}")
            fd = (lp - lm) / (2 * eps)
            err = abs(gflat[j] - fd) / max(1.0, abs(fd))
            if err > max_err:
                max_err = err
    return max_err
