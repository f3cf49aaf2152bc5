"""Shared convolutional building blocks for the content encoder and decoder.

A *unit* is (time-channel separable conv, batchnorm, ReLU); a *block* is
``repeats`` units with a residual connection around the whole block. The last
unit's ReLU is applied after the residual add, so the block output is
post-activation. When the channel count changes across a block, a pointwise
projection sits on the skip path.

Parameters live in a flat ``{name: ndarray}`` dict using the checkpoint
naming scheme (``<prefix>.rep<j>.dw`` etc.). Running batchnorm statistics are
buffers, not trainable parameters; training-mode forwards report refreshed
statistics through a caller-owned list instead of mutating the dict.

For inference, ``fold_unit`` bakes each batchnorm into its pointwise
convolution (a scale on the rows plus a bias), removing the normalization
from the hot path.
"""

from __future__ import annotations

import numpy as np

from .kernels import (
    ConvSpec,
    batchnorm1d,
    batchnorm1d_train_bwd,
    batchnorm1d_train_fwd,
    depthwise_conv1d_bwd,
    depthwise_conv1d_fwd,
    pointwise_conv_bwd,
    pointwise_conv_fwd,
    relu_bwd,
    relu_fwd,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_unit(params, prefix, cin, cout, kernel, rng, dtype):
    params[f"{prefix}.dw"] = uniform_init(rng, (cin, kernel), kernel, dtype)
    params[f"{prefix}.pw"] = uniform_init(rng, (cout, cin), cin, dtype)
    params[f"{prefix}.bn_gamma"] = np.ones(cout, dtype=dtype)
    params[f"{prefix}.bn_beta"] = np.zeros(cout, dtype=dtype)
    params[f"{prefix}.bn_mean"] = np.zeros(cout, dtype=dtype)
    params[f"{prefix}.bn_var"] = np.ones(cout, dtype=dtype)


def init_block(params, prefix, cin, cout, kernel, repeats, rng, dtype):
    for j in range(1, repeats + 1):
        init_unit(params, f"{prefix}.rep{j}", cin if j == 1 else cout, cout, kernel, rng, dtype)
    if cin != cout:
        params[f"{prefix}.proj.w"] = uniform_init(rng, (cout, cin), cin, dtype)
        params[f"{prefix}.proj.b"] = np.zeros(cout, dtype=dtype)


def unit_param_count(cin, cout, kernel):
    # dw + pw + bn gamma/beta (running stats are buffers)
    return cin * kernel + cout * cin + 2 * cout


def block_param_count(cin, cout, kernel, repeats):
    total = sum(
        unit_param_count(cin if j == 0 else cout, cout, kernel) for j in range(repeats)
    )
    if cin != cout:
        total += cout * cin + cout
    return total


def unit_fwd(params, prefix, x, kernel, mode, stat_updates=None):
    """Separable conv + batchnorm; ReLU is the caller's concern."""
    dw = params[f"{prefix}.dw"]
    pw = params[f"{prefix}.pw"]
    spec = ConvSpec(dw.shape[0], pw.shape[0], kernel)
    h, dw_cache = depthwise_conv1d_fwd(x, dw, spec)
    h, pw_cache = pointwise_conv_fwd(h, pw)
    if mode == "train":
        h, bmean, bvar, bn_cache = batchnorm1d_train_fwd(
            h, params[f"{prefix}.bn_gamma"], params[f"{prefix}.bn_beta"], BN_EPS
        )
        if stat_updates is not None:
            old_mean = params[f"{prefix}.bn_mean"]
            old_var = params[f"{prefix}.bn_var"]
            stat_updates.append(
                (f"{prefix}.bn_mean", (1 - BN_MOMENTUM) * old_mean + BN_MOMENTUM * bmean)
            )
            stat_updates.append(
                (f"{prefix}.bn_var", (1 - BN_MOMENTUM) * old_var + BN_MOMENTUM * bvar)
            )
    else:
        h = batchnorm1d(
            h,
            params[f"{prefix}.bn_gamma"],
            params[f"{prefix}.bn_beta"],
            params[f"{prefix}.bn_mean"],
            params[f"{prefix}.bn_var"],
            BN_EPS,
        )
        bn_cache = None
    return h, (prefix, dw_cache, pw_cache, bn_cache)


def unit_bwd(dy, cache, grads):
    prefix, dw_cache, pw_cache, bn_cache = cache
    dh, dgamma, dbeta = batchnorm1d_train_bwd(dy, bn_cache)
    _accum(grads, f"{prefix}.bn_gamma", dgamma)
    _accum(grads, f"{prefix}.bn_beta", dbeta)
    dh, dpw, _ = pointwise_conv_bwd(dh, pw_cache)
    _accum(grads, f"{prefix}.pw", dpw)
    dx, ddw = depthwise_conv1d_bwd(dh, dw_cache)
    _accum(grads, f"{prefix}.dw", ddw)
    return dx


def block_fwd(params, prefix, x, kernel, repeats, mode, stat_updates=None):
    h = x
    unit_caches = []
    relu_masks = []
    for j in range(1, repeats + 1):
        h, uc = unit_fwd(params, f"{prefix}.rep{j}", h, kernel, mode, stat_updates)
        unit_caches.append(uc)
        if j < repeats:
            h, mask = relu_fwd(h)
            relu_masks.append(mask)
    proj_name = f"{prefix}.proj.w"
    if proj_name in params:
        skip, proj_cache = pointwise_conv_fwd(x, params[proj_name], params[f"{prefix}.proj.b"])
    else:
        skip, proj_cache = x, None
    y, out_mask = relu_fwd(h + skip)
    return y, (prefix, unit_caches, relu_masks, proj_cache, out_mask)


def block_bwd(dy, cache, grads):
    prefix, unit_caches, relu_masks, proj_cache, out_mask = cache
    dpre = relu_bwd(dy, out_mask)
    if proj_cache is not None:
        dskip, dpw, dpb = pointwise_conv_bwd(dpre, proj_cache)
        _accum(grads, f"{prefix}.proj.w", dpw)
        _accum(grads, f"{prefix}.proj.b", dpb)
    else:
        dskip = dpre
    # walk units in reverse; inner ReLUs sit after units 1..R-1
    dh = dpre
    for j in range(len(unit_caches) - 1, -1, -1):
        dh = unit_bwd(dh, unit_caches[j], grads)
        if j > 0:
            dh = relu_bwd(dh, relu_masks[j - 1])
    return dh + dskip


def fold_unit(params, prefix, eps=BN_EPS):
    """Bake batchnorm into the pointwise conv: returns (dw, pw_scaled, bias)."""
    scale = params[f"{prefix}.bn_gamma"] / np.sqrt(params[f"{prefix}.bn_var"] + eps)
    pw = params[f"{prefix}.pw"] * scale[:, None]
    bias = params[f"{prefix}.bn_beta"] - params[f"{prefix}.bn_mean"] * scale
    return params[f"{prefix}.dw"], pw, bias


def fold_block(params, prefix, repeats):
    units = [fold_unit(params, f"{prefix}.rep{j}") for j in range(1, repeats + 1)]
    proj_name = f"{prefix}.proj.w"
    proj = (params[proj_name], params[f"{prefix}.proj.b"]) if proj_name in params else None
    return units, proj


def folded_block_fwd(folded, x, kernel):
    from .kernels import depthwise_conv1d, pointwise_conv, relu

    units, proj = folded
    h = x
    for j, (dw, pw, bias) in enumerate(units):
        spec = ConvSpec(dw.shape[0], pw.shape[0], kernel)
        h = pointwise_conv(depthwise_conv1d(h, dw, spec), pw, bias)
        if j < len(units) - 1:
            h = relu(h)
    skip = pointwise_conv(x, proj[0], proj[1]) if proj is not None else x
    return relu(h + skip)


def _accum(grads, name, g):
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g
