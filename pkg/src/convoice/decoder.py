"""Conditioned convolutional decoder: content features + speaker embedding to
an 80-channel log-mel spectrogram with exactly one frame per source frame.

The speaker embedding is broadcast along time and stacked below the feature
channels. Three separable-conv blocks process the conditioned tensor at the
encoder frame rate; nearest-neighbor repetition brings it back to the mel
frame rate, a smoothing separable conv and a linear pointwise head produce
the mel channels, and the result is cropped (or zero-padded) to the source
frame count. The head has no activation: log-mel targets are signed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks
from .content_encoder import ContentFeatures
from .kernels import (
    ConvSpec,
    ShapeError,
    depthwise_conv1d_bwd,
    depthwise_conv1d_fwd,
    pointwise_conv_bwd,
    pointwise_conv_fwd,
    relu_bwd,
    relu_fwd,
)

__all__ = [
    "DecoderConfig",
    "Decoder",
    "FULL_DECODER_CONFIG",
    "TOY_DECODER_CONFIG",
    "condition",
    "decoder_param_count",
]

UPSAMPLE_KERNEL = 5


@dataclass(frozen=True)
class DecoderConfig:
    in_channels: int = 768  # tapped feature channels + 256 speaker dims
    block_channels: tuple = (512, 512, 512)
    block_kernels: tuple = (17, 21, 25)
    repeats: int = 5
    upsample_factor: int = 2  # == encoder stem stride
    out_channels: int = 80

    def __post_init__(self):
        if len(self.block_channels) != len(self.block_kernels):
            raise ShapeError("block_channels and block_kernels must have equal length")
        if self.upsample_factor < 1:
            raise ShapeError("upsample_factor must be >= 1")
        if self.out_channels != 80:
            raise ShapeError("decoder emits 80 mel channels")


FULL_DECODER_CONFIG = DecoderConfig()
TOY_DECODER_CONFIG = DecoderConfig(
    in_channels=64 + 256,
    block_channels=(48, 48, 48),
    block_kernels=(9, 11, 13),
    repeats=2,
)


def condition(features, speaker_embedding) -> np.ndarray:
    """Stack the speaker vector (broadcast over time) below the features."""
    values = features.values if isinstance(features, ContentFeatures) else np.asarray(features)
    spk = np.asarray(speaker_embedding)
    if spk.ndim != 1:
        raise ShapeError(f"speaker embedding must be a vector, got shape {spk.shape}")
    tiled = np.broadcast_to(spk[:, None], (spk.shape[0], values.shape[-1]))
    if values.ndim == 2:
        return np.concatenate([values, tiled.astype(values.dtype)], axis=0)
    tiled = np.broadcast_to(tiled, (values.shape[0],) + tiled.shape)
    return np.concatenate([values, tiled.astype(values.dtype)], axis=1)


def decoder_param_count(config: DecoderConfig) -> int:
    total = 0
    cin = config.in_channels
    for cout, k in zip(config.block_channels, config.block_kernels):
        total += blocks.block_param_count(cin, cout, k, config.repeats)
        cin = cout
    total += cin * UPSAMPLE_KERNEL + cin * cin + cin  # upsample separable conv + bias
    total += config.out_channels * cin + config.out_channels  # head
    return total


class Decoder:
    def __init__(self, config: DecoderConfig, params=None, dtype=np.float32, seed=0):
        self.config = config
        self.params = params if params is not None else self.init_params(config, dtype, seed)
        self._folded = None

    @staticmethod
    def init_params(config, dtype=np.float32, seed=0):
        rng = np.random.default_rng(seed)
        params = {}
        cin = config.in_channels
        for i, (cout, k) in enumerate(zip(config.block_channels, config.block_kernels), start=1):
            blocks.init_block(params, f"decoder.block{i}", cin, cout, k, config.repeats, rng, dtype)
            cin = cout
        params["decoder.upsample.dw"] = blocks.uniform_init(
            rng, (cin, UPSAMPLE_KERNEL), UPSAMPLE_KERNEL, dtype
        )
        params["decoder.upsample.pw"] = blocks.uniform_init(rng, (cin, cin), cin, dtype)
        params["decoder.upsample.b"] = np.zeros(cin, dtype=dtype)
        params["decoder.head.w"] = blocks.uniform_init(
            rng, (config.out_channels, cin), cin, dtype
        )
        params["decoder.head.b"] = np.zeros(config.out_channels, dtype=dtype)
        return params

    def fold(self):
        cfg = self.config
        self._folded = [
            blocks.fold_block(self.params, f"decoder.block{i}", cfg.repeats)
            for i in range(1, len(cfg.block_channels) + 1)
        ]
        return self

    def _check_conditioned(self, x, source_frames):
        x = np.asarray(x)
        if x.shape[-2] != self.config.in_channels:
            raise ShapeError(
                f"conditioned input has {x.shape[-2]} channels, decoder expects "
                f"{self.config.in_channels}"
            )
        t_enc = x.shape[-1]
        expect = -(-source_frames // self.config.upsample_factor)
        if t_enc != expect:
            raise ShapeError(
                f"encoder frame axis {t_enc} inconsistent with {source_frames} source "
                f"frames at upsample factor {self.config.upsample_factor} (expected {expect})"
            )
        return x

    def decode(self, conditioned, source_frames: int) -> np.ndarray:
        """Inference path; returns (80, source_frames) (batched: leading axis)."""
        cfg = self.config
        h = self._check_conditioned(conditioned, source_frames)
        from .kernels import depthwise_conv1d, pointwise_conv, relu

        for i in range(1, len(cfg.block_channels) + 1):
            if self._folded is not None:
                h = blocks.folded_block_fwd(self._folded[i - 1], h, cfg.block_kernels[i - 1])
            else:
                h, _ = blocks.block_fwd(
                    self.params, f"decoder.block{i}", h, cfg.block_kernels[i - 1],
                    cfg.repeats, mode="eval",
                )
        h = np.repeat(h, cfg.upsample_factor, axis=-1)
        spec = ConvSpec(h.shape[-2], h.shape[-2], UPSAMPLE_KERNEL)
        h = relu(pointwise_conv(depthwise_conv1d(h, self.params["decoder.upsample.dw"], spec),
                                self.params["decoder.upsample.pw"],
                                self.params["decoder.upsample.b"]))
        h = pointwise_conv(h, self.params["decoder.head.w"], self.params["decoder.head.b"])
        return _fit_frames(h, source_frames)

    def forward_train(self, conditioned, source_frames, stat_updates=None):
        cfg = self.config
        h = self._check_conditioned(conditioned, source_frames)
        block_caches = []
        for i in range(1, len(cfg.block_channels) + 1):
            h, bc = blocks.block_fwd(
                self.params, f"decoder.block{i}", h, cfg.block_kernels[i - 1],
                cfg.repeats, mode="train", stat_updates=stat_updates,
            )
            block_caches.append(bc)
        t_enc = h.shape[-1]
        h = np.repeat(h, cfg.upsample_factor, axis=-1)
        spec = ConvSpec(h.shape[-2], h.shape[-2], UPSAMPLE_KERNEL)
        h, up_dw_cache = depthwise_conv1d_fwd(h, self.params["decoder.upsample.dw"], spec)
        h, up_pw_cache = pointwise_conv_fwd(h, self.params["decoder.upsample.pw"],
                                            self.params["decoder.upsample.b"])
        h, up_mask = relu_fwd(h)
        h, head_cache = pointwise_conv_fwd(h, self.params["decoder.head.w"],
                                           self.params["decoder.head.b"])
        out = _fit_frames(h, source_frames)
        cache = (block_caches, up_dw_cache, up_pw_cache, up_mask, head_cache,
                 t_enc, h.shape[-1])
        return out, cache

    def backward_train(self, d_out, cache, grads):
        cfg = self.config
        block_caches, up_dw_cache, up_pw_cache, up_mask, head_cache, t_enc, t_up = cache
        dh = _unfit_frames(np.asarray(d_out), t_up)
        dh, dw, db = pointwise_conv_bwd(dh, head_cache)
        blocks._accum(grads, "decoder.head.w", dw)
        blocks._accum(grads, "decoder.head.b", db)
        dh = relu_bwd(dh, up_mask)
        dh, dpw, dpb = pointwise_conv_bwd(dh, up_pw_cache)
        blocks._accum(grads, "decoder.upsample.pw", dpw)
        blocks._accum(grads, "decoder.upsample.b", dpb)
        dh, ddw = depthwise_conv1d_bwd(dh, up_dw_cache)
        blocks._accum(grads, "decoder.upsample.dw", ddw)
        # collapse the nearest-neighbor repetition
        shape = dh.shape[:-1] + (t_enc, cfg.upsample_factor)
        dh = dh.reshape(shape).sum(axis=-1)
        for i in range(len(block_caches) - 1, -1, -1):
            dh = blocks.block_bwd(dh, block_caches[i], grads)
        return dh


def _fit_frames(x, t):
    """Crop or zero-pad the trailing axis to exactly t frames."""
    cur = x.shape[-1]
    if cur == t:
        return x
    if cur > t:
        return x[..., :t]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, t - cur)]
    return np.pad(x, pad)


def _unfit_frames(dy, t_up):
    cur = dy.shape[-1]
    if cur == t_up:
        return dy
    if cur > t_up:
        return dy[..., :t_up]
    pad = [(0, 0)] * (dy.ndim - 1) + [(0, t_up - cur)]
    return np.pad(dy, pad)
