"""QuartzNet-style convolutional content encoder with a CTC output head.

The encoder maps an 80-channel normalized log-mel spectrogram to per-frame
acoustic features. A strided stem conv halves the frame rate; five blocks of
repeated separable-conv units follow. Conversion taps the features after the
fourth block (post-activation); ASR training runs all five blocks plus a
pointwise head that emits per-frame vocabulary logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import blocks
from .kernels import (
    ConvSpec,
    ShapeError,
    conv1d_bwd,
    conv1d_fwd,
    pointwise_conv_bwd,
    pointwise_conv_fwd,
    relu_bwd,
    relu_fwd,
)

__all__ = [
    "EncoderConfig",
    "ContentFeatures",
    "ContentEncoder",
    "FULL_ENCODER_CONFIG",
    "TOY_ENCODER_CONFIG",
    "receptive_field",
    "encoder_param_count",
]


@dataclass(frozen=True)
class EncoderConfig:
    mel_channels: int = 80
    stem_channels: int = 256
    stem_kernel: int = 33
    stem_stride: int = 2
    block_channels: tuple = (256, 256, 512, 512, 512)
    block_kernels: tuple = (33, 39, 51, 63, 75)
    repeats: int = 5
    tap_block: int = 4
    vocab_size: int = 29

    def __post_init__(self):
        if len(self.block_channels) != len(self.block_kernels):
            raise ShapeError("block_channels and block_kernels must have equal length")
        if not (1 <= self.tap_block <= self.n_blocks):
            raise ShapeError(f"tap_block must be in [1, {self.n_blocks}]")
        if self.stem_stride not in (1, 2):
            raise ShapeError("stem_stride must be 1 or 2")
        if self.vocab_size < 2:
            raise ShapeError("vocab_size must be at least 2 (blank plus one token)")

    @property
    def n_blocks(self) -> int:
        return len(self.block_channels)

    @property
    def feature_channels(self) -> int:
        return self.block_channels[self.tap_block - 1]


FULL_ENCODER_CONFIG = EncoderConfig()
# desk-scale variant for tests and toy training
TOY_ENCODER_CONFIG = EncoderConfig(
    stem_channels=32,
    stem_kernel=9,
    block_channels=(32, 32, 64, 64, 64),
    block_kernels=(9, 11, 13, 15, 17),
    repeats=2,
)


@dataclass
class ContentFeatures:
    """Per-frame acoustic features tapped from the encoder."""

    values: np.ndarray  # (D, T_enc) or (B, D, T_enc)
    time_stride: int


def receptive_field(config: EncoderConfig, tap_block=None) -> int:
    """Analytic receptive field (input frames) of the tapped output."""
    tap = config.tap_block if tap_block is None else tap_block
    r = 1 + (config.stem_kernel - 1)  # stride product before the stem is 1
    stride_product = config.stem_stride
    for b in range(tap):
        r += config.repeats * (config.block_kernels[b] - 1) * stride_product
    return r


def encoder_param_count(config: EncoderConfig) -> int:
    total = config.stem_channels * config.mel_channels * config.stem_kernel + config.stem_channels
    cin = config.stem_channels
    for cout, k in zip(config.block_channels, config.block_kernels):
        total += blocks.block_param_count(cin, cout, k, config.repeats)
        cin = cout
    total += config.vocab_size * config.block_channels[-1] + config.vocab_size
    return total


class ContentEncoder:
    """Stateless after construction; weights live in a flat name->array dict."""

    def __init__(self, config: EncoderConfig, params=None, dtype=np.float32, seed=0):
        self.config = config
        self.params = params if params is not None else self.init_params(config, dtype, seed)
        self._folded = None

    @staticmethod
    def init_params(config, dtype=np.float32, seed=0):
        rng = np.random.default_rng(seed)
        params = {}
        params["encoder.stem.w"] = blocks.uniform_init(
            rng,
            (config.stem_channels, config.mel_channels, config.stem_kernel),
            config.mel_channels * config.stem_kernel,
            dtype,
        )
        params["encoder.stem.b"] = np.zeros(config.stem_channels, dtype=dtype)
        cin = config.stem_channels
        for i, (cout, k) in enumerate(zip(config.block_channels, config.block_kernels), start=1):
            blocks.init_block(params, f"encoder.block{i}", cin, cout, k, config.repeats, rng, dtype)
            cin = cout
        params["encoder.head.w"] = blocks.uniform_init(
            rng, (config.vocab_size, cin), cin, dtype
        )
        params["encoder.head.b"] = np.zeros(config.vocab_size, dtype=dtype)
        return params

    # -- inference ---------------------------------------------------------

    def _stem_spec(self):
        cfg = self.config
        return ConvSpec(cfg.mel_channels, cfg.stem_channels, cfg.stem_kernel, stride=cfg.stem_stride)

    def _check_input(self, mel):
        mel = np.asarray(mel)
        if mel.shape[-2] != self.config.mel_channels:
            raise ShapeError(
                f"mel channel axis is {mel.shape[-2]}, encoder expects {self.config.mel_channels}"
            )
        return mel

    def fold(self):
        """Precompute batchnorm-folded weights for the inference fast path."""
        cfg = self.config
        folded = []
        for i in range(1, cfg.n_blocks + 1):
            folded.append(blocks.fold_block(self.params, f"encoder.block{i}", cfg.repeats))
        self._folded = folded
        return self

    def encode(self, mel, tap_block=None) -> ContentFeatures:
        """Features after the tapped block; uses folded weights when available."""
        cfg = self.config
        tap = cfg.tap_block if tap_block is None else tap_block
        if not (1 <= tap <= cfg.n_blocks):
            raise ShapeError(f"tap_block must be in [1, {cfg.n_blocks}]")
        mel = self._check_input(mel)
        from .kernels import conv1d, relu

        h = relu(conv1d(mel, self.params["encoder.stem.w"], self._stem_spec(),
                        self.params["encoder.stem.b"]))
        for i in range(1, tap + 1):
            if self._folded is not None:
                h = blocks.folded_block_fwd(self._folded[i - 1], h, cfg.block_kernels[i - 1])
            else:
                h, _ = blocks.block_fwd(
                    self.params, f"encoder.block{i}", h, cfg.block_kernels[i - 1],
                    cfg.repeats, mode="eval",
                )
        return ContentFeatures(h, cfg.stem_stride)

    def asr_logits(self, mel) -> np.ndarray:
        """Unnormalized per-frame vocabulary scores, (V, T_enc)."""
        cfg = self.config
        feats = self.encode(mel, tap_block=cfg.n_blocks)
        from .kernels import pointwise_conv

        return pointwise_conv(feats.values, self.params["encoder.head.w"],
                              self.params["encoder.head.b"])

    # -- training ----------------------------------------------------------

    def forward_train(self, mel, stat_updates=None):
        """Full forward through all blocks and the head with caches for BPTT."""
        cfg = self.config
        mel = self._check_input(mel)
        h, stem_cache = conv1d_fwd(mel, self.params["encoder.stem.w"], self._stem_spec(),
                                   self.params["encoder.stem.b"])
        h, stem_mask = relu_fwd(h)
        block_caches = []
        for i in range(1, cfg.n_blocks + 1):
            h, bc = blocks.block_fwd(
                self.params, f"encoder.block{i}", h, cfg.block_kernels[i - 1],
                cfg.repeats, mode="train", stat_updates=stat_updates,
            )
            block_caches.append(bc)
        logits, head_cache = pointwise_conv_fwd(h, self.params["encoder.head.w"],
                                                self.params["encoder.head.b"])
        return logits, (stem_cache, stem_mask, block_caches, head_cache)

    def backward_train(self, dlogits, cache, grads):
        stem_cache, stem_mask, block_caches, head_cache = cache
        dh, dw, db = pointwise_conv_bwd(dlogits, head_cache)
        blocks._accum(grads, "encoder.head.w", dw)
        blocks._accum(grads, "encoder.head.b", db)
        for i in range(len(block_caches) - 1, -1, -1):
            dh = blocks.block_bwd(dh, block_caches[i], grads)
        dh = relu_bwd(dh, stem_mask)
        dmel, dw, db = conv1d_bwd(dh, stem_cache)
        blocks._accum(grads, "encoder.stem.w", dw)
        blocks._accum(grads, "encoder.stem.b", db)
        return dmel
