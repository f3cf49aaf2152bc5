"""LSTM speaker encoder: arbitrary-length audio to a 256-d unit-norm voice
embedding.

Inference follows the windowed protocol: the 16 kHz 40-mel spectrogram is cut
into 1.6 s windows (160 frames) overlapping by 50%, each window runs through
a stacked LSTM whose final-frame top output feeds a fully connected layer,
the result is L2-normalized, and the per-window embeddings are averaged and
re-normalized.

Window embeddings are averaged in a canonical (lexicographically sorted)
order so the mean is bitwise permutation-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import SPEAKER_FRONTEND, Waveform, log_mel, resample
from .kernels import (
    ShapeError,
    l2_normalize_bwd,
    l2_normalize_fwd,
    linear_bwd,
    linear_fwd,
    lstm_bwd,
    lstm_fwd,
)
from .blocks import uniform_init
from .losses import InputError

__all__ = [
    "SpeakerConfig",
    "WindowPlan",
    "SpeakerEncoder",
    "FULL_SPEAKER_CONFIG",
    "TOY_SPEAKER_CONFIG",
    "plan_windows",
    "cosine_similarity",
    "mean_embedding",
]


@dataclass(frozen=True)
class SpeakerConfig:
    mel_channels: int = 40
    hidden: int = 256
    layers: int = 3
    embed_dim: int = 256
    window_frames: int = 160  # 1.6 s at the 10 ms hop
    hop_frames: int = 80      # 50% overlap


FULL_SPEAKER_CONFIG = SpeakerConfig()
TOY_SPEAKER_CONFIG = SpeakerConfig(hidden=64)


@dataclass
class WindowPlan:
    window_frames: int
    hop_frames: int
    ranges: list  # list of (start, end); end - start == window_frames unless padded
    padded: bool  # True when the utterance was shorter than one window


def plan_windows(t_frames: int, window_frames: int = 160, hop_frames: int = 80) -> WindowPlan:
    """Cover t_frames with 50%-overlapping windows; clamp the last, pad short."""
    if t_frames < 1:
        raise InputError("cannot plan windows over zero frames")
    if t_frames < window_frames:
        return WindowPlan(window_frames, hop_frames, [(0, t_frames)], padded=True)
    ranges = []
    start = 0
    while start + window_frames <= t_frames:
        ranges.append((start, start + window_frames))
        start += hop_frames
    if ranges[-1][1] < t_frames:
        ranges.append((t_frames - window_frames, t_frames))
    return WindowPlan(window_frames, hop_frames, ranges, padded=False)


def cosine_similarity(a, b) -> float:
    return float(np.dot(np.asarray(a), np.asarray(b)))


def mean_embedding(embeddings) -> np.ndarray:
    """Average embeddings in canonical order and re-normalize.

    Sorting rows lexicographically before summation makes the result bitwise
    independent of input order.
    """
    stack = np.asarray(embeddings)
    if stack.ndim != 2 or stack.shape[0] == 0:
        raise InputError("mean_embedding expects a nonempty (n, D) stack")
    order = np.lexsort(stack.T[::-1])
    total = np.zeros(stack.shape[1], dtype=stack.dtype)
    for idx in order:
        total = total + stack[idx]
    mean = total / stack.shape[0]
    norm = np.linalg.norm(mean)
    if norm == 0:
        raise InputError("embeddings average to the zero vector")
    return mean / norm


class SpeakerEncoder:
    def __init__(self, config: SpeakerConfig, params=None, dtype=np.float32, seed=0):
        self.config = config
        self.params = params if params is not None else self.init_params(config, dtype, seed)

    @staticmethod
    def init_params(config, dtype=np.float32, seed=0):
        rng = np.random.default_rng(seed)
        params = {}
        d_in = config.mel_channels
        for li in range(1, config.layers + 1):
            h = config.hidden
            params[f"speaker.lstm{li}.w_x"] = uniform_init(rng, (4 * h, d_in), d_in, dtype)
            params[f"speaker.lstm{li}.w_h"] = uniform_init(rng, (4 * h, h), h, dtype)
            params[f"speaker.lstm{li}.b"] = np.zeros(4 * h, dtype=dtype)
            d_in = h
        params["speaker.fc.w"] = uniform_init(
            rng, (config.embed_dim, config.hidden), config.hidden, dtype
        )
        params["speaker.fc.b"] = np.zeros(config.embed_dim, dtype=dtype)
        return params

    def _layers(self):
        return [
            {
                "w_x": self.params[f"speaker.lstm{li}.w_x"],
                "w_h": self.params[f"speaker.lstm{li}.w_h"],
                "b": self.params[f"speaker.lstm{li}.b"],
            }
            for li in range(1, self.config.layers + 1)
        ]

    def encode_window(self, mel_window) -> np.ndarray:
        """One (40, window_frames) mel window to a unit-norm embedding."""
        cfg = self.config
        mel_window = np.asarray(mel_window)
        if mel_window.shape != (cfg.mel_channels, cfg.window_frames):
            raise ShapeError(
                f"window must be ({cfg.mel_channels}, {cfg.window_frames}), "
                f"got {mel_window.shape}"
            )
        emb, _ = self.forward_train(mel_window.T[None])
        return emb[0]

    def forward_train(self, windows):
        """Batched window embedding with caches: (B, T, 40) -> (B, embed_dim)."""
        out, _, lstm_cache = lstm_fwd(windows, self._layers(), self.config.hidden)
        last = out[:, -1, :]
        fc, fc_cache = linear_fwd(last, self.params["speaker.fc.w"], self.params["speaker.fc.b"])
        emb, norm_cache = l2_normalize_fwd(fc, axis=-1)
        return emb, (lstm_cache, fc_cache, norm_cache, out.shape)

    def backward_train(self, d_emb, cache, grads):
        lstm_cache, fc_cache, norm_cache, out_shape = cache
        dfc = l2_normalize_bwd(d_emb, norm_cache)
        dlast, dw, db = linear_bwd(dfc, fc_cache)
        _accum(grads, "speaker.fc.w", dw)
        _accum(grads, "speaker.fc.b", db)
        d_out = np.zeros(out_shape, dtype=dlast.dtype)
        d_out[:, -1, :] = dlast
        _, layer_grads = lstm_bwd(d_out, lstm_cache)
        for li, g in enumerate(layer_grads, start=1):
            _accum(grads, f"speaker.lstm{li}.w_x", g["w_x"])
            _accum(grads, f"speaker.lstm{li}.w_h", g["w_h"])
            _accum(grads, f"speaker.lstm{li}.b", g["b"])

    def embed_utterance(self, wave: Waveform) -> np.ndarray:
        """Window, encode, average, normalize; accepts any sample rate."""
        if len(wave.samples) == 0:
            raise InputError("cannot embed empty audio")
        wave16 = resample(wave, SPEAKER_FRONTEND.sample_rate_hz)
        mel = log_mel(wave16, SPEAKER_FRONTEND).values
        cfg = self.config
        plan = plan_windows(mel.shape[1], cfg.window_frames, cfg.hop_frames)
        windows = np.empty((len(plan.ranges), cfg.window_frames, cfg.mel_channels),
                           dtype=mel.dtype)
        for wi, (s, e) in enumerate(plan.ranges):
            chunk = mel[:, s:e]
            if chunk.shape[1] < cfg.window_frames:
                chunk = np.pad(chunk, ((0, 0), (0, cfg.window_frames - chunk.shape[1])))
            windows[wi] = chunk.T
        embs, _ = self.forward_train(windows)
        if len(embs) == 1:
            return embs[0] / np.linalg.norm(embs[0])
        return mean_embedding(embs)


def _accum(grads, name, g):
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g
