"""Deterministic mel-to-waveform synthesis via Griffin-Lim phase retrieval.

The mel spectrogram is lifted back to a linear magnitude target through the
filterbank pseudo-inverse, then phases are recovered by alternating inverse
STFT (least-squares overlap-add) and magnitude projection. Phase starts at
zero, so synthesis is reproducible; the momentum term is the fast-Griffin-Lim
acceleration and can be disabled for the classic monotone variant.

Output length is pinned to ``frames * hop`` samples and the peak is limited
to 0.95 (quiet signals are never amplified).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frontend import (
    ENCODER_FRONTEND,
    ConfigError,
    FrontendConfig,
    MelSpectrogram,
    Waveform,
    _padded_window,
    mel_to_linear,
    stft,
)

__all__ = ["GriffinLimConfig", "istft", "synthesize", "spectral_convergence_db"]

PEAK_LIMIT = 0.95


@dataclass(frozen=True)
class GriffinLimConfig:
    n_iters: int = 60
    momentum: float = 0.99
    frontend: FrontendConfig = field(default=ENCODER_FRONTEND)

    def __post_init__(self):
        if self.n_iters < 1:
            raise ConfigError("n_iters must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must be in [0, 1)")


def istft(spec, config: FrontendConfig, length: int | None = None) -> np.ndarray:
    """Least-squares inverse STFT (overlap-add over squared analysis windows).

    Exact inverse of ``stft`` wherever the window-square sum is positive.
    ``length`` defaults to ``(frames - 1) * hop``.
    """
    spec = np.asarray(spec)
    n_bins = config.n_fft // 2 + 1
    if spec.ndim != 2 or spec.shape[0] != n_bins:
        raise ConfigError(f"spectrogram must be ({n_bins}, T), got {spec.shape}")
    frames = np.fft.irfft(spec.T, n=config.n_fft, axis=1)
    win = _padded_window(config.window_length, config.n_fft)
    t_frames = spec.shape[1]
    half = config.n_fft // 2
    if length is None:
        length = (t_frames - 1) * config.hop_length
    total = config.n_fft + (t_frames - 1) * config.hop_length
    buf = np.zeros(total)
    wsum = np.zeros(total)
    win_sq = win * win
    for t in range(t_frames):
        lo = t * config.hop_length
        buf[lo : lo + config.n_fft] += frames[t] * win
        wsum[lo : lo + config.n_fft] += win_sq
    out = buf[half : half + length]
    norm = wsum[half : half + length]
    safe = norm > 1e-11
    out[safe] /= norm[safe]
    out[~safe] = 0.0
    return out


def spectral_convergence_db(magnitude, target) -> float:
    """20*log10(||target|| / ||magnitude - target||), higher is better."""
    err = np.linalg.norm(magnitude - target)
    if err == 0:
        return np.inf
    return float(20.0 * np.log10(np.linalg.norm(target) / err))


def synthesize(mel: MelSpectrogram, config: GriffinLimConfig | None = None,
               return_trace: bool = False):
    """Griffin-Lim synthesis; returns a Waveform of exactly frames*hop samples.

    With ``return_trace`` the per-iteration spectral-convergence error
    (Frobenius, relative) is returned alongside the waveform.
    """
    if config is None:
        config = GriffinLimConfig()
    fe = config.frontend
    if mel.config != fe:
        raise ConfigError(
            "mel spectrogram config does not match the vocoder frontend "
            f"({mel.config} vs {fe})"
        )
    target = mel_to_linear(mel)
    t_frames = mel.values.shape[1]
    length = t_frames * fe.hop_length

    spec = target.astype(np.complex128)  # zero phase start
    prev_rebuilt = None
    trace = []
    x = istft(spec, fe, length=length)
    for _ in range(config.n_iters):
        rebuilt = stft(x, fe)[:, :t_frames]
        if return_trace:
            err = np.linalg.norm(np.abs(rebuilt) - target) / max(np.linalg.norm(target), 1e-12)
            trace.append(float(err))
        angles = rebuilt.copy()
        if config.momentum > 0 and prev_rebuilt is not None:
            angles -= (config.momentum / (1.0 + config.momentum)) * prev_rebuilt
        prev_rebuilt = rebuilt
        mag = np.abs(angles)
        mag[mag < 1e-16] = 1.0
        spec = target * (angles / mag)
        x = istft(spec, fe, length=length)

    peak = np.abs(x).max()
    if peak > PEAK_LIMIT:
        x = x * (PEAK_LIMIT / peak)
    wave = Waveform(x, fe.sample_rate_hz)
    return (wave, trace) if return_trace else wave
